#pragma once

// Scalar expressions over x1..xn and t.
//
// Grammar (usual precedence, ^ binds tightest and is right-associative):
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('-' | '+') unary | power
//   power   := primary ('^' unary)?
//   primary := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//
// Trees are compiled to a flat postfix program so that evaluation inside the
// solver and path-simulation loops costs no allocation.

#include <array>
#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

namespace cordes {

class ParseError : public std::runtime_error {
public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at offset " + std::to_string(offset)),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

class EvalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class Func { Sin, Cos, Exp, Log, Sqrt, Abs, Sign, Step, Atan, Min, Max };

struct Node {
  enum class Kind { Number, Var, Time, Neg, Add, Sub, Mul, Div, Pow, Call };

  Kind kind = Kind::Number;
  double value = 0.0; // Number
  int index = 0;      // Var: zero-based coordinate index
  Func func = Func::Sin;
  std::vector<Node> kids;

  bool operator==(const Node&) const = default;
};

namespace detail {

struct FuncInfo {
  std::string_view name;
  Func func;
  int arity;
};

inline constexpr std::array<FuncInfo, 11> kFunctions{{
    {"sin", Func::Sin, 1},
    {"cos", Func::Cos, 1},
    {"exp", Func::Exp, 1},
    {"log", Func::Log, 1},
    {"sqrt", Func::Sqrt, 1},
    {"abs", Func::Abs, 1},
    {"sign", Func::Sign, 1},
    {"step", Func::Step, 1},
    {"atan", Func::Atan, 1},
    {"min", Func::Min, 2},
    {"max", Func::Max, 2},
}};

inline const FuncInfo& func_info(Func f) {
  for (const auto& fi : kFunctions)
    if (fi.func == f) return fi;
  throw std::logic_error("unknown function id");
}

inline double apply_func(Func f, double a, double b) {
  switch (f) {
  case Func::Sin: return std::sin(a);
  case Func::Cos: return std::cos(a);
  case Func::Exp: return std::exp(a);
  case Func::Log:
    if (!(a > 0.0)) throw EvalError("log of non-positive value");
    return std::log(a);
  case Func::Sqrt:
    if (a < 0.0) throw EvalError("sqrt of negative value");
    return std::sqrt(a);
  case Func::Abs: return std::abs(a);
  case Func::Sign: return a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0);
  case Func::Step: return a >= 0.0 ? 1.0 : 0.0; // step(0) = 1
  case Func::Atan: return std::atan(a);
  case Func::Min: return std::min(a, b);
  case Func::Max: return std::max(a, b);
  }
  return 0.0;
}

class Parser {
public:
  explicit Parser(std::string_view text) : s_(text) {}

  Node parse() {
    skip_ws();
    if (pos_ >= s_.size()) throw ParseError("empty expression", pos_);
    Node n = expr();
    skip_ws();
    if (pos_ != s_.size()) throw ParseError("unexpected character '" + std::string(1, s_[pos_]) + "'", pos_);
    return n;
  }

private:
  std::string_view s_;
  std::size_t pos_ = 0;

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\n' || s_[pos_] == '\r'))
      ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) throw ParseError(std::string("expected '") + c + "'", pos_);
  }

  static Node binary(Node::Kind k, Node a, Node b) {
    Node n;
    n.kind = k;
    n.kids.push_back(std::move(a));
    n.kids.push_back(std::move(b));
    return n;
  }

  Node expr() {
    Node lhs = term();
    for (;;) {
      if (accept('+')) lhs = binary(Node::Kind::Add, std::move(lhs), term());
      else if (accept('-')) lhs = binary(Node::Kind::Sub, std::move(lhs), term());
      else return lhs;
    }
  }

  Node term() {
    Node lhs = unary();
    for (;;) {
      if (accept('*')) lhs = binary(Node::Kind::Mul, std::move(lhs), unary());
      else if (accept('/')) lhs = binary(Node::Kind::Div, std::move(lhs), unary());
      else return lhs;
    }
  }

  Node unary() {
    if (accept('-')) {
      Node n;
      n.kind = Node::Kind::Neg;
      n.kids.push_back(unary());
      return n;
    }
    if (accept('+')) return unary();
    return power();
  }

  Node power() {
    Node base = primary();
    if (accept('^')) return binary(Node::Kind::Pow, std::move(base), unary());
    return base;
  }

  Node primary() {
    skip_ws();
    if (pos_ >= s_.size()) throw ParseError("unexpected end of input", pos_);
    const char c = s_[pos_];
    if (c == '(') {
      ++pos_;
      Node n = expr();
      expect(')');
      return n;
    }
    if ((c >= '0' && c <= '9') || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return identifier();
    throw ParseError("unexpected character '" + std::string(1, c) + "'", pos_);
  }

  Node number() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && ((s_[pos_] >= '0' && s_[pos_] <= '9') || s_[pos_] == '.')) ++pos_;
    if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < s_.size() && (s_[p] == '+' || s_[p] == '-')) ++p;
      if (p < s_.size() && s_[p] >= '0' && s_[p] <= '9') {
        pos_ = p;
        while (pos_ < s_.size() && s_[pos_] >= '0' && s_[pos_] <= '9') ++pos_;
      }
    }
    Node n;
    n.kind = Node::Kind::Number;
    const auto tok = s_.substr(start, pos_ - start);
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), n.value);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) throw ParseError("malformed number", start);
    return n;
  }

  Node identifier() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
    const std::string_view id = s_.substr(start, pos_ - start);

    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == '(') {
      for (const auto& fi : kFunctions) {
        if (fi.name != id) continue;
        ++pos_;
        Node n;
        n.kind = Node::Kind::Call;
        n.func = fi.func;
        n.kids.push_back(expr());
        while (accept(',')) n.kids.push_back(expr());
        expect(')');
        if (static_cast<int>(n.kids.size()) != fi.arity)
          throw ParseError(std::string(id) + " expects " + std::to_string(fi.arity) + " argument(s)", start);
        return n;
      }
      throw ParseError("unknown function '" + std::string(id) + "'", start);
    }

    Node n;
    if (id == "t") {
      n.kind = Node::Kind::Time;
      return n;
    }
    if (id == "pi") {
      n.kind = Node::Kind::Number;
      n.value = 3.141592653589793;
      return n;
    }
    if (id == "x") { // 1-D shorthand for x1
      n.kind = Node::Kind::Var;
      n.index = 0;
      return n;
    }
    if (id.size() >= 2 && id[0] == 'x') {
      int k = 0;
      auto [ptr, ec] = std::from_chars(id.data() + 1, id.data() + id.size(), k);
      if (ec == std::errc() && ptr == id.data() + id.size() && k >= 1 && id[1] != '0') {
        n.kind = Node::Kind::Var;
        n.index = k - 1;
        return n;
      }
    }
    throw ParseError("unknown identifier '" + std::string(id) + "'", start);
  }
};

inline void print_number(std::string& out, double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  std::string s(buf.data(), ptr);
  // Keep the literal a number token: "inf"/"nan" are not representable.
  if (s.find_first_not_of("0123456789.e+-") != std::string::npos)
    throw std::invalid_argument("cannot print non-finite literal");
  out += s;
}

inline void print(const Node& n, std::string& out) {
  using K = Node::Kind;
  switch (n.kind) {
  case K::Number: print_number(out, n.value); return;
  case K::Var: out += "x" + std::to_string(n.index + 1); return;
  case K::Time: out += "t"; return;
  case K::Neg:
    out += "(-";
    print(n.kids[0], out);
    out += ")";
    return;
  case K::Call:
    out += func_info(n.func).name;
    out += "(";
    for (std::size_t i = 0; i < n.kids.size(); ++i) {
      if (i) out += ", ";
      print(n.kids[i], out);
    }
    out += ")";
    return;
  default: break;
  }
  const char* op = n.kind == K::Add ? " + " : n.kind == K::Sub ? " - " : n.kind == K::Mul ? " * " : n.kind == K::Div ? " / " : " ^ ";
  out += "(";
  print(n.kids[0], out);
  out += op;
  print(n.kids[1], out);
  out += ")";
}

enum class Op : unsigned char { Push, Var, Time, Neg, Add, Sub, Mul, Div, Pow, Call1, Call2 };

struct Instr {
  Op op;
  Func func = Func::Sin;
  int index = 0;
  double value = 0.0;
};

} // namespace detail

/// Immutable parsed expression. Evaluation is reentrant.
class Expr {
public:
  Expr() : Expr(constant(0.0)) {}

  static Expr parse(std::string_view text) {
    if (text.empty()) throw ParseError("empty expression", 0);
    return Expr(detail::Parser(text).parse());
  }

  static Expr constant(double v) {
    Node n;
    n.kind = Node::Kind::Number;
    n.value = std::abs(v);
    if (v < 0.0) {
      Node neg;
      neg.kind = Node::Kind::Neg;
      neg.kids.push_back(std::move(n));
      return Expr(std::move(neg));
    }
    return Expr(std::move(n));
  }

  explicit Expr(Node root) : root_(std::move(root)) {
    compile(root_);
    analyse(root_);
    int depth = 0;
    for (const auto& ins : program_) {
      switch (ins.op) {
      case detail::Op::Push:
      case detail::Op::Var:
      case detail::Op::Time: ++depth; break;
      case detail::Op::Neg:
      case detail::Op::Call1: break;
      default: --depth; break;
      }
      max_depth_ = std::max(max_depth_, depth);
    }
    if (constant_) {
      try {
        constant_value_ = eval({}, 0.0);
        evaluated_ = true;
      } catch (const EvalError&) {
        // stays unfolded; every eval() reports the error
      }
    }
  }

  const Node& root() const noexcept { return root_; }
  std::string to_string() const {
    std::string s;
    detail::print(root_, s);
    return s;
  }

  bool is_constant() const noexcept { return constant_; }
  bool depends_on_time() const noexcept { return uses_time_; }
  /// Largest coordinate index referenced (zero-based), -1 if none.
  int max_var_index() const noexcept { return max_var_; }

  double eval(std::span<const double> x, double t) const {
    if (evaluated_) return constant_value_;
    constexpr int kInline = 32;
    std::array<double, kInline> small{};
    std::vector<double> big;
    double* st = small.data();
    if (max_depth_ > kInline) {
      big.resize(static_cast<std::size_t>(max_depth_));
      st = big.data();
    }
    int sp = 0;
    for (const auto& ins : program_) {
      switch (ins.op) {
      case detail::Op::Push: st[sp++] = ins.value; break;
      case detail::Op::Var:
        if (static_cast<std::size_t>(ins.index) >= x.size())
          throw EvalError("variable x" + std::to_string(ins.index + 1) + " outside dimension");
        st[sp++] = x[static_cast<std::size_t>(ins.index)];
        break;
      case detail::Op::Time: st[sp++] = t; break;
      case detail::Op::Neg: st[sp - 1] = -st[sp - 1]; break;
      case detail::Op::Add: --sp; st[sp - 1] += st[sp]; break;
      case detail::Op::Sub: --sp; st[sp - 1] -= st[sp]; break;
      case detail::Op::Mul: --sp; st[sp - 1] *= st[sp]; break;
      case detail::Op::Div:
        --sp;
        if (st[sp] == 0.0) throw EvalError("division by zero");
        st[sp - 1] /= st[sp];
        break;
      case detail::Op::Pow: {
        --sp;
        const double r = std::pow(st[sp - 1], st[sp]);
        if (!std::isfinite(r) && std::isfinite(st[sp - 1]) && std::isfinite(st[sp]))
          throw EvalError("power is not finite");
        st[sp - 1] = r;
        break;
      }
      case detail::Op::Call1: st[sp - 1] = detail::apply_func(ins.func, st[sp - 1], 0.0); break;
      case detail::Op::Call2:
        --sp;
        st[sp - 1] = detail::apply_func(ins.func, st[sp - 1], st[sp]);
        break;
      }
    }
    return st[0];
  }

  friend bool operator==(const Expr& a, const Expr& b) { return a.root_ == b.root_; }

private:
  Node root_;
  std::vector<detail::Instr> program_;
  int max_depth_ = 0;
  bool constant_ = true;
  bool uses_time_ = false;
  int max_var_ = -1;
  double constant_value_ = 0.0;
  bool evaluated_ = false;

  void compile(const Node& n) {
    using K = Node::Kind;
    using detail::Op;
    switch (n.kind) {
    case K::Number: program_.push_back({Op::Push, Func::Sin, 0, n.value}); return;
    case K::Var: program_.push_back({Op::Var, Func::Sin, n.index, 0.0}); return;
    case K::Time: program_.push_back({Op::Time}); return;
    case K::Neg:
      compile(n.kids[0]);
      program_.push_back({Op::Neg});
      return;
    case K::Call:
      for (const auto& k : n.kids) compile(k);
      program_.push_back({n.kids.size() == 1 ? Op::Call1 : Op::Call2, n.func});
      return;
    default: break;
    }
    compile(n.kids[0]);
    compile(n.kids[1]);
    Op op = Op::Add;
    switch (n.kind) {
    case K::Add: op = Op::Add; break;
    case K::Sub: op = Op::Sub; break;
    case K::Mul: op = Op::Mul; break;
    case K::Div: op = Op::Div; break;
    default: op = Op::Pow; break;
    }
    program_.push_back({op});
  }

  void analyse(const Node& n) {
    if (n.kind == Node::Kind::Var) {
      constant_ = false;
      max_var_ = std::max(max_var_, n.index);
    } else if (n.kind == Node::Kind::Time) {
      constant_ = false;
      uses_time_ = true;
    }
    for (const auto& k : n.kids) analyse(k);
  }
};

} // namespace cordes
