#pragma once

// Run configuration: `key = value` lines, `#` comments, optional quotes.
// Matrix/vector indices are 1-based, e.g. b[1][2] = "0.5*step(x1)".

#include "cordes/decompose.hpp"
#include "cordes/field.hpp"
#include "cordes/grid.hpp"
#include "cordes/problems.hpp"
#include "cordes/stochastic.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

namespace cordes {

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string unquote(std::string s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\'')))
    return s.substr(1, s.size() - 2);
  return s;
}

inline const std::vector<std::regex>& known_keys() {
  static const std::vector<std::regex> keys = [] {
    std::vector<std::regex> k;
    for (const char* p :
         {R"(problem)", R"(param\.[A-Za-z_][A-Za-z0-9_]*)", R"(n)", R"(T)", R"(domain)", R"(domain\.(lo|hi))",
          R"(b\[\d+\]\[\d+\])", R"(f\[\d+\])", R"(lambda\.(re|im))", R"(beta\[\d+\]\[\d+\])", R"(b\.table)",
          R"(b\.table\.cells)", R"(phi\.(re|im))", R"(Phi)", R"(exact)", R"(grid\.(m|nt))", R"(scheme\.(theta|tol))",
          R"(split)", R"(bbar\[\d+\]\[\d+\])", R"(condition\.(N|gamma))", R"(sampling\.(space|time))",
          R"(mc\.(M|dt|seed|sampler|center|sd|width|killing|keep_paths|start))", R"(fixed_point\.(eps|K|tol|max_iter|trials))",
          R"(norms\.(alpha1|alpha2))", R"(verify\.(allowance|density|density_tol|survival|survival_allowance|max_principle|pairing|killing_rate))",
          R"(xi\.panel)", R"(xi\.\d+)", R"(xi\.allowance)", R"(xi\.dt_ratio)", R"(solve\.max_error)", R"(output\.format)"})
      k.emplace_back(p);
    return k;
  }();
  return keys;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

inline double to_number(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

} // namespace detail

class Config {
public:
  Config() = default;

  static Config parse(std::string_view text, std::filesystem::path base = ".") {
    Config c;
    c.base_ = std::move(base);
    std::istringstream is{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      std::string s = line;
      bool quoted = false;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') quoted = !quoted;
        if (s[i] == '#' && !quoted) {
          s.resize(i);
          break;
        }
      }
      s = detail::trim(s);
      if (s.empty()) continue;
      try {
        c.set(s);
      } catch (const ConfigError& e) {
        throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
  }

  /// Applies one `key = value` assignment.
  void set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value', got '" + assignment + "'");
    const std::string key = detail::trim(assignment.substr(0, eq));
    const std::string val = detail::unquote(detail::trim(assignment.substr(eq + 1)));
    bool known = false;
    for (const auto& re : detail::known_keys()) known = known || std::regex_match(key, re);
    if (!known) throw ConfigError("unknown key '" + key + "'");
    kv_[key] = val;
  }

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  std::string str(const std::string& key, const std::string& fallback = {}) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }
  double num(const std::string& key, double fallback) const {
    return has(key) ? detail::to_number(key, kv_.at(key)) : fallback;
  }
  double num(const std::string& key) const {
    if (!has(key)) throw ConfigError("missing key '" + key + "'");
    return detail::to_number(key, kv_.at(key));
  }
  long long integer(const std::string& key, long long fallback) const {
    if (!has(key)) return fallback;
    const double d = num(key);
    if (d != std::floor(d)) throw ConfigError("key '" + key + "': expected an integer");
    return static_cast<long long>(d);
  }
  std::vector<double> list(const std::string& key) const {
    std::vector<double> out;
    if (!has(key)) return out;
    for (const auto& s : detail::split(kv_.at(key), ',')) out.push_back(detail::to_number(key, s));
    return out;
  }
  bool flag(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto v = kv_.at(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("key '" + key + "': expected a boolean");
  }
  std::filesystem::path path(const std::string& key) const {
    std::filesystem::path p = str(key);
    return p.is_absolute() ? p : base_ / p;
  }
  const std::map<std::string, std::string>& entries() const { return kv_; }

  /// FNV-1a over the sorted `key=value` lines.
  std::string hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [k, v] : kv_)
      for (char c : k + "=" + v + "\n") {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
      }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : kv_) j[k] = v;
    return j;
  }

private:
  std::map<std::string, std::string> kv_;
  std::filesystem::path base_ = ".";
};

struct ResolvedProblem {
  std::string name;
  Params params;
  CoefficientField field;
  ProblemData data;
};

namespace detail {

inline std::string indexed(const char* base, int i, int j = -1) {
  std::string s = std::string(base) + "[" + std::to_string(i + 1) + "]";
  if (j >= 0) s += "[" + std::to_string(j + 1) + "]";
  return s;
}

inline ScalarField field_expr(const Config& c, const std::string& key, const char* fallback) {
  try {
    return ScalarField::parse(c.str(key, fallback));
  } catch (const ParseError& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

inline Expr expr_value(const Config& c, const std::string& key, const std::string& fallback) {
  try {
    return Expr::parse(c.str(key, fallback));
  } catch (const ParseError& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

/// Piecewise-constant b from a CSV with columns c1..cn (0-based cell indices) and b<i><j>.
inline std::vector<std::optional<ScalarField>> read_b_table(const Config& c, int n, const Box& box) {
  const auto cells_d = c.list("b.table.cells");
  if (static_cast<int>(cells_d.size()) != n) throw ConfigError("b.table.cells needs one count per axis");
  std::vector<int> cells;
  std::size_t total = 1;
  for (double v : cells_d) {
    if (v < 1 || v != std::floor(v)) throw ConfigError("b.table.cells must be positive integers");
    cells.push_back(static_cast<int>(v));
    total *= static_cast<std::size_t>(v);
  }
  std::ifstream in(c.path("b.table"));
  if (!in) throw ConfigError("cannot open b.table '" + c.path("b.table").string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("b.table is empty");
  const auto header = split(line, ',');
  std::vector<PiecewiseTable> tables(static_cast<std::size_t>(n * n), PiecewiseTable{box, cells, std::vector<double>(total, 0.0)});
  std::vector<char> present(static_cast<std::size_t>(n * n), 0);
  std::vector<int> col_entry(header.size(), -1);
  for (std::size_t k = 0; k < header.size(); ++k) {
    const auto& h = header[k];
    if (h.size() == 3 && h[0] == 'b') {
      const int i = h[1] - '1', j = h[2] - '1';
      if (i < 0 || j < 0 || i >= n || j >= n) throw ConfigError("b.table column '" + h + "' out of range");
      col_entry[k] = std::min(i, j) * n + std::max(i, j);
      present[static_cast<std::size_t>(col_entry[k])] = 1;
    } else if (h != "c" + std::to_string(k + 1)) {
      throw ConfigError("b.table: unexpected column '" + h + "'");
    }
  }
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != header.size()) throw ConfigError("b.table: row has wrong column count");
    std::size_t idx = 0, stride = 1;
    for (int a = 0; a < n; ++a) {
      const double ci = to_number("b.table", cols[static_cast<std::size_t>(a)]);
      if (ci < 0 || ci >= cells[static_cast<std::size_t>(a)]) throw ConfigError("b.table: cell index out of range");
      idx += static_cast<std::size_t>(ci) * stride;
      stride *= static_cast<std::size_t>(cells[static_cast<std::size_t>(a)]);
    }
    for (std::size_t k = 0; k < cols.size(); ++k)
      if (col_entry[k] >= 0) tables[static_cast<std::size_t>(col_entry[k])].values[idx] = to_number("b.table", cols[k]);
  }
  std::vector<std::optional<ScalarField>> b(static_cast<std::size_t>(n * n));
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      const auto k = static_cast<std::size_t>(i * n + j);
      b[k] = present[k] ? ScalarField(tables[k]) : ScalarField::constant(0.0);
    }
  return b;
}

} // namespace detail

inline ResolvedProblem resolve_problem(const Config& c) {
  ResolvedProblem r;
  r.name = c.str("problem", "custom");
  for (const auto& [k, v] : c.entries())
    if (k.rfind("param.", 0) == 0) r.params[k.substr(6)] = detail::to_number(k, v);
  try {
    if (r.name != "custom") {
      r.field = builtin_problem(r.name, r.params);
      r.data = builtin_data(r.name, r.params);
    } else {
      const int n = static_cast<int>(c.integer("n", 1));
      if (n < 1) throw ConfigError("n must be >= 1");
      const double T = c.num("T", 1.0);
      auto lo = c.list("domain.lo"), hi = c.list("domain.hi");
      if (lo.empty()) lo.assign(static_cast<std::size_t>(n), 0.0);
      if (hi.empty()) hi.assign(static_cast<std::size_t>(n), 1.0);
      if (lo.size() == 1) lo.assign(static_cast<std::size_t>(n), lo[0]);
      if (hi.size() == 1) hi.assign(static_cast<std::size_t>(n), hi[0]);
      if (static_cast<int>(lo.size()) != n || static_cast<int>(hi.size()) != n)
        throw ConfigError("domain.lo/domain.hi need n entries");
      const std::string dom = c.str("domain", "box");
      if (dom != "box" && dom != "all_space") throw ConfigError("domain must be 'box' or 'all_space'");
      const Domain domain{dom == "all_space", Box{lo, hi}};
      std::vector<std::optional<ScalarField>> b(static_cast<std::size_t>(n * n));
      if (c.has("b.table")) {
        b = detail::read_b_table(c, n, domain.box);
      } else {
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const auto key = detail::indexed("b", i, j);
            if (c.has(key)) b[static_cast<std::size_t>(i * n + j)] = detail::field_expr(c, key, "0");
            else if (i == j) b[static_cast<std::size_t>(i * n + j)] = ScalarField::constant(1.0);
          }
      }
      std::vector<ScalarField> f;
      for (int i = 0; i < n; ++i) f.push_back(detail::field_expr(c, detail::indexed("f", i), "0"));
      std::optional<std::vector<ScalarField>> beta;
      bool any_beta = false;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) any_beta = any_beta || c.has(detail::indexed("beta", i, j));
      if (any_beta) {
        beta.emplace();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) beta->push_back(detail::field_expr(c, detail::indexed("beta", i, j), "0"));
      }
      r.field = CoefficientField(n, T, domain, std::move(b), std::move(f), detail::field_expr(c, "lambda.re", "0"),
                                 detail::field_expr(c, "lambda.im", "0"), std::move(beta));
    }
  } catch (const FieldError& e) {
    throw ConfigError(e.what());
  }
  if (c.has("phi.re")) r.data.phi_re = detail::expr_value(c, "phi.re", "0");
  if (c.has("phi.im")) r.data.phi_im = detail::expr_value(c, "phi.im", "0");
  if (c.has("Phi")) r.data.Phi = detail::expr_value(c, "Phi", "0");
  if (c.has("exact")) r.data.exact = detail::expr_value(c, "exact", "0");
  return r;
}

inline std::vector<int> resolve_N(const Config& c, int n) {
  std::vector<int> N;
  for (double v : c.list("condition.N")) {
    if (v != std::floor(v) || v < 1 || v > n) throw ConfigError("condition.N entries must be integers in 1..n");
    N.push_back(static_cast<int>(v) - 1);
  }
  return N;
}

inline SplitSpec resolve_split(const Config& c, int n) {
  SplitSpec s;
  const auto kind = c.str("split", "identity");
  if (kind == "identity") s.kind = SplitKind::Identity;
  else if (kind == "constant") s.kind = SplitKind::Constant;
  else if (kind == "explicit") {
    s.kind = SplitKind::Explicit;
    s.bbar.resize(static_cast<std::size_t>(n * n));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const auto key = detail::indexed("bbar", i, j);
        if (c.has(key)) s.bbar[static_cast<std::size_t>(i * n + j)] = detail::field_expr(c, key, "0");
      }
  } else {
    throw ConfigError("split must be identity, constant or explicit");
  }
  if (c.has("condition.N")) s.N = resolve_N(c, n);
  if (c.has("condition.gamma")) {
    s.gamma = c.list("condition.gamma");
    for (double g : *s.gamma)
      if (!(g > 0.0 && g < 2.0)) throw ConfigError("condition.gamma entries must lie in (0, 2)");
    if (!s.N) throw ConfigError("condition.gamma requires condition.N");
    if (s.gamma->size() != s.N->size()) throw ConfigError("condition.gamma needs one entry per index in condition.N");
  }
  return s;
}

inline SamplingSet resolve_sampling(const Config& c, const CoefficientField& f) {
  SamplingSet s = default_sampling(f);
  s.space_nodes = static_cast<int>(c.integer("sampling.space", s.space_nodes));
  s.time_nodes = static_cast<int>(c.integer("sampling.time", s.time_nodes));
  if (s.space_nodes < 2 || s.time_nodes < 1) throw ConfigError("sampling.space must be >= 2 and sampling.time >= 1");
  return s;
}

inline double resolve_theta(const Config& c) {
  const double theta = c.num("scheme.theta", 1.0);
  if (!(theta >= 0.5 && theta <= 1.0)) throw ConfigError("scheme.theta must lie in [0.5, 1]");
  return theta;
}

inline Grid resolve_grid(const Config& c, const CoefficientField& f) {
  std::vector<int> m;
  for (double v : c.list("grid.m")) {
    if (v != std::floor(v)) throw ConfigError("grid.m must be integers");
    m.push_back(static_cast<int>(v));
  }
  if (m.empty()) m.push_back(f.dim() == 1 ? 127 : f.dim() == 2 ? 31 : 11);
  const auto nt = c.integer("grid.nt", 64);
  try {
    return build_grid(f.domain().box, m, static_cast<int>(nt), f.horizon());
  } catch (const GridError& e) {
    throw ConfigError(e.what());
  }
}

inline NormWeights resolve_weights(const Config& c) {
  NormWeights w;
  w.alpha1 = c.num("norms.alpha1", 0.1);
  w.alpha2 = c.num("norms.alpha2", 1.0);
  if (!(w.alpha1 >= 0.0) || !(w.alpha2 >= 0.0)) throw ConfigError("norms.alpha1 and norms.alpha2 must be non-negative");
  return w;
}

inline InitialLaw resolve_law(const Config& c, const CoefficientField& f) {
  const int n = f.dim();
  auto vec = [&](const std::string& key, std::vector<double> fallback) {
    auto v = c.list(key);
    if (v.empty()) return fallback;
    if (v.size() == 1) v.assign(static_cast<std::size_t>(n), v[0]);
    if (static_cast<int>(v.size()) != n) throw ConfigError("key '" + key + "' needs n entries");
    return v;
  };
  std::vector<double> mid;
  for (int a = 0; a < n; ++a)
    mid.push_back(0.5 * (f.domain().box.lo[static_cast<std::size_t>(a)] + f.domain().box.hi[static_cast<std::size_t>(a)]));
  const auto kind = c.str("mc.sampler", "point");
  const auto center = vec("mc.center", mid);
  if (kind == "point") return InitialLaw::point(vec("mc.start", center));
  if (kind == "uniform") return InitialLaw::uniform(f.domain().box);
  if (kind == "gaussian") {
    const double sd = c.num("mc.sd", 1.0);
    if (!(sd > 0.0)) throw ConfigError("mc.sd must be positive");
    return InitialLaw::gaussian(center, sd, f.domain().all_space ? std::nullopt : std::optional<Box>(f.domain().box));
  }
  if (kind == "hat") {
    const double w = c.num("mc.width", 0.1);
    if (!(w > 0.0)) throw ConfigError("mc.width must be positive");
    return InitialLaw::hat(center, w);
  }
  throw ConfigError("mc.sampler must be point, uniform, gaussian or hat");
}

inline SimulationOptions resolve_mc(const Config& c) {
  SimulationOptions o;
  const auto M = c.integer("mc.M", 10000);
  if (M < 1) throw ConfigError("mc.M must be >= 1");
  o.M = static_cast<std::size_t>(M);
  o.dt = c.num("mc.dt", 1e-3);
  if (!(o.dt > 0.0)) throw ConfigError("mc.dt must be positive");
  const auto seed = c.integer("mc.seed", 1);
  if (seed < 0) throw ConfigError("mc.seed must be non-negative");
  o.seed = static_cast<std::uint64_t>(seed);
  const auto keep = c.integer("mc.keep_paths", 0);
  if (keep < 0) throw ConfigError("mc.keep_paths must be non-negative");
  o.keep_paths = static_cast<std::size_t>(keep);
  return o;
}

inline KillingMode resolve_killing(const Config& c) {
  const auto k = c.str("mc.killing", "weight");
  if (k == "weight") return KillingMode::Weight;
  if (k == "clock") return KillingMode::Clock;
  throw ConfigError("mc.killing must be weight or clock");
}

/// ξ functions: `xi.<k> = "e1; e2; ..."` (one expression in t per component), or a
/// CSV panel `id,t,xi1..xin` (or `t,xi1..xin` for a single function), linear in t.
inline std::vector<std::pair<std::string, XiFn>> resolve_xi(const Config& c, int n) {
  std::vector<std::pair<std::string, XiFn>> out;
  std::map<int, std::string> exprs;
  for (const auto& [k, v] : c.entries())
    if (std::regex_match(k, std::regex(R"(xi\.\d+)"))) exprs[std::stoi(k.substr(3))] = v;
  for (const auto& [id, text] : exprs) {
    auto parts = detail::split(text, ';');
    if (parts.size() == 1 && n > 1) parts.assign(static_cast<std::size_t>(n), parts[0]);
    if (static_cast<int>(parts.size()) != n) throw ConfigError("xi." + std::to_string(id) + " needs n components");
    std::vector<Expr> es;
    for (const auto& p : parts) {
      try {
        es.push_back(Expr::parse(p));
      } catch (const ParseError& e) {
        throw ConfigError("xi." + std::to_string(id) + ": " + e.what());
      }
      if (es.back().max_var_index() >= 0) throw ConfigError("xi." + std::to_string(id) + " may depend on t only");
    }
    out.emplace_back(text, [es](double t) {
      std::vector<double> v;
      for (const auto& e : es) v.push_back(e.eval({}, t));
      return v;
    });
  }
  if (c.has("xi.panel")) {
    std::ifstream in(c.path("xi.panel"));
    if (!in) throw ConfigError("cannot open xi.panel '" + c.path("xi.panel").string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("xi.panel is empty");
    const auto header = detail::split(line, ',');
    const bool has_id = !header.empty() && header[0] == "id";
    const std::size_t off = has_id ? 1 : 0;
    if (header.size() != off + 1 + static_cast<std::size_t>(n) || header[off] != "t")
      throw ConfigError("xi.panel header must be [id,]t,xi1..xin");
    std::map<std::string, std::vector<std::vector<double>>> rows;
    std::vector<std::string> order;
    while (std::getline(in, line)) {
      if (detail::trim(line).empty()) continue;
      const auto cols = detail::split(line, ',');
      if (cols.size() != header.size()) throw ConfigError("xi.panel: row has wrong column count");
      const std::string id = has_id ? cols[0] : "panel";
      std::vector<double> r;
      for (std::size_t k = off; k < cols.size(); ++k) r.push_back(detail::to_number("xi.panel", cols[k]));
      if (!rows.count(id)) order.push_back(id);
      rows[id].push_back(std::move(r));
    }
    for (const auto& id : order) {
      auto tab = rows[id];
      std::sort(tab.begin(), tab.end());
      out.emplace_back("panel:" + id, [tab](double t) {
        if (tab.size() == 1 || t <= tab.front()[0]) return std::vector<double>(tab.front().begin() + 1, tab.front().end());
        if (t >= tab.back()[0]) return std::vector<double>(tab.back().begin() + 1, tab.back().end());
        std::size_t k = 1;
        while (tab[k][0] < t) ++k;
        const double w = (t - tab[k - 1][0]) / (tab[k][0] - tab[k - 1][0]);
        std::vector<double> v;
        for (std::size_t a = 1; a < tab[k].size(); ++a) v.push_back((1 - w) * tab[k - 1][a] + w * tab[k][a]);
        return v;
      });
    }
  }
  return out;
}

} // namespace cordes
