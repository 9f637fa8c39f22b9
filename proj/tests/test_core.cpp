#include "cordes/config.hpp"
#include "cordes/decompose.hpp"
#include "cordes/expr.hpp"
#include "cordes/field.hpp"
#include "cordes/problems.hpp"
#include "cordes/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

using namespace cordes;

namespace {

double ev(const std::string& s, std::vector<double> x = {}, double t = 0.0) { return Expr::parse(s).eval(x, t); }

const std::vector<std::string>& corpus() {
  static const std::vector<std::string> c{
      "1", "0", "-1", "2.5", "1e-3", "3.25e+2", "x1", "x2", "x3", "t",
      "pi", "-x1", "--x1", "x1 + x2", "x1 - x2", "x1 * x2", "x1 / x2", "x1 ^ 2", "2 ^ 3 ^ 2", "-2 ^ 2",
      "(x1 + x2) * x3", "x1 + x2 * x3", "x1 - (x2 - x3)", "(x1 - x2) - x3", "x1 / (x2 / x3)", "(x1 / x2) / x3",
      "sin(x1)", "cos(pi * x1)", "exp(-t)", "log(1 + x1 ^ 2)", "sqrt(abs(x1))", "sign(x1 - 0.5)",
      "step(x1 - 0.5)", "atan(x2)", "min(x1, x2)", "max(x1, 0.5 * x2)", "exp(-t) * sin(pi * x1)",
      "(1 + pi ^ 2) * exp(-t) * sin(pi * x1)", "1 + 0.5 * step(x1 - 0.5)", "0.6 + 0.1 * sin(2 * pi * x3)",
      "x1 ^ (x2 ^ 2)", "(x1 ^ x2) ^ 2", "-(x1 + t)", "2 * -x1", "x1 * (x2 + (x3 - t))", "1 / (1 + x1 * x1)",
      "max(min(x1, x2), min(x2, x3))", "step(x1) * step(x2) + step(-x1) * step(-x2)", "1.5 + 0.4 * sin(pi * x1)",
      "abs(x1 - x2) + abs(x2 - x3) + t", "exp(sin(x1) * cos(x2))", "0.25 * (1 + sign(x1)) ^ 2", "x1 - -x2",
      "1 - 2 + 3", "2 * 3 / 4 * 5"};
  return c;
}

} // namespace

TEST(Expr, PrecedenceAndAssociativity) {
  EXPECT_DOUBLE_EQ(ev("2 ^ 3 ^ 2"), 512.0);
  EXPECT_DOUBLE_EQ(ev("-2 ^ 2"), -4.0);
  EXPECT_DOUBLE_EQ(ev("1 + 2 * 3"), 7.0);
  EXPECT_DOUBLE_EQ(ev("(1 + 2) * 3"), 9.0);
  EXPECT_DOUBLE_EQ(ev("8 / 4 / 2"), 1.0);
  EXPECT_DOUBLE_EQ(ev("1 - 2 - 3"), -4.0);
  EXPECT_DOUBLE_EQ(ev("2 * 3 ^ 2"), 18.0);
}

TEST(Expr, ConstantPlusZeroTimesVariable) {
  for (double x : {-3.0, 0.0, 0.7, 1e6}) EXPECT_DOUBLE_EQ(ev("1 + 0*x1", {x}), 1.0);
}

TEST(Expr, StepIndicator) {
  EXPECT_EQ(ev("step(x1 - 0.5)", {0.7}), 1.0);
  EXPECT_EQ(ev("step(x1 - 0.5)", {0.3}), 0.0);
  EXPECT_EQ(ev("step(x1 - 0.5)", {0.5}), 1.0);
}

TEST(Expr, SineAtHalf) { EXPECT_NEAR(ev("sin(3.141592653589793*x1)", {0.5}), 1.0, 1e-12); }

TEST(Expr, FunctionsAndTime) {
  EXPECT_NEAR(ev("exp(-t) * sin(pi * x1)", {0.25}, 0.3), std::exp(-0.3) * std::sin(M_PI * 0.25), 1e-15);
  EXPECT_DOUBLE_EQ(ev("min(x1, x2) + max(x1, x2)", {2.0, -1.0}), 1.0);
  EXPECT_DOUBLE_EQ(ev("atan(x1)", {1.0}), std::atan(1.0));
  EXPECT_DOUBLE_EQ(ev("sign(x1)", {-2.0}), -1.0);
  EXPECT_DOUBLE_EQ(ev("abs(x1) + sqrt(x2)", {-2.0, 9.0}), 5.0);
}

TEST(Expr, Analysis) {
  const auto e = Expr::parse("x3 * t + x1");
  EXPECT_FALSE(e.is_constant());
  EXPECT_TRUE(e.depends_on_time());
  EXPECT_EQ(e.max_var_index(), 2);
  EXPECT_TRUE(Expr::parse("2 * pi").is_constant());
  EXPECT_EQ(Expr::parse("2").max_var_index(), -1);
}

TEST(Expr, SyntaxErrorsCarryOffset) {
  try {
    Expr::parse("1 + * 2");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  EXPECT_THROW(Expr::parse(""), ParseError);
  EXPECT_THROW(Expr::parse("(1 + 2"), ParseError);
  EXPECT_THROW(Expr::parse("1 2"), ParseError);
  EXPECT_THROW(Expr::parse("sin(1, 2)"), ParseError);
  EXPECT_THROW(Expr::parse("min(1)"), ParseError);
  EXPECT_THROW(Expr::parse("x0"), ParseError);
}

TEST(Expr, UnknownIdentifier) {
  try {
    Expr::parse("2 * foo(x1)");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("foo"), std::string::npos);
    EXPECT_EQ(e.offset(), 4u);
  }
}

TEST(Expr, ParsePrintParseIdempotent) {
  ASSERT_GE(corpus().size(), 50u);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  for (const auto& s : corpus()) {
    const auto a = Expr::parse(s);
    const auto printed = a.to_string();
    const auto b = Expr::parse(printed);
    EXPECT_EQ(b.to_string(), printed) << s;
    for (int k = 0; k < 5; ++k) {
      const std::vector<double> x{u(rng), u(rng), u(rng)};
      const double t = u(rng);
      const double va = a.eval(x, t), vb = b.eval(x, t);
      if (std::isnan(va)) EXPECT_TRUE(std::isnan(vb)) << s;
      else EXPECT_EQ(va, vb) << s << " -> " << printed;
    }
  }
}

TEST(Field, IdentityProblem) {
  const auto f = builtin_problem("identity_heat", {{"n", 2}});
  const std::vector<double> x{0.3, 0.6};
  const auto v = f.eval(x, 0.2);
  EXPECT_TRUE(v.b.isApprox(Matrix::Identity(2, 2)));
  EXPECT_EQ(v.f.norm(), 0.0);
  EXPECT_EQ(v.lambda, Complex(0.0, 0.0));
}

TEST(Field, Example3x3Matrix) {
  const auto f = builtin_problem("paper_3x3", {{"alpha", 0.6}, {"beta", 0.0}});
  const std::vector<double> x{0.2, 0.5, 0.9};
  const auto b = f.eval(x, 0.1).b;
  Matrix expect(3, 3);
  expect << 1, 0.6, 0, 0.6, 1, 0, 0, 0, 1;
  EXPECT_EQ((b - expect).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Field, VanishesOutsideQ) {
  const auto f = builtin_problem("paper_3x3", {{"alpha", 0.6}, {"beta", 0.3}});
  const std::vector<double> x{0.2, 0.5, 0.9};
  const auto v = f.eval(x, f.horizon() + 0.1);
  EXPECT_EQ(v.b.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(v.f.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(v.lambda, Complex(0.0, 0.0));
  const std::vector<double> out{1.5, 0.5, 0.5};
  EXPECT_EQ(f.eval(out, 0.1).b.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Field, IdentityHeat1dHasBetaSqrt2) {
  const auto f = builtin_problem("identity_heat", {{"n", 1}});
  const std::vector<double> x{0.5};
  ASSERT_TRUE(f.has_beta());
  EXPECT_NEAR(f.beta_at(x, 0.0)(0, 0), std::sqrt(2.0), 1e-15);
  EXPECT_EQ(f.eval(x, 0.0).b(0, 0), 1.0);
}

TEST(Field, CheckerboardTable) {
  const auto f = builtin_problem("checkerboard_2d", {{"low", 1}, {"high", 2}, {"cells", 4}});
  // oracle: parity of the cell indices on a 4x4 partition of the unit square
  for (double x : {0.1, 0.3, 0.6, 0.9})
    for (double y : {0.05, 0.4, 0.55, 0.8}) {
      const int cx = static_cast<int>(x * 4), cy = static_cast<int>(y * 4);
      const double expect = (cx + cy) % 2 == 0 ? 1.0 : 2.0;
      const std::vector<double> p{x, y};
      const auto b = f.eval(p, 0.0).b;
      EXPECT_EQ(b(0, 0), expect);
      EXPECT_EQ(b(1, 1), expect);
      EXPECT_EQ(b(0, 1), 0.0);
      EXPECT_EQ(b(1, 0), 0.0);
    }
}

TEST(Field, RegistryErrors) {
  EXPECT_THROW(builtin_problem("nope", {}), FieldError);
  EXPECT_THROW(builtin_problem("paper_3x3", {{"alpha", 0.5}}), FieldError);
}

TEST(Field, SymmetryAndBetaOnRandomPoints) {
  std::mt19937_64 rng(11);
  const std::vector<std::pair<std::string, Params>> problems{
      {"identity_heat", {{"n", 3}}},
      {"paper_3x3", {{"alpha", 0.6}, {"beta", 0.3}}},
      {"paper_3x3", {{"alpha", 0.4}, {"beta", 0.1}, {"pattern", 1}}},
      {"checkerboard_2d", {{"low", 1}, {"high", 3}, {"cells", 4}}},
      {"manufactured_1d", {}},
      {"gaussian_free_space", {{"n", 2}}}};
  for (const auto& [name, params] : problems) {
    const auto f = builtin_problem(name, params);
    const auto& box = f.domain().box;
    std::vector<double> x(static_cast<std::size_t>(f.dim()));
    double worst_sym = 0.0, worst_beta = 0.0;
    for (int k = 0; k < 10000; ++k) {
      for (int a = 0; a < f.dim(); ++a) {
        std::uniform_real_distribution<double> u(box.lo[static_cast<std::size_t>(a)], box.hi[static_cast<std::size_t>(a)]);
        x[static_cast<std::size_t>(a)] = u(rng);
      }
      const double t = std::uniform_real_distribution<double>(0.0, f.horizon())(rng);
      const auto b = f.eval(x, t).b;
      worst_sym = std::max(worst_sym, (b - b.transpose()).cwiseAbs().maxCoeff());
      if (f.has_beta()) {
        const Matrix beta = f.beta_at(x, t);
        worst_beta = std::max(worst_beta, (0.5 * beta * beta.transpose() - b).cwiseAbs().maxCoeff());
      }
    }
    EXPECT_EQ(worst_sym, 0.0) << name;
    EXPECT_LE(worst_beta, 1e-12) << name;
  }
}

TEST(Decompose, IdentityFieldHasZeroRemainder) {
  const auto f = builtin_problem("identity_heat", {{"n", 3}});
  const auto d = decompose(f, {}, default_sampling(f));
  for (const auto& m : d.bhat_samples) EXPECT_EQ(m.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_TRUE(d.N.empty());
}

TEST(Decompose, Example3x3RemainderAndCover) {
  const double a = 0.6, b = 0.3;
  const auto f = builtin_problem("paper_3x3", {{"alpha", a}, {"beta", b}});
  const auto d = decompose(f, {}, default_sampling(f));
  Matrix expect(3, 3);
  expect << 0, a, b, a, 0, 0, b, 0, 0;
  for (const auto& m : d.bhat_samples) EXPECT_LE((m - expect).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(d.N, std::vector<int>{0});
}

TEST(Decompose, ConstantReferenceAveragesSamples) {
  auto c = Config::parse("n = 2\nb[2][2] = \"1 + step(x1 - 0.5)\"\n");
  const auto rp = resolve_problem(c);
  SplitSpec spec;
  spec.kind = SplitKind::Constant;
  const auto samples = default_sampling(rp.field);
  const auto d = decompose(rp.field, spec, samples);
  // oracle: average of the sampled b22 values
  double sum = 0.0;
  std::size_t count = 0;
  samples.for_each(false, [&](std::span<const double> x, double) {
    sum += 1.0 + (x[0] - 0.5 >= 0.0 ? 1.0 : 0.0);
    ++count;
  });
  const double avg = sum / static_cast<double>(count);
  EXPECT_NEAR(avg, 1.5, 0.05);
  EXPECT_NEAR(d.bbar_const(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(d.bbar_const(1, 1), avg, 1e-12);
  EXPECT_NEAR(d.bbar_const(0, 1), 0.0, 1e-14);
  double lo = 1e9, hi = -1e9;
  for (const auto& m : d.bhat_samples) lo = std::min(lo, m(1, 1)), hi = std::max(hi, m(1, 1));
  EXPECT_NEAR(lo, 1.0 - avg, 1e-12);
  EXPECT_NEAR(hi, 2.0 - avg, 1e-12);
  EXPECT_NE(std::find(d.N.begin(), d.N.end(), 1), d.N.end());
}

TEST(Decompose, ReAddIsExact) {
  const std::vector<std::pair<std::string, Params>> problems{
      {"paper_3x3", {{"alpha", 0.6}, {"beta", 0.3}}},
      {"checkerboard_2d", {{"low", 1}, {"high", 3}, {"cells", 4}}},
      {"paper_3x3", {{"alpha", 0.4}, {"beta", 0.2}, {"pattern", 1}}}};
  for (const auto& [name, params] : problems)
    for (auto kind : {SplitKind::Identity, SplitKind::Constant}) {
      const auto f = builtin_problem(name, params);
      SplitSpec spec;
      spec.kind = kind;
      const auto d = decompose(f, spec, default_sampling(f));
      ASSERT_EQ(d.b_samples.size(), d.bhat_samples.size());
      double worst = 0.0;
      for (std::size_t s = 0; s < d.b_samples.size(); ++s)
        worst = std::max(worst, (d.bbar_samples[s] + d.bhat_samples[s] - d.b_samples[s]).cwiseAbs().maxCoeff());
      EXPECT_LE(worst, 1e-12) << name;
    }
}

TEST(Decompose, RejectsNonCoveringN) {
  const auto f = builtin_problem("paper_3x3", {{"alpha", 0.6}, {"beta", 0.3}});
  SplitSpec spec;
  spec.N = std::vector<int>{1};
  EXPECT_THROW(decompose(f, spec, default_sampling(f)), CoverError);
  spec.N = std::vector<int>{1, 2};
  EXPECT_NO_THROW(decompose(f, spec, default_sampling(f)));
}

TEST(Config, ParsesAndResolves) {
  const auto c = Config::parse(R"(
# comment
problem = paper_3x3
param.alpha = 0.9   # trailing comment
param.beta = 0.4
grid.m = 9
condition.N = 1
condition.gamma = 1.9
)");
  const auto rp = resolve_problem(c);
  EXPECT_EQ(rp.name, "paper_3x3");
  EXPECT_DOUBLE_EQ(rp.params.at("alpha"), 0.9);
  const auto s = resolve_split(c, 3);
  ASSERT_TRUE(s.N.has_value());
  EXPECT_EQ(*s.N, std::vector<int>{0});
  EXPECT_DOUBLE_EQ(s.gamma->front(), 1.9);
  EXPECT_EQ(resolve_grid(c, rp.field).m, (std::vector<int>{9, 9, 9}));
}

TEST(Config, Validation) {
  EXPECT_THROW(Config::parse("bogus.key = 1"), ConfigError);
  EXPECT_THROW(Config::parse("no equals sign"), ConfigError);
  EXPECT_THROW(resolve_theta(Config::parse("scheme.theta = 0.4")), ConfigError);
  EXPECT_THROW(resolve_mc(Config::parse("mc.M = 0")), ConfigError);
  EXPECT_THROW(resolve_split(Config::parse("condition.N = 1\ncondition.gamma = 2.5"), 3), ConfigError);
  EXPECT_THROW(resolve_split(Config::parse("condition.N = 4"), 3), ConfigError);
  EXPECT_THROW(resolve_problem(Config::parse("n = 1\nb[1][1] = \"1 +\"")), ConfigError);
  EXPECT_THROW(Config::parse("grid.nt = abc").integer("grid.nt", 1), ConfigError);
}

TEST(Config, HashIsOrderIndependent) {
  const auto a = Config::parse("n = 1\nT = 2\n");
  const auto b = Config::parse("T = 2\nn = 1\n");
  const auto c = Config::parse("T = 3\nn = 1\n");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_EQ(a.hash().size(), 16u);
}

TEST(Config, PiecewiseTable) {
  const auto dir = std::filesystem::temp_directory_path() / "cordes_cfg_table";
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "b.csv");
    os << "c1,c2,b11,b22\n0,0,1,1\n1,0,2,2\n0,1,3,3\n1,1,4,4\n";
  }
  const auto c = Config::parse("n = 2\nb.table = b.csv\nb.table.cells = 2, 2\n", dir);
  const auto rp = resolve_problem(c);
  const std::vector<double> p{0.75, 0.25}, q{0.25, 0.75};
  EXPECT_EQ(rp.field.eval(p, 0.0).b(0, 0), 2.0);
  EXPECT_EQ(rp.field.eval(q, 0.0).b(1, 1), 3.0);
  EXPECT_EQ(rp.field.eval(q, 0.0).b(0, 1), 0.0);
}

TEST(Config, XiPanel) {
  const auto dir = std::filesystem::temp_directory_path() / "cordes_cfg_xi";
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "xi.csv");
    os << "t,xi1\n0,0\n1,2\n";
  }
  const auto c = Config::parse("xi.panel = xi.csv\nxi.1 = \"0.5 * t\"\n", dir);
  const auto xs = resolve_xi(c, 1);
  ASSERT_EQ(xs.size(), 2u);
  EXPECT_DOUBLE_EQ(xs[0].second(0.4)[0], 0.2);
  EXPECT_DOUBLE_EQ(xs[1].second(0.25)[0], 0.5);
  EXPECT_DOUBLE_EQ(xs[1].second(3.0)[0], 2.0);
  {
    std::ofstream os(dir / "bad.csv");
    os << "t,xi1\n0,abc\n";
  }
  EXPECT_THROW(resolve_xi(Config::parse("xi.panel = bad.csv", dir), 1), ConfigError);
  EXPECT_THROW(resolve_xi(Config::parse("xi.1 = \"x1\""), 1), ConfigError);
}

TEST(Rng, PhiloxKnownAnswers) {
  const auto a = philox4x32_10({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(a, (Philox4x32{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  const auto b = philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(b, (Philox4x32{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
  const auto c = philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(c, (Philox4x32{0xd16cfe09u, 0x94fdcceBu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  PathStream a(42, 7), b(42, 7), c(42, 8), d(43, 7), e(42, 7, 1);
  for (std::uint64_t k = 0; k < 10; ++k) {
    const double v = a.normal(k);
    EXPECT_EQ(v, b.normal(k));
    EXPECT_NE(v, c.normal(k));
    EXPECT_NE(v, d.normal(k));
    EXPECT_NE(v, e.normal(k));
  }
  PathStream f(42, 7);
  EXPECT_EQ(f.normal(9), a.normal(9));
  EXPECT_EQ(f.normal(3), a.normal(3));
}

TEST(Rng, NormalMoments) {
  PathStream s(5, 0);
  const int N = 200000;
  double m1 = 0.0, m2 = 0.0, m4 = 0.0;
  for (int k = 0; k < N; ++k) {
    const double z = s.normal(static_cast<std::uint64_t>(k));
    m1 += z, m2 += z * z, m4 += z * z * z * z;
  }
  m1 /= N, m2 /= N, m4 /= N;
  EXPECT_NEAR(m1, 0.0, 4.0 / std::sqrt(N));
  EXPECT_NEAR(m2, 1.0, 4.0 * std::sqrt(2.0 / N));
  EXPECT_NEAR(m4, 3.0, 4.0 * std::sqrt(96.0 / N));
  for (int k = 0; k < 1000; ++k) {
    const double u = s.uniform(static_cast<std::uint64_t>(k));
    EXPECT_GT(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}
