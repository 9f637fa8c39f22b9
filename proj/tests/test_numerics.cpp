#include "cordes/config.hpp"
#include "cordes/fixed_point.hpp"
#include "cordes/gridio.hpp"
#include "cordes/mollify.hpp"
#include "cordes/solver.hpp"
#include "cordes/stochastic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace cordes;

namespace {

CVector random_field(const Grid& g, std::mt19937_64& rng, bool complex = false) {
  std::normal_distribution<double> z;
  CVector v(static_cast<Eigen::Index>(g.size()));
  for (auto& c : v) c = Complex(z(rng), complex ? z(rng) : 0.0);
  return v;
}

double max_abs(const CVector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

ResolvedProblem custom(const std::string& text) { return resolve_problem(Config::parse(text)); }

double manufactured_error(int m, int nt) {
  const auto f = builtin_problem("manufactured_1d", {});
  const auto data = builtin_data("manufactured_1d", {});
  const auto g = build_grid(f.domain().box, m, nt, f.horizon());
  const auto s = solve_backward(make_problem(f, data), g, 1.0);
  double err = 0.0;
  for (int j = 0; j <= g.nt; ++j) {
    const CVector ex = sample(g, [&](std::span<const double> x) { return Complex(std::exp(-g.time(j)) * std::sin(M_PI * x[0]), 0.0); });
    err = std::max(err, max_abs(s.v[static_cast<std::size_t>(j)] - ex));
  }
  return err;
}

} // namespace

// ---------------------------------------------------------------- grid

TEST(Grid, OneDimensionalNodes) {
  const auto g = build_grid(Box::cube(1, 0, 1), 3, 2, 1.0);
  EXPECT_DOUBLE_EQ(g.h[0], 0.25);
  EXPECT_DOUBLE_EQ(g.coord(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(g.coord(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(g.coord(0, 2), 0.75);
  EXPECT_DOUBLE_EQ(g.dt, 0.5);
}

TEST(Grid, TwoDimensionalSpacing) {
  const auto g = build_grid(Box{{0, 0}, {1, 2}}, std::vector<int>{3, 7}, 4, 1.0);
  EXPECT_DOUBLE_EQ(g.h[0], 0.25);
  EXPECT_DOUBLE_EQ(g.h[1], 0.25);
  EXPECT_EQ(g.size(), 21u);
}

TEST(Grid, Preconditions) {
  EXPECT_THROW(build_grid(Box::cube(1, 0, 1), 1, 2, 1.0), GridError);
  EXPECT_THROW(build_grid(Box::cube(1, 0, 1), 3, 0, 1.0), GridError);
  EXPECT_THROW(build_grid(Box{{0.0}, {0.0}}, 3, 2, 1.0), GridError);
}

TEST(Stencil, ZeroInZeroOut) {
  const auto g = build_grid(Box::cube(2, 0, 1), 5, 1, 1.0);
  const CVector z = CVector::Zero(static_cast<Eigen::Index>(g.size()));
  for (auto k : {StencilKind::D1, StencilKind::D2, StencilKind::Cross})
    EXPECT_EQ(max_abs(apply_stencil(g, z, Stencil{k, 0, 1})), 0.0);
}

TEST(Stencil, SecondDerivativeOfSine) {
  const auto g = build_grid(Box::cube(1, 0, 1), 127, 1, 1.0);
  const CVector u = sample(g, [](std::span<const double> x) { return Complex(std::sin(M_PI * x[0]), 0.0); });
  const CVector r = apply_stencil(g, u, Stencil{StencilKind::D2, 0, 0}) + M_PI * M_PI * u;
  EXPECT_LE(max_abs(r), 0.01 * M_PI * M_PI);
}

TEST(Stencil, CrossExactOnBilinear) {
  const auto g = build_grid(Box::cube(2, 0, 1), 9, 1, 1.0);
  const CVector u = sample(g, [](std::span<const double> x) { return Complex(x[0] * x[1], 0.0); });
  const CVector c = apply_stencil(g, u, Stencil{StencilKind::Cross, 0, 1});
  std::vector<int> idx(2);
  for (std::size_t p = 0; p < g.size(); ++p) {
    g.index(p, idx);
    if (idx[0] == 0 || idx[1] == 0 || idx[0] == 8 || idx[1] == 8) continue;
    EXPECT_NEAR(c(static_cast<Eigen::Index>(p)).real(), 1.0, 1e-12);
  }
}

TEST(Stencil, SecondOrderConvergence) {
  auto err = [](int m) {
    const auto g = build_grid(Box::cube(1, 0, 1), m, 1, 1.0);
    const CVector u = sample(g, [](std::span<const double> x) { return Complex(std::sin(M_PI * x[0]), 0.0); });
    return max_abs(apply_stencil(g, u, Stencil{StencilKind::D2, 0, 0}) + M_PI * M_PI * u);
  };
  const double ratio = err(31) / err(63);
  EXPECT_GE(ratio, 3.5);
  EXPECT_LE(ratio, 4.5);
}

TEST(Stencil, RejectsBadAxis) {
  const auto g = build_grid(Box::cube(1, 0, 1), 5, 1, 1.0);
  const CVector u = CVector::Zero(5);
  EXPECT_THROW(apply_stencil(g, u, Stencil{StencilKind::D1, 1, 0}), GridError);
}

TEST(Norms, ZeroField) {
  const auto g = build_grid(Box::cube(2, 0, 1), 7, 3, 1.0);
  std::vector<CVector> z(4, CVector::Zero(static_cast<Eigen::Index>(g.size())));
  NormWeights w;
  w.gamma = {1.0};
  const auto b = discrete_norms(g, z, w, {0});
  EXPECT_EQ(b.X0 + b.X2 + b.Xhat2 + b.C0 + b.C1 + b.Y2 + b.Yhat2, 0.0);
}

TEST(Norms, SineSlice) {
  const auto g = build_grid(Box::cube(1, 0, 1), 2047, 1, 1.0);
  const CVector u = sample(g, [](std::span<const double> x) { return Complex(std::sin(M_PI * x[0]), 0.0); });
  NormWeights w;
  w.gamma = {1.0};
  w.alpha1 = 0.0;
  const auto s = slice_norms(g, u, w, {0});
  EXPECT_NEAR(s.H0, 1.0 / std::sqrt(2.0), 1e-4);
  EXPECT_NEAR(s.H1semi, M_PI / std::sqrt(2.0), 1e-3);
  EXPECT_NEAR(s.Hhat2, M_PI * M_PI / 2.0, 1e-2);
}

TEST(Norms, EquivalenceBoundsAndStructure) {
  std::mt19937_64 rng(5);
  const auto g = build_grid(Box{{0, 0}, {1, 2}}, std::vector<int>{9, 13}, 3, 1.0);
  std::uniform_real_distribution<double> ug(0.05, 1.95);
  for (int trial = 0; trial < 20; ++trial) {
    NormWeights w;
    w.alpha1 = 0.05 + 0.1 * (trial % 4);
    w.alpha2 = 0.5 + trial % 3;
    const std::vector<int> N = trial % 3 == 0 ? std::vector<int>{0, 1} : std::vector<int>{trial % 3 - 1};
    for (std::size_t k = 0; k < N.size(); ++k) w.gamma.push_back(ug(rng));
    std::vector<CVector> sl;
    for (int j = 0; j <= g.nt; ++j) sl.push_back(random_field(g, rng));
    const auto b = discrete_norms(g, sl, w, N);
    for (const auto& s : b.slices) {
      EXPECT_GE(s.Hhat2, w.alpha1 * s.W22 - 1e-12);
      EXPECT_LE(s.Hhat2, (std::sqrt(static_cast<double>(g.n)) + w.alpha1) * s.W22 + 1e-12);
    }
    EXPECT_NEAR(b.Y2, b.X2 + b.C1, 1e-12 * b.Y2);
    EXPECT_NEAR(b.Yhat2, b.Xhat2 + w.alpha2 * b.C1, 1e-12 * b.Yhat2);
  }
}

TEST(Norms, AbsoluteHomogeneity) {
  std::mt19937_64 rng(6);
  const auto g = build_grid(Box::cube(2, 0, 1), 7, 2, 1.0);
  NormWeights w;
  w.gamma = {1.3};
  std::vector<CVector> a, b;
  const Complex c(-1.7, 0.6);
  for (int j = 0; j <= g.nt; ++j) {
    a.push_back(random_field(g, rng, true));
    b.push_back(c * a.back());
  }
  const auto na = discrete_norms(g, a, w, {1}), nb = discrete_norms(g, b, w, {1});
  const double s = std::abs(c);
  for (auto [x, y] : {std::pair{na.X0, nb.X0}, {na.X2, nb.X2}, {na.Xhat2, nb.Xhat2}, {na.C0, nb.C0}, {na.C1, nb.C1},
                      {na.Y2, nb.Y2}, {na.Yhat2, nb.Yhat2}})
    EXPECT_NEAR(y, s * x, 1e-12 * s * x);
}

TEST(Norms, RejectsBadWeights) {
  const auto g = build_grid(Box::cube(1, 0, 1), 5, 1, 1.0);
  const CVector u = CVector::Zero(5);
  NormWeights w;
  w.gamma = {2.0};
  EXPECT_THROW(slice_norms(g, u, w, {0}), GridError);
  w.gamma = {};
  EXPECT_THROW(slice_norms(g, u, w, {0}), GridError);
}

TEST(Pair, NormalizedDensity) {
  const auto g = build_grid(Box::cube(1, 0, 1), 399, 1, 1.0);
  const auto law = InitialLaw::hat({0.5}, 0.1);
  const CVector one = CVector::Ones(static_cast<Eigen::Index>(g.size()));
  EXPECT_NEAR(std::abs(pair(g, one, law.on_grid(g))), 1.0, 1e-4);
  EXPECT_EQ(std::abs(pair(g, one, CVector::Zero(static_cast<Eigen::Index>(g.size())))), 0.0);
}

TEST(Pair, LinearAgainstUniform) {
  const auto g = build_grid(Box::cube(1, 0, 1), 999999, 1, 1.0);
  const CVector u = sample(g, [](std::span<const double> x) { return Complex(x[0], 0.0); });
  const CVector rho = InitialLaw::uniform(Box::cube(1, 0, 1)).on_grid(g);
  EXPECT_NEAR(pair(g, u, rho).real(), 0.5, 1e-6);
}

TEST(Pair, Bilinear) {
  std::mt19937_64 rng(8);
  const auto g = build_grid(Box::cube(2, 0, 1), 6, 1, 1.0);
  const CVector u1 = random_field(g, rng, true), u2 = random_field(g, rng, true), r1 = random_field(g, rng, true),
                r2 = random_field(g, rng, true);
  const Complex a(0.3, -1.1), b(2.0, 0.4);
  EXPECT_LE(std::abs(pair(g, CVector(a * u1 + b * u2), r1) - (a * pair(g, u1, r1) + b * pair(g, u2, r1))), 1e-12);
  EXPECT_LE(std::abs(pair(g, u1, CVector(a * r1 + b * r2)) - (a * pair(g, u1, r1) + b * pair(g, u1, r2))), 1e-12);
  const auto h = build_grid(Box::cube(2, 0, 1), 5, 1, 1.0);
  EXPECT_THROW(pair(h, u1, r1), GridError);
}

TEST(GridIo, CsvAndBinaryRoundTrip) {
  std::mt19937_64 rng(9);
  const auto g = build_grid(Box{{-1, 0}, {1, 2}}, std::vector<int>{4, 3}, 2, 0.7);
  std::vector<CVector> sl;
  for (int j = 0; j <= g.nt; ++j) sl.push_back(random_field(g, rng, true));
  std::stringstream csv, bin;
  write_csv(csv, g, sl);
  write_binary(bin, g, sl);
  for (const auto& d : {read_csv(csv), read_binary(bin)}) {
    EXPECT_TRUE(d.grid.same_space(g));
    EXPECT_EQ(d.grid.nt, g.nt);
    EXPECT_DOUBLE_EQ(d.grid.T, g.T);
    ASSERT_EQ(d.slices.size(), sl.size());
    for (std::size_t j = 0; j < sl.size(); ++j) EXPECT_EQ(max_abs(d.slices[j] - sl[j]), 0.0);
  }
}

TEST(GridIo, RejectsMalformed) {
  std::stringstream a("not a header\n");
  EXPECT_THROW(read_csv(a), std::runtime_error);
  std::stringstream b("XXXX");
  EXPECT_THROW(read_binary(b), std::runtime_error);
  const auto g = build_grid(Box::cube(1, 0, 1), 3, 1, 1.0);
  std::stringstream c;
  write_csv(c, g, {CVector::Ones(3), CVector::Ones(3)});
  std::string text = c.str();
  text.resize(text.rfind('\n', text.size() - 2) + 1);
  std::stringstream d(text);
  EXPECT_THROW(read_csv(d), std::runtime_error);
}

// ---------------------------------------------------------------- solver

TEST(Assemble, ImplicitHeatRows) {
  const auto f = builtin_problem("identity_heat", {{"n", 1}});
  const auto g = build_grid(f.domain().box, 7, 4, 1.0);
  const auto s = assemble_step<double>(source_of(f), g, 0, 1.0);
  const double r = g.dt / (g.h[0] * g.h[0]);
  const Eigen::MatrixXd B(s.B);
  for (int i = 0; i < 7; ++i) {
    EXPECT_NEAR(B(i, i), 1.0 + 2.0 * r, 1e-12);
    if (i > 0) EXPECT_NEAR(B(i, i - 1), -r, 1e-12);
    if (i < 6) EXPECT_NEAR(B(i, i + 1), -r, 1e-12);
  }
  EXPECT_NEAR((Eigen::MatrixXd(s.C) - Eigen::MatrixXd::Identity(7, 7)).norm(), 0.0, 1e-15);
}

TEST(Assemble, ZerothOrderTerm) {
  const auto rp = custom("n = 1\nlambda.re = 5\n");
  const auto base = builtin_problem("identity_heat", {{"n", 1}});
  const auto g = build_grid(base.domain().box, 7, 4, 1.0);
  for (double theta : {1.0, 0.5}) {
    const Eigen::MatrixXd a(assemble_step<double>(source_of(rp.field), g, 0, theta).B);
    const Eigen::MatrixXd b(assemble_step<double>(source_of(base), g, 0, theta).B);
    EXPECT_NEAR((a - b).norm(), std::sqrt(7.0) * theta * g.dt * 5.0, 1e-12);
    EXPECT_NEAR((a - b).diagonal().minCoeff(), theta * g.dt * 5.0, 1e-12);
  }
  EXPECT_THROW(assemble_step<double>(source_of(base), g, 0, 0.4), std::invalid_argument);
}

TEST(Assemble, CrossCouplingsOnPolynomial) {
  const double alpha = 0.6;
  const auto f = builtin_problem("paper_3x3", {{"alpha", alpha}, {"beta", 0.2}});
  const auto g = build_grid(f.domain().box, 7, 1, 1.0);
  const auto A = assemble_operator<double>(source_of(f), g, 0.0);
  const Eigen::VectorXd u = sample(g, [](std::span<const double> x) { return Complex(x[0] * x[1], 0.0); }).real();
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(g.size()));
  const Eigen::VectorXd Au = A * u, A1 = A * one;
  std::vector<int> idx(3);
  int checked = 0;
  for (std::size_t p = 0; p < g.size(); ++p) {
    g.index(p, idx);
    bool deep = true;
    for (int v : idx) deep = deep && v > 0 && v < 6;
    if (!deep) continue;
    ++checked;
    EXPECT_NEAR(Au(static_cast<Eigen::Index>(p)), 2.0 * alpha, 1e-10);
    EXPECT_NEAR(A1(static_cast<Eigen::Index>(p)), 0.0, 1e-10);
  }
  EXPECT_EQ(checked, 125);
}

TEST(Solve, ZeroData) {
  const auto f = builtin_problem("identity_heat", {{"n", 2}});
  const auto g = build_grid(f.domain().box, 9, 5, 1.0);
  BackwardProblem p;
  p.coeffs = source_of(f);
  const auto s = solve_backward(p, g, 1.0);
  for (const auto& v : s.v) EXPECT_EQ(max_abs(v), 0.0);
  NormWeights w;
  EXPECT_EQ(apriori_ratio(s, w, {}), 0.0);
}

TEST(Solve, ManufacturedErrorAndOrder) {
  EXPECT_LE(manufactured_error(127, 256), 2e-3);
  const double e1 = manufactured_error(63, 64), e2 = manufactured_error(127, 256), e3 = manufactured_error(255, 1024);
  for (double order : {std::log2(e1 / e2), std::log2(e2 / e3)}) {
    EXPECT_GE(order, 1.7);
    EXPECT_LE(order, 2.3);
  }
}

TEST(Solve, ImaginaryPotentialOnlyRotatesPhase) {
  // single sine mode: v = e^{(−π² + ... )} closed form; |v| is the λ = 0 solution
  const double c = 3.0, T = 0.2;
  const auto rl = custom("n = 1\nT = 0.2\nlambda.im = 3\nPhi = \"sin(pi*x1)\"\n");
  const auto r0 = custom("n = 1\nT = 0.2\nPhi = \"sin(pi*x1)\"\n");
  const auto g = build_grid(rl.field.domain().box, 127, 400, T);
  const auto sl = solve_backward(make_problem(rl.field, rl.data), g, 0.5);
  const auto s0 = solve_backward(make_problem(r0.field, r0.data), g, 0.5);
  ASSERT_TRUE(sl.complex_mode);
  for (int j = 0; j <= g.nt; j += 50) {
    const double tau = T - g.time(j);
    const CVector exact = sample(g, [&](std::span<const double> x) {
      return std::exp(Complex(-M_PI * M_PI * tau, -c * tau)) * std::sin(M_PI * x[0]);
    });
    EXPECT_LE(max_abs(sl.v[static_cast<std::size_t>(j)] - exact), 1e-4);
    EXPECT_LE((sl.v[static_cast<std::size_t>(j)].cwiseAbs() - s0.v[static_cast<std::size_t>(j)].cwiseAbs()).cwiseAbs().maxCoeff(), 1e-4);
  }
}

TEST(Solve, Linearity) {
  std::mt19937_64 rng(12);
  const auto f = builtin_problem("paper_3x3", {{"alpha", 0.5}, {"beta", 0.2}});
  const auto g = build_grid(f.domain().box, 7, 6, 1.0);
  const auto c = source_of(f);
  std::vector<CVector> p1, p2, pc;
  std::uniform_real_distribution<double> u(-2, 2);
  const double a = u(rng), b = u(rng);
  for (int j = 0; j < g.nt; ++j) {
    p1.push_back(random_field(g, rng));
    p2.push_back(random_field(g, rng));
    pc.push_back(a * p1.back() + b * p2.back());
  }
  const CVector T1 = random_field(g, rng), T2 = random_field(g, rng);
  const auto v1 = solve_backward(c, g, 1.0, p1, T1, false);
  const auto v2 = solve_backward(c, g, 1.0, p2, T2, false);
  const auto vc = solve_backward(c, g, 1.0, pc, a * T1 + b * T2, false);
  for (int j = 0; j <= g.nt; ++j) {
    const CVector comb = a * v1.v[static_cast<std::size_t>(j)] + b * v2.v[static_cast<std::size_t>(j)];
    EXPECT_LE(max_abs(vc.v[static_cast<std::size_t>(j)] - comb), 1e-9 * std::max(1.0, max_abs(comb)));
  }
}

TEST(Solve, DiscreteDuality) {
  std::mt19937_64 rng(13);
  const std::vector<std::string> problems{
      "n = 2\nb[1][1] = \"1 + 0.5*x2\"\nb[1][2] = 0.2\nf[1] = \"sin(x1)\"\nlambda.re = \"1 + x1*t\"\n",
      "n = 1\nb[1][1] = \"1 + 0.5*step(x1 - 0.5)\"\nf[1] = 2\nlambda.re = 0.5\nlambda.im = \"x1\"\n",
      "n = 3\nb[1][2] = 0.4\nb[1][3] = 0.3\nlambda.re = 1\n"};
  for (const auto& text : problems) {
    const auto rp = custom(text);
    const auto c = source_of(rp.field);
    const int n = rp.field.dim();
    const auto g = build_grid(rp.field.domain().box, n == 1 ? 31 : n == 2 ? 11 : 6, 7, 1.0);
    for (double theta : {1.0, 0.5}) {
      std::vector<CVector> phibar;
      for (int j = 0; j < g.nt; ++j) phibar.push_back(random_field(g, rng, c.complex));
      const CVector Phi = random_field(g, rng, c.complex), rho = random_field(g, rng).cwiseAbs().cast<Complex>();
      const auto s = solve_backward(c, g, theta, phibar, Phi, c.complex);
      const auto a = solve_forward_adjoint(c, g, rho, theta, c.complex);
      const Complex lhs = pair(g, s.v.front(), rho), rhs = duality_rhs(g, a, phibar, Phi);
      EXPECT_LE(std::abs(lhs - rhs), 1e-8 * std::abs(lhs)) << text;
    }
  }
}

TEST(Adjoint, MassConservationAndKilling) {
  const auto free = builtin_problem("gaussian_free_space", {{"n", 1}});
  const auto g = build_grid(free.domain().box, 399, 200, free.horizon());
  const CVector rho = InitialLaw::hat({0.0}, 0.2).on_grid(g);
  const auto a = solve_forward_adjoint(source_of(free), g, rho, 1.0);
  EXPECT_NEAR(mass(g, a.p.back()), 1.0, 1e-3);

  const double c = 1.5;
  const auto killed = custom("n = 1\nT = 0.5\ndomain.lo = -10\ndomain.hi = 10\nlambda.re = 1.5\n");
  const auto k = solve_forward_adjoint(source_of(killed.field), g, rho, 1.0);
  for (int j = 0; j <= g.nt; j += 20) EXPECT_NEAR(mass(g, k.p[static_cast<std::size_t>(j)]), std::exp(-c * g.time(j)), 2e-3);

  const auto z = solve_forward_adjoint(source_of(free), g, CVector::Zero(static_cast<Eigen::Index>(g.size())), 1.0);
  for (const auto& p : z.p) EXPECT_EQ(max_abs(p), 0.0);
}

TEST(Solve, IterativePathOnLargeGrid) {
  const auto rp = custom(
      "n = 2\nT = 0.1\nphi.re = \"(1 + 2*pi^2)*exp(-t)*sin(pi*x1)*sin(pi*x2)\"\n"
      "Phi = \"exp(-0.1)*sin(pi*x1)*sin(pi*x2)\"\n");
  const auto g = build_grid(rp.field.domain().box, 49, 100, 0.1);
  const auto s = solve_backward(make_problem(rp.field, rp.data), g, 1.0);
  EXPECT_FALSE(s.stats.direct);
  EXPECT_LE(s.stats.max_residual, 1e-10);
  const CVector ex = sample(g, [](std::span<const double> x) { return Complex(std::sin(M_PI * x[0]) * std::sin(M_PI * x[1]), 0.0); });
  EXPECT_LE(max_abs(s.v.front() - ex), 5e-3);
}

TEST(MaxPrinciple, Cases) {
  const auto f = builtin_problem("identity_heat", {{"n", 2}});
  const auto g = build_grid(f.domain().box, 9, 8, 1.0);
  BackwardProblem zero;
  zero.coeffs = source_of(f);
  auto r = max_principle_check(solve_backward(zero, g, 1.0), true);
  EXPECT_EQ(r.verdict, MaxPrinciple::Pass);
  EXPECT_EQ(r.min, 0.0);

  const auto bump = custom("n = 2\nlambda.re = 1\nPhi = \"sin(pi*x1)*sin(pi*x2)\"\n");
  r = max_principle_check(solve_backward(make_problem(bump.field, bump.data), g, 1.0), true);
  EXPECT_EQ(r.verdict, MaxPrinciple::Pass);

  const auto neg = custom("n = 2\nPhi = \"sin(2*pi*x1)\"\n");
  r = max_principle_check(solve_backward(make_problem(neg.field, neg.data), g, 1.0), true);
  EXPECT_EQ(r.verdict, MaxPrinciple::NotApplicable);
}

TEST(Apriori, ScaleInvariant) {
  const auto f = builtin_problem("manufactured_1d", {});
  const auto d = builtin_data("manufactured_1d", {});
  const auto g = build_grid(f.domain().box, 63, 64, f.horizon());
  const auto c = source_of(f);
  const auto p = make_problem(f, d);
  auto phibar = sample_source(g, p.phi, 1.0);
  CVector Phi = sample_datum(g, p.Phi);
  NormWeights w;
  w.gamma = {1.0};
  const double r1 = apriori_ratio(solve_backward(c, g, 1.0, phibar, Phi, false), w, {0});
  for (auto& s : phibar) s *= 10.0;
  Phi *= 10.0;
  const double r10 = apriori_ratio(solve_backward(c, g, 1.0, phibar, Phi, false), w, {0});
  EXPECT_GT(r1, 0.0);
  EXPECT_NEAR(r10, r1, 1e-9 * r1);
}

// ---------------------------------------------------------------- mollify

TEST(Mollify, KernelWeights) {
  for (int n : {1, 2, 3}) {
    const auto k = KernelQuadrature::build(n, 0.3);
    double sum = 0.0;
    std::vector<double> first(static_cast<std::size_t>(n), 0.0);
    for (std::size_t q = 0; q < k.size(); ++q) {
      sum += k.weights[q];
      for (int a = 0; a < n; ++a) {
        first[static_cast<std::size_t>(a)] += k.weights[q] * k.offsets[q * static_cast<std::size_t>(n) + static_cast<std::size_t>(a)];
        EXPECT_LE(std::abs(k.offsets[q * static_cast<std::size_t>(n) + static_cast<std::size_t>(a)]), 0.3);
      }
    }
    EXPECT_NEAR(sum, 1.0, 1e-14);
    for (double m : first) EXPECT_NEAR(m, 0.0, 1e-15);
  }
  EXPECT_THROW(KernelQuadrature::build(1, 0.0), std::invalid_argument);
}

TEST(Mollify, ConstantReferencePassesThrough) {
  const auto f = builtin_problem("identity_heat", {{"n", 2}});
  const auto d = decompose(f, {}, default_sampling(f));
  const MollifiedField m(f, d, 0.1, f.domain().box);
  const std::vector<double> x{0.3, 0.7};
  EXPECT_EQ((m.b_eps(x, 0.0) - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.0);
  const auto mod = m.moduli(default_sampling(f));
  EXPECT_EQ(mod.nu_b, 0.0);
  EXPECT_EQ(mod.nu_b_bar, 0.0);
}

TEST(Mollify, StepPotentialHasLargeGradient) {
  const auto rp = custom("n = 1\ndomain.lo = -1\ndomain.hi = 1\nlambda.re = \"step(x1)\"\n");
  const auto d = decompose(rp.field, {}, default_sampling(rp.field));
  const MollifiedField m(rp.field, d, 0.1, rp.field.domain().box);
  const auto mod = m.moduli(default_sampling(rp.field));
  EXPECT_TRUE(std::isfinite(mod.nu_lambda_bar));
  EXPECT_GT(mod.nu_lambda_bar, 1.0);
  EXPECT_THROW(MollifiedField(rp.field, d, -0.1, rp.field.domain().box), std::invalid_argument);
}

TEST(Mollify, LinearDriftIsFixed) {
  const auto rp = custom("n = 2\nf[1] = \"2*x1 - x2 + 0.5\"\nf[2] = \"x2\"\n");
  const auto d = decompose(rp.field, {}, default_sampling(rp.field));
  for (double eps : {0.3, 0.1, 0.02}) {
    const MollifiedField m(rp.field, d, eps, Box::cube(2, 0.2, 0.8));
    EXPECT_LE(m.moduli(default_sampling(rp.field)).nu_f, 1e-6) << eps;
  }
}

TEST(Mollify, ModulusNonIncreasingForContinuousReference) {
  const auto c = Config::parse("n = 2\nsplit = explicit\nbbar[1][1] = \"1.5 + 0.4*sin(pi*x1)\"\nbbar[2][2] = \"1 + x1*x2^2\"\n");
  const auto rp = resolve_problem(c);
  const auto d = decompose(rp.field, resolve_split(c, 2), default_sampling(rp.field));
  double prev = std::numeric_limits<double>::infinity();
  for (double eps : {0.2, 0.1, 0.05}) {
    const MollifiedField m(rp.field, d, eps, rp.field.domain().box);
    const double nu = m.moduli(default_sampling(rp.field)).nu_b;
    EXPECT_LE(nu, prev + 1e-9);
    prev = nu;
  }
  EXPECT_GT(prev, 0.0);
}

// ---------------------------------------------------------------- fixed point

TEST(FixedPoint, SmoothProblemNeedsOneIteration) {
  const auto f = builtin_problem("identity_heat", {{"n", 2}});
  const auto data = builtin_data("identity_heat", {{"n", 2}});
  const auto d = decompose(f, {}, default_sampling(f));
  const auto g = build_grid(f.domain().box, 9, 16, f.horizon());
  const auto p = make_problem(f, data);
  FixedPointOptions o;
  o.K = 0.0;
  const auto r = fixed_point_solve(f, d, p, g, o);
  EXPECT_TRUE(r.trace.converged);
  EXPECT_EQ(r.trace.iterations, 1);
  EXPECT_LE(r.trace.R_estimate, 1e-10);
  const auto direct = solve_backward(p, g, 1.0);
  for (int j = 0; j <= g.nt; ++j)
    EXPECT_LE(max_abs(r.solution.v[static_cast<std::size_t>(j)] - direct.v[static_cast<std::size_t>(j)]), 1e-12);
}

TEST(FixedPoint, RemainderEstimateScalesWithRemainder) {
  const auto g = build_grid(Box::cube(3, 0, 1), 7, 6, 1.0);
  auto est = [&](double alpha) {
    const auto f = builtin_problem("paper_3x3", {{"alpha", alpha}, {"beta", 0.0}});
    const auto d = decompose(f, {}, default_sampling(f));
    NormWeights w;
    w.gamma = {1.9};
    const ProofMirror pm(f, d, g, 0.1, 1.0, w, {0});
    return pm.estimate_R_norm(1.0, 3, 5);
  };
  const double a = est(0.25), b = est(0.5);
  EXPECT_GT(a, 0.0);
  EXPECT_GE(b, 2.0 * a - 1e-9);
}

TEST(FixedPoint, EstimateIsDeterministic) {
  const auto f = builtin_problem("paper_3x3", {{"alpha", 0.5}, {"beta", 0.0}});
  const auto d = decompose(f, {}, default_sampling(f));
  const auto g = build_grid(f.domain().box, 5, 4, 1.0);
  NormWeights w;
  w.gamma = {1.9};
  const ProofMirror pm(f, d, g, 0.1, 1.0, w, {0});
  EXPECT_EQ(pm.estimate_R_norm(2.0, 3, 9), pm.estimate_R_norm(2.0, 3, 9));
}

TEST(FixedPoint, Example3x3ContractsAndMatchesDirect) {
  const auto f = builtin_problem("paper_3x3", {{"alpha", 0.5}, {"beta", 0.0}});
  const auto data = builtin_data("paper_3x3", {{"alpha", 0.5}, {"beta", 0.0}});
  SplitSpec spec;
  spec.N = std::vector<int>{0};
  spec.gamma = std::vector<double>{1.9};
  const auto d = decompose(f, spec, default_sampling(f));
  const auto g = build_grid(f.domain().box, 9, 64, f.horizon());
  const auto p = make_problem(f, data);
  FixedPointOptions o;
  o.N = {0};
  o.weights.gamma = {1.9};
  const auto r = fixed_point_solve(f, d, p, g, o);
  const double bound = std::sqrt(2.0 * 0.25 / 1.9) / 1.0 + 0.1;
  EXPECT_TRUE(r.trace.converged);
  EXPECT_LE(r.trace.contraction_est, bound);
  EXPECT_LT(r.trace.R_estimate, 1.0);
  const auto direct = solve_backward(p, g, 1.0);
  double diff = 0.0;
  for (int j = 0; j <= g.nt; ++j) diff = std::max(diff, max_abs(r.solution.v[static_cast<std::size_t>(j)] - direct.v[static_cast<std::size_t>(j)]));
  EXPECT_LE(diff, 5e-3);
  const auto j = to_json(r.trace);
  EXPECT_EQ(j.at("schema"), "v1");
  EXPECT_TRUE(j.at("converged").get<bool>());
}

TEST(FixedPoint, ViolatedConditionIsRecorded) {
  const double a = std::sqrt(1.5);
  const auto f = builtin_problem("paper_3x3", {{"alpha", a}, {"beta", 0.0}});
  const auto data = builtin_data("paper_3x3", {{"alpha", a}, {"beta", 0.0}});
  const auto d = decompose(f, {}, default_sampling(f));
  const auto g = build_grid(f.domain().box, 5, 8, f.horizon());
  FixedPointOptions o;
  o.max_iter = 60;
  const auto r = fixed_point_solve(f, d, make_problem(f, data), g, o);
  // either outcome is acceptable outside the hypothesis; the trace must say which
  EXPECT_TRUE(r.trace.converged || r.trace.diverged || r.trace.iterations == 60);
  RecordProperty("contraction_est", std::to_string(r.trace.contraction_est));
  RecordProperty("converged", r.trace.converged ? "true" : "false");
}
