#include <cmath>
#include <numeric>

#include <doctest.h>

#include "autofed/aggregate.hpp"
#include "autofed/errors.hpp"

using namespace autofed;
using namespace autofed::agg;

namespace {

AggWeights column(std::vector<double> v) {
  AggWeights a{Granularity::kNetwork, WeightTable(v.size(), 1)};
  std::copy(v.begin(), v.end(), a.values.column(0).begin());
  return a;
}

Concentration conc(Parameterization p, std::vector<double> v) {
  Concentration c{p, WeightTable(v.size(), 1)};
  std::copy(v.begin(), v.end(), c.values.column(0).begin());
  return c;
}

nn::Layout two_layers() { return {{"l1", 0, 2}, {"l2", 2, 2}}; }

}  // namespace

TEST_CASE("mix_models") {
  const auto lay = two_layers();
  std::vector<nn::ParamVector> m{nn::ParamVector(lay, {1, 2, 3, 4}), nn::ParamVector(lay, {5, 6, 7, 8}),
                                 nn::ParamVector(lay, {-1, 0, 2, 9})};
  CHECK(mix_models(m, column({1, 0, 0})) == m[0]);

  std::vector<nn::ParamVector> same(3, m[1]);
  CHECK(mix_models(same, column({0.2, 0.3, 0.5})) == m[1]);

  // Layer-wise on K = 2.
  std::vector<nn::ParamVector> two{m[0], m[1]};
  AggWeights lw{Granularity::kLayer, WeightTable(2, 2)};
  lw.values.at(0, 0) = 0.25;
  lw.values.at(1, 0) = 0.75;
  lw.values.at(0, 1) = 0.5;
  lw.values.at(1, 1) = 0.5;
  const auto out = mix_models(two, lw);
  CHECK(out[0] == 0.25 * 1 + 0.75 * 5);
  CHECK(out[1] == 0.25 * 2 + 0.75 * 6);
  CHECK(out[2] == 0.5 * 3 + 0.5 * 7);
  CHECK(out[3] == 0.5 * 4 + 0.5 * 8);

  // Convex envelope.
  const auto env = mix_models(m, column({0.3, 0.3, 0.4}));
  for (std::size_t i = 0; i < env.size(); ++i) {
    CHECK(env[i] >= std::min({m[0][i], m[1][i], m[2][i]}));
    CHECK(env[i] <= std::max({m[0][i], m[1][i], m[2][i]}));
  }

  std::vector<nn::ParamVector> bad{m[0], nn::ParamVector({{"x", 0, 4}}, {1, 2, 3, 4})};
  CHECK_THROWS_AS(mix_models(bad, column({0.5, 0.5})), ConfigError);
}

TEST_CASE("softmax map and backward") {
  auto a = softmax_map(conc(Parameterization::kSoftmax, {0, 0, 0}));
  for (double v : a.values.flat()) CHECK(v == doctest::Approx(1.0 / 3));
  a = softmax_map(conc(Parameterization::kSoftmax, {0, std::log(2.0), std::log(3.0)}));
  CHECK(a.values.at(0, 0) == doctest::Approx(1.0 / 6).epsilon(1e-14));
  CHECK(a.values.at(1, 0) == doctest::Approx(1.0 / 3).epsilon(1e-14));
  CHECK(a.values.at(2, 0) == doctest::Approx(1.0 / 2).epsilon(1e-14));
  const auto shifted = softmax_map(conc(Parameterization::kSoftmax, {7, 7 + std::log(2.0), 7 + std::log(3.0)}));
  for (std::size_t k = 0; k < 3; ++k) CHECK(shifted.values.at(k, 0) == doctest::Approx(a.values.at(k, 0)).epsilon(1e-14));
  const double sum = std::accumulate(a.values.flat().begin(), a.values.flat().end(), 0.0);
  CHECK(std::abs(sum - 1.0) < 1e-12);

  WeightTable constant(3, 1, 2.5);
  const auto tangent = softmax_backward(constant, a);
  for (double v : tangent.flat()) CHECK(std::abs(v) < 1e-15);

  // Finite differences of L = sum_k c_k alpha_k^2 through the softmax.
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto beta = conc(Parameterization::kSoftmax, {rng.normal(), rng.normal(), rng.normal(), rng.normal()});
    const std::vector<double> c{1.0, -2.0, 0.5, 3.0};
    auto L = [&](const Concentration& b) {
      const auto al = softmax_map(b);
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += c[k] * al.values.at(k, 0) * al.values.at(k, 0);
      return s;
    };
    const auto al = softmax_map(beta);
    WeightTable up(4, 1);
    for (std::size_t k = 0; k < 4; ++k) up.at(k, 0) = 2 * c[k] * al.values.at(k, 0);
    const auto g = softmax_backward(up, al);
    double gsum = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      auto bp = beta, bm = beta;
      const double h = 1e-6;
      bp.values.at(j, 0) += h;
      bm.values.at(j, 0) -= h;
      const double fd = (L(bp) - L(bm)) / (2 * h);
      CHECK(std::abs(g.at(j, 0) - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
      gsum += g.at(j, 0);
    }
    CHECK(std::abs(gsum) < 1e-14);
  }
}

TEST_CASE("dirichlet log density") {
  const std::vector<double> flat{1, 1, 1};
  for (auto a : {std::vector<double>{0.2, 0.3, 0.5}, std::vector<double>{0.9, 0.05, 0.05}}) {
    CHECK(dirichlet_logpdf(a, flat) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  CHECK(dirichlet_logpdf(std::vector<double>{0.5, 0.5}, std::vector<double>{2, 2}) ==
        doctest::Approx(std::log(1.5)).epsilon(1e-12));
  CHECK_THROWS_AS(dirichlet_logpdf(std::vector<double>{0.0, 1.0}, std::vector<double>{2, 2}), DomainError);
  CHECK_THROWS_AS(dirichlet_logpdf(std::vector<double>{0.5, 0.5}, std::vector<double>{0, 2}), DomainError);

  // Midpoint quadrature over the 2-simplex (area element d a1 d a2).
  const std::vector<double> beta{2.5, 3.0, 1.5};
  const int n = 400;
  const double h = 1.0 / n;
  double total = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; i + j < n - 1; ++j) {
      const double a1 = (i + 0.5) * h, a2 = (j + 0.5) * h;
      total += std::exp(dirichlet_logpdf(std::vector<double>{a1, a2, 1 - a1 - a2}, beta)) * h * h;
    }
  }
  CHECK(std::abs(total - 1.0) < 1e-2);
}

TEST_CASE("dirichlet mode") {
  auto m = dirichlet_mode(std::vector<double>{6, 6, 6});
  for (double v : m) CHECK(std::abs(v - 1.0 / 3) < 1e-12);
  m = dirichlet_mode(std::vector<double>{5, 3, 2});
  CHECK(m[0] == doctest::Approx(4.0 / 7).epsilon(1e-14));
  CHECK(m[1] == doctest::Approx(2.0 / 7).epsilon(1e-14));
  CHECK(m[2] == doctest::Approx(1.0 / 7).epsilon(1e-14));
  const double edge = 1.0 + kConcentrationMargin;
  m = dirichlet_mode(std::vector<double>{edge, edge, edge, edge});
  for (double v : m) CHECK(v == 0.25);
  CHECK_THROWS_AS(dirichlet_mode(std::vector<double>{2, 1, 3}), InvariantError);

  Concentration c = conc(Parameterization::kDirichlet, {0.2, 5, 1});
  clamp_concentration(c);
  CHECK(c.values.at(0, 0) == edge);
  CHECK(c.values.at(1, 0) == 5);
  CHECK(c.values.at(2, 0) == edge);
}

TEST_CASE("dirichlet sampling moments") {
  Rng rng(77);
  const std::vector<double> beta{6, 6, 6};
  const int n = 10000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const auto d = dirichlet_sample(beta, rng);
    const double sum = std::accumulate(d.alpha.begin(), d.alpha.end(), 0.0);
    CHECK(std::abs(sum - 1.0) < 1e-12);
    s += d.alpha[0];
    s2 += d.alpha[0] * d.alpha[0];
  }
  const double var = (1.0 / 3) * (2.0 / 3) / 19.0;
  const double mean = s / n;
  CHECK(std::abs(mean - 1.0 / 3) < 3 * std::sqrt(var / n));
  CHECK((s2 / n - mean * mean) == doctest::Approx(var).epsilon(0.05));

  Rng r1(5), r2(5);
  CHECK(dirichlet_sample(beta, r1).alpha == dirichlet_sample(beta, r2).alpha);
}

TEST_CASE("dirichlet sample Jacobian") {
  Rng rng(8);
  const std::vector<double> beta{2.0, 3.5, 0.8};
  const auto d = dirichlet_sample(beta, rng);
  const auto jac = dirichlet_sample_grad(beta, d.z);
  for (std::size_t j = 0; j < 3; ++j) {
    double col = 0;
    for (std::size_t k = 0; k < 3; ++k) col += jac(k, j);
    CHECK(std::abs(col) < 1e-14);
  }
  CHECK_THROWS_AS(dirichlet_sample_grad(beta, std::vector<double>{1.0, 0.0, 2.0}), DomainError);

  // Symmetric beta and a symmetric loss give an exchangeable gradient.
  const std::vector<double> sym{4, 4, 4};
  std::vector<double> g(3, 0.0);
  Rng r(21);
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const auto s = dirichlet_sample(sym, r);
    std::vector<double> dl(3);
    for (int k = 0; k < 3; ++k) dl[k] = 2 * s.alpha[k];
    const auto gi = dirichlet_backward(dl, dirichlet_sample_grad(sym, s.z));
    for (int k = 0; k < 3; ++k) g[k] += gi[k] / n;
  }
  const double mean = (g[0] + g[1] + g[2]) / 3;
  for (double v : g) CHECK(std::abs(v - mean) < 0.15 * std::abs(mean) + 1e-3);
  // E[sum alpha^2] falls as concentration grows.
  CHECK(mean < 0.0);
}

TEST_CASE("alpha gradient") {
  const auto lay = two_layers();
  std::vector<nn::ParamVector> zeros(3, nn::ParamVector(lay));
  const nn::ParamVector g(lay, {1, -2, 3, 0.5});
  const auto none = alpha_grad(g, zeros, Granularity::kNetwork);
  for (double v : none.flat()) CHECK(v == 0.0);

  std::vector<nn::ParamVector> m{nn::ParamVector(lay, {1, 2, 3, 4}), nn::ParamVector(lay, {5, 6, 7, 8})};
  const auto net = alpha_grad(g, m, Granularity::kNetwork);
  const auto layer = alpha_grad(g, m, Granularity::kLayer);
  REQUIRE(net.columns() == 1);
  REQUIRE(layer.columns() == 2);
  CHECK(net.at(0, 0) == 1 * 1 - 2 * 2 + 3 * 3 + 0.5 * 4);
  for (std::size_t k = 0; k < 2; ++k) CHECK(net.at(k, 0) == layer.at(k, 0) + layer.at(k, 1));
  CHECK_THROWS_AS(alpha_grad(nn::ParamVector({{"x", 0, 4}}), m, Granularity::kNetwork), ConfigError);
}

TEST_CASE("weight invariants") {
  auto a = column({0.5, 0.5});
  CHECK_NOTHROW(a.check());
  a = column({0.6, 0.5});
  CHECK_THROWS_AS(a.check(), InvariantError);
  a = column({1.0, 0.0});
  CHECK_THROWS_AS(a.check(), InvariantError);
  std::vector<double> col{1, 1, 1};
  renormalize(col);
  CHECK(col[0] == 1.0 / 3);
}
