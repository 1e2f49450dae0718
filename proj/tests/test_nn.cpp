#include <cmath>
#include <tuple>

#include <doctest.h>

#include "autofed/errors.hpp"
#include "autofed/nn.hpp"

using namespace autofed;
using namespace autofed::nn;

namespace {

ModelSpec single_dense(std::size_t in, std::size_t out, LossKind loss = LossKind::kCrossEntropy) {
  return ModelSpec({{"fc", LayerKind::kDense, in, out}}, loss);
}

Batch one_row(std::vector<double> x) {
  Batch b;
  b.inputs = Matrix(1, x.size());
  b.inputs.data = std::move(x);
  return b;
}

double loss_at(const ModelSpec& spec, const ParamVector& w, const Batch& b) {
  return loss(spec, forward(spec, w, b), b);
}

}  // namespace

TEST_CASE("model spec layout") {
  const auto spec = ModelSpec::mlp(4, {5, 3}, 2, Activation::kTanh, LossKind::kCrossEntropy);
  CHECK(spec.num_param_layers() == 3);
  CHECK(spec.num_params() == (4 * 5 + 5) + (5 * 3 + 3) + (3 * 2 + 2));
  std::size_t off = 0;
  for (const auto& s : spec.layout()) {
    CHECK(s.offset == off);
    off += s.length;
  }
  CHECK(off == spec.num_params());
  CHECK_THROWS_AS(ModelSpec({{"a", LayerKind::kDense, 3, 4}, {"b", LayerKind::kDense, 5, 2}},
                            LossKind::kCrossEntropy),
                  ConfigError);
  const auto dice = ModelSpec::mlp(3, {4}, 3, Activation::kTanh, LossKind::kSoftDice);
  CHECK(dice.layers().back().kind == LayerKind::kActivation);
  CHECK(dice.layers().back().activation == Activation::kSigmoid);
}

TEST_CASE("forward: identity, zero and hand-set weights") {
  const auto spec = single_dense(2, 2);
  ParamVector w(spec.layout());
  w[0] = 1;
  w[3] = 1;
  auto out = forward(spec, w, one_row({0.3, -1.2}));
  CHECK(out(0, 0) == 0.3);
  CHECK(out(0, 1) == -1.2);

  ParamVector zero(spec.layout());
  out = forward(spec, zero, one_row({5.0, 7.0}));
  CHECK(out(0, 0) == 0.0);
  CHECK(out(0, 1) == 0.0);

  // W = [[1, 2], [3, 4]], b = (0.5, -1), x = (1, -1)
  ParamVector hand(spec.layout(), {1, 2, 3, 4, 0.5, -1});
  out = forward(spec, hand, one_row({1, -1}));
  CHECK(out(0, 0) == doctest::Approx(1 - 2 + 0.5));
  CHECK(out(0, 1) == doctest::Approx(3 - 4 - 1));

  CHECK_THROWS_AS(forward(spec, hand, one_row({1, 2, 3})), ConfigError);
}

TEST_CASE("cross-entropy of uniform logits is ln 2") {
  const auto spec = single_dense(2, 2);
  Batch b;
  b.inputs = Matrix(1, 2);
  b.labels = {0};
  Matrix logits(1, 2, 0.0);
  CHECK(loss(spec, logits, b) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("soft dice limits") {
  const auto spec = ModelSpec::mlp(2, {}, 4, Activation::kTanh, LossKind::kSoftDice);
  Batch b;
  b.inputs = Matrix(1, 2);
  b.masks = Matrix(1, 4);
  b.masks.data = {1, 0, 1, 0};
  Matrix same(1, 4);
  same.data = {1, 0, 1, 0};
  CHECK(loss(spec, same, b) == doctest::Approx(0.0).epsilon(1e-12));
  Matrix disjoint(1, 4);
  disjoint.data = {0, 1, 0, 1};
  CHECK(loss(spec, disjoint, b) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(loss(spec, disjoint, b) <= 1.0);
  Matrix bad(1, 4, 0.5);
  bad.data[1] = NAN;
  CHECK_THROWS_AS(loss(spec, bad, b), NumericalError);
}

TEST_CASE("gradient matches central differences component-wise") {
  Rng rng(17);
  for (auto lk : {LossKind::kCrossEntropy, LossKind::kSoftDice}) {
    for (auto act : {Activation::kTanh, Activation::kSigmoid}) {
      const auto spec = ModelSpec::mlp(3, {4}, 3, act, lk);
      ParamVector w(spec.layout());
      for (double& v : w.values()) v = 0.8 * rng.normal();
      Batch b;
      b.inputs = Matrix(4, 3);
      for (double& x : b.inputs.data) x = rng.normal();
      if (lk == LossKind::kCrossEntropy) {
        b.labels = {0, 2, 1, 2};
      } else {
        b.masks = Matrix(4, 3);
        for (double& m : b.masks.data) m = rng.uniform() < 0.5;
      }
      const auto g = grad(spec, w, b);
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double h = 1e-6 * (std::abs(w[j]) + 1);
        auto wp = w, wm = w;
        wp[j] += h;
        wm[j] -= h;
        const double fd = (loss_at(spec, wp, b) - loss_at(spec, wm, b)) / (2 * h);
        CHECK(std::abs(g[j] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("gradient vanishes at a minimum and ignores sample duplication") {
  // Linear softmax regression on two separable points with the bias only:
  // equal class counts put the minimum at zero bias.
  const auto spec = single_dense(1, 2);
  ParamVector w(spec.layout());
  Batch b;
  b.inputs = Matrix(2, 1, 0.0);
  b.labels = {0, 1};
  const auto g = grad(spec, w, b);
  for (double v : g.values()) CHECK(std::abs(v) < 1e-8);

  Rng rng(3);
  const auto mlp = ModelSpec::mlp(2, {3}, 2, Activation::kTanh, LossKind::kCrossEntropy);
  ParamVector w2(mlp.layout());
  for (double& v : w2.values()) v = rng.normal();
  Batch one;
  one.inputs = Matrix(2, 2);
  one.inputs.data = {0.1, -0.4, 1.2, 0.3};
  one.labels = {1, 0};
  Batch twice = one;
  twice.inputs = Matrix(4, 2);
  twice.inputs.data = {0.1, -0.4, 1.2, 0.3, 0.1, -0.4, 1.2, 0.3};
  twice.labels = {1, 0, 1, 0};
  const auto g1 = grad(mlp, w2, one), g2 = grad(mlp, w2, twice);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == doctest::Approx(g2[i]).epsilon(1e-12));
  // Bit-identical on repeat.
  CHECK(grad(mlp, w2, one) == g1);
}

TEST_CASE("optimizers") {
  const Layout lay{{"p", 0, 2}};
  ParamVector w(lay, {1, 1}), g(lay, {1, -1});
  auto [w1, s1] = opt_step(OptState::fresh({OptKind::kSgd, 0.1}, 2), w, g);
  CHECK(w1[0] == doctest::Approx(0.9));
  CHECK(w1[1] == doctest::Approx(1.1));
  CHECK(s1.step == 1);
  CHECK(s1.m.empty());

  ParamVector zero(lay, {0, 0});
  for (auto kind : {OptKind::kSgd, OptKind::kAdam}) {
    auto [w2, s2] = opt_step(OptState::fresh({kind, 0.1}, 2), w, zero);
    CHECK(w2 == w);
  }

  // First Adam step: m_hat = c, v_hat = c^2, so the step is lr * c / (c + eps).
  const double c = 0.37, lr = 0.01, eps = 1e-8;
  ParamVector gc(lay, {c, c});
  auto [w3, s3] = opt_step(OptState::fresh({OptKind::kAdam, lr, 0.5, 0.99, eps}, 2), w, gc);
  for (int i = 0; i < 2; ++i) CHECK(w3[i] == doctest::Approx(1.0 - lr * c / (c + eps)).epsilon(1e-14));
  CHECK(s3.m.size() == 2);

  ParamVector nan(lay, {NAN, 0});
  CHECK_THROWS_AS(opt_step(OptState::fresh({OptKind::kSgd, 0.1}, 2), w, nan), NumericalError);
}

TEST_CASE("sgd descends a quadratic") {
  // L(w) = 0.5 ||w - t||^2, gradient w - t.
  const Layout lay{{"p", 0, 3}};
  const std::vector<double> t{1, -2, 0.5};
  ParamVector w(lay, {0, 0, 0});
  auto state = OptState::fresh({OptKind::kSgd, 0.05}, 3);
  auto value = [&](const ParamVector& x) {
    double s = 0;
    for (int i = 0; i < 3; ++i) s += 0.5 * (x[i] - t[i]) * (x[i] - t[i]);
    return s;
  };
  double prev = value(w);
  for (int step = 0; step < 100; ++step) {
    ParamVector g(lay, {w[0] - t[0], w[1] - t[1], w[2] - t[2]});
    std::tie(w, state) = opt_step(std::move(state), w, g);
    const double now = value(w);
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("param vector serialization round-trips") {
  const auto spec = ModelSpec::mlp(3, {4}, 2, Activation::kTanh, LossKind::kCrossEntropy);
  Rng rng(9);
  const auto w = init_params(spec, rng);
  const auto bytes = serialize(w);
  CHECK(bytes.size() == serialized_size(spec.layout()));
  CHECK(bytes.substr(0, 4) == "AFPV");
  CHECK(deserialize(bytes) == w);
  CHECK_THROWS(deserialize(bytes.substr(0, bytes.size() - 3)));
}

TEST_CASE("scores") {
  const auto spec = single_dense(2, 2);
  ParamVector w(spec.layout(), {1, 0, 0, 1, 0, 0});
  Batch b;
  b.inputs = Matrix(2, 2);
  b.inputs.data = {2, 1, 0, 3};
  b.labels = {0, 0};
  CHECK(score(spec, w, b) == 0.5);
}
