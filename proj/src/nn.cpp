#include "autofed/nn.hpp"

#include <algorithm>
#include <cmath>

#include "autofed/binary_io.hpp"
#include "autofed/errors.hpp"

namespace autofed::nn {

namespace {

constexpr std::uint32_t kParamVersion = 1;
constexpr std::string_view kParamMagic = "AFPV";

double activate(Activation a, double x) {
  switch (a) {
    case Activation::kTanh:
      return std::tanh(x);
    case Activation::kSigmoid:
      return 1.0 / (1.0 + std::exp(-x));
  }
  return x;
}

// Derivative expressed through the activation output y.
double activate_deriv(Activation a, double y) {
  switch (a) {
    case Activation::kTanh:
      return 1.0 - y * y;
    case Activation::kSigmoid:
      return y * (1.0 - y);
  }
  return 1.0;
}

void check_batch(const ModelSpec& spec, const ParamVector& w, const Batch& b) {
  if (w.layout() != spec.layout()) {
    throw ConfigError("parameter layout does not match model spec");
  }
  if (b.inputs.rows == 0) throw ConfigError("empty batch");
  if (b.inputs.cols != spec.input_dim()) {
    throw ConfigError("batch feature dimension " + std::to_string(b.inputs.cols) +
                      " does not match model input " + std::to_string(spec.input_dim()));
  }
}

void check_targets(const ModelSpec& spec, const Matrix& pred, const Batch& b) {
  if (pred.rows != b.inputs.rows) throw ConfigError("prediction/batch row mismatch");
  if (spec.loss() == LossKind::kCrossEntropy) {
    if (b.labels.size() != pred.rows) throw ConfigError("label count does not match batch");
    for (auto y : b.labels) {
      if (y >= pred.cols) throw ConfigError("class label out of range");
    }
  } else {
    if (b.masks.rows != pred.rows || b.masks.cols != pred.cols) {
      throw ConfigError("mask shape does not match predictions");
    }
  }
  for (double v : pred.data) {
    if (!std::isfinite(v)) throw NumericalError("non-finite model output");
  }
}

// Activations of every layer; acts[0] is the input.
std::vector<Matrix> forward_trace(const ModelSpec& spec, const ParamVector& w, const Batch& b) {
  std::vector<Matrix> acts;
  acts.reserve(spec.layers().size() + 1);
  acts.push_back(b.inputs);
  std::size_t p = 0;
  for (const auto& layer : spec.layers()) {
    const Matrix& x = acts.back();
    if (layer.kind == LayerKind::kDense) {
      auto seg = w.segment(p++);
      const double* W = seg.data();
      const double* bias = seg.data() + layer.fan_in * layer.fan_out;
      Matrix y(x.rows, layer.fan_out);
      for (std::size_t r = 0; r < x.rows; ++r) {
        for (std::size_t o = 0; o < layer.fan_out; ++o) {
          double acc = bias[o];
          const double* wr = W + o * layer.fan_in;
          for (std::size_t i = 0; i < layer.fan_in; ++i) acc += wr[i] * x(r, i);
          y(r, o) = acc;
        }
      }
      acts.push_back(std::move(y));
    } else {
      Matrix y = x;
      for (double& v : y.data) v = activate(layer.activation, v);
      acts.push_back(std::move(y));
    }
  }
  return acts;
}

// Per-sample loss terms and dL/dprediction (already divided by batch size).
double loss_impl(const ModelSpec& spec, const Matrix& pred, const Batch& b, Matrix* dpred) {
  const std::size_t n = pred.rows;
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  if (dpred) *dpred = Matrix(pred.rows, pred.cols);
  if (spec.loss() == LossKind::kCrossEntropy) {
    for (std::size_t r = 0; r < n; ++r) {
      auto z = pred.row(r);
      const double zmax = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (double v : z) sum += std::exp(v - zmax);
      const double lse = zmax + std::log(sum);
      total += lse - z[b.labels[r]];
      if (dpred) {
        for (std::size_t c = 0; c < pred.cols; ++c) {
          double s = std::exp(z[c] - lse);
          if (c == b.labels[r]) s -= 1.0;
          (*dpred)(r, c) = s * inv_n;
        }
      }
    }
  } else {
    for (std::size_t r = 0; r < n; ++r) {
      auto p = pred.row(r);
      auto t = b.masks.row(r);
      double inter = 0.0, sp = 0.0, st = 0.0;
      for (std::size_t c = 0; c < pred.cols; ++c) {
        inter += p[c] * t[c];
        sp += p[c];
        st += t[c];
      }
      const double num = 2.0 * inter + kDiceSmooth;
      const double den = sp + st + kDiceSmooth;
      total += 1.0 - num / den;
      if (dpred) {
        for (std::size_t c = 0; c < pred.cols; ++c) {
          (*dpred)(r, c) = -(2.0 * t[c] * den - num) / (den * den) * inv_n;
        }
      }
    }
  }
  return total * inv_n;
}

}  // namespace

ModelSpec::ModelSpec(std::vector<LayerDesc> layers, LossKind loss)
    : layers_(std::move(layers)), loss_(loss) {
  std::size_t width = 0;
  bool have_width = false;
  std::size_t offset = 0;
  for (auto& layer : layers_) {
    if (layer.kind == LayerKind::kDense) {
      if (layer.fan_in == 0 || layer.fan_out == 0) {
        throw ConfigError("dense layer '" + layer.name + "' has zero width");
      }
      if (have_width && width != layer.fan_in) {
        throw ConfigError("dense layer '" + layer.name + "' fan_in " +
                          std::to_string(layer.fan_in) + " does not match previous width " +
                          std::to_string(width));
      }
      if (!have_width) input_dim_ = layer.fan_in;
      const std::size_t len = layer.fan_in * layer.fan_out + layer.fan_out;
      layout_.push_back({layer.name, offset, len});
      offset += len;
      width = layer.fan_out;
      have_width = true;
    } else {
      if (!have_width) throw ConfigError("activation layer before any dense layer");
      layer.fan_in = layer.fan_out = width;
    }
  }
  if (layout_.empty()) throw ConfigError("model has no parameterized layers");
  output_dim_ = width;
}

ModelSpec ModelSpec::mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                         std::size_t output_dim, Activation hidden_act, LossKind loss) {
  std::vector<LayerDesc> layers;
  std::size_t in = input_dim;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers.push_back({"dense" + std::to_string(i), LayerKind::kDense, in, hidden[i]});
    layers.push_back({"act" + std::to_string(i), LayerKind::kActivation, 0, 0, hidden_act});
    in = hidden[i];
  }
  layers.push_back({"dense" + std::to_string(hidden.size()), LayerKind::kDense, in, output_dim});
  if (loss == LossKind::kSoftDice) {
    layers.push_back({"head", LayerKind::kActivation, 0, 0, Activation::kSigmoid});
  }
  return ModelSpec(std::move(layers), loss);
}

std::size_t ModelSpec::num_params() const {
  const auto& last = layout_.back();
  return last.offset + last.length;
}

ParamVector::ParamVector(Layout layout) : layout_(std::move(layout)) {
  std::size_t expect = 0;
  for (const auto& s : layout_) {
    if (s.offset != expect) throw ConfigError("layout segments are not contiguous");
    expect += s.length;
  }
  values_.assign(expect, 0.0);
}

ParamVector::ParamVector(Layout layout, std::vector<double> values)
    : ParamVector(std::move(layout)) {
  if (values.size() != values_.size()) {
    throw ConfigError("value count does not match layout");
  }
  values_ = std::move(values);
}

std::span<double> ParamVector::segment(std::size_t p) {
  const auto& s = layout_.at(p);
  return {values_.data() + s.offset, s.length};
}

std::span<const double> ParamVector::segment(std::size_t p) const {
  const auto& s = layout_.at(p);
  return {values_.data() + s.offset, s.length};
}

ParamVector& ParamVector::operator+=(const ParamVector& other) {
  axpy(1.0, other);
  return *this;
}

ParamVector& ParamVector::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

void ParamVector::axpy(double s, const ParamVector& other) {
  if (!same_layout(other)) throw ConfigError("parameter layouts differ");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += s * other.values_[i];
}

std::size_t serialized_size(const Layout& layout) {
  std::size_t n = kParamMagic.size() + 4 + 8;
  std::size_t count = 0;
  for (const auto& s : layout) {
    n += 8 + s.name.size() + 8 + 8;
    count += s.length;
  }
  return n + 8 + 8 * count;
}

std::string serialize(const ParamVector& w) {
  std::string out;
  out.reserve(serialized_size(w.layout()));
  bin::put_bytes(out, kParamMagic);
  bin::put_u32(out, kParamVersion);
  bin::put_u64(out, w.layout().size());
  for (const auto& s : w.layout()) {
    bin::put_u64(out, s.name.size());
    bin::put_bytes(out, s.name);
    bin::put_u64(out, s.offset);
    bin::put_u64(out, s.length);
  }
  bin::put_u64(out, w.size());
  for (double v : w.values()) bin::put_f64(out, v);
  return out;
}

ParamVector deserialize(std::string_view bytes) {
  bin::Reader in(bytes);
  if (in.bytes(kParamMagic.size()) != kParamMagic) throw IoError("bad parameter file magic");
  if (in.u32() != kParamVersion) throw IoError("unsupported parameter file version");
  const auto nseg = in.u64();
  Layout layout;
  for (std::uint64_t i = 0; i < nseg; ++i) {
    Segment s;
    s.name = std::string(in.bytes(in.u64()));
    s.offset = in.u64();
    s.length = in.u64();
    layout.push_back(std::move(s));
  }
  const auto count = in.u64();
  std::vector<double> values(count);
  for (auto& v : values) v = in.f64();
  if (!in.done()) throw IoError("trailing bytes after parameter payload");
  return ParamVector(std::move(layout), std::move(values));
}

Batch gather(const Batch& src, std::span<const std::size_t> rows) {
  Batch out;
  out.inputs = Matrix(rows.size(), src.inputs.cols);
  const bool has_masks = src.masks.rows > 0;
  if (has_masks) out.masks = Matrix(rows.size(), src.masks.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    std::copy_n(src.inputs.row(r).begin(), src.inputs.cols, out.inputs.row(i).begin());
    if (has_masks) std::copy_n(src.masks.row(r).begin(), src.masks.cols, out.masks.row(i).begin());
    if (!src.labels.empty()) out.labels.push_back(src.labels[r]);
  }
  return out;
}

ParamVector init_params(const ModelSpec& spec, Rng& rng) {
  ParamVector w(spec.layout());
  std::size_t p = 0;
  for (const auto& layer : spec.layers()) {
    if (layer.kind != LayerKind::kDense) continue;
    auto seg = w.segment(p++);
    // Glorot uniform weights, zero bias.
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.fan_in + layer.fan_out));
    for (std::size_t i = 0; i < layer.fan_in * layer.fan_out; ++i) {
      seg[i] = (2.0 * rng.uniform() - 1.0) * limit;
    }
  }
  return w;
}

Matrix forward(const ModelSpec& spec, const ParamVector& w, const Batch& b) {
  check_batch(spec, w, b);
  return std::move(forward_trace(spec, w, b).back());
}

double loss(const ModelSpec& spec, const Matrix& predictions, const Batch& b) {
  check_targets(spec, predictions, b);
  return loss_impl(spec, predictions, b, nullptr);
}

std::pair<double, ParamVector> loss_and_grad(const ModelSpec& spec, const ParamVector& w,
                                             const Batch& b) {
  check_batch(spec, w, b);
  auto acts = forward_trace(spec, w, b);
  check_targets(spec, acts.back(), b);
  Matrix delta;
  const double value = loss_impl(spec, acts.back(), b, &delta);

  ParamVector g(w.layout());
  std::size_t p = spec.num_param_layers();
  for (std::size_t li = spec.layers().size(); li-- > 0;) {
    const auto& layer = spec.layers()[li];
    const Matrix& x = acts[li];
    if (layer.kind == LayerKind::kActivation) {
      const Matrix& y = acts[li + 1];
      for (std::size_t i = 0; i < delta.data.size(); ++i) {
        delta.data[i] *= activate_deriv(layer.activation, y.data[i]);
      }
      continue;
    }
    --p;
    auto wseg = w.segment(p);
    auto gseg = g.segment(p);
    const double* W = wseg.data();
    double* gW = gseg.data();
    double* gb = gseg.data() + layer.fan_in * layer.fan_out;
    for (std::size_t r = 0; r < x.rows; ++r) {
      for (std::size_t o = 0; o < layer.fan_out; ++o) {
        const double d = delta(r, o);
        gb[o] += d;
        double* gr = gW + o * layer.fan_in;
        for (std::size_t i = 0; i < layer.fan_in; ++i) gr[i] += d * x(r, i);
      }
    }
    if (li == 0) break;
    Matrix dx(x.rows, layer.fan_in);
    for (std::size_t r = 0; r < x.rows; ++r) {
      for (std::size_t o = 0; o < layer.fan_out; ++o) {
        const double d = delta(r, o);
        const double* wr = W + o * layer.fan_in;
        for (std::size_t i = 0; i < layer.fan_in; ++i) dx(r, i) += d * wr[i];
      }
    }
    delta = std::move(dx);
  }
  return {value, std::move(g)};
}

double score(const ModelSpec& spec, const ParamVector& w, const Batch& b) {
  const Matrix pred = forward(spec, w, b);
  double total = 0.0;
  if (spec.loss() == LossKind::kCrossEntropy) {
    for (std::size_t r = 0; r < pred.rows; ++r) {
      auto z = pred.row(r);
      const auto arg = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
      if (arg == b.labels.at(r)) total += 1.0;
    }
  } else {
    for (std::size_t r = 0; r < pred.rows; ++r) {
      auto p = pred.row(r);
      auto t = b.masks.row(r);
      double inter = 0.0, np = 0.0, nt = 0.0;
      for (std::size_t c = 0; c < pred.cols; ++c) {
        const double hard = p[c] >= 0.5 ? 1.0 : 0.0;
        inter += hard * t[c];
        np += hard;
        nt += t[c];
      }
      total += (np + nt) == 0.0 ? 1.0 : 2.0 * inter / (np + nt);
    }
  }
  return total / static_cast<double>(pred.rows);
}

OptState OptState::fresh(const OptConfig& cfg, std::size_t num_params) {
  if (!(cfg.learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  OptState s;
  s.config = cfg;
  if (cfg.kind == OptKind::kAdam) {
    s.m.assign(num_params, 0.0);
    s.v.assign(num_params, 0.0);
  }
  return s;
}

std::pair<ParamVector, OptState> opt_step(OptState state, ParamVector w, const ParamVector& g) {
  if (!w.same_layout(g)) throw ConfigError("gradient layout does not match parameters");
  for (double v : g.values()) {
    if (!std::isfinite(v)) throw NumericalError("non-finite gradient");
  }
  const auto& cfg = state.config;
  auto wv = w.values();
  auto gv = g.values();
  state.step += 1;
  if (cfg.kind == OptKind::kSgd) {
    for (std::size_t i = 0; i < wv.size(); ++i) wv[i] -= cfg.learning_rate * gv[i];
    return {std::move(w), std::move(state)};
  }
  if (state.m.size() != wv.size() || state.v.size() != wv.size()) {
    throw ConfigError("adam moment accumulators do not match parameter count");
  }
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < wv.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * gv[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * gv[i] * gv[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    wv[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
  }
  return {std::move(w), std::move(state)};
}

}  // namespace autofed::nn
