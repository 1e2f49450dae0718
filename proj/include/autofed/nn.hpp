#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "autofed/rng.hpp"

// Minimal differentiable MLP kernel: dense + smooth activation layers,
// cross-entropy and soft Dice losses, SGD and Adam. Everything runs in
// double precision and is a pure function of its inputs.
namespace autofed::nn {

enum class LayerKind { kDense, kActivation };
enum class Activation { kTanh, kSigmoid };
enum class LossKind { kCrossEntropy, kSoftDice };

// Smoothing constant of the soft Dice loss.
inline constexpr double kDiceSmooth = 1e-5;

struct LayerDesc {
  std::string name;
  LayerKind kind = LayerKind::kDense;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  Activation activation = Activation::kTanh;  // used when kind == kActivation
};

// One contiguous run of parameters belonging to a named dense layer.
struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;

  bool operator==(const Segment&) const = default;
};

using Layout = std::vector<Segment>;

class ModelSpec {
public:
  ModelSpec(std::vector<LayerDesc> layers, LossKind loss);

  // Dense stack input -> hidden... -> output with `hidden_act` after every
  // hidden layer. A sigmoid head is appended for soft Dice.
  static ModelSpec mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                       std::size_t output_dim, Activation hidden_act, LossKind loss);

  const std::vector<LayerDesc>& layers() const { return layers_; }
  LossKind loss() const { return loss_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }

  // Number of parameter-bearing (dense) layers.
  std::size_t num_param_layers() const { return layout_.size(); }
  std::size_t num_params() const;
  const Layout& layout() const { return layout_; }

private:
  std::vector<LayerDesc> layers_;
  LossKind loss_;
  std::size_t input_dim_ = 0;
  std::size_t output_dim_ = 0;
  Layout layout_;
};

// Flat parameter vector partitioned into named layer segments. Weights of a
// dense layer are stored row-major (fan_out x fan_in) followed by the bias.
class ParamVector {
public:
  ParamVector() = default;
  explicit ParamVector(Layout layout);
  ParamVector(Layout layout, std::vector<double> values);

  const Layout& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> segment(std::size_t p);
  std::span<const double> segment(std::size_t p) const;

  bool same_layout(const ParamVector& other) const { return layout_ == other.layout_; }

  ParamVector& operator+=(const ParamVector& other);
  ParamVector& operator*=(double s);
  // this += s * other
  void axpy(double s, const ParamVector& other);

  bool operator==(const ParamVector&) const = default;

private:
  Layout layout_;
  std::vector<double> values_;
};

// Serialized form: "AFPV" magic, u32 version, u64 segment count, then per
// segment (u64 name length, name bytes, u64 offset, u64 length), then u64
// value count and the values as little-endian IEEE-754 doubles.
std::string serialize(const ParamVector& w);
ParamVector deserialize(std::string_view bytes);
std::size_t serialized_size(const Layout& layout);

// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

// Inputs plus either class labels (cross-entropy) or binary masks (Dice).
struct Batch {
  Matrix inputs;
  std::vector<std::size_t> labels;
  Matrix masks;

  std::size_t size() const { return inputs.rows; }
};

// Selects rows of `src` into a new batch.
Batch gather(const Batch& src, std::span<const std::size_t> rows);

ParamVector init_params(const ModelSpec& spec, Rng& rng);

Matrix forward(const ModelSpec& spec, const ParamVector& w, const Batch& b);

double loss(const ModelSpec& spec, const Matrix& predictions, const Batch& b);

// Loss and its exact gradient w.r.t. the parameters.
std::pair<double, ParamVector> loss_and_grad(const ModelSpec& spec, const ParamVector& w,
                                             const Batch& b);

inline ParamVector grad(const ModelSpec& spec, const ParamVector& w, const Batch& b) {
  return loss_and_grad(spec, w, b).second;
}

// Evaluation score in [0, 1]: accuracy for classification, mean hard Dice
// (threshold 0.5) for segmentation.
double score(const ModelSpec& spec, const ParamVector& w, const Batch& b);

enum class OptKind { kSgd, kAdam };

struct OptConfig {
  OptKind kind = OptKind::kSgd;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptState {
  OptConfig config;
  std::vector<double> m;  // empty unless adam
  std::vector<double> v;
  std::size_t step = 0;

  static OptState fresh(const OptConfig& cfg, std::size_t num_params);
};

std::pair<ParamVector, OptState> opt_step(OptState state, ParamVector w, const ParamVector& g);

}  // namespace autofed::nn
