#pragma once

#include <span>
#include <vector>

#include "autofed/nn.hpp"
#include "autofed/rng.hpp"

// Aggregation weights on the probability simplex and the two ways of
// parameterizing them: softmax over unconstrained logits, and a Dirichlet
// distribution over positive concentrations (sampled while learning, mode
// at aggregation time).
namespace autofed::agg {

enum class Granularity { kNetwork, kLayer };
enum class Parameterization { kSoftmax, kDirichlet };

// Dirichlet concentrations are kept >= 1 + kConcentrationMargin so the
// mode stays strictly inside the simplex.
inline constexpr double kConcentrationMargin = 1e-3;
inline constexpr double kSimplexTol = 1e-12;

// K x P table stored column-major: entry (k, p) lives at p * K + k. Column
// p belongs to parameter layer p (or the whole network when P == 1).
class WeightTable {
public:
  WeightTable() = default;
  WeightTable(std::size_t clients, std::size_t columns, double fill = 0.0)
      : clients_(clients), columns_(columns), data_(clients * columns, fill) {}

  std::size_t clients() const { return clients_; }
  std::size_t columns() const { return columns_; }
  double& at(std::size_t k, std::size_t p) { return data_[p * clients_ + k]; }
  double at(std::size_t k, std::size_t p) const { return data_[p * clients_ + k]; }
  std::span<double> column(std::size_t p) { return {data_.data() + p * clients_, clients_}; }
  std::span<const double> column(std::size_t p) const {
    return {data_.data() + p * clients_, clients_};
  }
  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  bool operator==(const WeightTable&) const = default;

private:
  std::size_t clients_ = 0;
  std::size_t columns_ = 0;
  std::vector<double> data_;
};

struct AggWeights {
  Granularity granularity = Granularity::kNetwork;
  WeightTable values;

  std::size_t clients() const { return values.clients(); }
  // Throws InvariantError unless every column is positive and sums to 1.
  void check() const;
};

struct Concentration {
  Parameterization parameterization = Parameterization::kSoftmax;
  WeightTable values;

  std::size_t clients() const { return values.clients(); }
  static Concentration constant(Parameterization param, std::size_t clients,
                                std::size_t columns, double value);
};

// Divides the column by its sum (one pass).
void renormalize(std::span<double> column);

// Granularity implied by a number of weight columns.
inline Granularity granularity_for(std::size_t columns) {
  return columns == 1 ? Granularity::kNetwork : Granularity::kLayer;
}

// Fixed weights with the same column repeated `columns` times.
AggWeights fixed_weights(std::span<const double> column, std::size_t columns);

// Per-layer convex combination sum_k a(k, p) * models[k] restricted to layer
// p; a single column is applied to every layer.
nn::ParamVector mix_models(std::span<const nn::ParamVector> models, const AggWeights& a);

AggWeights softmax_map(const Concentration& c);

// dL/dbeta_k = alpha_k * (dL/dalpha_k - sum_i alpha_i dL/dalpha_i), per column.
WeightTable softmax_backward(const WeightTable& dl_dalpha, const AggWeights& a);

// log Dir(alpha | beta). Requires alpha strictly inside the simplex.
double dirichlet_logpdf(std::span<const double> alpha, std::span<const double> beta);

// (beta_k - 1) / (sum beta - K); every beta_k must exceed 1.
std::vector<double> dirichlet_mode(std::span<const double> beta);

struct DirichletDraw {
  std::vector<double> alpha;
  std::vector<double> z;  // underlying Gamma(beta_k, 1) draws
};

DirichletDraw dirichlet_sample(std::span<const double> beta, Rng& rng);

// Jacobian J(k, j) = d alpha_k / d beta_j of alpha = z / sum(z), using the
// implicit reparameterization dz_j/dbeta_j = -(dF/dbeta)/f for each Gamma
// draw.
nn::Matrix dirichlet_sample_grad(std::span<const double> beta, std::span<const double> z);

// Per-column chain rule dL/dbeta_j = sum_k dL/dalpha_k * J(k, j).
std::vector<double> dirichlet_backward(std::span<const double> dl_dalpha, const nn::Matrix& jac);

// The inference-time map: softmax, or the Dirichlet mode per column.
AggWeights gamma_map(const Concentration& c);

// Raises every Dirichlet concentration to at least 1 + kConcentrationMargin.
void clamp_concentration(Concentration& c);

// dL/dalpha(k, p) = <dL/dw restricted to layer p, models[k] restricted to
// layer p>; network granularity sums over all layers.
WeightTable alpha_grad(const nn::ParamVector& dl_dw, std::span<const nn::ParamVector> models,
                       Granularity granularity);

}  // namespace autofed::agg
