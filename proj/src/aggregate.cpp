#include "autofed/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "autofed/errors.hpp"
#include "autofed/special.hpp"

namespace autofed::agg {

namespace {

std::size_t expected_columns(Granularity g, const nn::Layout& layout) {
  return g == Granularity::kNetwork ? 1 : layout.size();
}

}  // namespace

void AggWeights::check() const {
  for (std::size_t p = 0; p < values.columns(); ++p) {
    double sum = 0.0;
    for (double v : values.column(p)) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw InvariantError("aggregation weight outside (0, 1] in column " + std::to_string(p));
      }
      sum += v;
    }
    if (std::fabs(sum - 1.0) > kSimplexTol) {
      throw InvariantError("aggregation weights in column " + std::to_string(p) +
                           " do not sum to 1");
    }
  }
}

Concentration Concentration::constant(Parameterization param, std::size_t clients,
                                      std::size_t columns, double value) {
  return {param, WeightTable(clients, columns, value)};
}

void renormalize(std::span<double> column) {
  double sum = 0.0;
  for (double v : column) sum += v;
  for (double& v : column) v /= sum;
}

AggWeights fixed_weights(std::span<const double> column, std::size_t columns) {
  AggWeights a{granularity_for(columns), WeightTable(column.size(), columns)};
  for (std::size_t p = 0; p < columns; ++p) {
    auto col = a.values.column(p);
    std::copy(column.begin(), column.end(), col.begin());
    renormalize(col);
  }
  return a;
}

nn::ParamVector mix_models(std::span<const nn::ParamVector> models, const AggWeights& a) {
  if (models.empty()) throw ConfigError("mix_models: no models");
  if (models.size() != a.clients()) {
    throw ConfigError("mix_models: " + std::to_string(models.size()) + " models but " +
                      std::to_string(a.clients()) + " weight rows");
  }
  const auto& layout = models.front().layout();
  for (const auto& m : models) {
    if (m.layout() != layout) throw ConfigError("mix_models: model layouts differ");
  }
  const std::size_t cols = a.values.columns();
  if (cols != 1 && cols != layout.size()) {
    throw ConfigError("mix_models: " + std::to_string(cols) + " weight columns for " +
                      std::to_string(layout.size()) + " layers");
  }
  nn::ParamVector out(layout);
  for (std::size_t p = 0; p < layout.size(); ++p) {
    const std::size_t col = cols == 1 ? 0 : p;
    auto dst = out.segment(p);
    for (std::size_t k = 0; k < models.size(); ++k) {
      const double w = a.values.at(k, col);
      auto src = models[k].segment(p);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i];
    }
  }
  return out;
}

AggWeights softmax_map(const Concentration& c) {
  AggWeights a{granularity_for(c.values.columns()), c.values};
  for (std::size_t p = 0; p < c.values.columns(); ++p) {
    auto col = a.values.column(p);
    const double mx = *std::max_element(col.begin(), col.end());
    for (double& v : col) v = std::exp(v - mx);
    renormalize(col);
  }
  return a;
}

WeightTable softmax_backward(const WeightTable& dl_dalpha, const AggWeights& a) {
  if (dl_dalpha.clients() != a.values.clients() || dl_dalpha.columns() != a.values.columns()) {
    throw ConfigError("softmax_backward: shape mismatch");
  }
  WeightTable out(dl_dalpha.clients(), dl_dalpha.columns());
  for (std::size_t p = 0; p < out.columns(); ++p) {
    auto g = dl_dalpha.column(p);
    auto al = a.values.column(p);
    double dot = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) dot += al[k] * g[k];
    for (std::size_t k = 0; k < g.size(); ++k) out.at(k, p) = al[k] * (g[k] - dot);
  }
  return out;
}

double dirichlet_logpdf(std::span<const double> alpha, std::span<const double> beta) {
  if (alpha.size() != beta.size() || alpha.empty()) {
    throw ConfigError("dirichlet_logpdf: size mismatch");
  }
  double sum_a = 0.0;
  for (double v : alpha) {
    if (!(v > 0.0 && v < 1.0) && alpha.size() > 1) {
      throw DomainError("dirichlet_logpdf: alpha on or outside the simplex boundary");
    }
    sum_a += v;
  }
  if (std::fabs(sum_a - 1.0) > 1e-9) throw DomainError("dirichlet_logpdf: alpha does not sum to 1");
  double log_b = 0.0, sum_b = 0.0, acc = 0.0;
  for (std::size_t k = 0; k < beta.size(); ++k) {
    if (!(beta[k] > 0.0)) throw DomainError("dirichlet_logpdf: concentration must be positive");
    log_b += special::log_gamma(beta[k]);
    sum_b += beta[k];
    acc += (beta[k] - 1.0) * std::log(alpha[k]);
  }
  log_b -= special::log_gamma(sum_b);
  return acc - log_b;
}

std::vector<double> dirichlet_mode(std::span<const double> beta) {
  // sum_k (beta_k - 1) == sum beta - K, so the single renormalization pass
  // is the mode formula itself.
  std::vector<double> out(beta.begin(), beta.end());
  for (double& b : out) {
    if (!(b > 1.0)) throw InvariantError("dirichlet_mode: concentration must exceed 1");
    b -= 1.0;
  }
  renormalize(out);
  return out;
}

DirichletDraw dirichlet_sample(std::span<const double> beta, Rng& rng) {
  DirichletDraw d;
  d.z.reserve(beta.size());
  double sum = 0.0;
  for (double b : beta) {
    d.z.push_back(rng.gamma(b));
    sum += d.z.back();
  }
  d.alpha.resize(beta.size());
  for (std::size_t k = 0; k < beta.size(); ++k) d.alpha[k] = d.z[k] / sum;
  return d;
}

nn::Matrix dirichlet_sample_grad(std::span<const double> beta, std::span<const double> z) {
  const std::size_t k_count = beta.size();
  if (z.size() != k_count) throw ConfigError("dirichlet_sample_grad: size mismatch");
  double sum = 0.0;
  std::vector<double> dz(k_count);
  for (std::size_t j = 0; j < k_count; ++j) {
    if (!(z[j] > 0.0)) throw DomainError("dirichlet_sample_grad: gamma draw must be positive");
    sum += z[j];
    dz[j] = special::gamma_sample_dshape(beta[j], z[j]);
  }
  // alpha_k = z_k / S  =>  d alpha_k / d z_j = (delta_kj - alpha_k) / S
  nn::Matrix jac(k_count, k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    const double alpha_k = z[k] / sum;
    for (std::size_t j = 0; j < k_count; ++j) {
      const double delta = k == j ? 1.0 : 0.0;
      jac(k, j) = (delta - alpha_k) / sum * dz[j];
    }
  }
  return jac;
}

std::vector<double> dirichlet_backward(std::span<const double> dl_dalpha, const nn::Matrix& jac) {
  std::vector<double> out(jac.cols, 0.0);
  for (std::size_t k = 0; k < jac.rows; ++k) {
    for (std::size_t j = 0; j < jac.cols; ++j) out[j] += dl_dalpha[k] * jac(k, j);
  }
  return out;
}

AggWeights gamma_map(const Concentration& c) {
  if (c.parameterization == Parameterization::kSoftmax) return softmax_map(c);
  AggWeights a{granularity_for(c.values.columns()), WeightTable(c.clients(), c.values.columns())};
  for (std::size_t p = 0; p < c.values.columns(); ++p) {
    const auto mode = dirichlet_mode(c.values.column(p));
    std::copy(mode.begin(), mode.end(), a.values.column(p).begin());
  }
  return a;
}

void clamp_concentration(Concentration& c) {
  if (c.parameterization != Parameterization::kDirichlet) return;
  for (double& v : c.values.flat()) v = std::max(v, 1.0 + kConcentrationMargin);
}

WeightTable alpha_grad(const nn::ParamVector& dl_dw, std::span<const nn::ParamVector> models,
                       Granularity granularity) {
  const auto& layout = dl_dw.layout();
  for (const auto& m : models) {
    if (m.layout() != layout) throw ConfigError("alpha_grad: layout mismatch");
  }
  const std::size_t cols = expected_columns(granularity, layout);
  WeightTable out(models.size(), cols);
  for (std::size_t k = 0; k < models.size(); ++k) {
    for (std::size_t p = 0; p < layout.size(); ++p) {
      auto g = dl_dw.segment(p);
      auto w = models[k].segment(p);
      const double dot = std::inner_product(g.begin(), g.end(), w.begin(), 0.0);
      out.at(k, granularity == Granularity::kNetwork ? 0 : p) += dot;
    }
  }
  return out;
}

}  // namespace autofed::agg
