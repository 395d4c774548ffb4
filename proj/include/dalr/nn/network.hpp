// Fully-connected regression networks: parameters, forward pass, exact
// backpropagation and Monte-Carlo dropout.
#pragma once

#include "dalr/core.hpp"

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dalr::nn {

enum class Activation { relu };

/// Auxiliary loss-prediction head: taps the last `taps` hidden layers, feeds
/// each through a `width`-unit ReLU block and maps the concatenation to one
/// scalar.
struct LossHeadSpec {
  std::size_t taps = 3;
  std::size_t width = 10;
};

struct NetworkSpec {
  /// input dim, hidden widths..., output dim
  std::vector<std::size_t> layer_widths;
  Activation hidden_activation = Activation::relu;
  /// Applied to every hidden layer output. Non-zero only for the BALD scorer.
  double dropout_rate = 0.0;
  std::optional<LossHeadSpec> aux_head;

  std::size_t input_dim() const { return layer_widths.front(); }
  std::size_t output_dim() const { return layer_widths.back(); }
  /// Number of affine layers.
  std::size_t layer_count() const { return layer_widths.size() - 1; }
  std::size_t hidden_count() const { return layer_widths.size() - 2; }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < layer_widths.size(); ++l)
      total += layer_widths[l + 1] * (layer_widths[l] + 1);
    return total;
  }

  void validate() const {
    if (layer_widths.size() < 2)
      throw InvalidInput("network needs at least an input and an output width");
    for (auto w : layer_widths)
      if (w == 0) throw InvalidInput("layer widths must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw InvalidInput("dropout rate must lie in [0, 1)");
    if (aux_head && (aux_head->taps == 0 || aux_head->width == 0))
      throw InvalidInput("loss head needs at least one tap of positive width");
  }

  /// `depth` hidden layers of `width` units.
  static NetworkSpec mlp(std::size_t in, std::size_t width, std::size_t depth,
                         std::size_t out) {
    NetworkSpec spec;
    spec.layer_widths.push_back(in);
    for (std::size_t i = 0; i < depth; ++i) spec.layer_widths.push_back(width);
    spec.layer_widths.push_back(out);
    return spec;
  }

  friend bool operator==(const NetworkSpec& a, const NetworkSpec& b) {
    const bool heads_equal =
        a.aux_head.has_value() == b.aux_head.has_value() &&
        (!a.aux_head || (a.aux_head->taps == b.aux_head->taps &&
                         a.aux_head->width == b.aux_head->width));
    return a.layer_widths == b.layer_widths &&
           a.hidden_activation == b.hidden_activation &&
           a.dropout_rate == b.dropout_rate && heads_equal;
  }
};

/// Weights and biases per affine layer. The flat view orders layers from
/// input to output; within a layer the weight matrix comes first (row-major),
/// then the bias.
struct Parameters {
  std::vector<Matrix> weights;  // layer l is widths[l+1] x widths[l]
  std::vector<Vector> biases;

  static Parameters zeros(const NetworkSpec& spec) {
    Parameters p;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
      const auto rows = static_cast<Eigen::Index>(spec.layer_widths[l + 1]);
      const auto cols = static_cast<Eigen::Index>(spec.layer_widths[l]);
      p.weights.push_back(Matrix::Zero(rows, cols));
      p.biases.push_back(Vector::Zero(rows));
    }
    return p;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l)
      n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    return n;
  }

  Vector flatten() const {
    Vector flat(static_cast<Eigen::Index>(size()));
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      const Matrix& w = weights[l];
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) flat[at++] = w(r, c);
      flat.segment(at, biases[l].size()) = biases[l];
      at += biases[l].size();
    }
    return flat;
  }

  static Parameters unflatten(const NetworkSpec& spec, const Vector& flat) {
    if (static_cast<std::size_t>(flat.size()) != spec.parameter_count())
      throw InvalidInput("flat parameter vector has " + std::to_string(flat.size()) +
                         " entries, network expects " +
                         std::to_string(spec.parameter_count()));
    Parameters p = zeros(spec);
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
      Matrix& w = p.weights[l];
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = flat[at++];
      p.biases[l] = flat.segment(at, p.biases[l].size());
      at += p.biases[l].size();
    }
    return p;
  }

  double squared_norm() const {
    double s = 0.0;
    for (std::size_t l = 0; l < weights.size(); ++l)
      s += weights[l].squaredNorm() + biases[l].squaredNorm();
    return s;
  }

  friend bool operator==(const Parameters& a, const Parameters& b) {
    if (a.weights.size() != b.weights.size()) return false;
    for (std::size_t l = 0; l < a.weights.size(); ++l) {
      if (a.weights[l].rows() != b.weights[l].rows() ||
          a.weights[l].cols() != b.weights[l].cols())
        return false;
      if (a.weights[l] != b.weights[l] || a.biases[l] != b.biases[l]) return false;
    }
    return true;
  }
};

/// Uniform He initialization, U(-sqrt(6/fan_in), sqrt(6/fan_in)); zero biases.
inline Parameters initialize(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Parameters p = Parameters::zeros(spec);
  Rng rng(seed);
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(spec.layer_widths[l]));
    Matrix& w = p.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-limit, limit);
  }
  return p;
}

/// Intermediate values kept for backpropagation.
struct ForwardCache {
  /// layer_inputs[l] is what affine layer l consumed (after dropout).
  std::vector<Matrix> layer_inputs;
  /// ReLU outputs of each hidden layer before masking.
  std::vector<Matrix> hidden;
  /// Dropout masks per hidden layer (already scaled by 1/(1-rate)); empty
  /// when no dropout was applied.
  std::vector<Matrix> masks;
};

namespace detail {

inline void check_input(const NetworkSpec& spec, const Parameters& params,
                        const Matrix& x) {
  if (static_cast<std::size_t>(x.rows()) != spec.input_dim())
    throw InvalidInput("input has dimension " + std::to_string(x.rows()) +
                       ", network expects " + std::to_string(spec.input_dim()));
  if (params.weights.size() != spec.layer_count())
    throw InvalidInput("parameters do not match network layer count");
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    if (static_cast<std::size_t>(params.weights[l].rows()) != spec.layer_widths[l + 1] ||
        static_cast<std::size_t>(params.weights[l].cols()) != spec.layer_widths[l])
      throw InvalidInput("parameters do not match network widths");
  }
}

/// Inverted-dropout masks, one column per sample, drawn layer by layer,
/// sample by sample, unit by unit.
inline std::vector<Matrix> sample_masks(const NetworkSpec& spec, Eigen::Index samples,
                                        double rate, Rng& rng) {
  std::vector<Matrix> masks;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t h = 0; h < spec.hidden_count(); ++h) {
    Matrix m(static_cast<Eigen::Index>(spec.layer_widths[h + 1]), samples);
    for (Eigen::Index c = 0; c < samples; ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        m(r, c) = rng.uniform() >= rate ? keep_scale : 0.0;
    masks.push_back(std::move(m));
  }
  return masks;
}

}  // namespace detail

/// Batched forward pass; `x` holds one sample per column. Masks, when given,
/// multiply each hidden layer's output.
inline Matrix forward_batch(const Parameters& params, const NetworkSpec& spec,
                            const Matrix& x, ForwardCache* cache = nullptr,
                            const std::vector<Matrix>* masks = nullptr) {
  detail::check_input(spec, params, x);
  if (cache) {
    cache->layer_inputs.clear();
    cache->hidden.clear();
    cache->masks = masks ? *masks : std::vector<Matrix>{};
  }
  Matrix a = x;
  const std::size_t last = spec.layer_count() - 1;
  for (std::size_t l = 0; l <= last; ++l) {
    Matrix z = params.weights[l] * a;
    z.colwise() += params.biases[l];
    if (cache) cache->layer_inputs.push_back(std::move(a));
    if (l == last) return z;
    z = z.cwiseMax(0.0);
    if (cache) cache->hidden.push_back(z);
    if (masks) z = z.cwiseProduct((*masks)[l]);
    a = std::move(z);
  }
  return a;  // unreachable
}

/// Deterministic forward pass of a single input; dropout is never applied.
inline Vector forward(const Parameters& params, const NetworkSpec& spec, const Vector& x) {
  return forward_batch(params, spec, Matrix(x));
}

/// Reverse pass. `output_grad` is dLoss/dOutput per sample; `hidden_grads`
/// optionally adds gradients arriving directly at hidden activations (after
/// masking), which is how auxiliary heads feed back into the trunk.
inline Parameters backward(const Parameters& params, const NetworkSpec& spec,
                           const ForwardCache& cache, const Matrix& output_grad,
                           const std::vector<Matrix>* hidden_grads = nullptr) {
  Parameters grad = Parameters::zeros(spec);
  Matrix delta = output_grad;
  for (std::size_t l = spec.layer_count(); l-- > 0;) {
    grad.weights[l].noalias() = delta * cache.layer_inputs[l].transpose();
    grad.biases[l] = delta.rowwise().sum();
    if (l == 0) break;
    Matrix upstream = params.weights[l].transpose() * delta;
    const std::size_t h = l - 1;
    if (hidden_grads && (*hidden_grads)[h].size() != 0) upstream += (*hidden_grads)[h];
    if (!cache.masks.empty()) upstream = upstream.cwiseProduct(cache.masks[h]);
    delta = (cache.hidden[h].array() > 0.0).select(upstream.array(), 0.0).matrix();
  }
  return grad;
}

/// Mean squared error over samples and output dimensions.
inline double mse(const Matrix& prediction, const Matrix& target) {
  return (prediction - target).squaredNorm() / static_cast<double>(prediction.size());
}

/// Gradient of MSE(batch) + weight_decay * |params|^2, flat-view ordered.
inline Vector loss_gradient(const Parameters& params, const NetworkSpec& spec,
                            const Matrix& inputs, const Matrix& targets,
                            double weight_decay) {
  if (inputs.cols() == 0) throw InvalidInput("loss gradient needs a non-empty batch");
  if (inputs.cols() != targets.cols() ||
      static_cast<std::size_t>(targets.rows()) != spec.output_dim())
    throw InvalidInput("targets do not match inputs or network output width");
  ForwardCache cache;
  const Matrix out = forward_batch(params, spec, inputs, &cache);
  const Matrix d_out = 2.0 * (out - targets) / static_cast<double>(out.size());
  Vector g = backward(params, spec, cache, d_out).flatten();
  if (weight_decay != 0.0) g += 2.0 * weight_decay * params.flatten();
  return g;
}

/// The last `cap` indices of the flat view: the output layer first, then
/// earlier layers, until the cap is reached.
inline std::vector<std::size_t> trailing_parameters(const NetworkSpec& spec,
                                                    std::size_t cap) {
  const std::size_t total = spec.parameter_count();
  const std::size_t take = std::min(total, cap);
  std::vector<std::size_t> idx(take);
  for (std::size_t i = 0; i < take; ++i) idx[i] = total - take + i;
  return idx;
}

/// Gradient of the summed outputs with respect to the selected parameters.
inline Vector output_gradient(const Parameters& params, const NetworkSpec& spec,
                              const Vector& x, std::span<const std::size_t> subset) {
  if (subset.empty()) throw MisuseError("output gradient requested for an empty subset");
  const std::size_t total = spec.parameter_count();
  ForwardCache cache;
  const Matrix out = forward_batch(params, spec, Matrix(x), &cache);
  const Vector full =
      backward(params, spec, cache, Matrix::Ones(out.rows(), out.cols())).flatten();
  Vector g(static_cast<Eigen::Index>(subset.size()));
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (subset[i] >= total) throw InvalidInput("parameter index out of range");
    g[static_cast<Eigen::Index>(i)] = full[static_cast<Eigen::Index>(subset[i])];
  }
  return g;
}

/// `passes` stochastic forward passes with the given rate, bypassing the
/// spec's own rate. Each pass draws one mask and applies it to every column,
/// so a sample's outputs do not depend on its position in the batch.
inline std::vector<Matrix> dropout_passes(const Parameters& params, const NetworkSpec& spec,
                                          const Matrix& x, double rate, std::size_t passes,
                                          Rng& rng) {
  std::vector<Matrix> out;
  out.reserve(passes);
  for (std::size_t p = 0; p < passes; ++p) {
    auto masks = detail::sample_masks(spec, 1, rate, rng);
    for (auto& m : masks) m = m.col(0).replicate(1, x.cols()).eval();
    out.push_back(forward_batch(params, spec, x, nullptr, &masks));
  }
  return out;
}

/// MC-dropout predictions for a batch: one output matrix per pass.
inline std::vector<Matrix> forward_mc_dropout_batch(const Parameters& params,
                                                    const NetworkSpec& spec,
                                                    const Matrix& x, std::size_t passes,
                                                    Rng& rng) {
  if (spec.dropout_rate <= 0.0)
    throw MisuseError("MC dropout requires a network trained with dropout");
  if (passes < 2) throw MisuseError("MC dropout needs at least two passes");
  return dropout_passes(params, spec, x, spec.dropout_rate, passes, rng);
}

inline std::vector<Vector> forward_mc_dropout(const Parameters& params,
                                              const NetworkSpec& spec, const Vector& x,
                                              std::size_t passes, Rng& rng) {
  std::vector<Vector> out;
  for (auto& m : forward_mc_dropout_batch(params, spec, Matrix(x), passes, rng))
    out.push_back(m.col(0));
  return out;
}

}  // namespace dalr::nn
