// Adam training with plateau decay, the auxiliary loss-prediction head and
// ensembles of independently initialized networks.
#pragma once

#include "dalr/nn/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace dalr::nn {

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t batch_size = 5000;
  double learning_rate = 1e-3;
  double plateau_decay = 0.8;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  // Plateau trigger: the epoch loss must beat the running best by this
  // relative margin within `plateau_patience` epochs.
  double plateau_threshold = 1e-4;
  std::size_t plateau_patience = 20;
  double min_learning_rate = 1e-6;

  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const {
    if (batch_size == 0) throw InvalidInput("batch size must be positive");
    if (!(learning_rate > 0.0)) throw InvalidInput("learning rate must be positive");
    if (!(plateau_decay > 0.0 && plateau_decay < 1.0))
      throw InvalidInput("plateau decay must lie in (0, 1)");
    if (!(weight_decay >= 0.0)) throw InvalidInput("weight decay must be non-negative");
    if (plateau_patience == 0) throw InvalidInput("plateau patience must be positive");
  }
};

struct TrainTrace {
  std::vector<double> loss;           // training objective per epoch
  std::vector<double> learning_rate;  // rate used during each epoch
};

/// Settings of the joint trunk + loss-head objective.
struct LossHeadTraining {
  double weight = 0.001;
  double joint_fraction = 0.6;
  double margin = 1.0;
};

/// Parameters of the auxiliary loss predictor.
struct LossHead {
  std::vector<std::size_t> tapped;  // hidden layer indices, ascending
  std::vector<Matrix> tap_weights;  // width x hidden width
  std::vector<Vector> tap_biases;
  Vector out_weights;               // taps * width
  double out_bias = 0.0;
};

/// Last `spec.taps` hidden layers (all of them if the trunk is shallower).
inline LossHead initialize_loss_head(const NetworkSpec& spec, std::uint64_t seed) {
  if (!spec.aux_head) throw MisuseError("network has no loss head");
  if (spec.hidden_count() == 0) throw MisuseError("loss head needs a hidden layer");
  const auto& hs = *spec.aux_head;
  LossHead head;
  const std::size_t taps = std::min(hs.taps, spec.hidden_count());
  Rng rng(seed);
  for (std::size_t t = spec.hidden_count() - taps; t < spec.hidden_count(); ++t) {
    head.tapped.push_back(t);
    const auto fan_in = spec.layer_widths[t + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    Matrix w(static_cast<Eigen::Index>(hs.width), static_cast<Eigen::Index>(fan_in));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-limit, limit);
    head.tap_weights.push_back(std::move(w));
    head.tap_biases.push_back(Vector::Zero(static_cast<Eigen::Index>(hs.width)));
  }
  const auto concat = static_cast<Eigen::Index>(taps * hs.width);
  const double limit = std::sqrt(6.0 / static_cast<double>(concat));
  head.out_weights.resize(concat);
  for (Eigen::Index i = 0; i < concat; ++i) head.out_weights[i] = rng.uniform(-limit, limit);
  return head;
}

struct LossHeadCache {
  std::vector<Matrix> blocks;  // ReLU outputs per tap
};

/// Predicted loss per sample from the trunk's hidden activations (the
/// matrices consumed by the following layers, i.e. cache.layer_inputs[t+1]).
inline Eigen::RowVectorXd loss_head_forward(const LossHead& head, const ForwardCache& trunk,
                                            LossHeadCache* cache = nullptr) {
  const Eigen::Index n = trunk.layer_inputs.front().cols();
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Constant(n, head.out_bias);
  if (cache) cache->blocks.clear();
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < head.tapped.size(); ++i) {
    Matrix z = head.tap_weights[i] * trunk.layer_inputs[head.tapped[i] + 1];
    z.colwise() += head.tap_biases[i];
    z = z.cwiseMax(0.0);
    const Eigen::Index w = z.rows();
    out += head.out_weights.segment(offset, w).transpose() * z;
    offset += w;
    if (cache) cache->blocks.push_back(std::move(z));
  }
  return out;
}

struct LossHeadGradient {
  LossHead head;                     // same layout, holds gradients
  std::vector<Matrix> hidden_grads;  // per trunk hidden layer; empty if untapped
};

inline LossHeadGradient loss_head_backward(const LossHead& head, const ForwardCache& trunk,
                                           const LossHeadCache& cache,
                                           const Eigen::RowVectorXd& d_out,
                                           std::size_t hidden_count) {
  LossHeadGradient g;
  g.head = head;
  g.head.out_bias = d_out.sum();
  g.hidden_grads.assign(hidden_count, Matrix());
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < head.tapped.size(); ++i) {
    const Matrix& z = cache.blocks[i];
    const Eigen::Index w = z.rows();
    g.head.out_weights.segment(offset, w) = z * d_out.transpose();
    Matrix dz = head.out_weights.segment(offset, w) * d_out;
    dz = (z.array() > 0.0).select(dz.array(), 0.0).matrix();
    const Matrix& tap = trunk.layer_inputs[head.tapped[i] + 1];
    g.head.tap_weights[i] = dz * tap.transpose();
    g.head.tap_biases[i] = dz.rowwise().sum();
    g.hidden_grads[head.tapped[i]] = head.tap_weights[i].transpose() * dz;
    offset += w;
  }
  return g;
}

/// Pairwise hinge on loss ordering. Pairs are (order[0], order[1]),
/// (order[2], order[3]), ...; an odd trailing sample is unused. Returns the
/// mean pair loss and writes d(mean)/d(predicted) into `d_pred`.
inline double ranking_loss(const Eigen::RowVectorXd& true_loss,
                           const Eigen::RowVectorXd& predicted,
                           const std::vector<std::size_t>& order, double margin,
                           Eigen::RowVectorXd* d_pred = nullptr) {
  const std::size_t pairs = order.size() / 2;
  if (d_pred) d_pred->setZero(predicted.size());
  if (pairs == 0) return 0.0;
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(pairs);
  for (std::size_t p = 0; p < pairs; ++p) {
    const auto i = static_cast<Eigen::Index>(order[2 * p]);
    const auto j = static_cast<Eigen::Index>(order[2 * p + 1]);
    const double diff = true_loss[i] - true_loss[j];
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    const double hinge = -sign * (predicted[i] - predicted[j]) + margin;
    if (hinge > 0.0) {
      total += hinge;
      if (d_pred) {
        (*d_pred)[i] += -sign * inv;
        (*d_pred)[j] += sign * inv;
      }
    }
  }
  return total * inv;
}

namespace detail {

struct AdamCoefficients {
  double lr, beta1, beta2, eps, bias1, bias2;
};

template <class T>
void adam_step(T& param, T& m, T& v, const T& g, const AdamCoefficients& c) {
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
  param.array() -= c.lr * (m.array() / c.bias1) / ((v.array() / c.bias2).sqrt() + c.eps);
}

inline void adam_step(double& param, double& m, double& v, double g,
                      const AdamCoefficients& c) {
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g * g;
  param -= c.lr * (m / c.bias1) / (std::sqrt(v / c.bias2) + c.eps);
}

inline LossHead zeros_like(const LossHead& h) {
  LossHead z = h;
  for (auto& w : z.tap_weights) w.setZero();
  for (auto& b : z.tap_biases) b.setZero();
  z.out_weights.setZero();
  z.out_bias = 0.0;
  return z;
}

/// Tracks the plateau schedule of one training run.
class PlateauSchedule {
 public:
  explicit PlateauSchedule(const TrainConfig& cfg) : cfg_(cfg), lr_(cfg.learning_rate) {}
  double rate() const { return lr_; }
  void observe(double loss) {
    if (loss < best_ * (1.0 - cfg_.plateau_threshold)) {
      best_ = loss;
      bad_epochs_ = 0;
      return;
    }
    if (++bad_epochs_ >= cfg_.plateau_patience) {
      lr_ = std::max(lr_ * cfg_.plateau_decay, cfg_.min_learning_rate);
      bad_epochs_ = 0;
    }
  }

 private:
  const TrainConfig& cfg_;
  double lr_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs_ = 0;
};

}  // namespace detail

struct TrainResult {
  Parameters params;
  std::optional<LossHead> head;
  TrainTrace trace;
};

/// Trains one network from its fresh initialization. The trunk is seeded with
/// `init_seed`; dropout masks, the loss head and its pair shuffles draw from
/// streams derived from it, so enabling them never perturbs the trunk's own
/// initialization.
inline TrainResult train_network(const NetworkSpec& spec, std::uint64_t init_seed,
                                 const Matrix& inputs, const Matrix& targets,
                                 const TrainConfig& cfg,
                                 const std::optional<LossHeadTraining>& head_cfg = {}) {
  spec.validate();
  cfg.validate();
  if (inputs.cols() == 0) throw InvalidInput("training set is empty");
  if (inputs.cols() != targets.cols() ||
      static_cast<std::size_t>(inputs.rows()) != spec.input_dim() ||
      static_cast<std::size_t>(targets.rows()) != spec.output_dim())
    throw InvalidInput("training data does not match the network dimensions");
  if (head_cfg && !spec.aux_head) throw MisuseError("loss-head training needs spec.aux_head");

  TrainResult result{initialize(spec, init_seed), std::nullopt, {}};
  Parameters& params = result.params;
  Parameters m = Parameters::zeros(spec), v = Parameters::zeros(spec);

  LossHead head, head_m, head_v;
  if (head_cfg) {
    head = initialize_loss_head(spec, derive_seed(init_seed, "loss-head"));
    head_m = detail::zeros_like(head);
    head_v = detail::zeros_like(head);
  }
  Rng mask_rng(derive_seed(init_seed, "dropout"));
  Rng pair_rng(derive_seed(init_seed, "pairs"));

  const Eigen::Index n = inputs.cols();
  const auto batch = static_cast<Eigen::Index>(std::min<std::size_t>(cfg.batch_size, n));
  const std::size_t joint_epochs =
      head_cfg ? static_cast<std::size_t>(head_cfg->joint_fraction * static_cast<double>(cfg.epochs))
               : 0;
  detail::PlateauSchedule schedule(cfg);
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = schedule.rate();
    double epoch_loss = 0.0;
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index len = std::min(batch, n - start);
      const Matrix x = inputs.middleCols(start, len);
      const Matrix y = targets.middleCols(start, len);

      std::vector<Matrix> masks;
      if (spec.dropout_rate > 0.0)
        masks = detail::sample_masks(spec, len, spec.dropout_rate, mask_rng);
      ForwardCache cache;
      const Matrix out = forward_batch(params, spec, x, &cache, masks.empty() ? nullptr : &masks);
      const Matrix residual = out - y;
      double batch_loss = residual.squaredNorm() / static_cast<double>(residual.size());
      const Matrix d_out = 2.0 * residual / static_cast<double>(residual.size());

      std::optional<LossHeadGradient> head_grad;
      if (head_cfg) {
        LossHeadCache hc;
        const Eigen::RowVectorXd predicted = loss_head_forward(head, cache, &hc);
        const Eigen::RowVectorXd per_sample =
            residual.array().square().colwise().mean().matrix();
        std::vector<std::size_t> order(static_cast<std::size_t>(len));
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[pair_rng.index(i)]);
        Eigen::RowVectorXd d_pred;
        const double rank = ranking_loss(per_sample, predicted, order, head_cfg->margin, &d_pred);
        batch_loss += head_cfg->weight * rank;
        head_grad = loss_head_backward(head, cache, hc, head_cfg->weight * d_pred,
                                       spec.hidden_count());
        if (epoch >= joint_epochs) head_grad->hidden_grads.assign(spec.hidden_count(), Matrix());
      }

      Parameters grad = backward(params, spec, cache, d_out,
                                 head_grad ? &head_grad->hidden_grads : nullptr);
      epoch_loss += batch_loss * static_cast<double>(len);

      ++step;
      const detail::AdamCoefficients coeffs{
          lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon,
          1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step)),
          1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step))};
      for (std::size_t l = 0; l < params.weights.size(); ++l) {
        if (cfg.weight_decay != 0.0) {
          grad.weights[l] += 2.0 * cfg.weight_decay * params.weights[l];
          grad.biases[l] += 2.0 * cfg.weight_decay * params.biases[l];
        }
        detail::adam_step(params.weights[l], m.weights[l], v.weights[l], grad.weights[l], coeffs);
        detail::adam_step(params.biases[l], m.biases[l], v.biases[l], grad.biases[l], coeffs);
      }
      if (head_grad) {
        LossHead& g = head_grad->head;
        const double wd2 = 2.0 * cfg.weight_decay;
        for (std::size_t i = 0; i < head.tapped.size(); ++i) {
          g.tap_weights[i] += wd2 * head.tap_weights[i];
          g.tap_biases[i] += wd2 * head.tap_biases[i];
          detail::adam_step(head.tap_weights[i], head_m.tap_weights[i], head_v.tap_weights[i],
                            g.tap_weights[i], coeffs);
          detail::adam_step(head.tap_biases[i], head_m.tap_biases[i], head_v.tap_biases[i],
                            g.tap_biases[i], coeffs);
        }
        g.out_weights += wd2 * head.out_weights;
        g.out_bias += wd2 * head.out_bias;
        detail::adam_step(head.out_weights, head_m.out_weights, head_v.out_weights,
                          g.out_weights, coeffs);
        detail::adam_step(head.out_bias, head_m.out_bias, head_v.out_bias, g.out_bias, coeffs);
      }
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss))
      throw TrainingDiverged(epoch, "training loss became non-finite at epoch " +
                                        std::to_string(epoch));
    result.trace.loss.push_back(epoch_loss);
    result.trace.learning_rate.push_back(lr);
    schedule.observe(epoch_loss);
  }
  if (head_cfg) result.head = std::move(head);
  return result;
}

/// N regressors sharing one architecture; they differ only in their
/// initialization seeds.
struct EnsembleModel {
  NetworkSpec spec;
  std::vector<Parameters> members;
  std::vector<LossHead> heads;  // one per member after loss-head training
  std::uint64_t seed_base = 0;
  bool trained = false;

  std::size_t size() const { return members.size(); }

  /// Initialization seed of member i under a given training seed.
  std::uint64_t member_seed(std::size_t i, std::uint64_t training_seed) const {
    return derive_seed(derive_seed(seed_base, "train", training_seed), "member", i);
  }

  static EnsembleModel create(const NetworkSpec& spec, std::size_t n, std::uint64_t seed_base) {
    spec.validate();
    if (n == 0) throw InvalidInput("ensemble needs at least one member");
    EnsembleModel e;
    e.spec = spec;
    e.seed_base = seed_base;
    for (std::size_t i = 0; i < n; ++i) e.members.push_back(initialize(spec, e.member_seed(i, 0)));
    return e;
  }
};

struct TrainedEnsemble {
  EnsembleModel model;
  std::vector<TrainTrace> traces;
};

/// Re-initializes every member from its seed and trains it independently.
inline TrainedEnsemble train(const EnsembleModel& ensemble, const Matrix& inputs,
                             const Matrix& targets, const TrainConfig& cfg,
                             const std::optional<LossHeadTraining>& head_cfg = {}) {
  TrainedEnsemble out{ensemble, {}};
  out.model.heads.clear();
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    auto r = train_network(ensemble.spec, ensemble.member_seed(i, cfg.seed), inputs, targets,
                           cfg, head_cfg);
    out.model.members[i] = std::move(r.params);
    if (r.head) out.model.heads.push_back(std::move(*r.head));
    out.traces.push_back(std::move(r.trace));
  }
  out.model.trained = true;
  return out;
}

struct EnsemblePrediction {
  Matrix mean;                  // output dim x samples
  std::vector<Matrix> members;  // per member, same shape
};

inline EnsemblePrediction predict_ensemble(const EnsembleModel& ensemble, const Matrix& x) {
  EnsemblePrediction p;
  for (const auto& member : ensemble.members) p.members.push_back(forward_batch(member, ensemble.spec, x));
  p.mean = p.members.front();
  for (std::size_t i = 1; i < p.members.size(); ++i) p.mean += p.members[i];
  p.mean /= static_cast<double>(p.members.size());
  return p;
}

}  // namespace dalr::nn
