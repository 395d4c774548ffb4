// Acquisition functions and batch selection.
//
// Q-dependent criteria (GSx, GSy, GSxy, QBCDiv, QBCDivDen) pick one candidate
// at a time; every pick joins the in-flight set Q with its predicted label
// and the remaining scores are refreshed. Pointwise criteria are scored once
// and the top k are taken. Ties always go to the lowest pool index.
#pragma once

#include "dalr/core.hpp"
#include "dalr/nn/network.hpp"
#include "dalr/nn/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dalr::acquisition {

enum class StrategyKind {
  Random,
  GSx,
  GSy,
  GSxy,
  QBC,
  QBCDiv,
  QBCDivDen,
  BALD,
  EMOC,
  LearningLoss,
  MSE,
};

inline constexpr std::array<std::pair<StrategyKind, std::string_view>, 11> kStrategyNames{{
    {StrategyKind::Random, "Random"},
    {StrategyKind::GSx, "GSx"},
    {StrategyKind::GSy, "GSy"},
    {StrategyKind::GSxy, "GSxy"},
    {StrategyKind::QBC, "QBC"},
    {StrategyKind::QBCDiv, "QBCDiv"},
    {StrategyKind::QBCDivDen, "QBCDivDen"},
    {StrategyKind::BALD, "BALD"},
    {StrategyKind::EMOC, "EMOC"},
    {StrategyKind::LearningLoss, "LearningLoss"},
    {StrategyKind::MSE, "MSE"},
}};

inline std::string to_string(StrategyKind kind) {
  for (const auto& [k, name] : kStrategyNames)
    if (k == kind) return std::string(name);
  return "unknown";
}

inline StrategyKind parse_strategy(std::string_view name) {
  for (const auto& [k, n] : kStrategyNames)
    if (n == name) return k;
  throw InvalidInput("unknown strategy " + std::string(name));
}

/// Whether selection is sequential (scores depend on Q).
inline bool is_greedy(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::GSx:
    case StrategyKind::GSy:
    case StrategyKind::GSxy:
    case StrategyKind::QBCDiv:
    case StrategyKind::QBCDivDen:
      return true;
    default:
      return false;
  }
}

struct StrategyConfig {
  StrategyKind kind = StrategyKind::Random;
  double alpha = 0.5;                 // QBCDiv diversity weight
  double div_den_alpha = 1.0 / 3.0;   // QBCDivDen diversity weight
  double div_den_beta = 1.0 / 3.0;    // QBCDivDen density weight
  std::size_t density_k = 10;
  std::size_t bald_passes = 25;
  double bald_dropout = 0.5;
  std::size_t emoc_param_cap = 50000;
  double ll_weight = 0.001;
  double ll_joint_fraction = 0.6;
  std::size_t ll_tap_width = 10;
  double ll_margin = 1.0;
  /// Min-max normalize each term of the combined criteria over the remaining
  /// candidates before weighting. When false the raw terms are summed.
  bool normalize_terms = true;

  void validate() const {
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(alpha) || !unit(div_den_alpha) || !unit(div_den_beta) ||
        div_den_alpha + div_den_beta > 1.0 + 1e-12)
      throw InvalidInput("strategy weights must lie in [0, 1] with alpha + beta <= 1");
    if (density_k == 0 || bald_passes < 2 || emoc_param_cap == 0 || ll_tap_width == 0)
      throw InvalidInput("strategy counts must be positive (BALD needs >= 2 passes)");
    if (!(bald_dropout > 0.0 && bald_dropout < 1.0))
      throw InvalidInput("BALD dropout rate must lie in (0, 1)");
    if (!(ll_weight >= 0.0) || !unit(ll_joint_fraction) || !(ll_margin >= 0.0))
      throw InvalidInput("learning-loss settings out of range");
  }
};

/// Everything an acquisition function may read. Columns are samples.
struct AcquisitionContext {
  Matrix labeled_x, labeled_y;    // L
  Matrix selected_x, selected_y;  // Q already in flight, with predicted labels
  Matrix pool;                    // U
  const nn::EnsembleModel* ensemble = nullptr;
  const nn::EnsembleModel* dropout_model = nullptr;  // BALD scorer, one member
  std::function<Matrix(const Matrix&)> oracle;       // used only by MSE
  Matrix initial_x;                                  // EMOC expectation set
  std::uint64_t seed = 0;

  std::size_t pool_size() const { return static_cast<std::size_t>(pool.cols()); }
};

struct ScoredCandidate {
  std::size_t index = 0;
  double score = 0.0;
};

// ---------------------------------------------------------------------------
// Scoring kernels on plain vectors

namespace kernels {

/// Smallest Euclidean distance from `point` to any column of `set`
/// (+inf for an empty set).
inline double min_distance(const Vector& point, const Matrix& set) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < set.cols(); ++c) best = std::min(best, (set.col(c) - point).norm());
  return best;
}

/// Smallest dist(x*, x) * dist(y*, y) over paired columns.
inline double min_paired_product(const Vector& x, const Vector& y, const Matrix& xs,
                                 const Matrix& ys) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < xs.cols(); ++c)
    best = std::min(best, (xs.col(c) - x).norm() * (ys.col(c) - y).norm());
  return best;
}

/// Committee variance (1/N) sum_n |f_n - mu|^2, averaged over output dims.
/// Deviations are taken from the first member before averaging, so an
/// unanimous committee gives exactly zero.
inline double committee_variance(const std::vector<Vector>& outputs) {
  if (outputs.empty()) return 0.0;
  const Vector& ref = outputs.front();
  Vector mean = Vector::Zero(ref.size());
  for (const auto& o : outputs) mean += o - ref;
  mean /= static_cast<double>(outputs.size());
  double total = 0.0;
  for (const auto& o : outputs) total += (o - ref - mean).squaredNorm();
  return total / static_cast<double>(outputs.size()) / static_cast<double>(mean.size());
}

/// Column-wise committee variance for batched outputs (one matrix per member).
inline std::vector<double> committee_variance(const std::vector<Matrix>& outputs) {
  const Matrix& ref = outputs.front();
  const Eigen::Index n = ref.cols();
  Matrix mean = Matrix::Zero(ref.rows(), n);
  for (const auto& o : outputs) mean += o - ref;
  mean /= static_cast<double>(outputs.size());
  Eigen::RowVectorXd total = Eigen::RowVectorXd::Zero(n);
  for (const auto& o : outputs) total += (o - ref - mean).colwise().squaredNorm();
  const double denom = static_cast<double>(outputs.size()) * static_cast<double>(ref.rows());
  std::vector<double> out(static_cast<std::size_t>(n));
  for (Eigen::Index c = 0; c < n; ++c) out[static_cast<std::size_t>(c)] = total[c] / denom;
  return out;
}

inline double cosine_similarity(const Vector& a, const Vector& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

/// Mean cosine similarity of each pool point to its k nearest (Euclidean)
/// pool neighbours, itself excluded. Neighbour ties go to the lower index.
inline std::vector<double> density(const Matrix& pool, std::size_t k) {
  const auto n = static_cast<std::size_t>(pool.cols());
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  const std::size_t take = std::min(k, n - 1);
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t i = 0; i < n; ++i) {
    d.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i)
        d.emplace_back((pool.col(static_cast<Eigen::Index>(j)) -
                        pool.col(static_cast<Eigen::Index>(i)))
                           .norm(),
                       j);
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(take), d.end());
    double s = 0.0;
    for (std::size_t t = 0; t < take; ++t)
      s += cosine_similarity(pool.col(static_cast<Eigen::Index>(i)),
                             pool.col(static_cast<Eigen::Index>(d[t].second)));
    out[i] = s / static_cast<double>(take);
  }
  return out;
}

/// Min-max normalization of the entries flagged in `active`; a constant
/// column maps to 0.
inline std::vector<double> min_max(const std::vector<double>& v, const std::vector<bool>& active) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (active[i]) lo = std::min(lo, v[i]), hi = std::max(hi, v[i]);
  std::vector<double> out(v.size(), 0.0);
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (active[i]) out[i] = (v[i] - lo) / (hi - lo);
  return out;
}

/// Column-wise MSE between prediction and truth (mean over output dims).
inline std::vector<double> columnwise_mse(const Matrix& prediction, const Matrix& truth) {
  const Eigen::RowVectorXd e =
      (prediction - truth).colwise().squaredNorm() / static_cast<double>(prediction.rows());
  return {e.data(), e.data() + e.size()};
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Context helpers

namespace detail {

inline const nn::EnsembleModel& require_ensemble(const AcquisitionContext& ctx) {
  if (!ctx.ensemble) throw MisuseError("acquisition needs a trained ensemble");
  return *ctx.ensemble;
}

inline Matrix concat_cols(const Matrix& a, const Matrix& b) {
  if (a.cols() == 0) return b;
  if (b.cols() == 0) return a;
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

inline Vector ensemble_mean(const AcquisitionContext& ctx, const Vector& x) {
  return nn::predict_ensemble(require_ensemble(ctx), Matrix(x)).mean.col(0);
}

inline void require_reference_set(const AcquisitionContext& ctx) {
  if (ctx.labeled_x.cols() + ctx.selected_x.cols() == 0)
    throw InvalidInput("greedy criteria need a non-empty labeled or selected set");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Per-candidate scores

/// Distance to the nearest member of L u Q.
inline double score_gsx(const AcquisitionContext& ctx, const Vector& candidate) {
  detail::require_reference_set(ctx);
  return std::min(kernels::min_distance(candidate, ctx.labeled_x),
                  kernels::min_distance(candidate, ctx.selected_x));
}

/// Distance from the ensemble mean prediction to the nearest label of L u Q.
inline double score_gsy(const AcquisitionContext& ctx, const Vector& candidate) {
  detail::require_reference_set(ctx);
  const Vector mu = detail::ensemble_mean(ctx, candidate);
  return std::min(kernels::min_distance(mu, ctx.labeled_y),
                  kernels::min_distance(mu, ctx.selected_y));
}

inline double score_gsxy(const AcquisitionContext& ctx, const Vector& candidate) {
  detail::require_reference_set(ctx);
  const Vector mu = detail::ensemble_mean(ctx, candidate);
  return std::min(
      kernels::min_paired_product(candidate, mu, ctx.labeled_x, ctx.labeled_y),
      kernels::min_paired_product(candidate, mu, ctx.selected_x, ctx.selected_y));
}

inline double score_qbc(const AcquisitionContext& ctx, const Vector& candidate) {
  const auto pred = nn::predict_ensemble(detail::require_ensemble(ctx), Matrix(candidate));
  return kernels::committee_variance(pred.members).front();
}

/// Variance across `passes` dropout passes at an explicit rate; rate 0 is
/// allowed here and yields zero variance.
inline std::vector<double> dropout_variance(const nn::Parameters& params,
                                            const nn::NetworkSpec& spec, const Matrix& x,
                                            double rate, std::size_t passes, Rng& rng) {
  return kernels::committee_variance(nn::dropout_passes(params, spec, x, rate, passes, rng));
}

inline std::vector<double> score_bald_batch(const AcquisitionContext& ctx,
                                            const StrategyConfig& cfg, const Matrix& x) {
  if (!ctx.dropout_model || !ctx.dropout_model->trained)
    throw MisuseError("BALD needs a trained dropout model");
  const auto& model = *ctx.dropout_model;
  Rng rng(derive_seed(ctx.seed, "bald"));
  return kernels::committee_variance(
      nn::forward_mc_dropout_batch(model.members.front(), model.spec, x, cfg.bald_passes, rng));
}

inline double score_bald(const AcquisitionContext& ctx, const StrategyConfig& cfg,
                         const Vector& candidate) {
  return score_bald_batch(ctx, cfg, Matrix(candidate)).front();
}

/// EMOC against a fixed pseudo-label, first ensemble member:
///   (1/|X0|) sum_{x in X0} | grad f(x) * grad L(x', y') |_1
/// restricted to the trailing `emoc_param_cap` parameters.
class EmocScorer {
 public:
  EmocScorer(const AcquisitionContext& ctx, const StrategyConfig& cfg) {
    const auto& ens = detail::require_ensemble(ctx);
    if (!ens.trained) throw MisuseError("EMOC needs a trained ensemble");
    if (ctx.initial_x.cols() == 0) throw MisuseError("EMOC needs the initial sample set");
    params_ = &ens.members.front();
    spec_ = &ens.spec;
    subset_ = nn::trailing_parameters(ens.spec, cfg.emoc_param_cap);
    pseudo_label_ = nn::predict_ensemble(ens, ctx.pool).mean.rowwise().mean();
    expected_abs_ = Vector::Zero(static_cast<Eigen::Index>(subset_.size()));
    for (Eigen::Index c = 0; c < ctx.initial_x.cols(); ++c)
      expected_abs_ += nn::output_gradient(*params_, *spec_, ctx.initial_x.col(c), subset_).cwiseAbs();
    expected_abs_ /= static_cast<double>(ctx.initial_x.cols());
  }

  /// Pseudo-label y' used for every candidate.
  const Vector& pseudo_label() const { return pseudo_label_; }

  double operator()(const Vector& candidate) const {
    const Vector full = nn::loss_gradient(*params_, *spec_, Matrix(candidate),
                                          Matrix(pseudo_label_), 0.0);
    double s = 0.0;
    for (std::size_t i = 0; i < subset_.size(); ++i)
      s += std::abs(full[static_cast<Eigen::Index>(subset_[i])]) *
           expected_abs_[static_cast<Eigen::Index>(i)];
    return s;
  }

 private:
  const nn::Parameters* params_ = nullptr;
  const nn::NetworkSpec* spec_ = nullptr;
  std::vector<std::size_t> subset_;
  Vector pseudo_label_;
  Vector expected_abs_;
};

inline double score_emoc(const AcquisitionContext& ctx, const StrategyConfig& cfg,
                         const Vector& candidate) {
  return EmocScorer(ctx, cfg)(candidate);
}

inline std::vector<double> score_learning_loss_batch(const AcquisitionContext& ctx,
                                                     const Matrix& x) {
  const auto& ens = detail::require_ensemble(ctx);
  if (ens.heads.empty()) throw MisuseError("LearningLoss needs an ensemble trained with loss heads");
  nn::ForwardCache cache;
  nn::forward_batch(ens.members.front(), ens.spec, x, &cache);
  const Eigen::RowVectorXd s = nn::loss_head_forward(ens.heads.front(), cache);
  return {s.data(), s.data() + s.size()};
}

inline double score_learning_loss(const AcquisitionContext& ctx, const Vector& candidate) {
  return score_learning_loss_batch(ctx, Matrix(candidate)).front();
}

/// Infeasible in practice: reads the oracle label of the candidate.
inline double score_true_mse(const AcquisitionContext& ctx, const Vector& candidate) {
  if (!ctx.oracle) throw MisuseError("MSE strategy needs an oracle");
  const Matrix mu = nn::predict_ensemble(detail::require_ensemble(ctx), Matrix(candidate)).mean;
  return kernels::columnwise_mse(mu, ctx.oracle(Matrix(candidate))).front();
}

// ---------------------------------------------------------------------------
// Combined criteria over the whole pool (Q taken from the context)

namespace detail {

struct GreedyState {
  std::vector<double> qbc;      // raw committee variance
  std::vector<double> density;  // raw q_den
  std::vector<double> dx;       // min distance to L u Q in x
  std::vector<double> dy;       // min distance to labels of L u Q
  std::vector<double> dxy;      // min paired product
  Matrix mu;                    // ensemble mean per candidate
};

inline GreedyState prepare_greedy(const AcquisitionContext& ctx, const StrategyConfig& cfg) {
  const auto kind = cfg.kind;
  const std::size_t n = ctx.pool_size();
  GreedyState st;
  require_reference_set(ctx);
  const bool needs_model = kind != StrategyKind::GSx;
  if (needs_model) {
    const auto pred = nn::predict_ensemble(require_ensemble(ctx), ctx.pool);
    st.mu = pred.mean;
    if (kind == StrategyKind::QBCDiv || kind == StrategyKind::QBCDivDen)
      st.qbc = kernels::committee_variance(pred.members);
  }
  if (kind == StrategyKind::QBCDivDen) st.density = kernels::density(ctx.pool, cfg.density_k);

  const Matrix ref_x = concat_cols(ctx.labeled_x, ctx.selected_x);
  const Matrix ref_y = concat_cols(ctx.labeled_y, ctx.selected_y);
  st.dx.resize(n);
  if (kind == StrategyKind::GSy) st.dy.resize(n);
  if (kind == StrategyKind::GSxy) st.dxy.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    st.dx[i] = kernels::min_distance(ctx.pool.col(c), ref_x);
    if (kind == StrategyKind::GSy) st.dy[i] = kernels::min_distance(st.mu.col(c), ref_y);
    if (kind == StrategyKind::GSxy)
      st.dxy[i] = kernels::min_paired_product(ctx.pool.col(c), st.mu.col(c), ref_x, ref_y);
  }
  return st;
}

inline std::vector<double> combined_scores(const GreedyState& st, const StrategyConfig& cfg,
                                           const std::vector<bool>& active) {
  std::vector<double> q = st.qbc, div = st.dx, den = st.density;
  if (cfg.normalize_terms) {
    q = kernels::min_max(q, active);
    div = kernels::min_max(div, active);
    if (!den.empty()) den = kernels::min_max(den, active);
  }
  std::vector<double> out(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (cfg.kind == StrategyKind::QBCDiv)
      out[i] = (1.0 - cfg.alpha) * q[i] + cfg.alpha * div[i];
    else
      out[i] = (1.0 - cfg.div_den_alpha - cfg.div_den_beta) * q[i] + cfg.div_den_alpha * div[i] +
               cfg.div_den_beta * den[i];
  }
  return out;
}

inline std::vector<double> round_scores(const GreedyState& st, const StrategyConfig& cfg,
                                        const std::vector<bool>& active) {
  switch (cfg.kind) {
    case StrategyKind::GSx:
      return st.dx;
    case StrategyKind::GSy:
      return st.dy;
    case StrategyKind::GSxy:
      return st.dxy;
    default:
      return combined_scores(st, cfg, active);
  }
}

inline void check_finite(const std::vector<double>& scores) {
  for (double s : scores)
    if (!std::isfinite(s)) throw InvalidInput("acquisition produced a non-finite score");
}

}  // namespace detail

/// QBCDiv scores of every pool candidate given the context's L and Q.
inline std::vector<double> score_qbc_div(const AcquisitionContext& ctx, const StrategyConfig& cfg) {
  StrategyConfig c = cfg;
  c.kind = StrategyKind::QBCDiv;
  const auto st = detail::prepare_greedy(ctx, c);
  return detail::combined_scores(st, c, std::vector<bool>(ctx.pool_size(), true));
}

inline std::vector<double> score_qbc_div_den(const AcquisitionContext& ctx,
                                             const StrategyConfig& cfg) {
  StrategyConfig c = cfg;
  c.kind = StrategyKind::QBCDivDen;
  const auto st = detail::prepare_greedy(ctx, c);
  return detail::combined_scores(st, c, std::vector<bool>(ctx.pool_size(), true));
}

/// Scores of a pointwise criterion for every pool candidate.
inline std::vector<double> pointwise_scores(const AcquisitionContext& ctx,
                                            const StrategyConfig& cfg) {
  std::vector<double> scores;
  switch (cfg.kind) {
    case StrategyKind::QBC:
      scores = kernels::committee_variance(
          nn::predict_ensemble(detail::require_ensemble(ctx), ctx.pool).members);
      break;
    case StrategyKind::BALD:
      scores = score_bald_batch(ctx, cfg, ctx.pool);
      break;
    case StrategyKind::EMOC: {
      const EmocScorer emoc(ctx, cfg);
      for (Eigen::Index c = 0; c < ctx.pool.cols(); ++c) scores.push_back(emoc(ctx.pool.col(c)));
      break;
    }
    case StrategyKind::LearningLoss:
      scores = score_learning_loss_batch(ctx, ctx.pool);
      break;
    case StrategyKind::MSE: {
      if (!ctx.oracle) throw MisuseError("MSE strategy needs an oracle");
      const Matrix mu = nn::predict_ensemble(detail::require_ensemble(ctx), ctx.pool).mean;
      scores = kernels::columnwise_mse(mu, ctx.oracle(ctx.pool));
      break;
    }
    default:
      throw MisuseError(to_string(cfg.kind) + " is not a pointwise criterion");
  }
  detail::check_finite(scores);
  return scores;
}

/// Indices of the k largest scores; ties broken by lowest index.
inline std::vector<std::size_t> top_k(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

/// k indices drawn uniformly without replacement: draw t takes the r-th
/// still-unselected index in ascending order, r uniform in [0, n - t).
inline std::vector<std::size_t> random_batch(std::size_t n, std::size_t k, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "random"));
  std::vector<std::size_t> remaining(n);
  std::iota(remaining.begin(), remaining.end(), std::size_t{0});
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < k; ++t) {
    const std::size_t r = rng.index(remaining.size());
    out.push_back(remaining[r]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(r));
  }
  return out;
}

/// Sequential selection for the Q-dependent criteria. `trace`, when given,
/// receives the winning raw score of each round (before normalization for
/// the GS criteria, the combined score otherwise).
inline std::vector<std::size_t> greedy_batch(const AcquisitionContext& ctx,
                                             const StrategyConfig& cfg, std::size_t k,
                                             std::vector<double>* trace = nullptr) {
  const std::size_t n = ctx.pool_size();
  auto st = detail::prepare_greedy(ctx, cfg);
  std::vector<bool> active(n, true);
  std::vector<std::size_t> picked;
  for (std::size_t round = 0; round < k; ++round) {
    const auto scores = detail::round_scores(st, cfg, active);
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      if (!std::isfinite(scores[i])) throw InvalidInput("acquisition produced a non-finite score");
      if (best == n || scores[i] > scores[best]) best = i;
    }
    picked.push_back(best);
    active[best] = false;
    if (trace) trace->push_back(scores[best]);

    const auto b = static_cast<Eigen::Index>(best);
    const Vector xb = ctx.pool.col(b);
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      const auto c = static_cast<Eigen::Index>(i);
      const double dist_x = (ctx.pool.col(c) - xb).norm();
      st.dx[i] = std::min(st.dx[i], dist_x);
      if (cfg.kind == StrategyKind::GSy)
        st.dy[i] = std::min(st.dy[i], (st.mu.col(c) - st.mu.col(b)).norm());
      if (cfg.kind == StrategyKind::GSxy)
        st.dxy[i] = std::min(st.dxy[i], dist_x * (st.mu.col(c) - st.mu.col(b)).norm());
    }
  }
  return picked;
}

/// Chooses k pool indices according to the strategy.
inline std::vector<std::size_t> select_batch(const AcquisitionContext& ctx,
                                             const StrategyConfig& cfg, std::size_t k) {
  cfg.validate();
  const std::size_t n = ctx.pool_size();
  if (n < k)
    throw InvalidPool("pool has " + std::to_string(n) + " candidates, batch needs " +
                      std::to_string(k));
  if (cfg.kind == StrategyKind::Random) return random_batch(n, k, ctx.seed);
  if (is_greedy(cfg.kind)) return greedy_batch(ctx, cfg, k);
  return top_k(pointwise_scores(ctx, cfg), k);
}

/// Scores of the current pool as (index, score) pairs, without selection.
/// Random has no scores; Q-dependent criteria are scored against the
/// context's L and Q as they stand.
inline std::vector<ScoredCandidate> score_pool(const AcquisitionContext& ctx,
                                               const StrategyConfig& cfg) {
  std::vector<double> s;
  if (cfg.kind == StrategyKind::Random) {
    s.assign(ctx.pool_size(), 0.0);
  } else if (is_greedy(cfg.kind)) {
    const auto st = detail::prepare_greedy(ctx, cfg);
    s = detail::round_scores(st, cfg, std::vector<bool>(ctx.pool_size(), true));
  } else {
    s = pointwise_scores(ctx, cfg);
  }
  std::vector<ScoredCandidate> out;
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back({i, s[i]});
  return out;
}

// ---------------------------------------------------------------------------
// Strategy-specific models

/// Ensemble trained jointly with loss-prediction heads on every member.
inline nn::TrainedEnsemble train_with_loss_head(const nn::EnsembleModel& ensemble,
                                                const Matrix& inputs, const Matrix& targets,
                                                const nn::TrainConfig& train_cfg,
                                                const StrategyConfig& cfg) {
  nn::EnsembleModel with_head = ensemble;
  with_head.spec.aux_head = nn::LossHeadSpec{3, cfg.ll_tap_width};
  return nn::train(with_head, inputs, targets, train_cfg,
                   nn::LossHeadTraining{cfg.ll_weight, cfg.ll_joint_fraction, cfg.ll_margin});
}

/// The BALD scorer: one network whose hidden layers are widened by
/// 1/(1 - rate), trained with dropout at that rate.
inline nn::EnsembleModel make_dropout_model(const nn::NetworkSpec& base,
                                            const StrategyConfig& cfg, std::uint64_t seed) {
  nn::NetworkSpec spec = base;
  spec.aux_head.reset();
  spec.dropout_rate = cfg.bald_dropout;
  const double factor = 1.0 / (1.0 - cfg.bald_dropout);
  for (std::size_t l = 1; l + 1 < spec.layer_widths.size(); ++l)
    spec.layer_widths[l] = static_cast<std::size_t>(
        std::ceil(static_cast<double>(spec.layer_widths[l]) * factor));
  return nn::EnsembleModel::create(spec, 1, seed);
}

}  // namespace dalr::acquisition
