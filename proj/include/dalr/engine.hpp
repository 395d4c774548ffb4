// The active-learning loop: train, draw a fresh pool, select, label, append.
#pragma once

#include "dalr/acquisition.hpp"
#include "dalr/core.hpp"
#include "dalr/metrics.hpp"
#include "dalr/nn/training.hpp"
#include "dalr/oracles.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace dalr::engine {

inline constexpr const char* kVersion = "1.0.0";

struct RunConfig {
  std::string problem = "SINE";
  acquisition::StrategyConfig strategy;
  std::size_t gamma = 16;  // pool ratio: pool size is k * gamma
  std::size_t k = 40;
  std::size_t steps = 50;
  std::size_t n_initial = 80;
  std::size_t n_test = 4000;
  std::size_t ensemble_size = 10;
  nn::TrainConfig train;
  std::uint64_t seed = 0;
  /// Hidden widths are multiplied by width_scale and, when width_cap > 0,
  /// clamped to width_cap.
  double width_scale = 1.0;
  std::size_t width_cap = 0;

  void validate() const {
    if (gamma < 1) throw InvalidInput("pool ratio must be >= 1");
    if (k < 1) throw InvalidInput("step size must be >= 1");
    if (n_initial < 1 || n_test < 1 || ensemble_size < 1)
      throw InvalidInput("initial set, test set and ensemble must be non-empty");
    if (!(width_scale > 0.0)) throw InvalidInput("width scale must be positive");
    strategy.validate();
    train.validate();
  }

  std::size_t pool_size() const { return k * gamma; }
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t n_labeled = 0;  // |L^i| the model of this step was trained on
  double test_mse = 0.0;
  double batch_div = 0.0;     // diversity of the batch selected at this step
  std::uint64_t pool_seed = 0;
  double sample_time_s = 0.0;
  double train_time_s = 0.0;
};

struct RunRecord {
  RunConfig config;
  std::vector<StepRecord> steps;
  std::string status = "completed";  // or "failed"
  std::string error;
  std::size_t final_labeled = 0;
  nlohmann::json metadata;

  bool completed() const { return status == "completed"; }
};

/// Mean over test points and output dimensions of the squared error of the
/// ensemble mean.
inline double evaluate(const nn::EnsembleModel& ensemble, const Matrix& test_x,
                       const Matrix& test_y) {
  const Matrix mu = nn::predict_ensemble(ensemble, test_x).mean;
  return nn::mse(mu, test_y);
}

/// Maps problem inputs into [-1, 1]^d; the networks and the acquisition
/// functions only ever see this space.
class InputScaler {
 public:
  explicit InputScaler(const std::vector<oracles::Interval>& bounds) {
    const auto d = static_cast<Eigen::Index>(bounds.size());
    lo_.resize(d);
    span_.resize(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      lo_[i] = bounds[static_cast<std::size_t>(i)].lo;
      span_[i] = bounds[static_cast<std::size_t>(i)].hi - lo_[i];
    }
  }
  Matrix to_model(const Matrix& x) const {
    Matrix z(x.rows(), x.cols());
    for (Eigen::Index d = 0; d < x.rows(); ++d)
      if (span_[d] > 0.0)
        z.row(d) = ((x.row(d).array() - lo_[d]) * (2.0 / span_[d]) - 1.0).matrix();
      else
        z.row(d).setZero();
    return z;
  }
  Matrix to_problem(const Matrix& z) const {
    Matrix x(z.rows(), z.cols());
    for (Eigen::Index d = 0; d < z.rows(); ++d)
      x.row(d) = ((z.row(d).array() + 1.0) * (span_[d] / 2.0) + lo_[d]).matrix();
    return x;
  }

 private:
  Vector lo_, span_;
};

inline nn::NetworkSpec scaled_network(const nn::NetworkSpec& base, double scale, std::size_t cap) {
  nn::NetworkSpec spec = base;
  for (std::size_t l = 1; l + 1 < spec.layer_widths.size(); ++l) {
    auto w = static_cast<std::size_t>(std::llround(static_cast<double>(spec.layer_widths[l]) * scale));
    w = std::max<std::size_t>(w, 1);
    if (cap > 0) w = std::min(w, cap);
    spec.layer_widths[l] = w;
  }
  return spec;
}

/// Test set shared by every run of a problem: its stream depends only on the
/// problem name.
inline Matrix test_inputs(const oracles::ProblemSpec& spec, std::size_t n) {
  Rng rng(derive_seed(fnv1a64(spec.name), "test-set"));
  return oracles::sample_uniform(spec, n, rng);
}

namespace detail {

inline Matrix append_cols(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() == 0 ? b.rows() : a.rows(), a.cols() + b.cols());
  if (a.cols() > 0) out.leftCols(a.cols()) = a;
  if (b.cols() > 0) out.rightCols(b.cols()) = b;
  return out;
}

template <class F>
auto train_with_retry(F&& fn, const nn::TrainConfig& cfg) {
  try {
    return fn(cfg);
  } catch (const TrainingDiverged&) {
    nn::TrainConfig retry = cfg;
    retry.seed = derive_seed(cfg.seed, "retry");
    return fn(retry);
  }
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Executes one active-learning experiment. Step i trains on L^i (from
/// scratch), records the test MSE of that model, draws a fresh pool of
/// k * gamma points (k points for Random, which never looks at scores),
/// selects k of them and labels them.
inline RunRecord run(const RunConfig& config, const oracles::Problem& problem) {
  config.validate();
  using acquisition::StrategyKind;
  const auto kind = config.strategy.kind;
  const auto& pspec = problem.spec;

  RunRecord record;
  record.config = config;
  record.metadata = {{"version", kVersion},
                     {"normalize_terms", config.strategy.normalize_terms},
                     {"input_space", "bounds scaled to [-1,1]"},
                     {"infeasible_strategy", kind == StrategyKind::MSE}};

  const nn::NetworkSpec spec = scaled_network(pspec.network, config.width_scale, config.width_cap);
  record.metadata["layer_widths"] = spec.layer_widths;
  const InputScaler scaler(pspec.bounds);

  const Matrix test_x = test_inputs(pspec, config.n_test);
  const Matrix test_y = problem.label(test_x);
  const Matrix test_z = scaler.to_model(test_x);

  Rng init_rng(derive_seed(config.seed, "initial"));
  const Matrix initial_x = oracles::sample_uniform(pspec, config.n_initial, init_rng);
  const Matrix initial_z = scaler.to_model(initial_x);
  Matrix labeled_z = initial_z;
  Matrix labeled_y = problem.label(initial_x);

  const auto ensemble =
      nn::EnsembleModel::create(spec, config.ensemble_size, derive_seed(config.seed, "ensemble"));
  std::optional<nn::EnsembleModel> dropout_model;
  if (kind == StrategyKind::BALD)
    dropout_model = acquisition::make_dropout_model(spec, config.strategy,
                                                    derive_seed(config.seed, "dropout-model"));

  const auto oracle_z = [&](const Matrix& z) { return problem.label(scaler.to_problem(z)); };

  try {
    for (std::size_t i = 0; i < config.steps; ++i) {
      StepRecord step;
      step.step = i;
      step.n_labeled = static_cast<std::size_t>(labeled_z.cols());

      const auto t_train = std::chrono::steady_clock::now();
      auto trained = detail::train_with_retry(
          [&](const nn::TrainConfig& c) {
            if (kind == StrategyKind::LearningLoss)
              return acquisition::train_with_loss_head(ensemble, labeled_z, labeled_y, c,
                                                       config.strategy);
            return nn::train(ensemble, labeled_z, labeled_y, c);
          },
          config.train);
      std::optional<nn::TrainedEnsemble> scorer;
      if (dropout_model)
        scorer = detail::train_with_retry(
            [&](const nn::TrainConfig& c) { return nn::train(*dropout_model, labeled_z, labeled_y, c); },
            config.train);
      step.train_time_s = detail::seconds_since(t_train);
      step.test_mse = evaluate(trained.model, test_z, test_y);

      step.pool_seed = derive_seed(config.seed, "pool", i);
      Rng pool_rng(step.pool_seed);
      const std::size_t pool_n = kind == StrategyKind::Random ? config.k : config.pool_size();
      const Matrix pool_z = scaler.to_model(oracles::sample_uniform(pspec, pool_n, pool_rng));

      acquisition::AcquisitionContext ctx;
      ctx.labeled_x = labeled_z;
      ctx.labeled_y = labeled_y;
      ctx.pool = pool_z;
      ctx.ensemble = &trained.model;
      ctx.dropout_model = scorer ? &scorer->model : nullptr;
      ctx.oracle = oracle_z;
      ctx.initial_x = initial_z;
      ctx.seed = derive_seed(config.seed, "acquire", i);

      const auto t_sample = std::chrono::steady_clock::now();
      const auto picked = acquisition::select_batch(ctx, config.strategy, config.k);
      step.sample_time_s = detail::seconds_since(t_sample);

      Matrix batch_z(pool_z.rows(), static_cast<Eigen::Index>(picked.size()));
      for (std::size_t j = 0; j < picked.size(); ++j)
        batch_z.col(static_cast<Eigen::Index>(j)) = pool_z.col(static_cast<Eigen::Index>(picked[j]));
      step.batch_div = batch_z.cols() >= 2 ? metrics::batch_div(batch_z) : 0.0;

      labeled_y = detail::append_cols(labeled_y, oracle_z(batch_z));
      labeled_z = detail::append_cols(labeled_z, batch_z);
      record.steps.push_back(step);
    }
  } catch (const TrainingDiverged& e) {
    record.status = "failed";
    record.error = e.what();
  }
  record.final_labeled = static_cast<std::size_t>(labeled_z.cols());
  return record;
}

inline RunRecord run(const RunConfig& config, const oracles::ProblemOptions& options = {}) {
  return run(config, oracles::make_problem(config.problem, options));
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline nlohmann::json to_json(const acquisition::StrategyConfig& s) {
  return {{"kind", acquisition::to_string(s.kind)},
          {"alpha", s.alpha},
          {"div_den_alpha", s.div_den_alpha},
          {"div_den_beta", s.div_den_beta},
          {"density_k", s.density_k},
          {"bald_passes", s.bald_passes},
          {"bald_dropout", s.bald_dropout},
          {"emoc_param_cap", s.emoc_param_cap},
          {"ll_weight", s.ll_weight},
          {"ll_joint_fraction", s.ll_joint_fraction},
          {"ll_tap_width", s.ll_tap_width},
          {"ll_margin", s.ll_margin},
          {"normalize_terms", s.normalize_terms}};
}

/// Reads the keys present in `j`, leaving the others at their current value.
inline void update_from_json(acquisition::StrategyConfig& s, const nlohmann::json& j) {
  if (j.contains("kind")) s.kind = acquisition::parse_strategy(j.at("kind").get<std::string>());
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  opt("alpha", s.alpha);
  opt("div_den_alpha", s.div_den_alpha);
  opt("div_den_beta", s.div_den_beta);
  opt("density_k", s.density_k);
  opt("bald_passes", s.bald_passes);
  opt("bald_dropout", s.bald_dropout);
  opt("emoc_param_cap", s.emoc_param_cap);
  opt("ll_weight", s.ll_weight);
  opt("ll_joint_fraction", s.ll_joint_fraction);
  opt("ll_tap_width", s.ll_tap_width);
  opt("ll_margin", s.ll_margin);
  opt("normalize_terms", s.normalize_terms);
}

inline nlohmann::json to_json(const nn::TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"plateau_decay", t.plateau_decay},
          {"weight_decay", t.weight_decay},
          {"seed", t.seed},
          {"plateau_threshold", t.plateau_threshold},
          {"plateau_patience", t.plateau_patience},
          {"min_learning_rate", t.min_learning_rate}};
}

inline void update_from_json(nn::TrainConfig& t, const nlohmann::json& j) {
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  opt("epochs", t.epochs);
  opt("batch_size", t.batch_size);
  opt("learning_rate", t.learning_rate);
  opt("plateau_decay", t.plateau_decay);
  opt("weight_decay", t.weight_decay);
  opt("seed", t.seed);
  opt("plateau_threshold", t.plateau_threshold);
  opt("plateau_patience", t.plateau_patience);
  opt("min_learning_rate", t.min_learning_rate);
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"problem", c.problem},
          {"strategy", to_json(c.strategy)},
          {"gamma", c.gamma},
          {"k", c.k},
          {"steps", c.steps},
          {"n_initial", c.n_initial},
          {"n_test", c.n_test},
          {"ensemble_size", c.ensemble_size},
          {"train", to_json(c.train)},
          {"seed", c.seed},
          {"width_scale", c.width_scale},
          {"width_cap", c.width_cap}};
}

inline void update_from_json(RunConfig& c, const nlohmann::json& j) {
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  opt("problem", c.problem);
  if (j.contains("strategy")) update_from_json(c.strategy, j.at("strategy"));
  opt("gamma", c.gamma);
  opt("k", c.k);
  opt("steps", c.steps);
  opt("n_initial", c.n_initial);
  opt("n_test", c.n_test);
  opt("ensemble_size", c.ensemble_size);
  if (j.contains("train")) update_from_json(c.train, j.at("train"));
  opt("seed", c.seed);
  opt("width_scale", c.width_scale);
  opt("width_cap", c.width_cap);
}

/// Checksum over the canonical dump of everything except the checksum field.
inline std::string record_checksum(const nlohmann::json& payload) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(payload.dump())));
  return buf;
}

inline nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : r.steps)
    steps.push_back({{"step", s.step},
                     {"n_labeled", s.n_labeled},
                     {"test_mse", s.test_mse},
                     {"batch_div", s.batch_div},
                     {"pool_seed", s.pool_seed},
                     {"sample_time_s", s.sample_time_s},
                     {"train_time_s", s.train_time_s}});
  nlohmann::json j = {{"config", to_json(r.config)},
                      {"status", r.status},
                      {"error", r.error},
                      {"final_labeled", r.final_labeled},
                      {"metadata", r.metadata},
                      {"steps", steps}};
  j["checksum"] = record_checksum(j);
  return j;
}

/// Parses a run record; throws InvalidInput when the checksum does not match.
inline RunRecord record_from_json(const nlohmann::json& j) {
  nlohmann::json payload = j;
  if (!payload.contains("checksum")) throw InvalidInput("run record has no checksum");
  const std::string stored = payload.at("checksum").get<std::string>();
  payload.erase("checksum");
  if (record_checksum(payload) != stored) throw InvalidInput("run record checksum mismatch");
  RunRecord r;
  update_from_json(r.config, j.at("config"));
  j.at("status").get_to(r.status);
  j.at("error").get_to(r.error);
  j.at("final_labeled").get_to(r.final_labeled);
  r.metadata = j.at("metadata");
  for (const auto& s : j.at("steps")) {
    StepRecord st;
    s.at("step").get_to(st.step);
    s.at("n_labeled").get_to(st.n_labeled);
    s.at("test_mse").get_to(st.test_mse);
    s.at("batch_div").get_to(st.batch_div);
    s.at("pool_seed").get_to(st.pool_seed);
    s.at("sample_time_s").get_to(st.sample_time_s);
    s.at("train_time_s").get_to(st.train_time_s);
    r.steps.push_back(st);
  }
  return r;
}

/// Deterministic per-step series: step, n_labeled, test_mse, batch_div.
inline std::string trace_csv(const RunRecord& r) {
  std::ostringstream out;
  out << "step,n_labeled,test_mse,batch_div\n";
  for (const auto& s : r.steps)
    out << s.step << ',' << s.n_labeled << ',' << format_double(s.test_mse) << ','
        << format_double(s.batch_div) << '\n';
  return out.str();
}

/// Wall-clock series: step, sample_time_s, train_time_s.
inline std::string timing_csv(const RunRecord& r) {
  std::ostringstream out;
  out << "step,sample_time_s,train_time_s\n";
  for (const auto& s : r.steps)
    out << s.step << ',' << format_double(s.sample_time_s) << ','
        << format_double(s.train_time_s) << '\n';
  return out.str();
}

}  // namespace dalr::engine
