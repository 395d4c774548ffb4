// Experiment grids over (problem, strategy, gamma, repeat): execution with
// resumption, and the aggregate report tables.
#pragma once

#include "dalr/engine.hpp"
#include "dalr/metrics.hpp"

#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace dalr::harness {

namespace fs = std::filesystem;
using acquisition::StrategyKind;

enum class Preset { desk, full };

inline Preset parse_preset(const std::string& name) {
  if (name == "desk") return Preset::desk;
  if (name == "full") return Preset::full;
  throw InvalidInput("unknown preset " + name + " (expected desk or full)");
}

struct GridSpec {
  std::vector<std::string> problems;
  std::vector<StrategyKind> strategies;
  std::vector<std::size_t> gammas{2, 4, 8, 16, 32, 64};
  std::size_t repeats = 5;
  /// Template for every cell; problem, strategy kind, gamma and seed are
  /// filled in per cell.
  engine::RunConfig base;
  oracles::ProblemOptions problem_options;
  fs::path output_dir = "results";
  std::size_t workers = 1;
  std::uint64_t base_seed = 0;

  void validate() const {
    if (problems.empty() || strategies.empty() || gammas.empty())
      throw InvalidInput("grid axes must be non-empty");
    if (repeats < 1) throw InvalidInput("grid needs at least one repeat");
    if (workers < 1) throw InvalidInput("grid needs at least one worker");
  }
};

/// Desk: 10 steps, 3 repeats, hidden widths halved and capped at 64, 200
/// epochs. Full: 50 steps, 5 repeats, table widths, 500 epochs.
inline void apply_preset(GridSpec& grid, Preset preset) {
  auto& b = grid.base;
  b.k = 40;
  b.n_initial = 80;
  b.n_test = 4000;
  b.ensemble_size = 10;
  if (preset == Preset::desk) {
    b.steps = 10;
    grid.repeats = 3;
    b.width_scale = 0.5;
    b.width_cap = 64;
    b.train.epochs = 200;
  } else {
    b.steps = 50;
    grid.repeats = 5;
    b.width_scale = 1.0;
    b.width_cap = 0;
    b.train.epochs = 500;
  }
}

struct Cell {
  std::string problem;
  StrategyKind strategy = StrategyKind::Random;
  std::size_t gamma = 1;
  std::size_t repeat = 0;

  /// Canonical identity, e.g. "SINE/GSx/g16/r0".
  std::string name() const {
    return problem + "/" + acquisition::to_string(strategy) + "/g" + std::to_string(gamma) + "/r" +
           std::to_string(repeat);
  }
  fs::path directory(const fs::path& root) const {
    return root / problem / acquisition::to_string(strategy) / ("g" + std::to_string(gamma)) /
           ("r" + std::to_string(repeat));
  }
};

inline std::uint64_t cell_seed(const Cell& cell, std::uint64_t base_seed) {
  return fnv1a64(cell.name()) ^ base_seed;
}

inline std::vector<Cell> cells(const GridSpec& grid) {
  std::vector<Cell> out;
  for (const auto& p : grid.problems)
    for (auto s : grid.strategies)
      for (auto g : grid.gammas)
        for (std::size_t r = 0; r < grid.repeats; ++r) out.push_back({p, s, g, r});
  return out;
}

inline engine::RunConfig cell_config(const GridSpec& grid, const Cell& cell) {
  engine::RunConfig c = grid.base;
  c.problem = cell.problem;
  c.strategy.kind = cell.strategy;
  c.gamma = cell.gamma;
  c.seed = cell_seed(cell, grid.base_seed);
  return c;
}

// ---------------------------------------------------------------------------
// Persistence

inline void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline void save_record(const engine::RunRecord& record, const fs::path& dir) {
  fs::create_directories(dir);
  write_file_atomic(dir / "trace.csv", engine::trace_csv(record));
  write_file_atomic(dir / "timing.csv", engine::timing_csv(record));
  write_file_atomic(dir / "run.json", engine::to_json(record).dump(2) + "\n");
}

/// Loads run.json from a cell directory. Missing files give nullopt; a file
/// that does not parse or fails its checksum throws InvalidInput.
inline std::optional<engine::RunRecord> load_record(const fs::path& dir) {
  const fs::path file = dir / "run.json";
  if (!fs::exists(file)) return std::nullopt;
  std::ifstream in(file);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("corrupt run record " + file.string() + ": " + e.what());
  }
  try {
    return engine::record_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("malformed run record " + file.string() + ": " + e.what());
  }
}

/// Every run.json under a results directory, in canonical path order.
inline std::vector<engine::RunRecord> load_records(const fs::path& root) {
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file() && entry.path().filename() == "run.json")
      dirs.push_back(entry.path().parent_path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<engine::RunRecord> out;
  for (const auto& d : dirs) out.push_back(*load_record(d));
  return out;
}

// ---------------------------------------------------------------------------
// Grid execution

struct GridResult {
  std::vector<engine::RunRecord> records;  // in cell order
  std::size_t executed = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
};

/// Runs every cell not already completed on disk. Cells are independent and
/// are distributed over `grid.workers` threads.
inline GridResult run_grid(const GridSpec& grid, std::ostream* log = nullptr) {
  grid.validate();
  std::error_code ec;
  fs::create_directories(grid.output_dir, ec);
  {
    const fs::path probe = grid.output_dir / ".write-test";
    std::ofstream out(probe);
    if (ec || !out) throw std::runtime_error("output directory " + grid.output_dir.string() +
                                             " is not writable");
    out.close();
    fs::remove(probe, ec);
  }

  // resolve problems once; table-backed oracles load their CSV here
  std::map<std::string, oracles::Problem> problems;
  for (const auto& name : grid.problems)
    problems.emplace(name, oracles::make_problem(name, grid.problem_options));

  const auto all = cells(grid);
  GridResult result;
  result.records.resize(all.size());
  std::vector<char> ran(all.size(), 0);
  std::mutex log_mutex;
  auto say = [&](const std::string& msg) {
    if (!log) return;
    std::lock_guard lock(log_mutex);
    *log << msg << std::endl;
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < all.size(); i = next++) {
      const Cell& cell = all[i];
      const fs::path dir = cell.directory(grid.output_dir);
      const auto config = cell_config(grid, cell);
      try {
        if (auto existing = load_record(dir)) {
          if (existing->completed() &&
              engine::to_json(existing->config) == engine::to_json(config)) {
            result.records[i] = std::move(*existing);
            say("skip " + cell.name() + " (completed)");
            continue;
          }
          say("rerun " + cell.name() + " (previous record incomplete or from another config)");
        }
      } catch (const InvalidInput& e) {
        say(std::string("rerun ") + cell.name() + ": " + e.what());
      }
      say("run  " + cell.name());
      engine::RunRecord rec;
      try {
        rec = engine::run(config, problems.at(cell.problem));
      } catch (const std::exception& e) {
        rec.config = config;
        rec.status = "failed";
        rec.error = e.what();
      }
      if (!rec.completed()) say("FAILED " + cell.name() + ": " + rec.error);
      save_record(rec, dir);
      result.records[i] = std::move(rec);
      ran[i] = 1;
    }
  };
  const std::size_t n_threads = std::min(grid.workers, std::max<std::size_t>(all.size(), 1));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  for (std::size_t i = 0; i < all.size(); ++i) {
    if (ran[i])
      ++result.executed;
    else
      ++result.skipped;
    if (!result.records[i].completed()) ++result.failed;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reporting

struct RunSummary {
  std::string strategy;
  std::string problem;
  std::size_t gamma = 0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  double auc_mse = 0.0;
  double nauc_mse = 0.0;
  double div = 0.0;
  double ndiv = 0.0;
};

struct RangeRow {
  std::string strategy;
  std::string problem;
  double min_nauc = 0.0;
  double mean_nauc = 0.0;
  double max_nauc = 0.0;
  std::size_t prior_gamma = 0;
  double prior_nauc = 0.0;
};

struct TimingRow {
  double sample_s = 0.0;
  double train_s = 0.0;
};

struct ReportBundle {
  std::vector<RunSummary> runs;
  metrics::GammaTable mean_nauc;  // (strategy, problem) -> gamma -> mean over repeats
  metrics::GammaTable mean_ndiv;
  std::vector<RangeRow> ranges;
  std::map<std::string, std::map<std::size_t, std::size_t>> histogram;
  std::map<std::string, std::size_t> prior_gamma;
  std::map<std::string, TimingRow> timing;
};

/// Mean sampling and training seconds per step, grouped by strategy.
inline std::map<std::string, TimingRow> timing_table(const std::vector<engine::RunRecord>& records) {
  std::map<std::string, std::pair<TimingRow, std::size_t>> acc;
  for (const auto& r : records) {
    auto& [row, n] = acc[acquisition::to_string(r.config.strategy.kind)];
    for (const auto& s : r.steps) {
      row.sample_s += s.sample_time_s;
      row.train_s += s.train_time_s;
      ++n;
    }
  }
  std::map<std::string, TimingRow> out;
  for (const auto& [k, v] : acc) {
    const double n = v.second > 0 ? static_cast<double>(v.second) : 1.0;
    out[k] = {v.first.sample_s / n, v.first.train_s / n};
  }
  return out;
}

inline ReportBundle report(std::vector<engine::RunRecord> records) {
  if (records.empty()) throw InvalidInput("report needs at least one run record");
  // canonical order keeps the output independent of input order
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    const auto ka = std::make_tuple(a.config.problem, acquisition::to_string(a.config.strategy.kind),
                                    a.config.gamma, a.config.seed);
    const auto kb = std::make_tuple(b.config.problem, acquisition::to_string(b.config.strategy.kind),
                                    b.config.gamma, b.config.seed);
    return ka < kb;
  });

  ReportBundle bundle;
  std::map<std::string, std::vector<metrics::CurveSummary>> random_by_problem;
  std::vector<metrics::CurveSummary> curves(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    RunSummary s;
    s.strategy = acquisition::to_string(r.config.strategy.kind);
    s.problem = r.config.problem;
    s.gamma = r.config.gamma;
    s.seed = r.config.seed;
    s.failed = !r.completed();
    s.error = r.error;
    if (!s.failed) {
      std::vector<double> mse, div;
      for (const auto& st : r.steps) mse.push_back(st.test_mse), div.push_back(st.batch_div);
      if (mse.size() < 2)
        throw InvalidInput("run " + s.problem + "/" + s.strategy + " has fewer than two steps");
      curves[i] = metrics::summarize(mse, div);
      s.auc_mse = curves[i].auc_mse;
      s.div = curves[i].div;
      if (r.config.strategy.kind == StrategyKind::Random)
        random_by_problem[s.problem].push_back(curves[i]);
    }
    bundle.runs.push_back(s);
  }

  std::map<std::tuple<std::string, std::string, std::size_t>, std::pair<double, double>> sums;
  std::map<std::tuple<std::string, std::string, std::size_t>, std::size_t> counts;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& s = bundle.runs[i];
    if (s.failed) continue;
    const auto it = random_by_problem.find(s.problem);
    if (it == random_by_problem.end())
      throw InvalidInput("no completed random-sampling runs for problem " + s.problem);
    const auto n = metrics::normalize({curves[i]}, it->second).front();
    s.nauc_mse = n.nauc_mse;
    s.ndiv = n.ndiv;
    const auto key = std::make_tuple(s.strategy, s.problem, s.gamma);
    sums[key].first += s.nauc_mse;
    sums[key].second += s.ndiv;
    ++counts[key];
  }
  for (const auto& [key, v] : sums) {
    const double n = static_cast<double>(counts[key]);
    const auto& [strategy, problem, gamma] = key;
    bundle.mean_nauc[{strategy, problem}][gamma] = v.first / n;
    bundle.mean_ndiv[{strategy, problem}][gamma] = v.second / n;
  }

  bundle.histogram = metrics::best_gamma_histogram(bundle.mean_nauc);
  for (const auto& [strategy, h] : bundle.histogram)
    bundle.prior_gamma[strategy] = metrics::prior_gamma(h);

  for (const auto& [key, by_gamma] : bundle.mean_nauc) {
    RangeRow row;
    row.strategy = key.first;
    row.problem = key.second;
    row.min_nauc = std::numeric_limits<double>::infinity();
    row.max_nauc = -row.min_nauc;
    double total = 0.0;
    for (const auto& [g, v] : by_gamma) {
      row.min_nauc = std::min(row.min_nauc, v);
      row.max_nauc = std::max(row.max_nauc, v);
      total += v;
    }
    row.mean_nauc = total / static_cast<double>(by_gamma.size());
    row.prior_gamma = bundle.prior_gamma[key.first];
    const auto p = by_gamma.find(row.prior_gamma);
    row.prior_nauc = p == by_gamma.end() ? std::numeric_limits<double>::quiet_NaN() : p->second;
    bundle.ranges.push_back(row);
  }
  bundle.timing = timing_table(records);
  return bundle;
}

inline std::string summary_csv(const ReportBundle& b) {
  using engine::format_double;
  std::ostringstream out;
  out << "strategy,problem,gamma,seed,auc_mse,nauc_mse,div,ndiv\n";
  for (const auto& s : b.runs) {
    if (s.failed) continue;
    out << s.strategy << ',' << s.problem << ',' << s.gamma << ',' << s.seed << ','
        << format_double(s.auc_mse) << ',' << format_double(s.nauc_mse) << ','
        << format_double(s.div) << ',' << format_double(s.ndiv) << '\n';
  }
  return out.str();
}

inline std::string failed_csv(const ReportBundle& b) {
  std::ostringstream out;
  out << "strategy,problem,gamma,seed,error\n";
  for (const auto& s : b.runs) {
    if (!s.failed) continue;
    std::string err = s.error;
    for (auto& c : err)
      if (c == ',' || c == '\n') c = ';';
    out << s.strategy << ',' << s.problem << ',' << s.gamma << ',' << s.seed << ',' << err << '\n';
  }
  return out.str();
}

/// Range of mean nAUC across gamma per (strategy, problem), plus the value at
/// the strategy's prior gamma.
inline std::string ranges_csv(const ReportBundle& b) {
  using engine::format_double;
  std::ostringstream out;
  out << "strategy,problem,min_nauc_mse,mean_nauc_mse,max_nauc_mse,prior_gamma,prior_nauc_mse\n";
  for (const auto& r : b.ranges)
    out << r.strategy << ',' << r.problem << ',' << format_double(r.min_nauc) << ','
        << format_double(r.mean_nauc) << ',' << format_double(r.max_nauc) << ','
        << r.prior_gamma << ',' << format_double(r.prior_nauc) << '\n';
  return out.str();
}

inline std::string gamma_table_csv(const ReportBundle& b) {
  using engine::format_double;
  std::ostringstream out;
  out << "strategy,problem,gamma,mean_nauc_mse,mean_ndiv\n";
  for (const auto& [key, by_gamma] : b.mean_nauc)
    for (const auto& [g, v] : by_gamma)
      out << key.first << ',' << key.second << ',' << g << ',' << format_double(v) << ','
          << format_double(b.mean_ndiv.at(key).at(g)) << '\n';
  return out.str();
}

inline std::string histogram_csv(const ReportBundle& b) {
  using engine::format_double;
  std::ostringstream out;
  out << "strategy,gamma,count,frequency\n";
  for (const auto& [strategy, h] : b.histogram) {
    std::size_t total = 0;
    for (const auto& [g, c] : h) total += c;
    for (const auto& [g, c] : h)
      out << strategy << ',' << g << ',' << c << ','
          << format_double(total ? static_cast<double>(c) / static_cast<double>(total) : 0.0)
          << '\n';
  }
  return out.str();
}

inline std::string timing_csv(const ReportBundle& b) {
  using engine::format_double;
  std::ostringstream out;
  out << "strategy,mean_sample_time_s,mean_train_time_s\n";
  for (const auto& [s, t] : b.timing)
    out << s << ',' << format_double(t.sample_s) << ',' << format_double(t.train_s) << '\n';
  return out.str();
}

/// Writes summary.csv, failed.csv, gamma_table.csv (nAUC and nDiv per
/// gamma), ranges.csv, best_gamma_histogram.csv and timing.csv.
inline void write_report(const ReportBundle& b, const fs::path& dir) {
  fs::create_directories(dir);
  write_file_atomic(dir / "summary.csv", summary_csv(b));
  write_file_atomic(dir / "failed.csv", failed_csv(b));
  write_file_atomic(dir / "gamma_table.csv", gamma_table_csv(b));
  write_file_atomic(dir / "ranges.csv", ranges_csv(b));
  write_file_atomic(dir / "best_gamma_histogram.csv", histogram_csv(b));
  write_file_atomic(dir / "timing.csv", timing_csv(b));
}

// ---------------------------------------------------------------------------
// Configuration file

/// Reads a grid description (JSON). Keys:
///   preset, problems, strategies, gammas, repeats, base_seed, output,
///   workers, run {RunConfig fields, strategy {...}}, train {...},
///   stack {ambient_index, layer_indices, substrate_index, wavelength_min_nm,
///   wavelength_max_nm, wavelengths}, tables {PROBLEM: csv}, table_k_nn.
/// The preset is applied first, explicit keys override it. The environment
/// variable DALR_BASE_SEED, when set, overrides base_seed.
inline GridSpec grid_from_json(const nlohmann::json& j,
                               std::optional<Preset> preset_override = std::nullopt) {
  GridSpec g;
  g.problems = oracles::problem_names();
  for (const auto& [k, _] : acquisition::kStrategyNames) g.strategies.push_back(k);

  Preset preset = Preset::full;
  if (j.contains("preset")) preset = parse_preset(j.at("preset").get<std::string>());
  if (preset_override) preset = *preset_override;
  apply_preset(g, preset);

  if (j.contains("problems")) g.problems = j.at("problems").get<std::vector<std::string>>();
  if (j.contains("strategies")) {
    g.strategies.clear();
    for (const auto& s : j.at("strategies")) g.strategies.push_back(acquisition::parse_strategy(s.get<std::string>()));
  }
  if (j.contains("gammas")) g.gammas = j.at("gammas").get<std::vector<std::size_t>>();
  if (j.contains("repeats")) j.at("repeats").get_to(g.repeats);
  if (j.contains("base_seed")) j.at("base_seed").get_to(g.base_seed);
  if (j.contains("output")) g.output_dir = j.at("output").get<std::string>();
  if (j.contains("workers")) j.at("workers").get_to(g.workers);
  if (j.contains("run")) engine::update_from_json(g.base, j.at("run"));
  if (j.contains("train")) engine::update_from_json(g.base.train, j.at("train"));
  if (j.contains("stack")) {
    const auto& s = j.at("stack");
    auto& m = g.problem_options.stack;
    m.ambient_index = s.value("ambient_index", m.ambient_index);
    if (s.contains("layer_indices")) m.layer_indices = s.at("layer_indices").get<std::vector<double>>();
    m.substrate_index = s.value("substrate_index", m.substrate_index);
    m.wavelength_min_nm = s.value("wavelength_min_nm", m.wavelength_min_nm);
    m.wavelength_max_nm = s.value("wavelength_max_nm", m.wavelength_max_nm);
    m.wavelengths = s.value("wavelengths", m.wavelengths);
  }
  if (j.contains("tables"))
    g.problem_options.tables = j.at("tables").get<std::map<std::string, std::string>>();
  if (j.contains("table_k_nn")) j.at("table_k_nn").get_to(g.problem_options.table_k_nn);

  if (const char* env = std::getenv("DALR_BASE_SEED"); env && *env)
    g.base_seed = std::stoull(env);
  g.validate();
  return g;
}

inline GridSpec load_grid(const fs::path& file, std::optional<Preset> preset_override = std::nullopt) {
  std::ifstream in(file);
  if (!in) throw InvalidInput("cannot open config " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("config " + file.string() + " is not valid JSON: " + e.what());
  }
  return grid_from_json(j, preset_override);
}

}  // namespace dalr::harness
