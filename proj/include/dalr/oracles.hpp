// Ground-truth labeling functions for the benchmark problems.
#pragma once

#include "dalr/core.hpp"
#include "dalr/nn/network.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace dalr::oracles {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

enum class OracleKind { analytic, ode_solution, numerical_simulator, dataset };

struct ProblemSpec {
  std::string name;
  std::size_t dim_x = 0;
  std::size_t dim_y = 0;
  std::vector<Interval> bounds;
  nn::NetworkSpec network;
  OracleKind oracle_kind = OracleKind::analytic;
};

// ---------------------------------------------------------------------------
// SINE

inline double sine_oracle(double x) { return x * std::sin(3.0 * std::sin(30.0 * x)); }

// ---------------------------------------------------------------------------
// ROBO: planar three-segment arm with a sliding base.

inline constexpr std::array<double, 3> kArmLengths{0.5, 0.5, 1.0};

/// (cos, sin) of pi/2 * q with the whole quarter turns taken out exactly, so
/// integer q gives exact 0 and +-1.
inline std::pair<double, double> quarter_turn(double q) {
  const double r = std::remainder(q, 4.0);
  const double n = std::nearbyint(r);
  const double f = std::numbers::pi / 2.0 * (r - n);
  const double c = std::cos(f), s = std::sin(f);
  switch ((static_cast<int>(n) % 4 + 4) % 4) {
    case 0: return {c, s};
    case 1: return {-s, c};
    case 2: return {-c, -s};
    default: return {s, -c};
  }
}

inline Vector arm_oracle(const Vector& x) {
  if (x.size() != 4) throw InvalidInput("arm oracle expects 4 inputs");
  Vector y(2);
  y[0] = 0.0;
  y[1] = x[0];
  for (int i = 1; i <= 3; ++i) {
    const auto [c, s] = quarter_turn(x[i]);
    y[0] += c * kArmLengths[static_cast<std::size_t>(i - 1)];
    y[1] += s * kArmLengths[static_cast<std::size_t>(i - 1)];
  }
  return y;
}

// ---------------------------------------------------------------------------
// BESS: Bessel functions of the first kind, integer order.

/// J_alpha(x) for alpha in 0..9 and x in [0, 10] by the ascending series
///   sum_m (-1)^m (x/2)^(2m+alpha) / (m! (m+alpha)!).
/// Terms are summed until they drop below 1e-17 of the largest term seen,
/// with a floor of 30 terms.
inline double bessel_oracle(int alpha, double x) {
  if (alpha < 0 || alpha > 9) throw InvalidInput("Bessel order must be in 0..9");
  if (!(x >= 0.0 && x <= 10.0)) throw InvalidInput("Bessel argument must be in [0, 10]");
  const double half = 0.5 * x;
  double term = 1.0;
  for (int k = 1; k <= alpha; ++k) term *= half / k;
  double sum = term;
  double largest = std::abs(term);
  const double q = -half * half;
  for (int m = 1; m < 200; ++m) {
    term *= q / (static_cast<double>(m) * static_cast<double>(m + alpha));
    sum += term;
    largest = std::max(largest, std::abs(term));
    if (m >= 30 && std::abs(term) <= 1e-17 * largest) break;
  }
  return sum;
}

/// Order snapped from a continuous coordinate: nearest integer in [0, 9].
inline int snap_bessel_order(double a) {
  return static_cast<int>(std::clamp(std::round(a), 0.0, 9.0));
}

// ---------------------------------------------------------------------------
// DAMP: free damped oscillator trajectory.

inline constexpr std::size_t kDampSteps = 100;
inline constexpr double kDampTimeStep = 0.1;

inline Vector damp_oracle(double amplitude, double damping, double frequency) {
  Vector y(static_cast<Eigen::Index>(kDampSteps));
  for (std::size_t i = 0; i < kDampSteps; ++i) {
    const double t = static_cast<double>(i) * kDampTimeStep;
    y[static_cast<Eigen::Index>(i)] =
        amplitude * std::exp(-damping * t) * std::cos(frequency * t);
  }
  return y;
}

// ---------------------------------------------------------------------------
// STACK: thin-film reflectance by the characteristic-matrix method.

struct StackMaterials {
  double ambient_index = 1.0;
  std::vector<double> layer_indices{1.45, 2.10, 1.45, 2.10, 1.45};
  double substrate_index = 1.45;
  double wavelength_min_nm = 400.0;
  double wavelength_max_nm = 800.0;
  std::size_t wavelengths = 201;

  double wavelength(std::size_t i) const {
    if (wavelengths == 1) return wavelength_min_nm;
    return wavelength_min_nm + (wavelength_max_nm - wavelength_min_nm) *
                                   static_cast<double>(i) / static_cast<double>(wavelengths - 1);
  }
};

/// Normal-incidence reflectance |r|^2 of a lossless stack at one wavelength.
inline double stack_reflectance(const StackMaterials& mat, const Vector& thickness_nm,
                                double wavelength_nm) {
  using C = std::complex<double>;
  const C i1(0.0, 1.0);
  // characteristic matrix product, rows [[m00, m01], [m10, m11]]
  C m00 = 1.0, m01 = 0.0, m10 = 0.0, m11 = 1.0;
  for (Eigen::Index j = 0; j < thickness_nm.size(); ++j) {
    const double n = mat.layer_indices[static_cast<std::size_t>(j)];
    const double delta = 2.0 * std::numbers::pi * n * thickness_nm[j] / wavelength_nm;
    const C a = std::cos(delta), b = i1 * std::sin(delta) / n, c = i1 * n * std::sin(delta),
            d = std::cos(delta);
    const C n00 = m00 * a + m01 * c, n01 = m00 * b + m01 * d;
    const C n10 = m10 * a + m11 * c, n11 = m10 * b + m11 * d;
    m00 = n00, m01 = n01, m10 = n10, m11 = n11;
  }
  const double eta0 = mat.ambient_index, etas = mat.substrate_index;
  const C big_b = m00 + m01 * etas;
  const C big_c = m10 + m11 * etas;
  const C r = (eta0 * big_b - big_c) / (eta0 * big_b + big_c);
  return std::norm(r);
}

inline Vector stack_oracle(const Vector& thickness_nm, const StackMaterials& mat = {}) {
  if (static_cast<std::size_t>(thickness_nm.size()) != mat.layer_indices.size())
    throw InvalidInput("stack oracle expects one thickness per layer");
  for (Eigen::Index j = 0; j < thickness_nm.size(); ++j)
    if (!(thickness_nm[j] > 0.0)) throw InvalidInput("layer thickness must be positive");
  Vector out(static_cast<Eigen::Index>(mat.wavelengths));
  for (std::size_t w = 0; w < mat.wavelengths; ++w)
    out[static_cast<Eigen::Index>(w)] = stack_reflectance(mat, thickness_nm, mat.wavelength(w));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset-backed proxy oracle.

struct DatasetOracleTable {
  Matrix x;  // dim_x x rows
  Matrix y;  // dim_y x rows
  std::size_t k_nn = 5;

  std::size_t rows() const { return static_cast<std::size_t>(x.cols()); }

  void validate() const {
    if (rows() == 0) throw InvalidInput("dataset oracle table is empty");
    if (x.cols() != y.cols()) throw InvalidInput("dataset oracle x/y row counts differ");
    if (k_nn == 0 || k_nn > rows())
      throw InvalidInput("dataset oracle neighbour count must be in [1, rows]");
  }
};

/// Inverse-distance-weighted mean of the k nearest rows (weights 1/d). An
/// exact match returns that row's label.
inline Vector dataset_oracle(const DatasetOracleTable& table, const Vector& x) {
  table.validate();
  if (x.size() != table.x.rows()) throw InvalidInput("query dimension does not match table");
  std::vector<std::pair<double, Eigen::Index>> dist;
  dist.reserve(table.rows());
  for (Eigen::Index r = 0; r < table.x.cols(); ++r)
    dist.emplace_back((table.x.col(r) - x).norm(), r);
  const auto k = static_cast<std::ptrdiff_t>(table.k_nn);
  std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
  if (dist.front().first == 0.0) return table.y.col(dist.front().second);
  Vector acc = Vector::Zero(table.y.rows());
  double weights = 0.0;
  for (std::ptrdiff_t i = 0; i < k; ++i) {
    const double w = 1.0 / dist[static_cast<std::size_t>(i)].first;
    acc += w * table.y.col(dist[static_cast<std::size_t>(i)].second);
    weights += w;
  }
  return acc / weights;
}

/// CSV with a header row naming x_0..x_{d-1}, y_0..y_{m-1}.
inline DatasetOracleTable load_dataset_table(std::istream& in, std::size_t k_nn = 5) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("dataset CSV is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
      header.push_back(cell);
    }
  }
  std::size_t dx = 0, dy = 0;
  for (const auto& h : header) {
    if (h.rfind("x_", 0) == 0) {
      if (dy != 0) throw InvalidInput("dataset CSV must list x columns before y columns");
      if (h != "x_" + std::to_string(dx)) throw InvalidInput("unexpected column " + h);
      ++dx;
    } else if (h.rfind("y_", 0) == 0) {
      if (h != "y_" + std::to_string(dy)) throw InvalidInput("unexpected column " + h);
      ++dy;
    } else {
      throw InvalidInput("unexpected column " + h);
    }
  }
  if (dx == 0 || dy == 0) throw InvalidInput("dataset CSV needs x_ and y_ columns");
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw InvalidInput("non-numeric cell '" + cell + "' in dataset CSV");
      }
    }
    if (row.size() != dx + dy) throw InvalidInput("dataset CSV row has wrong column count");
    rows.push_back(std::move(row));
  }
  DatasetOracleTable table;
  table.k_nn = k_nn;
  table.x.resize(static_cast<Eigen::Index>(dx), static_cast<Eigen::Index>(rows.size()));
  table.y.resize(static_cast<Eigen::Index>(dy), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < dx; ++c)
      table.x(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r)) = rows[r][c];
    for (std::size_t c = 0; c < dy; ++c)
      table.y(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r)) = rows[r][dx + c];
  }
  table.validate();
  return table;
}

inline DatasetOracleTable load_dataset_table(const std::string& path, std::size_t k_nn = 5) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open dataset table " + path);
  return load_dataset_table(in, k_nn);
}

// ---------------------------------------------------------------------------
// Sampling

/// n i.i.d. uniform points inside the bounds, drawn point by point, so the
/// first k points of a stream do not depend on n.
inline Matrix sample_uniform(const ProblemSpec& spec, std::size_t n, Rng& rng) {
  Matrix out(static_cast<Eigen::Index>(spec.dim_x), static_cast<Eigen::Index>(n));
  for (Eigen::Index c = 0; c < out.cols(); ++c)
    for (Eigen::Index d = 0; d < out.rows(); ++d) {
      const auto& b = spec.bounds[static_cast<std::size_t>(d)];
      out(d, c) = b.lo == b.hi ? b.lo : rng.uniform(b.lo, b.hi);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Problem registry

/// A problem plus its labeling function (one column in, one column out).
struct Problem {
  ProblemSpec spec;
  std::function<Vector(const Vector&)> oracle;

  Matrix label(const Matrix& x) const {
    Matrix y(static_cast<Eigen::Index>(spec.dim_y), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) y.col(c) = oracle(x.col(c));
    return y;
  }
};

struct ProblemOptions {
  StackMaterials stack;
  /// CSV paths for the table-backed problems (FOIL, HYDR, ADM).
  std::map<std::string, std::string> tables;
  std::size_t table_k_nn = 5;
};

struct ArchitectureRow {
  const char* name;
  std::size_t dim_x, dim_y, width, depth;
};

// hidden width and hidden-layer count per problem
inline constexpr std::array<ArchitectureRow, 8> kArchitectures{{
    {"SINE", 1, 1, 20, 9},
    {"ROBO", 4, 2, 500, 4},
    {"STACK", 5, 201, 700, 9},
    {"ADM", 14, 2000, 1500, 4},
    {"FOIL", 5, 1, 200, 4},
    {"HYDR", 6, 1, 50, 6},
    {"BESS", 2, 1, 50, 6},
    {"DAMP", 3, 100, 500, 6},
}};

inline std::vector<std::string> problem_names() {
  std::vector<std::string> out;
  for (const auto& row : kArchitectures) out.emplace_back(row.name);
  return out;
}

inline const ArchitectureRow& architecture(const std::string& name) {
  for (const auto& row : kArchitectures)
    if (name == row.name) return row;
  throw InvalidInput("unknown problem " + name);
}

inline Problem make_problem(const std::string& name, const ProblemOptions& options = {}) {
  const auto& arch = architecture(name);
  Problem p;
  p.spec.name = name;
  p.spec.dim_x = arch.dim_x;
  p.spec.dim_y = arch.dim_y;
  p.spec.network = nn::NetworkSpec::mlp(arch.dim_x, arch.width, arch.depth, arch.dim_y);

  if (name == "SINE") {
    p.spec.bounds = {{-1.0, 1.0}};
    p.oracle = [](const Vector& x) { return Vector::Constant(1, sine_oracle(x[0])); };
  } else if (name == "ROBO") {
    p.spec.bounds.assign(4, {-1.0, 1.0});
    p.oracle = [](const Vector& x) { return arm_oracle(x); };
  } else if (name == "STACK") {
    p.spec.oracle_kind = OracleKind::numerical_simulator;
    p.spec.bounds.assign(options.stack.layer_indices.size(), {30.0, 250.0});
    p.spec.dim_x = options.stack.layer_indices.size();
    p.spec.dim_y = options.stack.wavelengths;
    p.spec.network = nn::NetworkSpec::mlp(p.spec.dim_x, arch.width, arch.depth, p.spec.dim_y);
    p.oracle = [mat = options.stack](const Vector& x) { return stack_oracle(x, mat); };
  } else if (name == "BESS") {
    p.spec.oracle_kind = OracleKind::ode_solution;
    p.spec.bounds = {{0.0, 9.0}, {0.0, 10.0}};
    p.oracle = [](const Vector& x) {
      return Vector::Constant(1, bessel_oracle(snap_bessel_order(x[0]), x[1]));
    };
  } else if (name == "DAMP") {
    p.spec.oracle_kind = OracleKind::ode_solution;
    p.spec.bounds = {{0.2, 2.0}, {0.1, 1.0}, {0.5, 5.0}};
    p.oracle = [](const Vector& x) { return damp_oracle(x[0], x[1], x[2]); };
  } else {
    p.spec.oracle_kind = OracleKind::dataset;
    const auto it = options.tables.find(name);
    if (it == options.tables.end())
      throw InvalidInput("problem " + name + " needs a dataset table (CSV path)");
    auto table = std::make_shared<DatasetOracleTable>(
        load_dataset_table(it->second, options.table_k_nn));
    if (static_cast<std::size_t>(table->x.rows()) != arch.dim_x ||
        static_cast<std::size_t>(table->y.rows()) != arch.dim_y)
      throw InvalidInput("dataset table for " + name + " has the wrong dimensions");
    for (Eigen::Index d = 0; d < table->x.rows(); ++d)
      p.spec.bounds.push_back({table->x.row(d).minCoeff(), table->x.row(d).maxCoeff()});
    p.oracle = [table](const Vector& x) { return dataset_oracle(*table, x); };
  }
  return p;
}

}  // namespace dalr::oracles
