/*
 * Copyright 2026 The cosbo authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cosbo/common.hpp"
#include "cosbo/gp.hpp"
#include "cosbo/trace.hpp"

namespace cosbo {

/// Finite uniform 1-D optimization domain.
struct ParameterGrid {
  std::string name;
  Eigen::VectorXd points;

  static ParameterGrid linspace(std::string name, double lo, double hi, int n) {
    if (n < 2) throw std::invalid_argument("ParameterGrid: need >= 2 points");
    if (!(hi > lo)) throw std::invalid_argument("ParameterGrid: hi must exceed lo");
    ParameterGrid g;
    g.name = std::move(name);
    g.points = Eigen::VectorXd::LinSpaced(n, lo, hi);
    return g;
  }

  [[nodiscard]] int size() const { return static_cast<int>(points.size()); }

  void validate() const {
    if (points.size() < 2) {
      throw std::invalid_argument("ParameterGrid: need >= 2 points");
    }
    const double step = points[1] - points[0];
    if (!(step > 0.0)) {
      throw std::invalid_argument("ParameterGrid: points must strictly increase");
    }
    for (Eigen::Index i = 1; i < points.size(); ++i) {
      const double d = points[i] - points[i - 1];
      if (!(d > 0.0) || std::abs(d - step) > 1e-9 * std::max(1.0, std::abs(step))) {
        throw std::invalid_argument("ParameterGrid: spacing must be uniform");
      }
    }
  }
};

using Mask = std::vector<std::uint8_t>;

inline int mask_count(const Mask& m) {
  int c = 0;
  for (auto v : m) c += (v != 0);
  return c;
}

inline bool mask_any(const Mask& m) {
  for (auto v : m)
    if (v) return true;
  return false;
}

/// Confidence bounds per grid point per function. Index 0 is the performance
/// function f; indices 1..q are the safety functions g_i.
struct BoundState {
  std::vector<Eigen::VectorXd> lower;
  std::vector<Eigen::VectorXd> upper;
  double beta = 2.0;

  [[nodiscard]] bool empty() const { return lower.empty(); }
  [[nodiscard]] int num_functions() const { return static_cast<int>(lower.size()); }
  [[nodiscard]] int grid_size() const {
    return lower.empty() ? 0 : static_cast<int>(lower.front().size());
  }
};

/// mu +- sqrt(beta) * sigma at every grid point.
inline BoundState raw_bounds(const std::vector<Prediction>& predictions,
                             double beta) {
  BoundState b;
  b.beta = beta;
  const double scale = std::sqrt(beta);
  b.lower.reserve(predictions.size());
  b.upper.reserve(predictions.size());
  for (const Prediction& p : predictions) {
    const Eigen::VectorXd half = scale * p.variance.array().sqrt().matrix();
    b.lower.push_back(p.mean - half);
    b.upper.push_back(p.mean + half);
  }
  return b;
}

/// Intersects `raw` into `bounds` (contained intervals across iterations).
/// An empty intersection at a point signals model inconsistency; both ends
/// are clamped to the midpoint. Returns the number of clamped points.
inline int intersect_bounds(BoundState& bounds, const BoundState& raw) {
  if (bounds.empty()) {
    bounds = raw;
    return 0;
  }
  if (bounds.num_functions() != raw.num_functions() ||
      bounds.grid_size() != raw.grid_size()) {
    throw std::invalid_argument("intersect_bounds: shape mismatch");
  }
  int clamped = 0;
  for (int f = 0; f < bounds.num_functions(); ++f) {
    auto& lo = bounds.lower[static_cast<std::size_t>(f)];
    auto& up = bounds.upper[static_cast<std::size_t>(f)];
    const auto& rlo = raw.lower[static_cast<std::size_t>(f)];
    const auto& rup = raw.upper[static_cast<std::size_t>(f)];
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
      double l = std::max(lo[i], rlo[i]);
      double u = std::min(up[i], rup[i]);
      if (l > u) {
        const double mid = 0.5 * (l + u);
        l = mid;
        u = mid;
        ++clamped;
      }
      lo[i] = l;
      up[i] = u;
    }
  }
  return clamped;
}

/// A point is safe iff every safety lower bound clears its threshold, or it
/// was already safe, or it is a seed. Throws when nothing is safe and there
/// are no seeds to fall back on.
inline Mask safe_set_from_bounds(const BoundState& bounds,
                                 std::span<const double> thresholds,
                                 const Mask& prev_safe, const Mask& seeds) {
  const auto n = static_cast<std::size_t>(bounds.grid_size());
  const auto q = thresholds.size();
  if (bounds.num_functions() != static_cast<int>(q) + 1) {
    throw std::invalid_argument("safe_set_from_bounds: function count mismatch");
  }
  Mask safe(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    bool ok = true;
    for (std::size_t g = 0; g < q; ++g) {
      if (bounds.lower[g + 1][static_cast<Eigen::Index>(i)] < thresholds[g]) {
        ok = false;
        break;
      }
    }
    safe[i] = ok || (i < prev_safe.size() && prev_safe[i]) ||
              (i < seeds.size() && seeds[i]);
  }
  if (!mask_any(safe)) {
    throw std::runtime_error(
        "safe set is empty and no seed points are configured: no safe "
        "starting region");
  }
  return safe;
}

/// M = { safe x : u_f(x) >= max over safe x' of l_f(x') }.
inline Mask maximizers_from_bounds(const BoundState& bounds, const Mask& safe) {
  const auto n = static_cast<std::size_t>(bounds.grid_size());
  Mask m(n, 0);
  double best_lower = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (safe[i]) {
      best_lower = std::max(best_lower, bounds.lower[0][static_cast<Eigen::Index>(i)]);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = safe[i] && bounds.upper[0][static_cast<Eigen::Index>(i)] >= best_lower;
  }
  return m;
}

/// Hypothetical lower bound of safety function `i` at grid point `query`
/// after adding an optimistic observation g_i(candidate) = u_i(candidate).
using HypotheticalLowerFn = std::function<double(int i, int candidate, int query)>;

/// A safe point expands iff its optimistic measurement would certify at
/// least one currently-unsafe point for some safety function. Candidates
/// whose own upper bound misses every threshold are skipped outright.
inline Mask expanders_from_bounds(const BoundState& bounds, const Mask& safe,
                                  std::span<const double> thresholds,
                                  const HypotheticalLowerFn& hyp_lower) {
  const auto n = static_cast<std::size_t>(bounds.grid_size());
  const auto q = static_cast<int>(thresholds.size());
  Mask expanders(n, 0);
  std::vector<int> unsafe_points;
  for (std::size_t i = 0; i < n; ++i) {
    if (!safe[i]) unsafe_points.push_back(static_cast<int>(i));
  }
  if (unsafe_points.empty()) return expanders;  // nothing left to expand
  for (std::size_t j = 0; j < n; ++j) {
    if (!safe[j]) continue;
    bool expands = false;
    for (int g = 0; g < q && !expands; ++g) {
      if (bounds.upper[static_cast<std::size_t>(g) + 1]
                      [static_cast<Eigen::Index>(j)] <
          thresholds[static_cast<std::size_t>(g)]) {
        continue;  // optimistic value itself unsafe cannot certify neighbors
      }
      for (int u : unsafe_points) {
        if (hyp_lower(g, static_cast<int>(j), u) >=
            thresholds[static_cast<std::size_t>(g)]) {
          expands = true;
          break;
        }
      }
    }
    expanders[j] = expands;
  }
  return expanders;
}

/// argmax over candidates of the largest confidence width across all
/// functions; ties go to the lowest grid index. nullopt when no candidates.
inline std::optional<int> select_next_from_bounds(const BoundState& bounds,
                                                  const Mask& candidates) {
  const auto n = static_cast<std::size_t>(bounds.grid_size());
  std::optional<int> best;
  double best_width = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (!candidates[i]) continue;
    double width = -std::numeric_limits<double>::infinity();
    for (int f = 0; f < bounds.num_functions(); ++f) {
      width = std::max(width,
                       bounds.upper[static_cast<std::size_t>(f)]
                                   [static_cast<Eigen::Index>(i)] -
                           bounds.lower[static_cast<std::size_t>(f)]
                                       [static_cast<Eigen::Index>(i)]);
    }
    if (width > best_width) {
      best_width = width;
      best = static_cast<int>(i);
    }
  }
  return best;
}

struct SafeOptConfig {
  double beta = 2.0;
  std::vector<double> thresholds{0.4};
  KernelParams kernel_f{};
  KernelParams kernel_g{};
  double noise_f = 1e-4;
  double noise_g = 1e-5;
  // When > 0, grid values are affinely mapped onto [0, gp_domain_span] before
  // entering the kernels, so one Table-II lengthscale serves domains of very
  // different physical extent. 0 keeps raw parameter units.
  double gp_domain_span = 0.0;
};

/// What an evaluation of the system returns. f_raw / g_true are bookkeeping
/// for traces; when absent they fall back to the observed values.
struct EvalOutcome {
  double f_obs = 0.0;
  std::vector<double> g_obs;
  double f_raw = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> g_true;
};

using Evaluator = std::function<EvalOutcome(int grid_index, double x)>;

/// A prior observation injected at initialization (collaborative transfer).
struct PriorObservation {
  int grid_index = -1;
  double z = 1.0;
  double f_value = 0.0;
  std::vector<double> g_values;
};

/// SafeOpt-MC over a finite grid: confidence bounds, safe set, maximizers,
/// expanders, and next-point selection. One instance is confined to one run.
class SafeOpt {
 public:
  SafeOpt(ParameterGrid grid, SafeOptConfig config, int seed_index,
          const EvalOutcome& seed_measurement,
          const std::vector<PriorObservation>& priors = {})
      : grid_(std::move(grid)), config_(std::move(config)) {
    grid_.validate();
    config_.kernel_f.validate();
    config_.kernel_g.validate();
    const int n = grid_.size();
    if (seed_index < 0 || seed_index >= n) {
      throw std::invalid_argument("SafeOpt: seed index outside grid");
    }
    const auto q = config_.thresholds.size();
    if (q == 0) throw std::invalid_argument("SafeOpt: need >= 1 safety function");
    if (seed_measurement.g_obs.size() != q) {
      throw std::invalid_argument(
          "SafeOpt: seed measurement safety count mismatch");
    }

    queries_.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      queries_.push_back(ContextPoint{
          Eigen::VectorXd::Constant(1, gp_coordinate(i)), 1.0});
    }

    std::vector<Observation> obs_f;
    std::vector<std::vector<Observation>> obs_g(q);
    for (const PriorObservation& p : priors) {
      if (p.grid_index < 0 || p.grid_index >= n) {
        throw std::invalid_argument("SafeOpt: prior point outside grid");
      }
      if (p.g_values.size() != q) {
        throw std::invalid_argument("SafeOpt: prior safety count mismatch");
      }
      const ContextPoint cp{
          Eigen::VectorXd::Constant(1, gp_coordinate(p.grid_index)), p.z};
      obs_f.push_back(Observation{cp, p.f_value, config_.noise_f});
      for (std::size_t g = 0; g < q; ++g) {
        obs_g[g].push_back(Observation{cp, p.g_values[g], config_.noise_g});
      }
      trace_.prior_points.push_back(PriorPoint{p.grid_index,
                                               grid_.points[p.grid_index], p.z,
                                               p.f_value, p.g_values});
    }
    const ContextPoint seed_cp = queries_[static_cast<std::size_t>(seed_index)];
    obs_f.push_back(Observation{seed_cp, seed_measurement.f_obs, config_.noise_f});
    for (std::size_t g = 0; g < q; ++g) {
      obs_g[g].push_back(
          Observation{seed_cp, seed_measurement.g_obs[g], config_.noise_g});
    }

    gp_f_ = GpModel::fit(std::move(obs_f), config_.kernel_f);
    gp_g_.reserve(q);
    for (std::size_t g = 0; g < q; ++g) {
      gp_g_.push_back(GpModel::fit(std::move(obs_g[g]), config_.kernel_g));
    }

    seeds_.assign(static_cast<std::size_t>(n), 0);
    seeds_[static_cast<std::size_t>(seed_index)] = 1;
    safe_.assign(static_cast<std::size_t>(n), 0);

    trace_.seed = SeedObservation{seed_index, grid_.points[seed_index],
                                  seed_measurement.f_obs, seed_measurement.g_obs};
    best_value_ = seed_measurement.f_obs;
    best_x_ = grid_.points[seed_index];

    grid_kernel_g_ = prior_grid_kernel(config_.kernel_g);

    refresh();
  }

  /// Eq.-style confidence intervals, intersected with the previous iteration's
  /// bounds so intervals only ever contract.
  const BoundState& update_bounds() {
    std::vector<Prediction> preds;
    preds.reserve(1 + gp_g_.size());
    grid_preds_.clear();
    grid_preds_.push_back(gp_f_.predict_detailed(queries_));
    preds.push_back(Prediction{grid_preds_.back().mean, grid_preds_.back().variance});
    for (const GpModel& g : gp_g_) {
      grid_preds_.push_back(g.predict_detailed(queries_));
      preds.push_back(
          Prediction{grid_preds_.back().mean, grid_preds_.back().variance});
    }
    const BoundState raw = raw_bounds(preds, config_.beta);
    const int clamped = intersect_bounds(bounds_, raw);
    if (clamped > 0) {
      std::ostringstream os;
      os << "confidence intervals became inconsistent at " << clamped
         << " grid point(s); clamped to midpoint (GP misspecification?)";
      log_warn(os.str());
    }
    return bounds_;
  }

  const Mask& compute_safe_set() {
    safe_ = safe_set_from_bounds(bounds_, config_.thresholds, safe_, seeds_);
    return safe_;
  }

  const Mask& compute_maximizers() {
    maximizers_ = maximizers_from_bounds(bounds_, safe_);
    return maximizers_;
  }

  const Mask& compute_expanders() {
    expanders_ = expanders_from_bounds(bounds_, safe_, config_.thresholds,
                                       hypothetical_lower_fn());
    return expanders_;
  }

  [[nodiscard]] std::optional<int> select_next() const {
    Mask candidates(safe_.size(), 0);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      candidates[i] = (maximizers_[i] || expanders_[i]);
    }
    return select_next_from_bounds(bounds_, candidates);
  }

  /// One full iteration: bounds -> sets -> selection -> evaluation -> update.
  /// A converged state is left untouched.
  void step(const Evaluator& evaluator) {
    if (converged_) return;
    refresh();
    const std::optional<int> next = select_next();
    if (!next) {
      converged_ = true;
      trace_.converged = true;
      return;
    }
    const int j = *next;
    const auto q = config_.thresholds.size();
    std::vector<double> lower_g(q);
    for (std::size_t g = 0; g < q; ++g) {
      lower_g[g] = bounds_.lower[g + 1][j];
    }

    EvalOutcome out;
    try {
      out = evaluator(j, grid_.points[j]);
    } catch (const std::exception& e) {
      std::ostringstream os;
      os << "evaluation failed at iteration " << (iteration_ + 1) << ": "
         << e.what();
      throw std::runtime_error(os.str());
    }
    if (out.g_obs.size() != q) {
      throw std::runtime_error("evaluator returned wrong safety count");
    }

    const ContextPoint cp = queries_[static_cast<std::size_t>(j)];
    gp_f_ = gp_f_.add_observation(Observation{cp, out.f_obs, config_.noise_f});
    for (std::size_t g = 0; g < q; ++g) {
      gp_g_[g] = gp_g_[g].add_observation(
          Observation{cp, out.g_obs[g], config_.noise_g});
    }

    ++iteration_;
    if (out.f_obs > best_value_) {
      best_value_ = out.f_obs;
      best_x_ = grid_.points[j];
    }
    TraceRecord rec;
    rec.iteration = iteration_;
    rec.grid_index = j;
    rec.x = grid_.points[j];
    rec.f_obs = out.f_obs;
    rec.f_raw = std::isnan(out.f_raw) ? out.f_obs : out.f_raw;
    rec.g_true = out.g_true.empty() ? out.g_obs : out.g_true;
    rec.lower_g_at_selection = std::move(lower_g);
    rec.safe_flag = true;
    for (std::size_t g = 0; g < q; ++g) {
      rec.safe_flag = rec.safe_flag && rec.g_true[g] >= config_.thresholds[g];
    }
    rec.best_so_far = best_value_;
    trace_.records.push_back(std::move(rec));
  }

  /// Evaluated point with the highest observed scaled f (seed included).
  [[nodiscard]] std::pair<double, double> best_estimate() const {
    if (!trace_.seed && trace_.records.empty()) {
      throw std::runtime_error("best_estimate: no evaluations recorded");
    }
    return {best_x_, best_value_};
  }

  /// Posterior means over the grid at z = 1 (used as collaborator knowledge).
  [[nodiscard]] std::pair<std::vector<double>, std::vector<std::vector<double>>>
  posterior_means() const {
    std::pair<std::vector<double>, std::vector<std::vector<double>>> out;
    const Prediction pf = gp_f_.predict(queries_);
    out.first.assign(pf.mean.data(), pf.mean.data() + pf.mean.size());
    for (const GpModel& g : gp_g_) {
      const Prediction pg = g.predict(queries_);
      out.second.emplace_back(pg.mean.data(), pg.mean.data() + pg.mean.size());
    }
    return out;
  }

  [[nodiscard]] const ParameterGrid& grid() const { return grid_; }
  [[nodiscard]] const SafeOptConfig& config() const { return config_; }
  [[nodiscard]] const BoundState& bounds() const { return bounds_; }
  [[nodiscard]] const Mask& safe_set() const { return safe_; }
  [[nodiscard]] const Mask& maximizers() const { return maximizers_; }
  [[nodiscard]] const Mask& expanders() const { return expanders_; }
  [[nodiscard]] const Mask& seeds() const { return seeds_; }
  [[nodiscard]] bool converged() const { return converged_; }
  [[nodiscard]] int iteration() const { return iteration_; }
  [[nodiscard]] const GpModel& gp_f() const { return gp_f_; }
  [[nodiscard]] const GpModel& gp_g(int i) const {
    return gp_g_[static_cast<std::size_t>(i)];
  }
  [[nodiscard]] int num_safety() const { return static_cast<int>(gp_g_.size()); }
  [[nodiscard]] const RunTrace& trace() const { return trace_; }
  [[nodiscard]] RunTrace& trace() { return trace_; }
  [[nodiscard]] double gp_coordinate(int grid_index) const {
    const double x = grid_.points[grid_index];
    if (config_.gp_domain_span <= 0.0) return x;
    const double lo = grid_.points[0];
    const double hi = grid_.points[grid_.size() - 1];
    return (x - lo) * (config_.gp_domain_span / (hi - lo));
  }

 private:
  void refresh() {
    update_bounds();
    compute_safe_set();
    compute_maximizers();
    compute_expanders();
  }

  [[nodiscard]] Eigen::MatrixXd prior_grid_kernel(const KernelParams& p) const {
    const auto n = static_cast<Eigen::Index>(queries_.size());
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double v = kernel(queries_[static_cast<std::size_t>(i)],
                                queries_[static_cast<std::size_t>(j)], p);
        k(i, j) = v;
        k(j, i) = v;
      }
    }
    return k;
  }

  /// Rank-one posterior update; algebraically identical to refitting the GP
  /// with the optimistic observation appended.
  [[nodiscard]] HypotheticalLowerFn hypothetical_lower_fn() const {
    return [this](int i, int candidate, int query) -> double {
      const GridPrediction& ws = grid_preds_[static_cast<std::size_t>(i) + 1];
      const double u_j =
          bounds_.upper[static_cast<std::size_t>(i) + 1][candidate];
      const double s2 = ws.variance[candidate] + config_.noise_g + GpModel::kJitter;
      double cross = grid_kernel_g_(candidate, query);
      if (ws.whitened.rows() > 0) {
        cross -= ws.whitened.col(candidate).dot(ws.whitened.col(query));
      }
      const double mean =
          ws.mean[query] + cross * (u_j - ws.mean[candidate]) / s2;
      const double var = ws.variance[query] - cross * cross / s2;
      return mean - std::sqrt(bounds_.beta) * std::sqrt(std::max(var, 0.0));
    };
  }

  ParameterGrid grid_;
  SafeOptConfig config_;
  std::vector<ContextPoint> queries_;  // grid at z = 1, GP coordinates
  GpModel gp_f_;
  std::vector<GpModel> gp_g_;
  BoundState bounds_;
  Mask seeds_, safe_, maximizers_, expanders_;
  std::vector<GridPrediction> grid_preds_;  // refreshed by update_bounds
  Eigen::MatrixXd grid_kernel_g_;
  RunTrace trace_;
  double best_value_ = -std::numeric_limits<double>::infinity();
  double best_x_ = 0.0;
  int iteration_ = 0;
  bool converged_ = false;
};

/// Runs up to `budget` iterations (or until converged) and returns the trace.
inline RunTrace run_optimization(SafeOpt& state, const Evaluator& evaluator,
                                 int budget) {
  if (budget < 0) throw std::invalid_argument("run_optimization: budget < 0");
  for (int t = 0; t < budget && !state.converged(); ++t) {
    state.step(evaluator);
  }
  return state.trace();
}

}  // namespace cosbo
