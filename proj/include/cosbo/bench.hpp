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

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "cosbo/common.hpp"
#include "cosbo/cosbo.hpp"
#include "cosbo/netsim.hpp"
#include "cosbo/safeopt.hpp"

namespace cosbo {

enum class Algorithm { cosbo, safeopt_mc, random_search };

inline const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::cosbo: return "cosbo";
    case Algorithm::safeopt_mc: return "safeopt_mc";
    case Algorithm::random_search: return "random";
  }
  return "?";
}

inline std::optional<Algorithm> parse_algorithm(std::string_view s) {
  if (s == "cosbo") return Algorithm::cosbo;
  if (s == "safeopt_mc") return Algorithm::safeopt_mc;
  if (s == "random") return Algorithm::random_search;
  return std::nullopt;
}

enum class CollaboratorMode { best, worst };

inline const char* collaborator_mode_name(CollaboratorMode m) {
  return m == CollaboratorMode::best ? "best" : "worst";
}

inline std::optional<CollaboratorMode> parse_collaborator_mode(std::string_view s) {
  if (s == "best") return CollaboratorMode::best;
  if (s == "worst") return CollaboratorMode::worst;
  return std::nullopt;
}

enum class GpProfile { standard, smooth };

inline const char* gp_profile_name(GpProfile p) {
  return p == GpProfile::standard ? "default" : "smooth";
}

inline std::optional<GpProfile> parse_gp_profile(std::string_view s) {
  if (s == "default") return GpProfile::standard;
  if (s == "smooth") return GpProfile::smooth;
  return std::nullopt;
}

/// Everything one benchmark execution depends on. Defaults reproduce the
/// desk-scale comparison: 5 maps x 3 loads, 10 safe starts, budget 60.
struct ExperimentConfig {
  int n_maps = 5;
  std::vector<LoadLevel> load_levels{LoadLevel::low, LoadLevel::medium,
                                     LoadLevel::high};
  int n_starts = 10;
  int budget = 60;
  std::vector<Algorithm> algorithms{Algorithm::cosbo, Algorithm::safeopt_mc,
                                    Algorithm::random_search};
  CollaboratorMode collaborator_mode = CollaboratorMode::best;
  GpProfile gp_profile = GpProfile::standard;
  std::vector<std::string> parameters{"tilt", "beamwidth"};
  std::uint64_t master_seed = 20250801;

  // GP / optimizer hyperparameters
  double signal_variance = 0.5;
  double lengthscale = 1.0;         // default profile
  double lengthscale_smooth = 4.0;  // Appendix profile
  double lengthscale_z = 1.0;
  double noise_f = 1e-4;
  double noise_g = 1e-5;
  double beta = 2.0;
  double threshold_h = 0.4;
  int transfer_k = 10;
  double gp_domain_span = 16.0;

  // collaborative-initialization plumbing
  int prerun_iters = 20;        // main agent's adjacent-domain pre-run
  int collaborator_iters = 60;  // collaborators' knowledge runs

  double safe_start_margin = 0.1;
  double efficiency_epsilon = 0.02;

  MapConfig map;
  RadioConfig radio;
  LoadModel load_model;
  GridSpec tilt_grid{0.0, 16.0, 101};
  GridSpec beamwidth_grid{20.0, 160.0, 101};

  int jobs = 0;  // 0 = hardware concurrency

  [[nodiscard]] KernelParams kernel_params() const {
    KernelParams k;
    k.signal_variance = signal_variance;
    k.lengthscale_x =
        gp_profile == GpProfile::smooth ? lengthscale_smooth : lengthscale;
    k.lengthscale_z = lengthscale_z;
    return k;
  }

  [[nodiscard]] SafeOptConfig safeopt_config() const {
    SafeOptConfig c;
    c.beta = beta;
    c.thresholds = {threshold_h};
    c.kernel_f = kernel_params();
    c.kernel_g = kernel_params();
    c.noise_f = noise_f;
    c.noise_g = noise_g;
    c.gp_domain_span = gp_domain_span;
    return c;
  }

  [[nodiscard]] const GridSpec& grid_for(const std::string& parameter) const {
    if (parameter == "tilt") return tilt_grid;
    if (parameter == "beamwidth") return beamwidth_grid;
    throw std::invalid_argument("unknown parameter '" + parameter + "'");
  }

  static std::string adjacent_parameter(const std::string& parameter) {
    if (parameter == "tilt") return "beamwidth";
    if (parameter == "beamwidth") return "tilt";
    throw std::invalid_argument("unknown parameter '" + parameter + "'");
  }

  [[nodiscard]] int effective_jobs() const {
    if (jobs > 0) return jobs;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }
};

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

inline std::string map_key(int map_index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "m%02d", map_index);
  return buf;
}

inline std::string scenario_id(int map_index, LoadLevel load) {
  return map_key(map_index) + "-" + load_level_name(load);
}

/// n_maps x load_levels validated scenarios, deterministic per master seed.
inline std::vector<Scenario> build_corpus(const ExperimentConfig& config) {
  std::vector<Scenario> corpus;
  corpus.reserve(static_cast<std::size_t>(config.n_maps) *
                 config.load_levels.size());
  for (int m = 0; m < config.n_maps; ++m) {
    MapConfig mc = config.map;
    mc.seed = derive_seed(config.master_seed, "map", m);
    for (LoadLevel load : config.load_levels) {
      corpus.push_back(build_validated_scenario(
          mc, config.radio, config.load_model, load, config.tilt_grid,
          config.beamwidth_grid, scenario_id(m, load), config.threshold_h));
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

/// Uniform draws (without replacement when possible) from the comfortably
/// safe range {x : g_scaled(x) >= h + margin}.
inline std::vector<int> pick_safe_starts(std::span<const double> g_scaled,
                                         double threshold_h, double margin,
                                         int n, std::mt19937_64& rng) {
  std::vector<int> pool;
  for (std::size_t i = 0; i < g_scaled.size(); ++i) {
    if (g_scaled[i] >= threshold_h + margin) pool.push_back(static_cast<int>(i));
  }
  if (pool.empty()) {
    throw std::runtime_error("pick_safe_starts: safe range is empty");
  }
  std::vector<int> starts;
  starts.reserve(static_cast<std::size_t>(n));
  if (static_cast<std::size_t>(n) <= pool.size()) {
    for (int k = 0; k < n; ++k) {  // partial Fisher-Yates
      std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
      std::swap(pool[static_cast<std::size_t>(k)], pool[pick(rng)]);
      starts.push_back(pool[static_cast<std::size_t>(k)]);
    }
  } else {
    log_warn("safe range smaller than requested start count; sampling with replacement");
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (int k = 0; k < n; ++k) starts.push_back(pool[pick(rng)]);
  }
  return starts;
}

inline std::vector<int> pick_safe_starts(const Scenario& sc,
                                         const std::string& parameter, int n,
                                         std::mt19937_64& rng, double threshold_h,
                                         double margin) {
  return pick_safe_starts(sc.tables_for(parameter).g.scaled, threshold_h, margin,
                          n, rng);
}

/// Evaluator over the scenario's scaled tables: noisy observations for the
/// optimizer plus the noiseless raw/true values for the trace.
inline Evaluator make_table_evaluator(const Scenario& sc,
                                      const std::string& parameter,
                                      double noise_f, double noise_g,
                                      std::mt19937_64& rng) {
  const ParamTables& tables = sc.tables_for(parameter);
  return [&tables, noise_f, noise_g, &rng](int index, double /*x*/) {
    EvalOutcome out;
    out.f_obs = noisy_eval(tables.f.scaled, index, noise_f, rng);
    out.g_obs = {noisy_eval(tables.g.scaled, index, noise_g, rng)};
    out.f_raw = tables.f.raw[static_cast<std::size_t>(index)];
    out.g_true = {tables.g.scaled[static_cast<std::size_t>(index)]};
    return out;
  };
}

/// Unsafe baseline: budget uniform draws over the whole grid, no model.
inline RunTrace run_random_baseline(const Scenario& sc, const std::string& parameter,
                                    int budget, std::mt19937_64& rng,
                                    double noise_f, double threshold_h) {
  const ParamTables& tables = sc.tables_for(parameter);
  const ParameterGrid grid = tables.grid.make(parameter);
  RunTrace trace;
  trace.scenario_id = sc.id;
  trace.parameter = parameter;
  trace.algorithm = algorithm_name(Algorithm::random_search);
  std::uniform_int_distribution<int> pick(0, grid.size() - 1);
  double best = -std::numeric_limits<double>::infinity();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int t = 1; t <= budget; ++t) {
    const int j = pick(rng);
    TraceRecord rec;
    rec.iteration = t;
    rec.grid_index = j;
    rec.x = grid.points[j];
    rec.f_obs = noisy_eval(tables.f.scaled, j, noise_f, rng);
    rec.f_raw = tables.f.raw[static_cast<std::size_t>(j)];
    rec.g_true = {tables.g.scaled[static_cast<std::size_t>(j)]};
    rec.lower_g_at_selection = {nan};
    rec.safe_flag = rec.g_true[0] >= threshold_h;
    best = std::max(best, rec.f_obs);
    rec.best_so_far = best;
    trace.records.push_back(std::move(rec));
  }
  return trace;
}

/// Posterior knowledge produced by a safe optimization run on one domain.
struct DomainPosterior {
  std::vector<double> f_mean;
  std::vector<std::vector<double>> g_means;
};

/// SafeOpt-MC knowledge run used for the main agent's adjacent-domain
/// posterior and for collaborator records.
inline DomainPosterior knowledge_run(const Scenario& sc, const std::string& parameter,
                                     int iterations, const ExperimentConfig& config,
                                     std::uint64_t start_seed, std::uint64_t eval_seed) {
  const ParamTables& tables = sc.tables_for(parameter);
  const ParameterGrid grid = tables.grid.make(parameter);
  std::mt19937_64 start_rng = make_rng(start_seed);
  const std::vector<int> starts =
      pick_safe_starts(tables.g.scaled, config.threshold_h,
                       config.safe_start_margin, 1, start_rng);
  std::mt19937_64 eval_rng = make_rng(eval_seed);
  const Evaluator evaluator = make_table_evaluator(sc, parameter, config.noise_f,
                                                   config.noise_g, eval_rng);
  const EvalOutcome seed_measurement = evaluator(starts[0], grid.points[starts[0]]);
  SafeOpt state(grid, config.safeopt_config(), starts[0], seed_measurement);
  run_optimization(state, evaluator, iterations);
  auto [f_mean, g_means] = state.posterior_means();
  return DomainPosterior{std::move(f_mean), std::move(g_means)};
}

struct RunFailure {
  std::string key;
  std::string message;
};

struct MatrixResult {
  std::vector<RunTrace> traces;
  std::vector<RunFailure> failures;
};

namespace detail {

inline CollaboratorRecord make_collaborator_record(
    const Scenario& sc, const std::string& parameter,
    const std::string& adjacent, const DomainPosterior& on_main,
    const DomainPosterior& on_adjacent, const ParameterGrid& grid) {
  CollaboratorRecord rec;
  rec.id = sc.id;
  rec.posterior_b = on_adjacent.f_mean;
  rec.data_a.reserve(static_cast<std::size_t>(grid.size()));
  for (int i = 0; i < grid.size(); ++i) {
    CollaboratorPoint p;
    p.grid_index = i;
    p.x = grid.points[i];
    p.f = on_main.f_mean[static_cast<std::size_t>(i)];
    p.g.reserve(on_main.g_means.size());
    for (const auto& g : on_main.g_means) {
      p.g.push_back(g[static_cast<std::size_t>(i)]);
    }
    rec.data_a.push_back(std::move(p));
  }
  (void)parameter;
  (void)adjacent;
  return rec;
}

template <class Fn>
inline void parallel_for(int count, int jobs, Fn&& fn) {
  if (count <= 0) return;
  const int workers = std::max(1, std::min(jobs, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
        fn(i);
      }
    });
  }
  for (auto& t : threads) t.join();
}

}  // namespace detail

/// One trace per (scenario x parameter x algorithm x start). CoSBO's
/// collaborators for a given main scenario are all the other scenarios;
/// safe algorithms share evaluation-noise streams per (scenario, parameter,
/// start) so comparisons use common random numbers.
inline MatrixResult run_matrix(const ExperimentConfig& config,
                               const std::vector<Scenario>& corpus) {
  MatrixResult result;
  const auto n_scenarios = corpus.size();
  const auto n_params = config.parameters.size();

  // knowledge pre-runs per (scenario, domain)
  std::vector<DomainPosterior> posteriors(n_scenarios * n_params);
  std::vector<std::string> prerun_errors(n_scenarios * n_params);
  {
    struct PrerunTask {
      std::size_t scenario;
      std::size_t param;
      int iterations;
    };
    std::vector<PrerunTask> tasks;
    for (std::size_t s = 0; s < n_scenarios; ++s) {
      for (std::size_t p = 0; p < n_params; ++p) {
        tasks.push_back(PrerunTask{s, p, config.collaborator_iters});
      }
    }
    detail::parallel_for(
        static_cast<int>(tasks.size()), config.effective_jobs(), [&](int ti) {
          const PrerunTask& task = tasks[static_cast<std::size_t>(ti)];
          const Scenario& sc = corpus[task.scenario];
          const std::string& param = config.parameters[task.param];
          // load levels of one map share the pre-run start
          const std::string map_id = sc.id.substr(0, sc.id.find('-'));
          try {
            posteriors[task.scenario * n_params + task.param] = knowledge_run(
                sc, param, task.iterations, config,
                derive_seed(config.master_seed, "prerun-start", map_id, param),
                derive_seed(config.master_seed, "prerun-eval", sc.id, param));
          } catch (const std::exception& e) {
            prerun_errors[task.scenario * n_params + task.param] = e.what();
          }
        });
    for (std::size_t s = 0; s < n_scenarios; ++s) {
      for (std::size_t p = 0; p < n_params; ++p) {
        if (!prerun_errors[s * n_params + p].empty()) {
          result.failures.push_back(
              RunFailure{corpus[s].id + "/" + config.parameters[p] + "/prerun",
                         prerun_errors[s * n_params + p]});
        }
      }
    }
  }

  struct RunSpec {
    std::size_t scenario;
    std::size_t param;
    Algorithm algorithm;
    int start_index;
    int start_grid_index;
  };
  std::vector<RunSpec> specs;
  for (std::size_t s = 0; s < n_scenarios; ++s) {
    for (std::size_t p = 0; p < n_params; ++p) {
      const Scenario& sc = corpus[s];
      const std::string& param = config.parameters[p];
      std::mt19937_64 start_rng = make_rng(
          derive_seed(config.master_seed, "starts", sc.id, param));
      const std::vector<int> starts =
          pick_safe_starts(sc, param, config.n_starts, start_rng,
                           config.threshold_h, config.safe_start_margin);
      for (Algorithm algo : config.algorithms) {
        for (int k = 0; k < config.n_starts; ++k) {
          specs.push_back(RunSpec{s, p, algo, k, starts[static_cast<std::size_t>(k)]});
        }
      }
    }
  }

  std::vector<std::optional<RunTrace>> traces(specs.size());
  std::vector<std::optional<RunFailure>> failures(specs.size());
  detail::parallel_for(
      static_cast<int>(specs.size()), config.effective_jobs(), [&](int ri) {
        const RunSpec& spec = specs[static_cast<std::size_t>(ri)];
        const Scenario& sc = corpus[spec.scenario];
        const std::string& param = config.parameters[spec.param];
        std::ostringstream key;
        key << sc.id << "/" << param << "/" << algorithm_name(spec.algorithm)
            << "/start" << spec.start_index;
        try {
          RunTrace trace;
          if (spec.algorithm == Algorithm::random_search) {
            std::mt19937_64 rng = make_rng(derive_seed(
                config.master_seed, "run-random", sc.id, param, spec.start_index));
            trace = run_random_baseline(sc, param, config.budget, rng,
                                        config.noise_f, config.threshold_h);
          } else {
            std::mt19937_64 rng = make_rng(derive_seed(
                config.master_seed, "run", sc.id, param, spec.start_index));
            const ParamTables& tables = sc.tables_for(param);
            const ParameterGrid grid = tables.grid.make(param);
            const Evaluator evaluator = make_table_evaluator(
                sc, param, config.noise_f, config.noise_g, rng);
            const EvalOutcome seed_measurement =
                evaluator(spec.start_grid_index, grid.points[spec.start_grid_index]);
            SafeOpt state = [&]() {
              if (spec.algorithm == Algorithm::safeopt_mc) {
                return SafeOpt(grid, config.safeopt_config(),
                               spec.start_grid_index, seed_measurement);
              }
              // CoSBO: collaborators are the other scenarios
              const std::string adjacent =
                  ExperimentConfig::adjacent_parameter(param);
              const auto adj_it =
                  std::find(config.parameters.begin(), config.parameters.end(),
                            adjacent);
              if (adj_it == config.parameters.end()) {
                throw std::runtime_error(
                    "cosbo needs the adjacent parameter '" + adjacent +
                    "' in the experiment (for the similarity domain)");
              }
              const auto adj_index = static_cast<std::size_t>(
                  adj_it - config.parameters.begin());
              std::vector<CollaboratorRecord> collaborators;
              for (std::size_t c = 0; c < n_scenarios; ++c) {
                if (c == spec.scenario) continue;
                collaborators.push_back(detail::make_collaborator_record(
                    corpus[c], param, adjacent,
                    posteriors[c * n_params + spec.param],
                    posteriors[c * n_params + adj_index], grid));
              }
              const DomainPosterior& own_adjacent =
                  posteriors[spec.scenario * n_params + adj_index];
              const CollaboratorChoice mode =
                  config.collaborator_mode == CollaboratorMode::best
                      ? CollaboratorChoice::most_correlated
                      : CollaboratorChoice::least_correlated;
              return initialize_collaborative(
                  grid, config.safeopt_config(), spec.start_grid_index,
                  seed_measurement, collaborators, own_adjacent.f_mean,
                  config.transfer_k, mode);
            }();
            run_optimization(state, evaluator, config.budget);
            trace = state.trace();
            trace.scenario_id = sc.id;
            trace.parameter = param;
            trace.algorithm = algorithm_name(spec.algorithm);
          }
          trace.collaborator_mode = collaborator_mode_name(config.collaborator_mode);
          trace.gp_profile = gp_profile_name(config.gp_profile);
          trace.start_index = spec.start_index;
          traces[static_cast<std::size_t>(ri)] = std::move(trace);
        } catch (const std::exception& e) {
          failures[static_cast<std::size_t>(ri)] = RunFailure{key.str(), e.what()};
        }
      });

  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (traces[i]) result.traces.push_back(std::move(*traces[i]));
    if (failures[i]) result.failures.push_back(std::move(*failures[i]));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct AggregateKey {
  std::string parameter;
  std::string algorithm;
  std::string collaborator_mode;
  std::string gp_profile;

  auto operator<=>(const AggregateKey&) const = default;
};

/// Pointwise median and 25-75% band of best-so-far across a group's traces.
struct AggregateCurve {
  AggregateKey key;
  int n_traces = 0;
  std::vector<double> median;
  std::vector<double> q25;
  std::vector<double> q75;
};

/// Best-so-far series padded to `budget` (early-converged runs carry their
/// final best forward; a run with no records carries its seed value).
inline std::vector<double> best_so_far_series(const RunTrace& trace, int budget) {
  std::vector<double> series;
  series.reserve(static_cast<std::size_t>(budget));
  double last = trace.seed ? trace.seed->f_obs
                           : -std::numeric_limits<double>::infinity();
  for (const TraceRecord& rec : trace.records) {
    if (static_cast<int>(series.size()) >= budget) break;
    last = rec.best_so_far;
    series.push_back(last);
  }
  while (static_cast<int>(series.size()) < budget) series.push_back(last);
  return series;
}

inline std::vector<AggregateCurve> aggregate(std::span<const RunTrace> traces,
                                             int budget) {
  std::map<AggregateKey, std::vector<std::vector<double>>> groups;
  for (const RunTrace& t : traces) {
    const AggregateKey key{t.parameter, t.algorithm, t.collaborator_mode,
                           t.gp_profile};
    groups[key].push_back(best_so_far_series(t, budget));
  }
  std::vector<AggregateCurve> out;
  out.reserve(groups.size());
  for (auto& [key, series] : groups) {
    AggregateCurve curve;
    curve.key = key;
    curve.n_traces = static_cast<int>(series.size());
    curve.median.resize(static_cast<std::size_t>(budget));
    curve.q25.resize(static_cast<std::size_t>(budget));
    curve.q75.resize(static_cast<std::size_t>(budget));
    std::vector<double> column(series.size());
    for (int t = 0; t < budget; ++t) {
      for (std::size_t s = 0; s < series.size(); ++s) {
        column[s] = series[s][static_cast<std::size_t>(t)];
      }
      std::sort(column.begin(), column.end());
      curve.q25[static_cast<std::size_t>(t)] = sorted_quantile(column, 0.25);
      curve.median[static_cast<std::size_t>(t)] = sorted_quantile(column, 0.50);
      curve.q75[static_cast<std::size_t>(t)] = sorted_quantile(column, 0.75);
    }
    out.push_back(std::move(curve));
  }
  return out;
}

/// First 1-based iteration whose value is within eps of `target`;
/// budget + 1 when the curve never reaches it.
inline int plateau_iteration(std::span<const double> curve, double target,
                             double eps) {
  for (std::size_t t = 0; t < curve.size(); ++t) {
    if (curve[t] >= target - eps) return static_cast<int>(t) + 1;
  }
  return static_cast<int>(curve.size()) + 1;
}

/// Positive when curve_a reaches its own asymptote earlier than curve_b.
inline int efficiency_gap(std::span<const double> curve_a,
                          std::span<const double> curve_b, double eps) {
  if (curve_a.size() != curve_b.size() || curve_a.empty()) {
    throw std::invalid_argument("efficiency_gap: curves must match and be non-empty");
  }
  const int ta = plateau_iteration(curve_a, curve_a.back(), eps);
  const int tb = plateau_iteration(curve_b, curve_b.back(), eps);
  return tb - ta;
}

// ---------------------------------------------------------------------------
// Results files
// ---------------------------------------------------------------------------

namespace detail {
inline std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}
}  // namespace detail

inline const char* results_csv_header() {
  return "scenario_id,parameter,algorithm,collaborator_mode,gp_profile,"
         "start_index,iteration,x,f_raw,f_scaled,g_scaled,safe_flag,"
         "best_so_far,collaborator_id,z_c";
}

inline std::string results_to_csv(std::span<const RunTrace> traces) {
  std::ostringstream os;
  os << results_csv_header() << '\n';
  for (const RunTrace& t : traces) {
    for (const TraceRecord& r : t.records) {
      os << t.scenario_id << ',' << t.parameter << ',' << t.algorithm << ','
         << t.collaborator_mode << ',' << t.gp_profile << ',' << t.start_index
         << ',' << r.iteration << ',' << detail::format_double(r.x) << ','
         << detail::format_double(r.f_raw) << ','
         << detail::format_double(r.f_obs) << ','
         << detail::format_double(r.g_true.empty()
                                      ? std::numeric_limits<double>::quiet_NaN()
                                      : r.g_true[0])
         << ',' << (r.safe_flag ? 1 : 0) << ','
         << detail::format_double(r.best_so_far) << ',' << t.collaborator_id
         << ',' << detail::format_double(t.z_c) << '\n';
    }
  }
  return os.str();
}

/// Atomic write: temp file in the destination directory, then rename.
inline void write_text_atomic(const std::filesystem::path& path,
                              const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    }
    out << content;
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline void write_results_csv(const std::filesystem::path& path,
                              std::span<const RunTrace> traces) {
  write_text_atomic(path, results_to_csv(traces));
}

/// Minimal row used by `report` (reconstructed from the results file).
struct ResultRow {
  std::string scenario_id, parameter, algorithm, collaborator_mode, gp_profile;
  int start_index = 0;
  int iteration = 0;
  double best_so_far = 0.0;
  bool safe_flag = true;
};

inline std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open results file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("results file '" + path.string() + "' is empty");
  }
  if (line != results_csv_header()) {
    throw std::runtime_error("results file '" + path.string() +
                             "' has an unexpected header");
  }
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) {
        fields.push_back(line.substr(pos));
        break;
      }
      fields.push_back(line.substr(pos, comma - pos));
      pos = comma + 1;
    }
    if (fields.size() != 15) {
      throw std::runtime_error("malformed results row: " + line);
    }
    ResultRow row;
    row.scenario_id = fields[0];
    row.parameter = fields[1];
    row.algorithm = fields[2];
    row.collaborator_mode = fields[3];
    row.gp_profile = fields[4];
    row.start_index = std::stoi(fields[5]);
    row.iteration = std::stoi(fields[6]);
    row.safe_flag = fields[11] == "1";
    row.best_so_far = std::stod(fields[12]);
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Rebuilds per-trace best-so-far series from result rows and aggregates them.
inline std::vector<AggregateCurve> aggregate_rows(std::span<const ResultRow> rows,
                                                  int budget) {
  std::map<std::tuple<std::string, std::string, std::string, std::string,
                      std::string, int>,
           RunTrace>
      traces;
  for (const ResultRow& row : rows) {
    auto& trace = traces[{row.scenario_id, row.parameter, row.algorithm,
                          row.collaborator_mode, row.gp_profile, row.start_index}];
    trace.scenario_id = row.scenario_id;
    trace.parameter = row.parameter;
    trace.algorithm = row.algorithm;
    trace.collaborator_mode = row.collaborator_mode;
    trace.gp_profile = row.gp_profile;
    trace.start_index = row.start_index;
    TraceRecord rec;
    rec.iteration = row.iteration;
    rec.best_so_far = row.best_so_far;
    rec.safe_flag = row.safe_flag;
    trace.records.push_back(rec);
  }
  std::vector<RunTrace> list;
  list.reserve(traces.size());
  for (auto& [key, trace] : traces) {
    std::sort(trace.records.begin(), trace.records.end(),
              [](const TraceRecord& a, const TraceRecord& b) {
                return a.iteration < b.iteration;
              });
    list.push_back(std::move(trace));
  }
  return aggregate(list, budget);
}

inline std::string aggregates_to_csv(std::span<const AggregateCurve> curves) {
  std::ostringstream os;
  os << "parameter,collaborator_mode,gp_profile,algorithm,iteration,median,q25,q75\n";
  for (const AggregateCurve& c : curves) {
    for (std::size_t t = 0; t < c.median.size(); ++t) {
      os << c.key.parameter << ',' << c.key.collaborator_mode << ','
         << c.key.gp_profile << ',' << c.key.algorithm << ',' << (t + 1) << ','
         << detail::format_double(c.median[t]) << ','
         << detail::format_double(c.q25[t]) << ','
         << detail::format_double(c.q75[t]) << '\n';
    }
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Summary
// ---------------------------------------------------------------------------

struct SafetyAudit {
  long selections_below_threshold = 0;  // model lower bound below h at selection
  long true_violations = 0;             // noiseless table value below h
  long evaluations = 0;
};

inline SafetyAudit audit_safety(std::span<const RunTrace> traces,
                                const std::string& algorithm, double threshold_h) {
  SafetyAudit audit;
  for (const RunTrace& t : traces) {
    if (t.algorithm != algorithm) continue;
    for (const TraceRecord& r : t.records) {
      ++audit.evaluations;
      for (double l : r.lower_g_at_selection) {
        if (!std::isnan(l) && l < threshold_h) {
          ++audit.selections_below_threshold;
          break;
        }
      }
      if (!r.safe_flag) ++audit.true_violations;
    }
  }
  return audit;
}

inline std::string summarize_matrix(const ExperimentConfig& config,
                                    std::span<const RunTrace> traces,
                                    std::span<const AggregateCurve> curves) {
  std::ostringstream os;
  os << "traces: " << traces.size() << "\n";
  for (const char* algo : {"cosbo", "safeopt_mc", "random"}) {
    const SafetyAudit audit = audit_safety(traces, algo, config.threshold_h);
    if (audit.evaluations == 0) continue;
    os << algo << ": evaluations=" << audit.evaluations
       << " selections_below_h=" << audit.selections_below_threshold
       << " true_violations=" << audit.true_violations << "\n";
  }
  auto find_curve = [&](const std::string& param,
                        const std::string& algo) -> const AggregateCurve* {
    for (const AggregateCurve& c : curves) {
      if (c.key.parameter == param && c.key.algorithm == algo) return &c;
    }
    return nullptr;
  };
  for (const std::string& param : config.parameters) {
    const AggregateCurve* cosbo_curve = find_curve(param, "cosbo");
    const AggregateCurve* safeopt_curve = find_curve(param, "safeopt_mc");
    if (cosbo_curve && safeopt_curve) {
      const int gap = efficiency_gap(cosbo_curve->median, safeopt_curve->median,
                                     config.efficiency_epsilon);
      os << param << " (" << collaborator_mode_name(config.collaborator_mode)
         << ", " << gp_profile_name(config.gp_profile)
         << "): efficiency_gap(cosbo vs safeopt_mc, eps="
         << config.efficiency_epsilon << ") = " << gap
         << " iterations; final medians " << cosbo_curve->median.back() << " vs "
         << safeopt_curve->median.back() << "\n";
    }
  }
  return os.str();
}

}  // namespace cosbo
