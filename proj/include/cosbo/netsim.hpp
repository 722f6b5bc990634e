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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cosbo/common.hpp"
#include "cosbo/safeopt.hpp"

namespace cosbo {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct MapConfig {
  double edge_length_m = 2000.0;
  double site_intensity_per_m2 = 2.5e-6;  // expected ~10 sites on a 4 km^2 map
  double min_intersite_distance_m = 400.0;
  int n_users = 1000;
  int sectors_per_site = 3;
  int n_bins = 5000;  // rasterization metadata only; users are continuous
  int min_sites = 7;
  int max_sites = 12;
  std::uint64_t seed = 0;
};

/// Radio-model constants. All invented plumbing values, overridable from the
/// CLI; never used as ground truth in tests.
struct RadioConfig {
  double tx_power_dbm = 46.0;
  double max_gain_dbi = 14.0;
  double horizontal_attenuation_cap_db = 25.0;  // A_m, also the overall floor
  double vertical_attenuation_cap_db = 20.0;
  double vertical_3db_deg = 10.0;
  double noise_floor_dbm = -104.0;
  double bandwidth_hz = 1e7;
  double distance_floor_m = 35.0;
  double bs_height_m = 30.0;
  double ue_height_m = 1.5;
  // "Current deployment practice" defaults; also the threshold-measurement
  // configuration and the fixed setting of every non-target antenna.
  double initial_tilt_deg = 6.0;
  double initial_beamwidth_deg = 65.0;
};

enum class LoadLevel { low, medium, high };

inline const char* load_level_name(LoadLevel l) {
  switch (l) {
    case LoadLevel::low: return "low";
    case LoadLevel::medium: return "medium";
    case LoadLevel::high: return "high";
  }
  return "?";
}

inline std::optional<LoadLevel> parse_load_level(std::string_view s) {
  if (s == "low") return LoadLevel::low;
  if (s == "medium") return LoadLevel::medium;
  if (s == "high") return LoadLevel::high;
  return std::nullopt;
}

/// Total traffic volume per load level (bit/s) and the cell utilization it
/// induces. Users equally split the fraction of the serving cell's resource
/// not consumed by the background utilization.
struct LoadModel {
  double volume_low_bps = 5e7;
  double volume_medium_bps = 15e7;
  double volume_high_bps = 25e7;
  double util_low = 0.075;
  double util_medium = 0.30;
  double util_high = 0.70;

  [[nodiscard]] double volume(LoadLevel l) const {
    switch (l) {
      case LoadLevel::low: return volume_low_bps;
      case LoadLevel::medium: return volume_medium_bps;
      case LoadLevel::high: return volume_high_bps;
    }
    return 0.0;
  }
  [[nodiscard]] double utilization(LoadLevel l) const {
    switch (l) {
      case LoadLevel::low: return util_low;
      case LoadLevel::medium: return util_medium;
      case LoadLevel::high: return util_high;
    }
    return 0.0;
  }
};

// ---------------------------------------------------------------------------
// Map realization
// ---------------------------------------------------------------------------

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct MapRealization {
  std::vector<Point2> sites;
  std::vector<double> sector_azimuths_deg;  // per site sector, size = sectors
  std::vector<Point2> users;

  [[nodiscard]] int num_cells() const {
    return static_cast<int>(sites.size() * sector_azimuths_deg.size());
  }
  [[nodiscard]] int cell_site(int cell) const {
    return cell / static_cast<int>(sector_azimuths_deg.size());
  }
  [[nodiscard]] double cell_azimuth(int cell) const {
    return sector_azimuths_deg[static_cast<std::size_t>(
        cell % static_cast<int>(sector_azimuths_deg.size()))];
  }
};

/// Poisson site placement with hard-core thinning: the drawn count is clamped
/// to [min_sites, max_sites] and sites closer than the minimum intersite
/// distance are rejected. Deterministic per seed.
inline MapRealization generate_map(const MapConfig& config) {
  if (config.sectors_per_site < 1 || config.n_users < 1 ||
      !(config.edge_length_m > 0.0)) {
    throw std::invalid_argument("generate_map: invalid configuration");
  }
  std::mt19937_64 rng = make_rng(derive_seed(config.seed, "netsim-map"));
  std::uniform_real_distribution<double> coord(0.0, config.edge_length_m);
  const double area = config.edge_length_m * config.edge_length_m;
  std::poisson_distribution<int> count_dist(config.site_intensity_per_m2 * area);

  MapRealization map;
  constexpr int kMapAttempts = 100;
  constexpr int kPlacementTries = 2000;
  bool placed_all = false;
  for (int attempt = 0; attempt < kMapAttempts && !placed_all; ++attempt) {
    const int target = std::clamp(count_dist(rng), config.min_sites, config.max_sites);
    map.sites.clear();
    placed_all = true;
    for (int s = 0; s < target; ++s) {
      bool placed = false;
      for (int t = 0; t < kPlacementTries; ++t) {
        const Point2 p{coord(rng), coord(rng)};
        bool clear = true;
        for (const Point2& q : map.sites) {
          const double dx = p.x - q.x;
          const double dy = p.y - q.y;
          if (std::hypot(dx, dy) < config.min_intersite_distance_m) {
            clear = false;
            break;
          }
        }
        if (clear) {
          map.sites.push_back(p);
          placed = true;
          break;
        }
      }
      if (!placed) {
        placed_all = false;
        break;
      }
    }
    if (placed_all && static_cast<int>(map.sites.size()) < config.min_sites) {
      placed_all = false;
    }
  }
  if (!placed_all) {
    std::ostringstream os;
    os << "generate_map: could not place " << config.min_sites
       << " sites with min intersite distance " << config.min_intersite_distance_m
       << " m (seed " << config.seed << ")";
    throw std::runtime_error(os.str());
  }
  map.sector_azimuths_deg.resize(static_cast<std::size_t>(config.sectors_per_site));
  for (int s = 0; s < config.sectors_per_site; ++s) {
    map.sector_azimuths_deg[static_cast<std::size_t>(s)] =
        360.0 * s / config.sectors_per_site;
  }
  map.users.resize(static_cast<std::size_t>(config.n_users));
  for (Point2& u : map.users) {
    u.x = coord(rng);
    u.y = coord(rng);
  }
  return map;
}

// ---------------------------------------------------------------------------
// Radio model
// ---------------------------------------------------------------------------

/// Parabolic sector pattern: G = G_max - min(A_H + A_V, A_m), with
/// A_H = min(12 (phi/phi_3dB)^2, 25) and A_V = min(12 ((theta-tilt)/theta_3dB)^2, 20).
inline double antenna_gain(double azimuth_offset_deg, double elevation_deg,
                           double tilt_deg, double h_beamwidth_deg,
                           const RadioConfig& radio = RadioConfig{}) {
  if (!(h_beamwidth_deg > 0.0)) {
    throw std::invalid_argument("antenna_gain: beamwidth must be positive");
  }
  const double ah = std::min(
      12.0 * (azimuth_offset_deg / h_beamwidth_deg) *
          (azimuth_offset_deg / h_beamwidth_deg),
      radio.horizontal_attenuation_cap_db);
  const double dv = (elevation_deg - tilt_deg) / radio.vertical_3db_deg;
  const double av = std::min(12.0 * dv * dv, radio.vertical_attenuation_cap_db);
  return radio.max_gain_dbi -
         std::min(ah + av, radio.horizontal_attenuation_cap_db);
}

/// Urban-macro log-distance path loss at 2 GHz, distance floored.
inline double path_loss_db(double distance_m, const RadioConfig& radio = RadioConfig{}) {
  const double d = std::max(distance_m, radio.distance_floor_m);
  return 128.1 + 37.6 * std::log10(d / 1000.0);
}

inline double dbm_to_mw(double dbm) { return std::pow(10.0, dbm / 10.0); }
inline double mw_to_dbm(double mw) {
  return mw > 0.0 ? 10.0 * std::log10(mw)
                  : -std::numeric_limits<double>::infinity();
}

struct UserMetrics {
  double rsrp_dbm = 0.0;          // serving cell
  double interference_dbm = 0.0;  // aggregate of non-serving cells
  double sinr_db = 0.0;
  double throughput_bps = 0.0;
  int serving_cell = -1;
};

struct CellParams {
  double tilt_deg = 6.0;
  double beamwidth_deg = 65.0;
};

namespace detail {
struct CellSignal {
  double rsrp_dbm;
  double rsrp_mw;
};

inline CellSignal cell_signal(const Point2& user, const Point2& site,
                              double azimuth_deg, const CellParams& params,
                              const RadioConfig& radio) {
  const double dx = user.x - site.x;
  const double dy = user.y - site.y;
  const double d_h = std::hypot(dx, dy);
  const double dh_height = radio.bs_height_m - radio.ue_height_m;
  double bearing = std::atan2(dy, dx) * 180.0 / M_PI;
  double offset = bearing - azimuth_deg;
  while (offset > 180.0) offset -= 360.0;
  while (offset < -180.0) offset += 360.0;
  const double elevation = std::atan2(dh_height, d_h) * 180.0 / M_PI;
  const double d_3d = std::hypot(d_h, dh_height);
  const double gain =
      antenna_gain(offset, elevation, params.tilt_deg, params.beamwidth_deg, radio);
  const double rsrp = radio.tx_power_dbm + gain - path_loss_db(d_3d, radio);
  return CellSignal{rsrp, dbm_to_mw(rsrp)};
}
}  // namespace detail

/// Full per-user link budget for one setting of the target cell's antenna.
/// The serving cell is the strongest; interference aggregates everything else.
inline std::vector<UserMetrics> compute_user_metrics(
    const MapRealization& map, const RadioConfig& radio, double utilization,
    int target_cell, const CellParams& target_params) {
  const int cells = map.num_cells();
  if (target_cell < 0 || target_cell >= cells) {
    throw std::invalid_argument("compute_user_metrics: target cell out of range");
  }
  const CellParams initial{radio.initial_tilt_deg, radio.initial_beamwidth_deg};
  const double noise_mw = dbm_to_mw(radio.noise_floor_dbm);
  const auto n = map.users.size();
  std::vector<UserMetrics> metrics(n);
  std::vector<int> attached(static_cast<std::size_t>(cells), 0);
  for (std::size_t u = 0; u < n; ++u) {
    double best_rsrp = -std::numeric_limits<double>::infinity();
    double best_mw = 0.0;
    int best_cell = -1;
    double total_mw = 0.0;
    for (int c = 0; c < cells; ++c) {
      const CellParams& params = (c == target_cell) ? target_params : initial;
      const auto sig = detail::cell_signal(
          map.users[u], map.sites[static_cast<std::size_t>(map.cell_site(c))],
          map.cell_azimuth(c), params, radio);
      total_mw += sig.rsrp_mw;
      if (sig.rsrp_dbm > best_rsrp) {
        best_rsrp = sig.rsrp_dbm;
        best_mw = sig.rsrp_mw;
        best_cell = c;
      }
    }
    const double interference_mw = std::max(total_mw - best_mw, 0.0);
    metrics[u].rsrp_dbm = best_rsrp;
    metrics[u].interference_dbm = mw_to_dbm(interference_mw);
    metrics[u].sinr_db = 10.0 * std::log10(best_mw / (interference_mw + noise_mw));
    metrics[u].serving_cell = best_cell;
    ++attached[static_cast<std::size_t>(best_cell)];
  }
  for (std::size_t u = 0; u < n; ++u) {
    const double sinr_lin = dbm_to_mw(metrics[u].sinr_db);  // 10^(dB/10)
    const int share_count = attached[static_cast<std::size_t>(metrics[u].serving_cell)];
    const double share = (1.0 - utilization) / share_count;
    metrics[u].throughput_bps =
        share * radio.bandwidth_hz * std::log2(1.0 + sinr_lin);
  }
  return metrics;
}

// ---------------------------------------------------------------------------
// Objectives and safety (Min-Max scaled tables over parameter grids)
// ---------------------------------------------------------------------------

/// Beamwidth objective: users with low interference and good coverage.
inline int evaluate_beamwidth_objective(std::span<const UserMetrics> metrics,
                                        double h_interference_dbm,
                                        double h_rsrp_dbm) {
  int count = 0;
  for (const UserMetrics& m : metrics) {
    count += (m.interference_dbm < h_interference_dbm && m.rsrp_dbm > h_rsrp_dbm);
  }
  return count;
}

/// Tilt objective: average user throughput.
inline double evaluate_tilt_objective(std::span<const UserMetrics> metrics) {
  if (metrics.empty()) {
    throw std::invalid_argument("evaluate_tilt_objective: no users");
  }
  double sum = 0.0;
  for (const UserMetrics& m : metrics) sum += m.throughput_bps;
  return sum / static_cast<double>(metrics.size());
}

/// Safety: users with acceptable RSRP.
inline int evaluate_safety(std::span<const UserMetrics> metrics, double h_rsrp_dbm) {
  int count = 0;
  for (const UserMetrics& m : metrics) count += (m.rsrp_dbm > h_rsrp_dbm);
  return count;
}

struct Thresholds {
  double h_interference_dbm = 0.0;
  double h_rsrp_dbm = 0.0;
};

/// Thresholds from the initial configuration, held constant afterwards:
/// 50th percentile of interference and 5th percentile of RSRP (nearest rank).
inline Thresholds measure_thresholds(std::span<const UserMetrics> metrics) {
  std::vector<double> interference, rsrp;
  interference.reserve(metrics.size());
  rsrp.reserve(metrics.size());
  for (const UserMetrics& m : metrics) {
    interference.push_back(m.interference_dbm);
    rsrp.push_back(m.rsrp_dbm);
  }
  return Thresholds{nearest_rank_percentile(std::move(interference), 0.50),
                    nearest_rank_percentile(std::move(rsrp), 0.05)};
}

struct ScaleRange {
  double min = 0.0;
  double max = 1.0;
  [[nodiscard]] double apply(double v) const { return (v - min) / (max - min); }
};

struct FunctionTable {
  std::vector<double> raw;
  std::vector<double> scaled;
  ScaleRange scale;
};

inline FunctionTable min_max_scale(std::vector<double> raw, const std::string& label) {
  FunctionTable t;
  if (raw.empty()) throw std::invalid_argument("min_max_scale: empty table");
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  if (!(*hi > *lo)) {
    throw std::runtime_error("min_max_scale: degenerate flat function for " + label);
  }
  t.scale = ScaleRange{*lo, *hi};
  t.scaled.reserve(raw.size());
  for (double v : raw) t.scaled.push_back(t.scale.apply(v));
  t.raw = std::move(raw);
  return t;
}

struct GridSpec {
  double lo = 0.0;
  double hi = 1.0;
  int n = 101;
  [[nodiscard]] ParameterGrid make(const std::string& name) const {
    return ParameterGrid::linspace(name, lo, hi, n);
  }
};

struct ParamTables {
  GridSpec grid;
  FunctionTable f;
  FunctionTable g;
};

struct Scenario {
  std::string id;
  MapConfig map_config;
  RadioConfig radio;
  LoadModel load_model;
  MapRealization map;
  LoadLevel load = LoadLevel::medium;
  double traffic_volume_bps = 0.0;
  double utilization = 0.0;
  int target_cell = 0;
  Thresholds thresholds;
  std::map<std::string, ParamTables> tables;  // keyed "tilt" / "beamwidth"

  [[nodiscard]] const ParamTables& tables_for(const std::string& parameter) const {
    auto it = tables.find(parameter);
    if (it == tables.end()) {
      throw std::invalid_argument("scenario '" + id + "' has no tables for parameter '" +
                                  parameter + "'");
    }
    return it->second;
  }
};

inline std::vector<UserMetrics> compute_user_metrics(const Scenario& sc,
                                                     const std::string& param_name,
                                                     double param_value) {
  CellParams target{sc.radio.initial_tilt_deg, sc.radio.initial_beamwidth_deg};
  if (param_name == "tilt") {
    target.tilt_deg = param_value;
  } else if (param_name == "beamwidth") {
    target.beamwidth_deg = param_value;
  } else {
    throw std::invalid_argument("unknown parameter '" + param_name + "'");
  }
  return compute_user_metrics(sc.map, sc.radio, sc.utilization, sc.target_cell,
                              target);
}

namespace detail {

/// Tabulation fast path: geometry and non-target signals are fixed across the
/// grid, so they are computed once per user and only the target cell's signal
/// is re-evaluated per grid point. Matches compute_user_metrics up to
/// floating-point summation order.
struct TabulationCache {
  struct PerUser {
    double sum_other_mw = 0.0;
    double best_other_dbm = -std::numeric_limits<double>::infinity();
    double best_other_mw = 0.0;
    int best_other_cell = -1;
    // geometry vs the target cell
    double azimuth_offset_deg = 0.0;
    double elevation_deg = 0.0;
    double pl_db = 0.0;
  };
  std::vector<PerUser> users;
  double noise_mw = 0.0;
  int target_cell = -1;
};

inline TabulationCache build_tabulation_cache(const MapRealization& map,
                                              const RadioConfig& radio,
                                              int target_cell) {
  TabulationCache cache;
  cache.noise_mw = dbm_to_mw(radio.noise_floor_dbm);
  cache.target_cell = target_cell;
  const CellParams initial{radio.initial_tilt_deg, radio.initial_beamwidth_deg};
  const int cells = map.num_cells();
  cache.users.resize(map.users.size());
  for (std::size_t u = 0; u < map.users.size(); ++u) {
    auto& pu = cache.users[u];
    for (int c = 0; c < cells; ++c) {
      const Point2& site = map.sites[static_cast<std::size_t>(map.cell_site(c))];
      if (c == target_cell) {
        const double dx = map.users[u].x - site.x;
        const double dy = map.users[u].y - site.y;
        const double d_h = std::hypot(dx, dy);
        const double dh_height = radio.bs_height_m - radio.ue_height_m;
        double bearing = std::atan2(dy, dx) * 180.0 / M_PI;
        double offset = bearing - map.cell_azimuth(c);
        while (offset > 180.0) offset -= 360.0;
        while (offset < -180.0) offset += 360.0;
        pu.azimuth_offset_deg = offset;
        pu.elevation_deg = std::atan2(dh_height, d_h) * 180.0 / M_PI;
        pu.pl_db = path_loss_db(std::hypot(d_h, dh_height), radio);
        continue;
      }
      const auto sig = cell_signal(map.users[u], site, map.cell_azimuth(c),
                                   initial, radio);
      pu.sum_other_mw += sig.rsrp_mw;
      if (sig.rsrp_dbm > pu.best_other_dbm) {
        pu.best_other_dbm = sig.rsrp_dbm;
        pu.best_other_mw = sig.rsrp_mw;
        pu.best_other_cell = c;
      }
    }
  }
  return cache;
}

struct TabulatedPoint {
  double f_tilt_bps = 0.0;
  int f_beamwidth = 0;
  int g_coverage = 0;
};

inline TabulatedPoint evaluate_cached(const TabulationCache& cache,
                                      const MapRealization& map,
                                      const RadioConfig& radio,
                                      double utilization,
                                      const CellParams& target_params,
                                      const Thresholds& thresholds) {
  const auto n = cache.users.size();
  static thread_local std::vector<double> rsrp, interference_mw, sinr_lin;
  static thread_local std::vector<int> serving;
  rsrp.assign(n, 0.0);
  interference_mw.assign(n, 0.0);
  sinr_lin.assign(n, 0.0);
  serving.assign(n, -1);
  std::vector<int> attached(static_cast<std::size_t>(map.num_cells()), 0);
  for (std::size_t u = 0; u < n; ++u) {
    const auto& pu = cache.users[u];
    const double gain =
        antenna_gain(pu.azimuth_offset_deg, pu.elevation_deg,
                     target_params.tilt_deg, target_params.beamwidth_deg, radio);
    const double target_dbm = radio.tx_power_dbm + gain - pu.pl_db;
    const double target_mw = dbm_to_mw(target_dbm);
    double serv_dbm, serv_mw;
    int serv_cell;
    if (target_dbm > pu.best_other_dbm) {
      serv_dbm = target_dbm;
      serv_mw = target_mw;
      serv_cell = cache.target_cell;
    } else {
      serv_dbm = pu.best_other_dbm;
      serv_mw = pu.best_other_mw;
      serv_cell = pu.best_other_cell;
    }
    const double interf = std::max(pu.sum_other_mw + target_mw - serv_mw, 0.0);
    rsrp[u] = serv_dbm;
    interference_mw[u] = interf;
    sinr_lin[u] = serv_mw / (interf + cache.noise_mw);
    serving[u] = serv_cell;
    ++attached[static_cast<std::size_t>(serv_cell)];
  }
  TabulatedPoint out;
  double tp_sum = 0.0;
  for (std::size_t u = 0; u < n; ++u) {
    const double share =
        (1.0 - utilization) / attached[static_cast<std::size_t>(serving[u])];
    tp_sum += share * radio.bandwidth_hz * std::log2(1.0 + sinr_lin[u]);
    const double interf_dbm = mw_to_dbm(interference_mw[u]);
    out.f_beamwidth += (interf_dbm < thresholds.h_interference_dbm &&
                        rsrp[u] > thresholds.h_rsrp_dbm);
    out.g_coverage += (rsrp[u] > thresholds.h_rsrp_dbm);
  }
  out.f_tilt_bps = tp_sum / static_cast<double>(n);
  return out;
}

}  // namespace detail

/// Raw and Min-Max-scaled objective/safety tables over one parameter's grid.
inline ParamTables tabulate(const Scenario& sc, const std::string& param_name,
                            const GridSpec& grid_spec) {
  const ParameterGrid grid = grid_spec.make(param_name);
  const auto cache = detail::build_tabulation_cache(sc.map, sc.radio, sc.target_cell);
  std::vector<double> f_raw, g_raw;
  f_raw.reserve(static_cast<std::size_t>(grid.size()));
  g_raw.reserve(static_cast<std::size_t>(grid.size()));
  for (int i = 0; i < grid.size(); ++i) {
    CellParams target{sc.radio.initial_tilt_deg, sc.radio.initial_beamwidth_deg};
    if (param_name == "tilt") {
      target.tilt_deg = grid.points[i];
    } else if (param_name == "beamwidth") {
      target.beamwidth_deg = grid.points[i];
    } else {
      throw std::invalid_argument("tabulate: unknown parameter '" + param_name + "'");
    }
    const auto point = detail::evaluate_cached(cache, sc.map, sc.radio,
                                               sc.utilization, target, sc.thresholds);
    f_raw.push_back(param_name == "tilt" ? point.f_tilt_bps
                                         : static_cast<double>(point.f_beamwidth));
    g_raw.push_back(static_cast<double>(point.g_coverage));
  }
  ParamTables tables;
  tables.grid = grid_spec;
  tables.f = min_max_scale(std::move(f_raw), sc.id + "/" + param_name + "/f");
  tables.g = min_max_scale(std::move(g_raw), sc.id + "/" + param_name + "/g");
  return tables;
}

/// Table value plus zero-mean Gaussian noise; variance 0 reads the table
/// exactly (and consumes no randomness).
inline double noisy_eval(std::span<const double> table, int index,
                         double noise_variance, std::mt19937_64& rng) {
  if (index < 0 || index >= static_cast<int>(table.size())) {
    throw std::invalid_argument("noisy_eval: index outside table");
  }
  const double value = table[static_cast<std::size_t>(index)];
  if (noise_variance <= 0.0) return value;
  std::normal_distribution<double> noise(0.0, std::sqrt(noise_variance));
  return value + noise(rng);
}

/// Builds one scenario end to end: map, target cell, thresholds at the
/// initial configuration, tables for both parameters. The target is the cell
/// serving the most coverage-critical users (weakest decile by RSRP at the
/// initial configuration), i.e. the antenna whose setting actually moves the
/// coverage safety function. Throws on degenerate (flat) functions.
inline Scenario build_scenario(const MapConfig& map_config, const RadioConfig& radio,
                               const LoadModel& load_model, LoadLevel load,
                               const GridSpec& tilt_grid, const GridSpec& bw_grid,
                               const std::string& id) {
  Scenario sc;
  sc.id = id;
  sc.map_config = map_config;
  sc.radio = radio;
  sc.load_model = load_model;
  sc.load = load;
  sc.traffic_volume_bps = load_model.volume(load);
  sc.utilization = load_model.utilization(load);
  sc.map = generate_map(map_config);

  // All antennas sit at the initial configuration here, so the target choice
  // does not affect these metrics.
  const auto initial_metrics = compute_user_metrics(
      sc.map, radio, sc.utilization, /*target_cell=*/0,
      CellParams{radio.initial_tilt_deg, radio.initial_beamwidth_deg});
  {
    std::vector<std::size_t> order(initial_metrics.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return initial_metrics[a].rsrp_dbm < initial_metrics[b].rsrp_dbm;
    });
    const auto tail = std::max<std::size_t>(1, initial_metrics.size() / 10);
    std::vector<int> tail_count(static_cast<std::size_t>(sc.map.num_cells()), 0);
    for (std::size_t r = 0; r < tail; ++r) {
      ++tail_count[static_cast<std::size_t>(initial_metrics[order[r]].serving_cell)];
    }
    sc.target_cell = static_cast<int>(
        std::max_element(tail_count.begin(), tail_count.end()) - tail_count.begin());
  }
  sc.thresholds = measure_thresholds(initial_metrics);

  sc.tables.emplace("tilt", tabulate(sc, "tilt", tilt_grid));
  sc.tables.emplace("beamwidth", tabulate(sc, "beamwidth", bw_grid));
  return sc;
}

/// Non-degeneracy validation: the scaled safety table must actually cross the
/// threshold (otherwise safe exploration is vacuous).
inline std::optional<std::string> validate_scenario(const Scenario& sc,
                                                    double threshold_h) {
  for (const auto& [param, tables] : sc.tables) {
    bool below = false, at_or_above = false;
    for (double v : tables.g.scaled) {
      below = below || v < threshold_h;
      at_or_above = at_or_above || v >= threshold_h;
    }
    if (!below || !at_or_above) {
      return "scaled safety table for '" + param + "' does not cross threshold";
    }
  }
  return std::nullopt;
}

/// Retries degenerate maps with re-derived seeds, logging each regeneration.
inline Scenario build_validated_scenario(MapConfig map_config, const RadioConfig& radio,
                                         const LoadModel& load_model, LoadLevel load,
                                         const GridSpec& tilt_grid, const GridSpec& bw_grid,
                                         const std::string& id, double threshold_h,
                                         int max_attempts = 20) {
  std::string last_error;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    try {
      Scenario sc = build_scenario(map_config, radio, load_model, load, tilt_grid,
                                   bw_grid, id);
      if (const auto issue = validate_scenario(sc, threshold_h)) {
        throw std::runtime_error(*issue);
      }
      return sc;
    } catch (const std::exception& e) {
      last_error = e.what();
      std::ostringstream os;
      os << "scenario '" << id << "' seed " << map_config.seed
         << " rejected (" << e.what() << "); regenerating";
      log_warn(os.str());
      map_config.seed = derive_seed(map_config.seed, "netsim-regenerate");
    }
  }
  throw std::runtime_error("could not generate a valid scenario for '" + id +
                           "' after retries; last error: " + last_error);
}

// ---------------------------------------------------------------------------
// Scenario file format (schema "cosbo-scenario-v1", see README)
// ---------------------------------------------------------------------------

inline ordered_json to_json(const Scenario& sc) {
  ordered_json j;
  j["schema"] = "cosbo-scenario-v1";
  j["id"] = sc.id;
  j["map_config"] = {
      {"edge_length_m", sc.map_config.edge_length_m},
      {"site_intensity_per_m2", sc.map_config.site_intensity_per_m2},
      {"min_intersite_distance_m", sc.map_config.min_intersite_distance_m},
      {"n_users", sc.map_config.n_users},
      {"sectors_per_site", sc.map_config.sectors_per_site},
      {"n_bins", sc.map_config.n_bins},
      {"min_sites", sc.map_config.min_sites},
      {"max_sites", sc.map_config.max_sites},
      {"seed", sc.map_config.seed},
  };
  j["radio"] = {
      {"tx_power_dbm", sc.radio.tx_power_dbm},
      {"max_gain_dbi", sc.radio.max_gain_dbi},
      {"horizontal_attenuation_cap_db", sc.radio.horizontal_attenuation_cap_db},
      {"vertical_attenuation_cap_db", sc.radio.vertical_attenuation_cap_db},
      {"vertical_3db_deg", sc.radio.vertical_3db_deg},
      {"noise_floor_dbm", sc.radio.noise_floor_dbm},
      {"bandwidth_hz", sc.radio.bandwidth_hz},
      {"distance_floor_m", sc.radio.distance_floor_m},
      {"bs_height_m", sc.radio.bs_height_m},
      {"ue_height_m", sc.radio.ue_height_m},
      {"initial_tilt_deg", sc.radio.initial_tilt_deg},
      {"initial_beamwidth_deg", sc.radio.initial_beamwidth_deg},
  };
  j["load_model"] = {
      {"volume_low_bps", sc.load_model.volume_low_bps},
      {"volume_medium_bps", sc.load_model.volume_medium_bps},
      {"volume_high_bps", sc.load_model.volume_high_bps},
      {"util_low", sc.load_model.util_low},
      {"util_medium", sc.load_model.util_medium},
      {"util_high", sc.load_model.util_high},
  };
  j["load_level"] = load_level_name(sc.load);
  j["traffic_volume_bps"] = sc.traffic_volume_bps;
  j["utilization"] = sc.utilization;
  j["target_cell"] = sc.target_cell;
  j["thresholds"] = {
      {"h_interference_dbm", sc.thresholds.h_interference_dbm},
      {"h_rsrp_dbm", sc.thresholds.h_rsrp_dbm},
  };
  ordered_json sites = ordered_json::array();
  for (const Point2& p : sc.map.sites) sites.push_back({p.x, p.y});
  ordered_json users = ordered_json::array();
  for (const Point2& p : sc.map.users) users.push_back({p.x, p.y});
  j["map"] = {
      {"sites", std::move(sites)},
      {"sector_azimuths_deg", sc.map.sector_azimuths_deg},
      {"users", std::move(users)},
  };
  ordered_json tables;
  for (const auto& [param, t] : sc.tables) {
    tables[param] = {
        {"grid", {{"lo", t.grid.lo}, {"hi", t.grid.hi}, {"n", t.grid.n}}},
        {"f_raw", t.f.raw},
        {"f_scaled", t.f.scaled},
        {"f_scale", {{"min", t.f.scale.min}, {"max", t.f.scale.max}}},
        {"g_raw", t.g.raw},
        {"g_scaled", t.g.scaled},
        {"g_scale", {{"min", t.g.scale.min}, {"max", t.g.scale.max}}},
    };
  }
  j["tables"] = std::move(tables);
  return j;
}

inline Scenario scenario_from_json(const ordered_json& j) {
  if (j.value("schema", "") != "cosbo-scenario-v1") {
    throw std::runtime_error("scenario_from_json: unknown schema");
  }
  Scenario sc;
  sc.id = j.at("id").get<std::string>();
  const auto& mc = j.at("map_config");
  sc.map_config.edge_length_m = mc.at("edge_length_m").get<double>();
  sc.map_config.site_intensity_per_m2 = mc.at("site_intensity_per_m2").get<double>();
  sc.map_config.min_intersite_distance_m =
      mc.at("min_intersite_distance_m").get<double>();
  sc.map_config.n_users = mc.at("n_users").get<int>();
  sc.map_config.sectors_per_site = mc.at("sectors_per_site").get<int>();
  sc.map_config.n_bins = mc.at("n_bins").get<int>();
  sc.map_config.min_sites = mc.at("min_sites").get<int>();
  sc.map_config.max_sites = mc.at("max_sites").get<int>();
  sc.map_config.seed = mc.at("seed").get<std::uint64_t>();
  const auto& r = j.at("radio");
  sc.radio.tx_power_dbm = r.at("tx_power_dbm").get<double>();
  sc.radio.max_gain_dbi = r.at("max_gain_dbi").get<double>();
  sc.radio.horizontal_attenuation_cap_db =
      r.at("horizontal_attenuation_cap_db").get<double>();
  sc.radio.vertical_attenuation_cap_db =
      r.at("vertical_attenuation_cap_db").get<double>();
  sc.radio.vertical_3db_deg = r.at("vertical_3db_deg").get<double>();
  sc.radio.noise_floor_dbm = r.at("noise_floor_dbm").get<double>();
  sc.radio.bandwidth_hz = r.at("bandwidth_hz").get<double>();
  sc.radio.distance_floor_m = r.at("distance_floor_m").get<double>();
  sc.radio.bs_height_m = r.at("bs_height_m").get<double>();
  sc.radio.ue_height_m = r.at("ue_height_m").get<double>();
  sc.radio.initial_tilt_deg = r.at("initial_tilt_deg").get<double>();
  sc.radio.initial_beamwidth_deg = r.at("initial_beamwidth_deg").get<double>();
  const auto& lm = j.at("load_model");
  sc.load_model.volume_low_bps = lm.at("volume_low_bps").get<double>();
  sc.load_model.volume_medium_bps = lm.at("volume_medium_bps").get<double>();
  sc.load_model.volume_high_bps = lm.at("volume_high_bps").get<double>();
  sc.load_model.util_low = lm.at("util_low").get<double>();
  sc.load_model.util_medium = lm.at("util_medium").get<double>();
  sc.load_model.util_high = lm.at("util_high").get<double>();
  const auto load = parse_load_level(j.at("load_level").get<std::string>());
  if (!load) throw std::runtime_error("scenario_from_json: bad load level");
  sc.load = *load;
  sc.traffic_volume_bps = j.at("traffic_volume_bps").get<double>();
  sc.utilization = j.at("utilization").get<double>();
  sc.target_cell = j.at("target_cell").get<int>();
  sc.thresholds.h_interference_dbm =
      j.at("thresholds").at("h_interference_dbm").get<double>();
  sc.thresholds.h_rsrp_dbm = j.at("thresholds").at("h_rsrp_dbm").get<double>();
  for (const auto& p : j.at("map").at("sites")) {
    sc.map.sites.push_back(Point2{p.at(0).get<double>(), p.at(1).get<double>()});
  }
  sc.map.sector_azimuths_deg =
      j.at("map").at("sector_azimuths_deg").get<std::vector<double>>();
  for (const auto& p : j.at("map").at("users")) {
    sc.map.users.push_back(Point2{p.at(0).get<double>(), p.at(1).get<double>()});
  }
  for (const auto& [param, tj] : j.at("tables").items()) {
    ParamTables t;
    t.grid.lo = tj.at("grid").at("lo").get<double>();
    t.grid.hi = tj.at("grid").at("hi").get<double>();
    t.grid.n = tj.at("grid").at("n").get<int>();
    t.f.raw = tj.at("f_raw").get<std::vector<double>>();
    t.f.scaled = tj.at("f_scaled").get<std::vector<double>>();
    t.f.scale = ScaleRange{tj.at("f_scale").at("min").get<double>(),
                           tj.at("f_scale").at("max").get<double>()};
    t.g.raw = tj.at("g_raw").get<std::vector<double>>();
    t.g.scaled = tj.at("g_scaled").get<std::vector<double>>();
    t.g.scale = ScaleRange{tj.at("g_scale").at("min").get<double>(),
                           tj.at("g_scale").at("max").get<double>()};
    sc.tables.emplace(param, std::move(t));
  }
  return sc;
}

inline void save_scenario(const Scenario& sc, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << to_json(sc).dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open scenario file '" + path + "'");
  ordered_json j;
  in >> j;
  return scenario_from_json(j);
}

}  // namespace cosbo
