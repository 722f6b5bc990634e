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

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace cosbo {

/// The seed measurement the run starts from (domain-knowledge safe point).
/// Not counted as an iteration.
struct SeedObservation {
  int grid_index = -1;
  double x = 0.0;
  double f_obs = 0.0;
  std::vector<double> g_obs;
};

/// A transferred collaborator point, recorded as iteration-0 prior data.
struct PriorPoint {
  int grid_index = -1;
  double x = 0.0;
  double z = 1.0;
  double f_value = 0.0;
  std::vector<double> g_values;
};

struct TraceRecord {
  int iteration = 0;  // 1-based; counts real evaluations only
  int grid_index = -1;
  double x = 0.0;
  double f_obs = 0.0;  // scaled noisy observation, drives best-so-far
  double f_raw = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> g_true;  // noiseless scaled safety values at x
  std::vector<double> lower_g_at_selection;  // NaN entries for model-free runs
  bool safe_flag = true;  // all g_true >= h
  double best_so_far = 0.0;
};

struct RunTrace {
  std::string scenario_id;
  std::string parameter;
  std::string algorithm;
  std::string collaborator_mode;
  std::string gp_profile;
  int start_index = 0;
  std::optional<SeedObservation> seed;
  std::vector<PriorPoint> prior_points;
  std::string collaborator_id;  // empty when no collaborator was used
  double z_c = std::numeric_limits<double>::quiet_NaN();
  std::vector<TraceRecord> records;
  bool converged = false;
};

}  // namespace cosbo
