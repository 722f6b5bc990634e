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
#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cosbo/common.hpp"
#include "cosbo/safeopt.hpp"

namespace cosbo {

/// Sample Pearson correlation; nullopt when either vector is constant
/// (undefined correlation). Accumulates in long double and clamps to [-1, 1]
/// so exact affine relations map to exactly +-1.
inline std::optional<double> pearson(std::span<const double> a,
                                     std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("pearson: length mismatch");
  }
  if (a.size() < 2) {
    throw std::invalid_argument("pearson: need >= 2 elements");
  }
  const auto n = a.size();
  long double mean_a = 0.0L, mean_b = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    mean_a += a[i];
    mean_b += b[i];
  }
  mean_a /= static_cast<long double>(n);
  mean_b /= static_cast<long double>(n);
  long double s_ab = 0.0L, s_aa = 0.0L, s_bb = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    const long double da = a[i] - mean_a;
    const long double db = b[i] - mean_b;
    s_ab += da * db;
    s_aa += da * da;
    s_bb += db * db;
  }
  if (s_aa <= 0.0L || s_bb <= 0.0L) return std::nullopt;
  const long double rho = s_ab / std::sqrt(s_aa * s_bb);
  return static_cast<double>(std::clamp(rho, -1.0L, 1.0L));
}

/// One point of a collaborator's knowledge on the main domain.
struct CollaboratorPoint {
  int grid_index = -1;
  double x = 0.0;
  double f = 0.0;
  std::vector<double> g;
};

/// A collaborator task: its estimated objective on the adjacent domain X_B
/// (used for similarity) and its knowledge on the main domain X_A (the
/// transfer source).
struct CollaboratorRecord {
  std::string id;
  std::vector<double> posterior_b;
  std::vector<CollaboratorPoint> data_a;
};

struct TransferSet {
  std::string collaborator_id;
  double z_c = std::numeric_limits<double>::quiet_NaN();
  std::vector<CollaboratorPoint> points;
};

enum class CollaboratorChoice {
  most_correlated,   // default CoSBO behavior
  least_correlated,  // low-quality-collaborator study
};

struct CollaboratorSelection {
  int index = -1;
  std::string id;
  double z_c = 0.0;
};

/// Picks the collaborator whose adjacent-domain posterior correlates most
/// (or least) with the main agent's. Undefined correlations count as 0;
/// nullopt when every correlation is undefined.
inline std::optional<CollaboratorSelection> select_collaborator(
    std::span<const double> main_posterior_b,
    std::span<const CollaboratorRecord> collaborators,
    CollaboratorChoice mode = CollaboratorChoice::most_correlated) {
  if (collaborators.empty()) return std::nullopt;
  bool any_defined = false;
  std::optional<CollaboratorSelection> best;
  for (std::size_t c = 0; c < collaborators.size(); ++c) {
    const CollaboratorRecord& rec = collaborators[c];
    if (rec.posterior_b.size() != main_posterior_b.size()) {
      throw std::invalid_argument(
          "select_collaborator: posterior grids differ ('" + rec.id + "')");
    }
    double rho = 0.0;
    const auto r = pearson(main_posterior_b, rec.posterior_b);
    if (r) {
      rho = *r;
      any_defined = true;
    } else {
      log_warn("collaborator '" + rec.id +
               "' has undefined correlation (constant posterior); treating as 0");
    }
    const bool better =
        !best ||
        (mode == CollaboratorChoice::most_correlated
             ? (rho > best->z_c || (rho == best->z_c && rec.id < best->id))
             : (rho < best->z_c || (rho == best->z_c && rec.id < best->id)));
    if (better) {
      best = CollaboratorSelection{static_cast<int>(c), rec.id, rho};
    }
  }
  if (!any_defined) {
    log_warn("all collaborator correlations undefined; proceeding without transfer");
    return std::nullopt;
  }
  return best;
}

/// Selects k points from the collaborator's main-domain knowledge: the
/// top ceil(k/2) by objective value plus floor(k/2) evenly spaced across the
/// grid, deduplicated and backfilled by next-best objective value.
inline TransferSet transfer_points(const CollaboratorRecord& record, int k,
                                   double z_c = std::numeric_limits<double>::quiet_NaN()) {
  if (record.data_a.empty()) {
    throw std::invalid_argument("transfer_points: collaborator has no data");
  }
  if (k < 1) throw std::invalid_argument("transfer_points: k must be >= 1");
  TransferSet out;
  out.collaborator_id = record.id;
  out.z_c = z_c;

  const auto n = record.data_a.size();
  std::vector<std::size_t> by_f(n);
  for (std::size_t i = 0; i < n; ++i) by_f[i] = i;
  std::stable_sort(by_f.begin(), by_f.end(), [&](std::size_t a, std::size_t b) {
    return record.data_a[a].f > record.data_a[b].f;
  });

  std::vector<std::uint8_t> chosen(n, 0);
  std::size_t count = 0;
  const auto want = static_cast<std::size_t>(k);
  if (n <= want) {
    if (n < want) {
      std::ostringstream os;
      os << "collaborator '" << record.id << "' has only " << n
         << " points; transferring all (k=" << k << ")";
      log_warn(os.str());
    }
    for (std::size_t i = 0; i < n; ++i) chosen[i] = 1;
    count = n;
  } else {
    const auto top_count = static_cast<std::size_t>((k + 1) / 2);
    const auto spaced_count = static_cast<std::size_t>(k / 2);
    for (std::size_t r = 0; r < top_count; ++r) {
      chosen[by_f[r]] = 1;
      ++count;
    }
    if (spaced_count == 1) {
      const std::size_t mid = (n - 1) / 2;
      if (!chosen[mid]) {
        chosen[mid] = 1;
        ++count;
      }
    } else if (spaced_count >= 2) {
      for (std::size_t j = 0; j < spaced_count; ++j) {
        const auto idx = static_cast<std::size_t>(std::llround(
            static_cast<double>(j) * static_cast<double>(n - 1) /
            static_cast<double>(spaced_count - 1)));
        if (!chosen[idx]) {
          chosen[idx] = 1;
          ++count;
        }
      }
    }
    for (std::size_t r = 0; count < want && r < n; ++r) {
      if (!chosen[by_f[r]]) {
        chosen[by_f[r]] = 1;
        ++count;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (chosen[i]) out.points.push_back(record.data_a[i]);
  }
  return out;
}

/// Collaborative initialization: seed the GP models with the main agent's
/// known-safe measurement plus k context-tagged points from the most (or
/// least) correlated collaborator, then hand over to SafeOpt-MC. With no
/// usable collaborator this degenerates to plain SafeOpt-MC.
inline SafeOpt initialize_collaborative(
    const ParameterGrid& grid, const SafeOptConfig& config, int seed_index,
    const EvalOutcome& seed_measurement,
    std::span<const CollaboratorRecord> collaborators,
    std::span<const double> main_posterior_b, int k,
    CollaboratorChoice mode = CollaboratorChoice::most_correlated) {
  std::optional<CollaboratorSelection> selection;
  if (collaborators.empty()) {
    log_warn("no collaborators available; falling back to plain SafeOpt-MC");
  } else {
    selection = select_collaborator(main_posterior_b, collaborators, mode);
  }
  if (!selection) {
    return SafeOpt(grid, config, seed_index, seed_measurement);
  }
  const CollaboratorRecord& rec =
      collaborators[static_cast<std::size_t>(selection->index)];
  const TransferSet transfer = transfer_points(rec, k, selection->z_c);
  std::vector<PriorObservation> priors;
  priors.reserve(transfer.points.size());
  for (const CollaboratorPoint& p : transfer.points) {
    priors.push_back(PriorObservation{p.grid_index, transfer.z_c, p.f, p.g});
  }
  SafeOpt state(grid, config, seed_index, seed_measurement, priors);
  state.trace().collaborator_id = transfer.collaborator_id;
  state.trace().z_c = transfer.z_c;
  return state;
}

}  // namespace cosbo
