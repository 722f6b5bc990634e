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
#include <cstdint>
#include <iostream>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cosbo {

// ---------------------------------------------------------------------------
// Logging. Warnings go to stderr; data files stay clean.
// ---------------------------------------------------------------------------

inline int& log_verbosity() {
  static int level = 1;  // 0 = silent, 1 = warnings, 2 = info
  return level;
}

namespace detail {
inline std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}
inline void log_line(std::string_view tag, std::string_view msg) {
  std::scoped_lock lock(log_mutex());
  std::cerr << "[cosbo:" << tag << "] " << msg << '\n';
}
}  // namespace detail

inline void log_warn(std::string_view msg) {
  if (log_verbosity() >= 1) detail::log_line("warn", msg);
}

inline void log_info(std::string_view msg) {
  if (log_verbosity() >= 2) detail::log_line("info", msg);
}

// ---------------------------------------------------------------------------
// Seed derivation. Every randomized component draws from its own engine whose
// seed is a pure function of (master seed, purpose tag, indices), so runs are
// reproducible regardless of scheduling.
// ---------------------------------------------------------------------------

inline std::uint64_t mix_bits(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {
inline void seed_feed(std::uint64_t& h, std::uint64_t v) {
  h = mix_bits(h ^ mix_bits(v));
}
inline void seed_feed(std::uint64_t& h, std::string_view s) {
  h = mix_bits(h ^ fnv1a64(s));
}
inline void seed_feed(std::uint64_t& h, const std::string& s) {
  seed_feed(h, std::string_view(s));
}
inline void seed_feed(std::uint64_t& h, const char* s) {
  seed_feed(h, std::string_view(s));
}
inline void seed_feed(std::uint64_t& h, int v) {
  seed_feed(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(v)));
}
}  // namespace detail

template <class... Parts>
std::uint64_t derive_seed(std::uint64_t base, const Parts&... parts) {
  std::uint64_t h = mix_bits(base);
  (detail::seed_feed(h, parts), ...);
  return h;
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

// ---------------------------------------------------------------------------
// Quantiles.
// ---------------------------------------------------------------------------

// Linear-interpolation quantile on an already-sorted vector (the convention
// used for the 25/50/75% aggregate bands).
inline double sorted_quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty set");
  if (sorted.size() == 1) return sorted.front();
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

// Nearest-rank percentile: value at sorted index ceil(p*n), 1-based.
inline double nearest_rank_percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of empty set");
  if (p <= 0.0 || p > 1.0) throw std::invalid_argument("percentile p out of (0,1]");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(p * n));
  rank = std::max<std::size_t>(rank, 1);
  return values[rank - 1];
}

}  // namespace cosbo
