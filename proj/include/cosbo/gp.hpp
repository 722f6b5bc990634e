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
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cosbo/common.hpp"

namespace cosbo {

/// Squared-exponential kernel hyperparameters. The context coordinate z gets
/// its own lengthscale so cross-covariance between transferred data (z = rho)
/// and the agent's own data (z = 1) decays smoothly with the correlation gap.
struct KernelParams {
  double signal_variance = 0.5;
  double lengthscale_x = 1.0;
  double lengthscale_z = 1.0;

  void validate() const {
    if (!(signal_variance > 0.0) || !(lengthscale_x > 0.0) ||
        !(lengthscale_z > 0.0)) {
      throw std::invalid_argument(
          "KernelParams: signal_variance and lengthscales must be strictly "
          "positive");
    }
  }
};

/// An input location paired with a context (confidence) coordinate.
struct ContextPoint {
  Eigen::VectorXd x;
  double z = 1.0;
};

inline ContextPoint make_point(double x, double z = 1.0) {
  ContextPoint p;
  p.x = Eigen::VectorXd::Constant(1, x);
  p.z = z;
  return p;
}

struct Observation {
  ContextPoint point;
  double value = 0.0;
  double noise_variance = 1e-4;
};

/// Product RBF over x and z: sv * exp(-|dx|^2/(2 lx^2)) * exp(-dz^2/(2 lz^2)).
inline double kernel(const ContextPoint& a, const ContextPoint& b,
                     const KernelParams& p) {
  if (a.x.size() != b.x.size()) {
    throw std::invalid_argument("kernel: input dimension mismatch");
  }
  const double dx2 = (a.x - b.x).squaredNorm();
  const double dz = a.z - b.z;
  const double exponent = dx2 / (2.0 * p.lengthscale_x * p.lengthscale_x) +
                          dz * dz / (2.0 * p.lengthscale_z * p.lengthscale_z);
  return p.signal_variance * std::exp(-exponent);
}

struct Prediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
};

/// Per-grid prediction workspace: `whitened` holds L^{-1} K(X, Q), one column
/// per query, which the optimizer reuses for rank-one posterior updates.
struct GridPrediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  Eigen::MatrixXd whitened;
};

/// Contextual GP with fixed hyperparameters. Immutable after construction:
/// add_observation returns a refitted copy, so models can be shared read-only
/// across parallel runs.
class GpModel {
 public:
  static constexpr double kJitter = 1e-10;

  GpModel() : GpModel(KernelParams{}) {}
  explicit GpModel(KernelParams params) : params_(params) {
    params_.validate();
  }

  static GpModel fit(std::vector<Observation> observations,
                     const KernelParams& params) {
    GpModel model(params);
    model.data_ = std::move(observations);
    model.factorize();
    return model;
  }

  [[nodiscard]] GpModel add_observation(Observation obs) const {
    GpModel model(params_);
    model.data_ = data_;
    model.data_.push_back(std::move(obs));
    model.factorize();
    return model;
  }

  [[nodiscard]] bool empty() const { return data_.empty(); }
  [[nodiscard]] const std::vector<Observation>& data() const { return data_; }
  [[nodiscard]] const KernelParams& params() const { return params_; }
  [[nodiscard]] const Eigen::MatrixXd& chol_factor() const { return chol_; }
  [[nodiscard]] const Eigen::VectorXd& alpha() const { return alpha_; }

  [[nodiscard]] std::pair<double, double> predict_at(
      const ContextPoint& q) const {
    const GridPrediction p = predict_detailed({&q, 1});
    return {p.mean[0], p.variance[0]};
  }

  [[nodiscard]] Prediction predict(std::span<const ContextPoint> queries) const {
    GridPrediction p = predict_detailed(queries);
    return Prediction{std::move(p.mean), std::move(p.variance)};
  }

  [[nodiscard]] GridPrediction predict_detailed(
      std::span<const ContextPoint> queries) const {
    const auto n = static_cast<Eigen::Index>(data_.size());
    const auto q = static_cast<Eigen::Index>(queries.size());
    GridPrediction out;
    if (n == 0) {
      out.mean = Eigen::VectorXd::Zero(q);
      out.variance = Eigen::VectorXd::Constant(q, params_.signal_variance);
      out.whitened.resize(0, q);
      return out;
    }
    Eigen::MatrixXd kxq(n, q);
    for (Eigen::Index j = 0; j < q; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) {
        kxq(i, j) = kernel(data_[static_cast<std::size_t>(i)].point,
                           queries[static_cast<std::size_t>(j)], params_);
      }
    }
    out.mean = kxq.transpose() * alpha_;
    out.whitened = chol_.triangularView<Eigen::Lower>().solve(kxq);
    out.variance.resize(q);
    for (Eigen::Index j = 0; j < q; ++j) {
      const double v =
          params_.signal_variance - out.whitened.col(j).squaredNorm();
      out.variance[j] = std::max(v, 0.0);
    }
    return out;
  }

 private:
  void factorize() {
    for (const Observation& obs : data_) {
      if (!(obs.noise_variance > 0.0)) {
        throw std::invalid_argument(
            "GpModel::fit: observation noise variance must be positive");
      }
      if (!(obs.point.z >= -1.0 && obs.point.z <= 1.0)) {
        throw std::invalid_argument(
            "GpModel::fit: context z must lie in [-1, 1]");
      }
    }
    const auto n = static_cast<Eigen::Index>(data_.size());
    if (n == 0) {
      chol_.resize(0, 0);
      alpha_.resize(0);
      return;
    }
    Eigen::MatrixXd k(n, n);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& oi = data_[static_cast<std::size_t>(i)];
      y[i] = oi.value;
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double v =
            kernel(oi.point, data_[static_cast<std::size_t>(j)].point, params_);
        k(i, j) = v;
        k(j, i) = v;
      }
      k(i, i) += oi.noise_variance + kJitter;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    if (llt.info() != Eigen::Success) {
      std::ostringstream os;
      os << "GpModel::fit: covariance matrix is not positive definite ("
         << n << " observations, signal_variance=" << params_.signal_variance
         << ", lengthscale_x=" << params_.lengthscale_x
         << ", lengthscale_z=" << params_.lengthscale_z
         << "); check for duplicate points with zero noise or invalid inputs";
      throw std::runtime_error(os.str());
    }
    chol_ = llt.matrixL();
    alpha_ = llt.solve(y);
  }

  KernelParams params_;
  std::vector<Observation> data_;
  Eigen::MatrixXd chol_;   // L with L L^T = K + diag(noise) + jitter I
  Eigen::VectorXd alpha_;  // (K + diag(noise) + jitter I)^{-1} y
};

}  // namespace cosbo
