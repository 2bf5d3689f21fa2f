// Copyright 2026 The fedrem Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

// Accuracy, fairness and communication metrics, plus Pareto extraction over
// (macro RMSE, uplink MB) pairs. Accuracy metrics are computed on dB-scale
// residuals; macro averages are unweighted over clients.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedrem/errors.hpp"

namespace fedrem {

inline constexpr double kBytesPerMegabyte = 1e6;

inline double to_megabytes(std::uint64_t bytes) { return static_cast<double>(bytes) / kBytesPerMegabyte; }

template <typename Derived>
double rmse(const Eigen::DenseBase<Derived>& residuals) {
  if (residuals.size() == 0) throw MetricError("rmse of an empty residual set");
  return std::sqrt(residuals.derived().array().square().mean());
}

template <typename Derived>
double mae(const Eigen::DenseBase<Derived>& residuals) {
  if (residuals.size() == 0) throw MetricError("mae of an empty residual set");
  return residuals.derived().array().abs().mean();
}

// Unweighted mean over per-client values.
double macro_average(const Eigen::VectorXd& per_client);

// RMSE per base station over residuals laid out M x n.
Eigen::VectorXd per_bs_rmse(const Eigen::MatrixXd& residuals);

inline double range(const Eigen::VectorXd& v) { return v.size() ? v.maxCoeff() - v.minCoeff() : 0.0; }

struct MetricBundle {
  double rmse_micro = 0.0;
  double rmse_macro = 0.0;
  double mae_macro = 0.0;
  Eigen::VectorXd per_bs_rmse;
  Eigen::VectorXd per_client_rmse;
  Eigen::VectorXd per_client_mae;
  double uplink_mb = 0.0;
};

// Builds the bundle from each client's dB residual matrix (M x n_i).
MetricBundle summarize(const std::vector<Eigen::MatrixXd>& client_residuals, double uplink_mb);

struct ParetoPoint {
  std::string label;
  double rmse_macro = 0.0;
  double uplink_mb = 0.0;
};

// True where no other point is <= in both objectives and < in one.
std::vector<bool> pareto_mask(const std::vector<ParetoPoint>& points);

// Non-dominated points sorted by (MB, RMSE, label). Identical points are kept.
std::vector<ParetoPoint> pareto_frontier(const std::vector<ParetoPoint>& points);

// label,rmse_macro,uplink_mb,on_frontier
void write_pareto_csv(const std::vector<ParetoPoint>& points, const std::filesystem::path& path);

}  // namespace fedrem
