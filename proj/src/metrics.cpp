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

#include "fedrem/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <tuple>

#include "fedrem/io_util.hpp"

namespace fedrem {

double macro_average(const Eigen::VectorXd& per_client) {
  if (per_client.size() == 0) throw MetricError("macro average over zero clients");
  return per_client.mean();
}

Eigen::VectorXd per_bs_rmse(const Eigen::MatrixXd& residuals) {
  if (residuals.cols() == 0) throw MetricError("per-BS RMSE needs at least one residual per base station");
  return residuals.array().square().rowwise().mean().sqrt().matrix();
}

MetricBundle summarize(const std::vector<Eigen::MatrixXd>& client_residuals, double uplink_mb) {
  if (client_residuals.empty()) throw MetricError("no client residuals to summarize");
  const Eigen::Index m = client_residuals.front().rows();
  Eigen::Index total = 0;
  for (const auto& r : client_residuals) {
    if (r.rows() != m) throw DimensionError("client residuals disagree on the number of base stations");
    total += r.cols();
  }
  Eigen::MatrixXd pooled(m, total);
  MetricBundle b;
  b.per_client_rmse.resize(static_cast<Eigen::Index>(client_residuals.size()));
  b.per_client_mae.resize(b.per_client_rmse.size());
  Eigen::Index col = 0;
  for (std::size_t i = 0; i < client_residuals.size(); ++i) {
    const auto& r = client_residuals[i];
    b.per_client_rmse(static_cast<Eigen::Index>(i)) = rmse(r);
    b.per_client_mae(static_cast<Eigen::Index>(i)) = mae(r);
    pooled.middleCols(col, r.cols()) = r;
    col += r.cols();
  }
  b.rmse_micro = rmse(pooled);
  b.rmse_macro = macro_average(b.per_client_rmse);
  b.mae_macro = macro_average(b.per_client_mae);
  b.per_bs_rmse = per_bs_rmse(pooled);
  b.uplink_mb = uplink_mb;
  return b;
}

std::vector<bool> pareto_mask(const std::vector<ParetoPoint>& points) {
  std::vector<bool> mask(points.size(), true);
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = 0; j < points.size() && mask[i]; ++j) {
      const auto& p = points[i];
      const auto& q = points[j];
      const bool no_worse = q.rmse_macro <= p.rmse_macro && q.uplink_mb <= p.uplink_mb;
      const bool better = q.rmse_macro < p.rmse_macro || q.uplink_mb < p.uplink_mb;
      if (no_worse && better) mask[i] = false;
    }
  return mask;
}

std::vector<ParetoPoint> pareto_frontier(const std::vector<ParetoPoint>& points) {
  const auto mask = pareto_mask(points);
  std::vector<ParetoPoint> front;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (mask[i]) front.push_back(points[i]);
  std::sort(front.begin(), front.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
    return std::tie(a.uplink_mb, a.rmse_macro, a.label) < std::tie(b.uplink_mb, b.rmse_macro, b.label);
  });
  return front;
}

void write_pareto_csv(const std::vector<ParetoPoint>& points, const std::filesystem::path& path) {
  for (const auto& p : points)
    if (p.label.find_first_of(",\n\r") != std::string::npos) {
      throw MetricError("pareto label '" + p.label + "' contains a CSV separator");
    }
  const auto mask = pareto_mask(points);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "label,rmse_macro,uplink_mb,on_frontier\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    out << points[i].label << ',' << format_number(points[i].rmse_macro) << ','
        << format_number(points[i].uplink_mb) << ',' << (mask[i] ? 1 : 0) << '\n';
  }
}

}  // namespace fedrem
