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

// Reference implementations used only by tests. They are written for
// clarity, not speed, and share no code with the library paths they check.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "fedrem/nn.hpp"

namespace fedrem::testing {

struct GradientCheck {
  double max_rel_error = 0.0;
  Eigen::Index checked = 0;
};

// Central differences of the Huber loss for every backbone and head parameter.
// Dropout masks are reproduced by replaying the same rng state.
inline GradientCheck finite_difference_check(const BackboneParams<double>& backbone, const HeadParams<double>& head,
                                             const Batch<double>& x, const Batch<double>& y, double delta,
                                             std::uint64_t rng_seed, double step = 1e-5, double floor = 1e-6) {
  std::mt19937_64 rng(rng_seed);
  GradientSet<double> grads{BackboneParams<double>(backbone.dims()), HeadParams<double>(head.dims())};
  loss_and_gradients(backbone, head, x, y, delta, rng, grads);

  auto loss_at = [&](const BackboneParams<double>& b, const HeadParams<double>& h) {
    std::mt19937_64 r(rng_seed);
    Batch<double> pred = head_forward(h, backbone_forward(b, x), true, r);
    return huber_loss(pred, y, delta);
  };

  GradientCheck out;
  auto compare = [&](double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic - numeric) / denom);
    ++out.checked;
  };

  BackboneParams<double> b = backbone;
  for (Eigen::Index i = 0; i < b.flat().size(); ++i) {
    const double keep = b.flat()(i);
    b.flat()(i) = keep + step;
    const double up = loss_at(b, head);
    b.flat()(i) = keep - step;
    const double down = loss_at(b, head);
    b.flat()(i) = keep;
    compare(grads.backbone.flat()(i), (up - down) / (2 * step));
  }
  HeadParams<double> h = head;
  for (Eigen::Index i = 0; i < h.flat().size(); ++i) {
    const double keep = h.flat()(i);
    h.flat()(i) = keep + step;
    const double up = loss_at(backbone, h);
    h.flat()(i) = keep - step;
    const double down = loss_at(backbone, h);
    h.flat()(i) = keep;
    compare(grads.head.flat()(i), (up - down) / (2 * step));
  }
  return out;
}

// Full sort by (|v| descending, index ascending); the first k indices with
// zero entries dropped, returned ascending.
inline std::vector<std::uint32_t> brute_force_top_k(const Eigen::VectorXd& v, Eigen::Index k) {
  std::vector<std::uint32_t> order(static_cast<std::size_t>(v.size()));
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const double ma = std::abs(v(a));
    const double mb = std::abs(v(b));
    return ma != mb ? ma > mb : a < b;
  });
  order.resize(static_cast<std::size_t>(k));
  std::erase_if(order, [&](std::uint32_t i) { return v(i) == 0.0; });
  std::sort(order.begin(), order.end());
  return order;
}

// Population standard deviation, straight from the definition.
inline double population_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace fedrem::testing
