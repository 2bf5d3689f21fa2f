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

// Dense engine for the split backbone/head regressor.
//
// Every batched routine stores one sample per column. Parameter sets keep all
// of their tensors in a single contiguous vector in the canonical wire order
// (layer by layer: weight, bias, LayerNorm gain, LayerNorm shift; matrices
// row-major), so flattening for the uplink codec is a plain copy.
//
// Layer ordering follows bias -> SiLU -> LayerNorm, i.e. the normalization is
// applied to the activated output rather than to the pre-activation.

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "fedrem/errors.hpp"

namespace fedrem {

using Index = Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Batch = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

inline constexpr Index kLatentDim = 512;
inline constexpr double kLayerNormEps = 1e-5;

// ---------------------------------------------------------------------------
// Activations and normalization
// ---------------------------------------------------------------------------

template <typename Derived>
typename Derived::PlainObject silu(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return (x.array() / (S(1) + (-x.array()).exp())).matrix();
}

// d/dx [x * sigmoid(x)]
template <typename Derived>
typename Derived::PlainObject silu_derivative(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  auto s = (S(1) / (S(1) + (-x.array()).exp())).eval();
  return (s * (S(1) + x.array() * (S(1) - s))).matrix();
}

template <typename Scalar>
struct LayerNormCache {
  Batch<Scalar> normalized;
  RowVector<Scalar> inv_std;
};

// Column-wise LayerNorm with population variance.
template <typename DerivedX, typename DerivedG, typename DerivedS>
Batch<typename DerivedX::Scalar> layer_norm(const Eigen::MatrixBase<DerivedX>& x,
                                            const Eigen::MatrixBase<DerivedG>& gain,
                                            const Eigen::MatrixBase<DerivedS>& shift,
                                            typename DerivedX::Scalar eps,
                                            LayerNormCache<typename DerivedX::Scalar>* cache = nullptr) {
  using S = typename DerivedX::Scalar;
  if (gain.size() != x.rows() || shift.size() != x.rows()) {
    throw DimensionError("layer_norm: gain/shift length " + std::to_string(gain.size()) + "/" +
                         std::to_string(shift.size()) + " does not match input length " +
                         std::to_string(x.rows()));
  }
  if (!(eps > S(0))) throw ParameterError("layer_norm: eps must be positive");

  RowVector<S> mean = x.colwise().mean();
  Batch<S> centered = x.rowwise() - mean;
  RowVector<S> var = centered.array().square().colwise().mean().matrix();
  RowVector<S> inv_std = (var.array() + eps).rsqrt().matrix();
  Batch<S> normalized = (centered.array().rowwise() * inv_std.array()).matrix();
  Batch<S> y = ((normalized.array().colwise() * gain.derived().array())
                    .colwise() +
                shift.derived().array())
                   .matrix();
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

// Returns dL/dx given dL/dy; accumulates gain/shift gradients.
template <typename Scalar, typename DerivedG>
Batch<Scalar> layer_norm_backward(const Batch<Scalar>& dy, const LayerNormCache<Scalar>& cache,
                                  const Eigen::MatrixBase<DerivedG>& gain,
                                  Eigen::Map<Vector<Scalar>> dgain, Eigen::Map<Vector<Scalar>> dshift) {
  dgain += (dy.array() * cache.normalized.array()).rowwise().sum().matrix();
  dshift += dy.rowwise().sum();
  Batch<Scalar> dxhat = (dy.array().colwise() * gain.derived().array()).matrix();
  RowVector<Scalar> m1 = dxhat.colwise().mean();
  RowVector<Scalar> m2 = (dxhat.array() * cache.normalized.array()).colwise().mean().matrix();
  Batch<Scalar> dx = dxhat.rowwise() - m1;
  dx.array() -= cache.normalized.array().rowwise() * m2.array();
  dx.array().rowwise() *= cache.inv_std.array();
  return dx;
}

// ---------------------------------------------------------------------------
// Parameter sets
// ---------------------------------------------------------------------------

struct BackboneDims {
  Index input = 102;
  Index hidden1 = 256;
  Index hidden2 = 256;
  Index latent = kLatentDim;

  Index in(int layer) const { return layer == 0 ? input : layer == 1 ? hidden1 : hidden2; }
  Index out(int layer) const { return layer == 0 ? hidden1 : layer == 1 ? hidden2 : latent; }
  Index layer_size(int layer) const { return out(layer) * in(layer) + 3 * out(layer); }
  Index parameter_count() const { return layer_size(0) + layer_size(1) + layer_size(2); }
  bool operator==(const BackboneDims&) const = default;
};

template <typename Scalar>
class BackboneParams {
 public:
  using Matrix = RowMatrix<Scalar>;

  BackboneParams() = default;
  // All-zero parameter set (also the shape of a gradient).
  explicit BackboneParams(const BackboneDims& dims)
      : dims_(dims), flat_(Vector<Scalar>::Zero(dims.parameter_count())) {}

  static BackboneParams from_flat(const BackboneDims& dims, Vector<Scalar> flat) {
    if (flat.size() != dims.parameter_count()) {
      throw DimensionError("backbone unflatten: expected " + std::to_string(dims.parameter_count()) +
                           " values, got " + std::to_string(flat.size()));
    }
    BackboneParams p;
    p.dims_ = dims;
    p.flat_ = std::move(flat);
    return p;
  }

  const BackboneDims& dims() const { return dims_; }
  Vector<Scalar>& flat() { return flat_; }
  const Vector<Scalar>& flat() const { return flat_; }

  Eigen::Map<Matrix> weight(int l) { return {flat_.data() + offset(l), dims_.out(l), dims_.in(l)}; }
  Eigen::Map<const Matrix> weight(int l) const {
    return {flat_.data() + offset(l), dims_.out(l), dims_.in(l)};
  }
  Eigen::Map<Vector<Scalar>> bias(int l) { return part(l, 0); }
  Eigen::Map<const Vector<Scalar>> bias(int l) const { return part(l, 0); }
  Eigen::Map<Vector<Scalar>> gain(int l) { return part(l, 1); }
  Eigen::Map<const Vector<Scalar>> gain(int l) const { return part(l, 1); }
  Eigen::Map<Vector<Scalar>> shift(int l) { return part(l, 2); }
  Eigen::Map<const Vector<Scalar>> shift(int l) const { return part(l, 2); }

  bool operator==(const BackboneParams& o) const { return dims_ == o.dims_ && flat_ == o.flat_; }

 private:
  Index offset(int l) const {
    Index off = 0;
    for (int k = 0; k < l; ++k) off += dims_.layer_size(k);
    return off;
  }
  Eigen::Map<Vector<Scalar>> part(int l, int which) {
    return {flat_.data() + offset(l) + dims_.out(l) * dims_.in(l) + which * dims_.out(l), dims_.out(l)};
  }
  Eigen::Map<const Vector<Scalar>> part(int l, int which) const {
    return {flat_.data() + offset(l) + dims_.out(l) * dims_.in(l) + which * dims_.out(l), dims_.out(l)};
  }

  BackboneDims dims_;
  Vector<Scalar> flat_;
};

enum class HeadKind { Single, TwoLayer };

struct HeadDims {
  HeadKind kind = HeadKind::Single;
  Index latent = kLatentDim;
  Index hidden = 128;
  Index outputs = 4;
  double dropout = 0.1;  // two-layer only; training passes only

  Index parameter_count() const {
    return kind == HeadKind::Single ? outputs * latent + outputs
                                    : hidden * latent + hidden + outputs * hidden + outputs;
  }
  bool operator==(const HeadDims&) const = default;
};

// Single:    W_out (M x latent), b_out (M)
// Two-layer: W_1 (h x latent), b_1 (h), W_2 (M x h), b_2 (M)
template <typename Scalar>
class HeadParams {
 public:
  using Matrix = RowMatrix<Scalar>;

  HeadParams() = default;
  explicit HeadParams(const HeadDims& dims) : dims_(dims), flat_(Vector<Scalar>::Zero(dims.parameter_count())) {
    if (!(dims.dropout >= 0.0 && dims.dropout < 1.0)) {
      throw ParameterError("head dropout rate must lie in [0, 1)");
    }
  }

  static HeadParams from_flat(const HeadDims& dims, Vector<Scalar> flat) {
    HeadParams p(dims);
    if (flat.size() != dims.parameter_count()) {
      throw DimensionError("head unflatten: expected " + std::to_string(dims.parameter_count()) +
                           " values, got " + std::to_string(flat.size()));
    }
    p.flat_ = std::move(flat);
    return p;
  }

  const HeadDims& dims() const { return dims_; }
  HeadKind kind() const { return dims_.kind; }
  Vector<Scalar>& flat() { return flat_; }
  const Vector<Scalar>& flat() const { return flat_; }

  Eigen::Map<Matrix> hidden_weight() { return {flat_.data(), dims_.hidden, dims_.latent}; }
  Eigen::Map<const Matrix> hidden_weight() const { return {flat_.data(), dims_.hidden, dims_.latent}; }
  Eigen::Map<Vector<Scalar>> hidden_bias() { return {flat_.data() + dims_.hidden * dims_.latent, dims_.hidden}; }
  Eigen::Map<const Vector<Scalar>> hidden_bias() const {
    return {flat_.data() + dims_.hidden * dims_.latent, dims_.hidden};
  }

  Eigen::Map<Matrix> output_weight() { return {flat_.data() + out_offset(), dims_.outputs, out_in()}; }
  Eigen::Map<const Matrix> output_weight() const {
    return {flat_.data() + out_offset(), dims_.outputs, out_in()};
  }
  Eigen::Map<Vector<Scalar>> output_bias() {
    return {flat_.data() + out_offset() + dims_.outputs * out_in(), dims_.outputs};
  }
  Eigen::Map<const Vector<Scalar>> output_bias() const {
    return {flat_.data() + out_offset() + dims_.outputs * out_in(), dims_.outputs};
  }

  bool operator==(const HeadParams& o) const { return dims_ == o.dims_ && flat_ == o.flat_; }

 private:
  Index out_in() const { return dims_.kind == HeadKind::Single ? dims_.latent : dims_.hidden; }
  Index out_offset() const {
    return dims_.kind == HeadKind::Single ? 0 : dims_.hidden * dims_.latent + dims_.hidden;
  }

  HeadDims dims_;
  Vector<Scalar> flat_;
};

template <typename Scalar>
struct GradientSet {
  BackboneParams<Scalar> backbone;
  HeadParams<Scalar> head;
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace detail {
template <typename Scalar, typename Map>
void kaiming_uniform(Map&& w, Index fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index r = 0; r < w.rows(); ++r)
    for (Index c = 0; c < w.cols(); ++c) w(r, c) = static_cast<Scalar>(dist(rng));
}
}  // namespace detail

// Kaiming-uniform weights, zero biases, LayerNorm gain 1 / shift 0.
template <typename Scalar = double>
BackboneParams<Scalar> init_backbone(const BackboneDims& dims, std::uint64_t seed) {
  BackboneParams<Scalar> p(dims);
  std::mt19937_64 rng(seed);
  for (int l = 0; l < 3; ++l) {
    detail::kaiming_uniform<Scalar>(p.weight(l), dims.in(l), rng);
    p.gain(l).setOnes();
  }
  return p;
}

template <typename Scalar = double>
HeadParams<Scalar> init_head(const HeadDims& dims, std::uint64_t seed) {
  HeadParams<Scalar> p(dims);
  std::mt19937_64 rng(seed);
  if (dims.kind == HeadKind::TwoLayer) {
    detail::kaiming_uniform<Scalar>(p.hidden_weight(), dims.latent, rng);
    detail::kaiming_uniform<Scalar>(p.output_weight(), dims.hidden, rng);
  } else {
    detail::kaiming_uniform<Scalar>(p.output_weight(), dims.latent, rng);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

template <typename Scalar>
struct BackboneCache {
  Batch<Scalar> input;
  std::array<Batch<Scalar>, 3> pre;  // W x + b, before SiLU
  std::array<LayerNormCache<Scalar>, 3> norm;
  std::array<Batch<Scalar>, 3> out;  // out[2] is the latent
};

template <typename Scalar, typename Derived>
Batch<Scalar> backbone_forward(const BackboneParams<Scalar>& p, const Eigen::MatrixBase<Derived>& x,
                               BackboneCache<Scalar>* cache = nullptr) {
  const BackboneDims& d = p.dims();
  if (x.rows() != d.input) {
    throw DimensionError("backbone_forward: input length " + std::to_string(x.rows()) +
                         ", expected " + std::to_string(d.input));
  }
  const Scalar eps = static_cast<Scalar>(kLayerNormEps);
  Batch<Scalar> h = x;
  if (cache) cache->input = h;
  for (int l = 0; l < 3; ++l) {
    Batch<Scalar> a = p.weight(l) * h;
    a.colwise() += p.bias(l);
    h = layer_norm(silu(a), p.gain(l), p.shift(l), eps, cache ? &cache->norm[l] : nullptr);
    if (cache) {
      cache->pre[l] = std::move(a);
      cache->out[l] = h;
    }
  }
  return h;
}

template <typename Scalar>
struct HeadCache {
  Batch<Scalar> input;      // after dropout
  Batch<Scalar> mask;       // empty when dropout is inactive
  Batch<Scalar> pre;        // two-layer hidden pre-activation
  Batch<Scalar> hidden;     // two-layer hidden activation
};

// Inverted dropout at train time; identity at evaluation.
template <typename Scalar, typename Derived>
Batch<Scalar> head_forward(const HeadParams<Scalar>& p, const Eigen::MatrixBase<Derived>& z, bool training,
                           std::mt19937_64& rng, HeadCache<Scalar>* cache = nullptr) {
  const HeadDims& d = p.dims();
  if (z.rows() != d.latent) {
    throw DimensionError("head_forward: latent length " + std::to_string(z.rows()) + ", expected " +
                         std::to_string(d.latent));
  }
  if (d.kind == HeadKind::Single) {
    Batch<Scalar> y = p.output_weight() * z;
    y.colwise() += p.output_bias();
    if (cache) {
      cache->input = z;
      cache->mask.resize(0, 0);
    }
    return y;
  }

  Batch<Scalar> zin = z;
  Batch<Scalar> mask;
  if (training && d.dropout > 0.0) {
    std::bernoulli_distribution keep(1.0 - d.dropout);
    const Scalar scale = static_cast<Scalar>(1.0 / (1.0 - d.dropout));
    mask.resize(z.rows(), z.cols());
    for (Index c = 0; c < mask.cols(); ++c)
      for (Index r = 0; r < mask.rows(); ++r) mask(r, c) = keep(rng) ? scale : Scalar(0);
    zin.array() *= mask.array();
  }
  Batch<Scalar> a = p.hidden_weight() * zin;
  a.colwise() += p.hidden_bias();
  Batch<Scalar> h = silu(a);
  Batch<Scalar> y = p.output_weight() * h;
  y.colwise() += p.output_bias();
  if (cache) {
    cache->input = std::move(zin);
    cache->mask = std::move(mask);
    cache->pre = std::move(a);
    cache->hidden = std::move(h);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Mean Huber loss over every entry.
template <typename DerivedP, typename DerivedT>
typename DerivedP::Scalar huber_loss(const Eigen::MatrixBase<DerivedP>& pred, const Eigen::MatrixBase<DerivedT>& target,
                                     typename DerivedP::Scalar delta) {
  using S = typename DerivedP::Scalar;
  if (!(delta > S(0))) throw ParameterError("huber_loss: delta must be positive");
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw DimensionError("huber_loss: prediction and target shapes differ");
  }
  auto r = (pred - target).array().abs().eval();
  auto quad = (S(0.5) * r.square()).eval();
  auto lin = (delta * r - S(0.5) * delta * delta).eval();
  return (r <= delta).select(quad, lin).mean();
}

// Gradient of the mean Huber loss w.r.t. the prediction.
template <typename DerivedP, typename DerivedT>
Batch<typename DerivedP::Scalar> huber_gradient(const Eigen::MatrixBase<DerivedP>& pred,
                                                const Eigen::MatrixBase<DerivedT>& target,
                                                typename DerivedP::Scalar delta) {
  using S = typename DerivedP::Scalar;
  if (!(delta > S(0))) throw ParameterError("huber_gradient: delta must be positive");
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw DimensionError("huber_gradient: prediction and target shapes differ");
  }
  const S n = static_cast<S>(pred.size());
  return ((pred - target).array().cwiseMax(-delta).cwiseMin(delta) / n).matrix();
}

// ---------------------------------------------------------------------------
// Backward passes
// ---------------------------------------------------------------------------

// Accumulates head gradients into `grad` and returns dL/dz.
template <typename Scalar>
Batch<Scalar> head_backward(const HeadParams<Scalar>& p, const HeadCache<Scalar>& cache, const Batch<Scalar>& dy,
                            HeadParams<Scalar>& grad) {
  const HeadDims& d = p.dims();
  if (!(grad.dims() == d) || cache.input.rows() != d.latent || cache.input.cols() != dy.cols() ||
      dy.rows() != d.outputs) {
    throw std::logic_error("head_backward: cache or gradient does not match the forward pass");
  }
  if (d.kind == HeadKind::Single) {
    grad.output_weight().noalias() += dy * cache.input.transpose();
    grad.output_bias() += dy.rowwise().sum();
    return p.output_weight().transpose() * dy;
  }
  if (cache.hidden.cols() != dy.cols()) {
    throw std::logic_error("head_backward: stale two-layer cache");
  }
  grad.output_weight().noalias() += dy * cache.hidden.transpose();
  grad.output_bias() += dy.rowwise().sum();
  Batch<Scalar> da = p.output_weight().transpose() * dy;
  da.array() *= silu_derivative(cache.pre).array();
  grad.hidden_weight().noalias() += da * cache.input.transpose();
  grad.hidden_bias() += da.rowwise().sum();
  Batch<Scalar> dz = p.hidden_weight().transpose() * da;
  if (cache.mask.size() > 0) dz.array() *= cache.mask.array();
  return dz;
}

template <typename Scalar>
void backbone_backward(const BackboneParams<Scalar>& p, const BackboneCache<Scalar>& cache, const Batch<Scalar>& dz,
                       BackboneParams<Scalar>& grad) {
  const BackboneDims& d = p.dims();
  const Index n = dz.cols();
  bool ok = grad.dims() == d && cache.input.rows() == d.input && cache.input.cols() == n && dz.rows() == d.latent;
  for (int l = 0; ok && l < 3; ++l) ok = cache.pre[l].rows() == d.out(l) && cache.pre[l].cols() == n;
  if (!ok) throw std::logic_error("backbone_backward: cache or gradient does not match the forward pass");

  Batch<Scalar> dy = dz;
  for (int l = 2; l >= 0; --l) {
    Batch<Scalar> da = layer_norm_backward(dy, cache.norm[l], p.gain(l), grad.gain(l), grad.shift(l));
    da.array() *= silu_derivative(cache.pre[l]).array();
    const Batch<Scalar>& in = l == 0 ? cache.input : cache.out[l - 1];
    grad.weight(l).noalias() += da * in.transpose();
    grad.bias(l) += da.rowwise().sum();
    if (l > 0) dy = p.weight(l).transpose() * da;
  }
}

// Reverse-mode gradients of the loss whose gradient w.r.t. the prediction is `dpred`.
template <typename Scalar>
GradientSet<Scalar> backward(const BackboneParams<Scalar>& backbone, const BackboneCache<Scalar>& bcache,
                             const HeadParams<Scalar>& head, const HeadCache<Scalar>& hcache,
                             const Batch<Scalar>& dpred) {
  GradientSet<Scalar> g{BackboneParams<Scalar>(backbone.dims()), HeadParams<Scalar>(head.dims())};
  Batch<Scalar> dz = head_backward(head, hcache, dpred, g.head);
  backbone_backward(backbone, bcache, dz, g.backbone);
  return g;
}

// Forward + Huber loss + backward on one minibatch. Returns the loss.
template <typename Scalar>
Scalar loss_and_gradients(const BackboneParams<Scalar>& backbone, const HeadParams<Scalar>& head,
                          const Batch<Scalar>& x, const Batch<Scalar>& y, Scalar delta, std::mt19937_64& rng,
                          GradientSet<Scalar>& grads) {
  BackboneCache<Scalar> bcache;
  HeadCache<Scalar> hcache;
  Batch<Scalar> z = backbone_forward(backbone, x, &bcache);
  Batch<Scalar> pred = head_forward(head, z, /*training=*/true, rng, &hcache);
  const Scalar loss = huber_loss(pred, y, delta);
  grads = backward(backbone, bcache, head, hcache, huber_gradient(pred, y, delta));
  return loss;
}

template <typename Scalar, typename Derived>
Batch<Scalar> predict(const BackboneParams<Scalar>& backbone, const HeadParams<Scalar>& head,
                      const Eigen::MatrixBase<Derived>& x) {
  std::mt19937_64 unused(0);
  return head_forward(head, backbone_forward(backbone, x), /*training=*/false, unused);
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Scalar>
struct AdamState {
  Vector<Scalar> m;
  Vector<Scalar> v;
  std::int64_t step = 0;

  static AdamState zeros(Index n) { return {Vector<Scalar>::Zero(n), Vector<Scalar>::Zero(n), 0}; }
};

// Bias-corrected Adam update applied in place.
template <typename Scalar>
void adam_step(AdamState<Scalar>& state, Vector<Scalar>& params, const Vector<Scalar>& grads, const AdamConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size() || grads.size() != params.size()) {
    throw DimensionError("adam_step: state, params and gradient lengths differ");
  }
  const Scalar b1 = static_cast<Scalar>(cfg.beta1);
  const Scalar b2 = static_cast<Scalar>(cfg.beta2);
  ++state.step;
  state.m = b1 * state.m + (Scalar(1) - b1) * grads;
  state.v = b2 * state.v + (Scalar(1) - b2) * grads.cwiseAbs2();
  const Scalar c1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(state.step));
  const Scalar c2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(state.step));
  const Scalar lr = static_cast<Scalar>(cfg.learning_rate);
  const Scalar eps = static_cast<Scalar>(cfg.epsilon);
  params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + eps);
}

}  // namespace fedrem
