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

#include "fedrem/compression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "fedrem/io_util.hpp"

namespace fedrem {

namespace {

constexpr char kMagic[4] = {'Q', 'U', 'P', '1'};

void check_length(Eigen::Index n) {
  if (n > static_cast<Eigen::Index>(std::numeric_limits<std::uint32_t>::max())) {
    throw CodecError("update length exceeds the u32 index range");
  }
}

}  // namespace

FlatUpdate accumulate(const FlatUpdate& delta, const ResidualBuffer& residual) {
  if (delta.size() != residual.size()) {
    throw DimensionError("accumulate: delta length " + std::to_string(delta.size()) + " vs residual " +
                         std::to_string(residual.size()));
  }
  return delta + residual;
}

std::vector<std::uint32_t> top_k_indices(const FlatUpdate& u, Eigen::Index k) {
  if (k < 0 || k > u.size()) {
    throw ParameterError("top_k: K=" + std::to_string(k) + " outside [0, " + std::to_string(u.size()) + "]");
  }
  check_length(u.size());
  std::vector<std::uint32_t> idx;
  idx.reserve(static_cast<std::size_t>(u.size()));
  for (Eigen::Index i = 0; i < u.size(); ++i)
    if (u(i) != 0.0) idx.push_back(static_cast<std::uint32_t>(i));
  if (static_cast<Eigen::Index>(idx.size()) > k) {
    auto before = [&u](std::uint32_t a, std::uint32_t b) {
      const double ma = std::abs(u(a));
      const double mb = std::abs(u(b));
      return ma > mb || (ma == mb && a < b);
    };
    std::nth_element(idx.begin(), idx.begin() + k, idx.end(), before);
    idx.resize(static_cast<std::size_t>(k));
  }
  std::sort(idx.begin(), idx.end());
  return idx;
}

FlatUpdate top_k(const FlatUpdate& u, Eigen::Index k) {
  FlatUpdate out = FlatUpdate::Zero(u.size());
  for (std::uint32_t i : top_k_indices(u, k)) out(i) = u(i);
  return out;
}

ResidualBuffer residual_update(const FlatUpdate& u, const FlatUpdate& sparse) {
  if (u.size() != sparse.size()) throw DimensionError("residual_update: length mismatch");
  return u - sparse;
}

Eigen::Index top_k_count(Eigen::Index length, double density) {
  if (!(density >= 0.0 && density <= 1.0)) throw ParameterError("density must be in [0, 1]");
  return std::clamp<Eigen::Index>(std::llround(density * static_cast<double>(length)), 0, length);
}

QuantizedUpdate quantize(const FlatUpdate& sparse, std::uint32_t round, std::uint32_t client) {
  check_length(sparse.size());
  QuantizedUpdate q;
  q.round = round;
  q.client = client;
  q.length = static_cast<std::uint32_t>(sparse.size());
  double max_abs = 0.0;
  for (Eigen::Index i = 0; i < sparse.size(); ++i) {
    const double v = sparse(i);
    if (!std::isfinite(v)) throw CodecError("quantize: non-finite entry at index " + std::to_string(i));
    if (v != 0.0) {
      q.indices.push_back(static_cast<std::uint32_t>(i));
      max_abs = std::max(max_abs, std::abs(v));
    }
  }
  if (q.indices.empty()) return q;
  const double scale = max_abs / 127.0;
  if (scale > static_cast<double>(std::numeric_limits<float>::max())) {
    throw CodecError("quantize: magnitude exceeds the float32 scale range");
  }
  q.scale = std::max(static_cast<float>(scale), std::numeric_limits<float>::denorm_min());
  const double s = q.scale;
  q.values.reserve(q.indices.size());
  for (std::uint32_t i : q.indices) {
    const double level = std::clamp(std::round(sparse(i) / s), -127.0, 127.0);
    q.values.push_back(static_cast<std::int8_t>(level));
  }
  return q;
}

FlatUpdate dequantize(const QuantizedUpdate& q) {
  if (q.indices.size() != q.values.size()) throw CodecError("dequantize: index/value count mismatch");
  FlatUpdate out = FlatUpdate::Zero(q.length);
  const double s = q.scale;
  for (std::size_t j = 0; j < q.indices.size(); ++j) {
    if (q.indices[j] >= q.length) {
      throw CodecError("dequantize: index " + std::to_string(q.indices[j]) + " >= length " + std::to_string(q.length));
    }
    out(q.indices[j]) = static_cast<double>(q.values[j]) * s;
  }
  return out;
}

std::vector<std::uint8_t> encode(const QuantizedUpdate& q) {
  if (q.indices.size() != q.values.size()) throw CodecError("encode: index/value count mismatch");
  std::vector<std::uint8_t> out;
  out.reserve(uplink_bytes(q));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, q.round);
  put_u32(out, q.client);
  put_u32(out, q.length);
  put_f32(out, q.scale);
  put_u32(out, static_cast<std::uint32_t>(q.nnz()));
  for (std::size_t j = 0; j < q.indices.size(); ++j) {
    put_u32(out, q.indices[j]);
    out.push_back(static_cast<std::uint8_t>(q.values[j]));
  }
  return out;
}

QuantizedUpdate decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kQupHeaderBytes) {
    throw CodecError("decode: truncated header (" + std::to_string(bytes.size()) + " bytes)");
  }
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) throw CodecError("decode: bad magic");
  QuantizedUpdate q;
  q.round = get_u32(bytes, 4);
  q.client = get_u32(bytes, 8);
  q.length = get_u32(bytes, 12);
  q.scale = get_f32(bytes, 16);
  const std::uint64_t nnz = get_u32(bytes, 20);
  const std::uint64_t expected = kQupHeaderBytes + kQupEntryBytes * nnz;
  if (bytes.size() < expected) {
    throw CodecError("decode: truncated body, expected " + std::to_string(expected) + " bytes, got " +
                     std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) throw CodecError("decode: trailing bytes after payload");
  if (!std::isfinite(q.scale) || q.scale < 0.0f) throw CodecError("decode: invalid scale");
  if ((q.scale == 0.0f) != (nnz == 0)) throw CodecError("decode: scale must be zero exactly when nnz is zero");
  q.indices.reserve(nnz);
  q.values.reserve(nnz);
  std::size_t pos = kQupHeaderBytes;
  for (std::uint64_t j = 0; j < nnz; ++j, pos += kQupEntryBytes) {
    const std::uint32_t idx = get_u32(bytes, pos);
    const auto v = static_cast<std::int8_t>(bytes[pos + 4]);
    if (idx >= q.length) throw CodecError("decode: index " + std::to_string(idx) + " out of range");
    if (!q.indices.empty() && idx <= q.indices.back()) throw CodecError("decode: indices not strictly increasing");
    if (v == -128) throw CodecError("decode: qvalue -128 outside the symmetric range");
    q.indices.push_back(idx);
    q.values.push_back(v);
  }
  return q;
}

FlatUpdate densify(const RawUpdate& r) {
  if (r.indices.size() != r.values.size()) throw CodecError("raw update: index/value count mismatch");
  FlatUpdate out = FlatUpdate::Zero(r.length);
  for (std::size_t j = 0; j < r.indices.size(); ++j) {
    if (r.indices[j] >= r.length) throw CodecError("raw update: index out of range");
    out(r.indices[j]) = r.values[j];
  }
  return out;
}

std::uint64_t uplink_bytes(const Payload& p) {
  return std::visit([](const auto& u) { return uplink_bytes(u); }, p);
}

FlatUpdate decode_payload(const Payload& p) {
  if (const auto* q = std::get_if<QuantizedUpdate>(&p)) return dequantize(*q);
  return densify(std::get<RawUpdate>(p));
}

Eigen::Index payload_length(const Payload& p) {
  return std::visit([](const auto& u) { return static_cast<Eigen::Index>(u.length); }, p);
}

ErrorFeedbackCompressor::ErrorFeedbackCompressor(Eigen::Index length, CodecOptions options)
    : options_(options),
      k_(options.sparsify ? top_k_count(length, options.density) : length),
      residual_(ResidualBuffer::Zero(length)) {
  check_length(length);
}

Payload ErrorFeedbackCompressor::compress(const FlatUpdate& delta, std::uint32_t round, std::uint32_t client) {
  const FlatUpdate u = accumulate(delta, residual_);
  if (!u.allFinite()) throw CodecError("compress: non-finite update");
  const std::vector<std::uint32_t> kept = top_k_indices(u, k_);
  FlatUpdate sparse = FlatUpdate::Zero(u.size());
  for (std::uint32_t i : kept) sparse(i) = u(i);
  residual_ = residual_update(u, sparse);
  if (options_.quantize) return quantize(sparse, round, client);

  RawUpdate raw;
  raw.round = round;
  raw.client = client;
  raw.length = static_cast<std::uint32_t>(u.size());
  raw.indices = kept;
  raw.values.reserve(kept.size());
  for (std::uint32_t i : kept) raw.values.push_back(u(i));
  return raw;
}

}  // namespace fedrem
