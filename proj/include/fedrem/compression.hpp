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

// Uplink codec: error-feedback accumulation, Top-K sparsification, symmetric
// 8-bit quantization and the QUP1 wire format.
//
// QUP1 layout (little endian):
//   "QUP1" | u32 round | u32 client | u32 length | f32 scale | u32 nnz |
//   nnz x (u32 index, i8 qvalue)
// so an encoded update occupies 24 + 5 * nnz bytes.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "fedrem/errors.hpp"

namespace fedrem {

using FlatUpdate = Eigen::VectorXd;
using ResidualBuffer = Eigen::VectorXd;

inline constexpr std::uint64_t kQupHeaderBytes = 24;
inline constexpr std::uint64_t kQupEntryBytes = 5;
inline constexpr std::uint64_t kRawEntryBytes = 8;  // u32 index + f32 value
inline constexpr std::uint64_t kDenseValueBytes = 4;

// u = delta + residual
FlatUpdate accumulate(const FlatUpdate& delta, const ResidualBuffer& residual);

// Indices of the min(k, nnz(u)) largest-magnitude nonzero entries, ascending.
// Equal magnitudes prefer the lower index.
std::vector<std::uint32_t> top_k_indices(const FlatUpdate& u, Eigen::Index k);

// Dense vector keeping only the top-k entries of u.
FlatUpdate top_k(const FlatUpdate& u, Eigen::Index k);

// e = u - sparse
ResidualBuffer residual_update(const FlatUpdate& u, const FlatUpdate& sparse);

// K for a density ratio: round(density * length), clamped to [0, length].
Eigen::Index top_k_count(Eigen::Index length, double density);

struct QuantizedUpdate {
  std::uint32_t round = 0;
  std::uint32_t client = 0;
  std::uint32_t length = 0;
  float scale = 0.0f;
  std::vector<std::uint32_t> indices;  // strictly increasing, < length
  std::vector<std::int8_t> values;     // in [-127, 127]

  std::size_t nnz() const { return indices.size(); }
  bool operator==(const QuantizedUpdate&) const = default;
};

// scale = max|v| / 127 (held as float32), q = round-half-away(v / scale).
QuantizedUpdate quantize(const FlatUpdate& sparse, std::uint32_t round = 0, std::uint32_t client = 0);
FlatUpdate dequantize(const QuantizedUpdate& q);

std::vector<std::uint8_t> encode(const QuantizedUpdate& q);
QuantizedUpdate decode(std::span<const std::uint8_t> bytes);

// Exact encoded size without materializing the encoding.
inline std::uint64_t uplink_bytes(const QuantizedUpdate& q) { return kQupHeaderBytes + kQupEntryBytes * q.nnz(); }

// Uncompressed float32 upload of a length-L vector.
inline std::uint64_t dense_bytes(Eigen::Index length) { return kDenseValueBytes * static_cast<std::uint64_t>(length); }

// Unquantized upload. Values travel losslessly in the simulation; the byte
// count charges float32 per value and picks the cheaper of the sparse
// (index, value) form and the dense form.
struct RawUpdate {
  std::uint32_t round = 0;
  std::uint32_t client = 0;
  std::uint32_t length = 0;
  std::vector<std::uint32_t> indices;
  std::vector<double> values;

  std::size_t nnz() const { return indices.size(); }
};

inline std::uint64_t uplink_bytes(const RawUpdate& r) {
  return std::min(kQupHeaderBytes + kRawEntryBytes * r.nnz(), dense_bytes(r.length));
}

FlatUpdate densify(const RawUpdate& r);

using Payload = std::variant<QuantizedUpdate, RawUpdate>;

std::uint64_t uplink_bytes(const Payload& p);
FlatUpdate decode_payload(const Payload& p);
Eigen::Index payload_length(const Payload& p);

struct CodecOptions {
  double density = 0.01;  // K / L
  bool sparsify = true;   // false: K = L
  bool quantize = true;
};

// Per-client compressor owning the sparsification residual.
class ErrorFeedbackCompressor {
 public:
  ErrorFeedbackCompressor() = default;
  ErrorFeedbackCompressor(Eigen::Index length, CodecOptions options);

  Payload compress(const FlatUpdate& delta, std::uint32_t round, std::uint32_t client);

  const ResidualBuffer& residual() const { return residual_; }
  Eigen::Index k() const { return k_; }
  Eigen::Index length() const { return residual_.size(); }

 private:
  CodecOptions options_;
  Eigen::Index k_ = 0;
  ResidualBuffer residual_;
};

}  // namespace fedrem
