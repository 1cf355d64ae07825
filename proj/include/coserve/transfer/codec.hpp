#pragma once

#include <variant>

#include "coserve/transfer/shard.hpp"

namespace coserve::transfer {

struct IndexOutOfShard : TransferError {
  using TransferError::TransferError;
};

// Flat-indexed element delta between two weight snapshots of one shard.
// Indices are row-major linear offsets into `shape`, sorted ascending and
// unique; values are raw 4-byte elements (the amount to add).
struct SparseDelta {
  DType dtype = DType::F32;
  std::vector<std::int64_t> shape;
  std::vector<std::uint64_t> indices;
  std::vector<std::uint8_t> values;

  std::int64_t elems() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  std::size_t nnz() const { return indices.size(); }
  double density() const {
    const std::int64_t n = elems();
    return n == 0 ? 0.0 : static_cast<double>(nnz()) / static_cast<double>(n);
  }
};

// Element-exact diff: records every position whose value changed between
// prev and next (for floats, positions comparing equal are skipped; the
// stored value is next - prev evaluated in the element type).
SparseDelta diff_shards(const HostTensor& prev, const HostTensor& next);

// In-place target += delta. Throws IndexOutOfShard when an index does not
// fit the target, ShapeMismatch when shape/dtype differ.
void apply_delta(HostTensor& target, const SparseDelta& delta);

// Re-expresses a delta local to the `src` slice as a delta local to the
// `dst` slice of the same full tensor (entries outside dst are dropped).
// Both slices must be along the same dimension (or full).
SparseDelta reslice_delta(const SparseDelta& delta, const ShardDescriptor& src,
                          const ShardDescriptor& dst,
                          const std::vector<std::int64_t>& full_shape);

// --- wire payloads -------------------------------------------------------
// Dense:  "CWD1" u32 | dtype u8 | ndims u8 | pad u16 | dims i64* | raw values
// Sparse: "CWS1" u32 | dtype u8 | ndims u8 | iw u8 | pad u8 | dims i64* |
//         nnz u64 | indices (nnz*iw) | values (nnz*4)
// All fields little-endian. iw (index width) is 4 or 8 bytes, picked so the
// largest index fits; mirrored in the bucket key.

std::vector<std::uint8_t> encode_dense(const HostTensor& t);
std::vector<std::uint8_t> encode_sparse(const SparseDelta& d, int index_width);
int pick_index_width(const SparseDelta& d);

struct DecodedPayload {
  std::variant<HostTensor, SparseDelta> value;
  bool is_sparse() const { return value.index() == 1; }
};
DecodedPayload decode_payload(const std::vector<std::uint8_t>& bytes);

// Total payload size implied by a payload prefix (at least the header plus
// dims must be present). Lets a puller derive the bucket count for a shard
// from its first bucket alone.
std::size_t peek_payload_size(const std::uint8_t* data, std::size_t len);

}  // namespace coserve::transfer
