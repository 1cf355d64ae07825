#pragma once

#include <optional>

#include "coserve/transfer/manifest.hpp"

namespace coserve::transfer {

struct IndivisibleShape : TransferError {
  using TransferError::TransferError;
};
struct UnknownModuleKind : TransferError {
  using TransferError::TransferError;
};

// Tensor-parallel split dimension for a module kind, or nullopt when the
// parameter is replicated across ranks.
std::optional<int> tp_shard_dim(ModuleKind kind);

// Half-open [start, end) row range owned by `rank` when `extent` is split
// evenly over `size` ranks. Throws IndivisibleShape on a remainder.
std::pair<std::int64_t, std::int64_t> slice_range(std::int64_t extent, int rank,
                                                  int size);

// Contiguous pipeline layout: stage s owns a block of consecutive layers,
// earlier stages absorb the remainder (sizes differ by at most one).
int pp_stage_of(int layer, int num_layers, int pp_size);
std::pair<int, int> pp_stage_layer_range(int stage, int num_layers, int pp_size);

// One rank's slice of one parameter. slice_dim == -1 means the full tensor
// (replicated parameters, or tp_size == 1).
struct ShardDescriptor {
  std::string param;
  int tp_rank = 0;
  int tp_size = 1;
  int pp_stage = 0;
  int slice_dim = -1;
  std::int64_t start = 0;
  std::int64_t end = 0;

  bool full() const { return slice_dim < 0; }
  std::int64_t slice_extent(const std::vector<std::int64_t>& shape) const {
    return full() ? shape[0] : end - start;
  }
};

// Descriptor for each tp rank of one parameter. Replicated parameters yield
// a single full shard (pushed once, by the lowest rank that holds it).
std::vector<ShardDescriptor> param_shards(const ParamMeta& meta, int tp_size,
                                          int pp_size, int num_layers);

// Shape of the shard produced by `desc` from a tensor of `full_shape`.
std::vector<std::int64_t> shard_shape(const ShardDescriptor& desc,
                                      const std::vector<std::int64_t>& full_shape);

// Copies the descriptor's slice out of the full tensor.
HostTensor extract_shard(const HostTensor& full, const ShardDescriptor& desc);

// Copies the overlap of src (a slice of the full tensor along `dim`,
// occupying [src_start, src_start+src.shape[dim])) into dst (likewise at
// dst_start). Slices along the same dimension; returns copied elements.
std::int64_t copy_overlap(HostTensor& dst, std::int64_t dst_start,
                          const HostTensor& src, std::int64_t src_start, int dim);

}  // namespace coserve::transfer
