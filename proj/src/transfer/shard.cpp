#include "coserve/transfer/shard.hpp"

#include <algorithm>
#include <cstring>

namespace coserve::transfer {

std::optional<int> tp_shard_dim(ModuleKind kind) {
  switch (kind) {
    case ModuleKind::ColumnLinear: return 0;
    case ModuleKind::RowLinear: return 1;
    case ModuleKind::Embedding: return 0;
    case ModuleKind::Norm:
    case ModuleKind::Replicated: return std::nullopt;
  }
  throw UnknownModuleKind("unknown module kind ordinal " +
                          std::to_string(static_cast<int>(kind)));
}

std::pair<std::int64_t, std::int64_t> slice_range(std::int64_t extent, int rank,
                                                  int size) {
  if (size <= 0 || rank < 0 || rank >= size)
    throw TransferError("slice_range: rank " + std::to_string(rank) + " of " +
                        std::to_string(size));
  if (extent % size != 0)
    throw IndivisibleShape("extent " + std::to_string(extent) +
                           " not divisible by tp size " + std::to_string(size));
  const std::int64_t per = extent / size;
  return {per * rank, per * (rank + 1)};
}

int pp_stage_of(int layer, int num_layers, int pp_size) {
  for (int s = 0; s < pp_size; ++s) {
    auto [lo, hi] = pp_stage_layer_range(s, num_layers, pp_size);
    if (layer >= lo && layer < hi) return s;
  }
  throw TransferError("layer " + std::to_string(layer) + " outside 0.." +
                      std::to_string(num_layers - 1));
}

std::pair<int, int> pp_stage_layer_range(int stage, int num_layers, int pp_size) {
  if (pp_size <= 0 || stage < 0 || stage >= pp_size)
    throw TransferError("pp stage " + std::to_string(stage) + " of " +
                        std::to_string(pp_size));
  const int base = num_layers / pp_size;
  const int rem = num_layers % pp_size;
  const int lo = stage * base + std::min(stage, rem);
  const int hi = lo + base + (stage < rem ? 1 : 0);
  return {lo, hi};
}

std::vector<ShardDescriptor> param_shards(const ParamMeta& meta, int tp_size,
                                          int pp_size, int num_layers) {
  const int stage = pp_stage_of(meta.layer, num_layers, pp_size);
  std::vector<ShardDescriptor> out;
  const auto dim = tp_shard_dim(meta.kind);
  if (!dim || tp_size == 1) {
    ShardDescriptor d;
    d.param = meta.name;
    d.tp_rank = 0;
    d.tp_size = 1;
    d.pp_stage = stage;
    out.push_back(d);
    return out;
  }
  for (int r = 0; r < tp_size; ++r) {
    auto [lo, hi] = slice_range(meta.shape[static_cast<std::size_t>(*dim)], r, tp_size);
    ShardDescriptor d;
    d.param = meta.name;
    d.tp_rank = r;
    d.tp_size = tp_size;
    d.pp_stage = stage;
    d.slice_dim = *dim;
    d.start = lo;
    d.end = hi;
    out.push_back(d);
  }
  return out;
}

std::vector<std::int64_t> shard_shape(const ShardDescriptor& desc,
                                      const std::vector<std::int64_t>& full_shape) {
  std::vector<std::int64_t> s = full_shape;
  if (!desc.full()) s[static_cast<std::size_t>(desc.slice_dim)] = desc.end - desc.start;
  return s;
}

namespace {

// outer * [extent at dim] * inner element decomposition for slicing along dim.
struct DimSplit {
  std::int64_t outer = 1, extent = 1, inner = 1;
};

DimSplit split_at(const std::vector<std::int64_t>& shape, int dim) {
  DimSplit s;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
    auto e = shape[static_cast<std::size_t>(i)];
    if (i < dim)
      s.outer *= e;
    else if (i == dim)
      s.extent = e;
    else
      s.inner *= e;
  }
  return s;
}

}  // namespace

HostTensor extract_shard(const HostTensor& full, const ShardDescriptor& desc) {
  if (desc.full()) return full;
  const int dim = desc.slice_dim;
  if (dim >= static_cast<int>(full.shape.size()))
    throw ShapeMismatch("slice dim " + std::to_string(dim) + " out of rank for " +
                        shape_str(full.shape));
  if (desc.start < 0 || desc.end > full.shape[static_cast<std::size_t>(dim)] ||
      desc.start >= desc.end)
    throw ShapeMismatch("slice [" + std::to_string(desc.start) + "," +
                        std::to_string(desc.end) + ") out of " +
                        shape_str(full.shape));
  HostTensor out = HostTensor::zeros(full.dtype, shard_shape(desc, full.shape));
  const DimSplit s = split_at(full.shape, dim);
  const std::size_t esz = dtype_size(full.dtype);
  const std::int64_t rows = desc.end - desc.start;
  const std::size_t run = static_cast<std::size_t>(rows * s.inner) * esz;
  for (std::int64_t o = 0; o < s.outer; ++o) {
    const std::size_t src_off =
        static_cast<std::size_t>((o * s.extent + desc.start) * s.inner) * esz;
    const std::size_t dst_off = static_cast<std::size_t>(o * rows * s.inner) * esz;
    std::memcpy(out.data.data() + dst_off, full.data.data() + src_off, run);
  }
  return out;
}

std::int64_t copy_overlap(HostTensor& dst, std::int64_t dst_start,
                          const HostTensor& src, std::int64_t src_start, int dim) {
  if (dst.dtype != src.dtype)
    throw ShapeMismatch("copy_overlap dtype mismatch");
  if (dst.shape.size() != src.shape.size())
    throw ShapeMismatch("copy_overlap rank mismatch");
  for (int i = 0; i < static_cast<int>(dst.shape.size()); ++i) {
    if (i != dim && dst.shape[static_cast<std::size_t>(i)] !=
                        src.shape[static_cast<std::size_t>(i)])
      throw ShapeMismatch("copy_overlap off-dim shape mismatch at dim " +
                          std::to_string(i));
  }
  const std::int64_t ddim = dim < 0 ? 0 : dim;
  const std::int64_t src_lo = src_start;
  const std::int64_t src_hi = src_start + src.shape[static_cast<std::size_t>(ddim)];
  const std::int64_t dst_lo = dst_start;
  const std::int64_t dst_hi = dst_start + dst.shape[static_cast<std::size_t>(ddim)];
  const std::int64_t lo = std::max(src_lo, dst_lo);
  const std::int64_t hi = std::min(src_hi, dst_hi);
  if (lo >= hi) return 0;

  const DimSplit ss = split_at(src.shape, static_cast<int>(ddim));
  const DimSplit ds = split_at(dst.shape, static_cast<int>(ddim));
  const std::size_t esz = dtype_size(dst.dtype);
  const std::int64_t rows = hi - lo;
  const std::size_t run = static_cast<std::size_t>(rows * ss.inner) * esz;
  for (std::int64_t o = 0; o < ss.outer; ++o) {
    const std::size_t src_off =
        static_cast<std::size_t>((o * ss.extent + (lo - src_lo)) * ss.inner) * esz;
    const std::size_t dst_off =
        static_cast<std::size_t>((o * ds.extent + (lo - dst_lo)) * ds.inner) * esz;
    std::memcpy(dst.data.data() + dst_off, src.data.data() + src_off, run);
  }
  return rows * ss.inner * ss.outer;
}

}  // namespace coserve::transfer
