#pragma once

#include "coserve/transfer/shard.hpp"

namespace coserve::transfer {

struct IncompleteCoverage : TransferError {
  using TransferError::TransferError;
};

struct TrainConfig {
  int tp = 1;
  int pp = 1;
  int dp = 1;
};

struct ServeConfig {
  int tp = 1;
  int pp = 1;
  int ranks() const { return tp * pp; }
};

// Every shard of every parameter, dealt round-robin over the dp ranks (each
// distinct shard is pushed by exactly one rank; replicated parameters are a
// single full shard, pushed once).
std::vector<std::vector<ShardDescriptor>> plan_pushes(
    const TrainConfig& train, const std::vector<ParamMeta>& manifest);

// Serialized push order modelling concurrent ranks sharing one uplink:
// rank-interleaved round robin over the per-rank lists.
std::vector<ShardDescriptor> interleave_pushes(
    const std::vector<std::vector<ShardDescriptor>>& per_rank);

// The slice of `meta` that serving rank (tp_rank within serve.tp) holds.
ShardDescriptor serve_target_shard(const ParamMeta& meta, const ServeConfig& serve,
                                   int tp_rank, int num_layers);

// For each serve rank, the minimal set of available source shards covering
// every parameter slice that rank owns. Throws IncompleteCoverage (naming
// the parameter and the missing range) when the available set has a gap.
// Serve rank ids are pp_stage * serve.tp + tp_rank.
std::vector<std::vector<ShardDescriptor>> plan_pulls(
    const ServeConfig& serve, const std::vector<ParamMeta>& manifest,
    const std::vector<ShardDescriptor>& available);

}  // namespace coserve::transfer
