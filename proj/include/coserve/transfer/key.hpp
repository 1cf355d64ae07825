#pragma once

#include <cstdint>
#include <string>

#include "coserve/transfer/shard.hpp"

namespace coserve::transfer {

struct KeyFormatError : TransferError {
  using TransferError::TransferError;
};

// Relay keys carry everything a puller needs to interpret a bucket without
// out-of-band metadata:
//
//   w|s<step>|p<name>|t<tp_rank>.<tp_size>|g<pp_stage>|d<slice>|c<codec><iw>|q<seq>
//
// slice is "F" for a full tensor or "<dim>:<start>:<end>"; codec is 'D'
// (dense snapshot) or 'S' (sparse delta); iw is the sparse index width in
// bytes (0 for dense). '%' and '|' inside the parameter name are
// percent-escaped so the field separators stay unambiguous.
struct BucketKey {
  std::uint64_t step = 0;
  std::string param;
  int tp_rank = 0;
  int tp_size = 1;
  int pp_stage = 0;
  int slice_dim = -1;
  std::int64_t start = 0;
  std::int64_t end = 0;
  char codec = 'D';
  int index_width = 0;
  std::uint32_t seq = 0;

  std::string encode() const;
  // Everything up to (and excluding) the codec field: identifies one shard
  // of one parameter within a step, across all its buckets.
  std::string shard_prefix() const;
  static std::string step_prefix(std::uint64_t step);
  static BucketKey parse(const std::string& key);

  ShardDescriptor shard() const {
    ShardDescriptor d;
    d.param = param;
    d.tp_rank = tp_rank;
    d.tp_size = tp_size;
    d.pp_stage = pp_stage;
    d.slice_dim = slice_dim;
    d.start = start;
    d.end = end;
    return d;
  }

  static BucketKey for_shard(std::uint64_t step, const ShardDescriptor& d) {
    BucketKey k;
    k.step = step;
    k.param = d.param;
    k.tp_rank = d.tp_rank;
    k.tp_size = d.tp_size;
    k.pp_stage = d.pp_stage;
    k.slice_dim = d.slice_dim;
    k.start = d.start;
    k.end = d.end;
    return k;
  }
};

std::string escape_key_field(const std::string& raw);
std::string unescape_key_field(const std::string& field);

}  // namespace coserve::transfer
