#pragma once

#include <functional>
#include <memory>

#include "coserve/transfer/codec.hpp"
#include "coserve/transfer/key.hpp"
#include "coserve/transfer/plan.hpp"
#include "coserve/transfer/relay.hpp"

namespace coserve::transfer {

enum class SyncMode : std::uint8_t {
  Batch,  // every pull waits until the push phase has fully completed
  Async,  // pullers ingest shards as their buckets land
};

struct SyncOptions {
  SyncMode mode = SyncMode::Async;
  // false: push full-model snapshots and have every serving rank pull the
  // whole replica; true: push tp/pp shards once and pull only needed slices.
  bool shard_aware = true;
  // Encode each shard as a sparse element delta when its changed-element
  // density is at or below the threshold; otherwise fall back to a dense
  // snapshot of that shard.
  bool sparse = false;
  double density_threshold = 0.20;
  std::uint64_t bucket_bytes = 64ull << 20;
  std::uint64_t pull_batch_bytes = 1ull << 30;
  int relay_timeout_ms = 120000;
  bool force_wide_index = false;  // always use 8-byte sparse indices
};

struct TransferReport {
  double push_s = 0, pull_s = 0, wall_s = 0;
  double encode_s = 0;  // extract + diff + serialize, summed over pushers
  double apply_s = 0;   // decode + reslice + apply, summed over pullers
  std::uint64_t pushed_bytes = 0, pulled_bytes = 0;
  std::uint64_t push_buckets = 0, pull_buckets = 0;
  int dense_shards = 0, sparse_shards = 0;
  std::string summary() const;
};

// Full-model training-side snapshots; ranks slice their shards on demand.
struct TrainState {
  TrainConfig cfg;
  std::vector<ParamMeta> manifest;
  WeightMap prev;
  WeightMap next;
};

// Per-rank serving-side weight shards.
struct ServeState {
  ServeConfig cfg;
  std::vector<ParamMeta> manifest;
  std::vector<WeightMap> rank_weights;

  static ServeState init(const ServeConfig& cfg, std::vector<ParamMeta> manifest,
                         const WeightMap& start);
  // Does serve rank `rank` hold a slice of `meta` (i.e. its pipeline stage)?
  bool owns(int rank, const ParamMeta& meta) const;
  ShardDescriptor target_of(int rank, const ParamMeta& meta) const;
};

// Moves one step's weights from the training state to every serving rank
// through a relay: shards are encoded into <=bucket_bytes buckets, published
// under self-describing keys, and pullers reassemble, reslice and apply
// them. One pusher thread models the serialized training-side uplink; one
// puller thread per serving rank models concurrent ingest.
class TransferEngine {
 public:
  using RelayFactory = std::function<std::shared_ptr<Relay>()>;

  // Buckets may be null (unthrottled). The same pair is shared by all
  // workers: one full-duplex link with independent directions.
  TransferEngine(RelayFactory factory, std::shared_ptr<TokenBucket> push_bucket,
                 std::shared_ptr<TokenBucket> pull_bucket);

  TransferReport sync_step(std::uint64_t step, const TrainState& train,
                           ServeState& serve, const SyncOptions& opts);

  // Codec actually chosen for each pushed shard in the last sync_step.
  const std::vector<std::pair<ShardDescriptor, char>>& last_codecs() const {
    return last_codecs_;
  }

 private:
  RelayFactory factory_;
  std::shared_ptr<TokenBucket> push_bucket_;
  std::shared_ptr<TokenBucket> pull_bucket_;
  std::vector<std::pair<ShardDescriptor, char>> last_codecs_;
};

}  // namespace coserve::transfer
