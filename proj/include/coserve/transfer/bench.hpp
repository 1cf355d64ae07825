#pragma once

#include "coserve/transfer/engine.hpp"
#include "coserve/transfer/tcp_relay.hpp"

namespace coserve::transfer {

struct BenchSetup {
  ModelSpec model;
  TrainConfig train{2, 2, 2};
  ServeConfig serve{4, 1};
  double density = 0.05;      // fraction of elements changed between steps
  std::uint64_t seed = 1;
  double bandwidth_mbit_s = 0;  // per-direction payload pacing; 0 = unthrottled
  double burst_bytes = 256.0 * 1024.0;
  bool use_tcp = false;
};

// Owns a training snapshot pair, a serving deployment and a relay, and runs
// weight syncs against them. Each run starts from a fresh serving state
// initialised to the previous-step weights.
class BenchHarness {
 public:
  explicit BenchHarness(const BenchSetup& setup);

  TransferReport run(const SyncOptions& opts);

  // Byte-compares every serving shard with a reference apply computed from
  // the full snapshots and the codec each shard was actually sent with.
  bool verify_exact(std::string* why = nullptr) const;

  const TrainState& train() const { return train_; }
  const ServeState& serve() const { return serve_; }
  const std::vector<std::pair<ShardDescriptor, char>>& codecs() const {
    return codecs_;
  }
  std::uint64_t model_bytes() const;

 private:
  BenchSetup setup_;
  TrainState train_;
  ServeState serve_;
  std::unique_ptr<TcpRelayServer> server_;
  std::unique_ptr<TransferEngine> engine_;
  std::vector<std::pair<ShardDescriptor, char>> codecs_;
  std::uint64_t next_step_ = 1;
};

}  // namespace coserve::transfer
