#include "coserve/transfer/bench.hpp"

namespace coserve::transfer {

BenchHarness::BenchHarness(const BenchSetup& setup) : setup_(setup) {
  sim::RngHub hub(setup.seed);
  train_.cfg = setup.train;
  train_.manifest = toy_transformer_manifest(setup.model);
  train_.prev = random_weights(train_.manifest, hub.stream("weights.base"));
  train_.next = perturb_weights(train_.prev, setup.density, hub.stream("weights.step"));
  serve_ = ServeState::init(setup.serve, train_.manifest, train_.prev);
  if (setup.use_tcp) server_ = std::make_unique<TcpRelayServer>();
}

std::uint64_t BenchHarness::model_bytes() const {
  std::uint64_t n = 0;
  for (const auto& [name, t] : train_.prev) n += t.byte_size();
  return n;
}

TransferReport BenchHarness::run(const SyncOptions& opts) {
  serve_ = ServeState::init(setup_.serve, train_.manifest, train_.prev);
  std::shared_ptr<TokenBucket> push_tb, pull_tb;
  if (setup_.bandwidth_mbit_s > 0) {
    const double rate = setup_.bandwidth_mbit_s * 1e6 / 8.0;
    push_tb = std::make_shared<TokenBucket>(rate, setup_.burst_bytes);
    pull_tb = std::make_shared<TokenBucket>(rate, setup_.burst_bytes);
  }
  TransferEngine::RelayFactory factory;
  if (setup_.use_tcp) {
    const auto port = server_->port();
    factory = [port]() -> std::shared_ptr<Relay> {
      return std::make_shared<TcpRelayClient>("127.0.0.1", port);
    };
  } else {
    auto mem = std::make_shared<MemoryRelay>();
    factory = [mem]() -> std::shared_ptr<Relay> { return mem; };
  }
  engine_ = std::make_unique<TransferEngine>(std::move(factory), push_tb, pull_tb);
  auto rep = engine_->sync_step(next_step_++, train_, serve_, opts);
  codecs_ = engine_->last_codecs();
  return rep;
}

bool BenchHarness::verify_exact(std::string* why) const {
  for (int rank = 0; rank < serve_.cfg.ranks(); ++rank) {
    for (const auto& meta : train_.manifest) {
      if (!serve_.owns(rank, meta)) continue;
      const ShardDescriptor target = serve_.target_of(rank, meta);
      HostTensor expected = extract_shard(train_.prev.at(meta.name), target);
      for (const auto& [src, codec] : codecs_) {
        if (src.param != meta.name) continue;
        if (codec == 'D') {
          const HostTensor next_sh = extract_shard(train_.next.at(meta.name), src);
          const int dim =
              !target.full() ? target.slice_dim : (!src.full() ? src.slice_dim : 0);
          copy_overlap(expected, target.full() ? 0 : target.start, next_sh,
                       src.full() ? 0 : src.start, dim);
        } else {
          const SparseDelta delta =
              diff_shards(extract_shard(train_.prev.at(meta.name), src),
                          extract_shard(train_.next.at(meta.name), src));
          apply_delta(expected, reslice_delta(delta, src, target, meta.shape));
        }
      }
      const HostTensor& got =
          serve_.rank_weights[static_cast<std::size_t>(rank)].at(meta.name);
      if (!expected.bitwise_equal(got)) {
        if (why)
          *why = "rank " + std::to_string(rank) + " parameter '" + meta.name +
                 "' differs from reference apply";
        return false;
      }
    }
  }
  return true;
}

}  // namespace coserve::transfer
