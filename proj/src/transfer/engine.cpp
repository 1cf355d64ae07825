#include "coserve/transfer/engine.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <sstream>
#include <thread>

namespace coserve::transfer {

namespace {

using Clock = std::chrono::steady_clock;

double secs_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

}  // namespace

std::string TransferReport::summary() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << "wall=" << wall_s << "s push=" << push_s << "s pull=" << pull_s
     << "s encode=" << encode_s << "s apply=" << apply_s << "s pushed="
     << pushed_bytes << "B (" << push_buckets << " buckets) pulled=" << pulled_bytes
     << "B (" << pull_buckets << " buckets) shards dense=" << dense_shards
     << " sparse=" << sparse_shards;
  return os.str();
}

ServeState ServeState::init(const ServeConfig& cfg, std::vector<ParamMeta> manifest,
                            const WeightMap& start) {
  ServeState s;
  s.cfg = cfg;
  s.manifest = std::move(manifest);
  s.rank_weights.resize(static_cast<std::size_t>(cfg.ranks()));
  for (int rank = 0; rank < cfg.ranks(); ++rank) {
    for (const auto& meta : s.manifest) {
      if (!s.owns(rank, meta)) continue;
      const auto target = s.target_of(rank, meta);
      s.rank_weights[static_cast<std::size_t>(rank)].emplace(
          meta.name, extract_shard(start.at(meta.name), target));
    }
  }
  return s;
}

bool ServeState::owns(int rank, const ParamMeta& meta) const {
  const int layers = manifest_num_layers(manifest);
  return pp_stage_of(meta.layer, layers, cfg.pp) == rank / cfg.tp;
}

ShardDescriptor ServeState::target_of(int rank, const ParamMeta& meta) const {
  return serve_target_shard(meta, cfg, rank % cfg.tp, manifest_num_layers(manifest));
}

TransferEngine::TransferEngine(RelayFactory factory,
                               std::shared_ptr<TokenBucket> push_bucket,
                               std::shared_ptr<TokenBucket> pull_bucket)
    : factory_(std::move(factory)), push_bucket_(std::move(push_bucket)),
      pull_bucket_(std::move(pull_bucket)) {}

TransferReport TransferEngine::sync_step(std::uint64_t step, const TrainState& train,
                                         ServeState& serve, const SyncOptions& opts) {
  const int layers = manifest_num_layers(train.manifest);
  std::map<std::string, const ParamMeta*> params;
  for (const auto& m : train.manifest) params.emplace(m.name, &m);

  std::vector<ShardDescriptor> push_order;
  if (opts.shard_aware) {
    push_order = interleave_pushes(plan_pushes(train.cfg, train.manifest));
  } else {
    for (const auto& meta : train.manifest)
      push_order.push_back(param_shards(meta, 1, train.cfg.pp, layers)[0]);
  }

  std::vector<std::vector<ShardDescriptor>> pulls(
      static_cast<std::size_t>(serve.cfg.ranks()));
  if (opts.shard_aware) {
    pulls = plan_pulls(serve.cfg, train.manifest, push_order);
  } else {
    // Naive replica pull: every serving rank ingests the entire model and
    // keeps only what it owns.
    for (auto& lst : pulls) lst = push_order;
  }

  TransferReport rep;
  std::atomic<std::int64_t> encode_ns{0}, apply_ns{0};
  std::atomic<std::uint64_t> push_buckets{0}, pull_buckets{0};
  std::atomic<std::uint64_t> pushed_bytes{0}, pulled_bytes{0};
  std::atomic<int> dense_shards{0}, sparse_shards{0};
  std::mutex codec_mu;
  last_codecs_.clear();
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto capture_error = [&] {
    std::lock_guard<std::mutex> lk(err_mu);
    if (!first_error) first_error = std::current_exception();
  };

  std::mutex time_mu;
  double push_elapsed = 0.0, pull_elapsed_max = 0.0;

  auto pusher = [&] {
    try {
      const auto t_begin = Clock::now();
      ThrottledRelay relay(factory_(), push_bucket_, pull_bucket_);
      for (const auto& desc : push_order) {
        const ParamMeta& meta = *params.at(desc.param);
        const auto t0 = Clock::now();
        const HostTensor next_sh = extract_shard(train.next.at(meta.name), desc);
        std::vector<std::uint8_t> payload;
        char codec = 'D';
        int iw = 0;
        if (opts.sparse) {
          const HostTensor prev_sh = extract_shard(train.prev.at(meta.name), desc);
          const SparseDelta delta = diff_shards(prev_sh, next_sh);
          if (delta.density() <= opts.density_threshold) {
            iw = opts.force_wide_index ? 8 : pick_index_width(delta);
            payload = encode_sparse(delta, iw);
            codec = 'S';
          }
        }
        if (codec == 'D') payload = encode_dense(next_sh);
        encode_ns += std::chrono::duration_cast<std::chrono::nanoseconds>(
                         Clock::now() - t0)
                         .count();
        (codec == 'S' ? sparse_shards : dense_shards)++;
        {
          std::lock_guard<std::mutex> lk(codec_mu);
          last_codecs_.emplace_back(desc, codec);
        }
        BucketKey key = BucketKey::for_shard(step, desc);
        key.codec = codec;
        key.index_width = iw;
        for (std::size_t off = 0, seq = 0; off < payload.size() || seq == 0;
             off += opts.bucket_bytes, ++seq) {
          const std::size_t n =
              std::min<std::size_t>(opts.bucket_bytes, payload.size() - off);
          key.seq = static_cast<std::uint32_t>(seq);
          relay.put(key.encode(),
                    std::vector<std::uint8_t>(payload.begin() + static_cast<std::ptrdiff_t>(off),
                                              payload.begin() + static_cast<std::ptrdiff_t>(off + n)));
          ++push_buckets;
        }
      }
      pushed_bytes += relay.pushed_bytes();
      std::lock_guard<std::mutex> lk(time_mu);
      push_elapsed = secs_between(t_begin, Clock::now());
    } catch (...) {
      capture_error();
    }
  };

  auto puller = [&](int rank) {
    try {
      const auto t_begin = Clock::now();
      ThrottledRelay relay(factory_(), push_bucket_, pull_bucket_);
      for (const auto& desc : pulls[static_cast<std::size_t>(rank)]) {
        // The first bucket's key also reveals the codec the pusher chose.
        BucketKey base = BucketKey::for_shard(step, desc);
        std::vector<std::string> candidates;
        for (auto [c, w] : {std::pair<char, int>{'D', 0}, {'S', 4}, {'S', 8}}) {
          base.codec = c;
          base.index_width = w;
          base.seq = 0;
          candidates.push_back(base.encode());
        }
        auto [key0, first] = relay.get_any(candidates, opts.relay_timeout_ms);
        BucketKey got = BucketKey::parse(key0);
        const std::size_t total = peek_payload_size(first.data(), first.size());
        const std::size_t want_first = std::min<std::size_t>(total, opts.bucket_bytes);
        if (first.size() != want_first)
          throw PayloadFormatError("bucket 0 of '" + key0 + "' has " +
                                   std::to_string(first.size()) + " bytes, expected " +
                                   std::to_string(want_first));
        std::vector<std::uint8_t> payload = std::move(first);
        payload.reserve(total);
        const std::size_t nbuckets =
            (total + opts.bucket_bytes - 1) / opts.bucket_bytes;
        ++pull_buckets;
        // Remaining buckets, fetched in batches capped by pull_batch_bytes.
        std::size_t seq = 1;
        while (seq < nbuckets) {
          std::uint64_t batch = 0;
          while (seq < nbuckets && batch < opts.pull_batch_bytes) {
            got.seq = static_cast<std::uint32_t>(seq);
            auto chunk = relay.get(got.encode(), opts.relay_timeout_ms);
            batch += chunk.size();
            payload.insert(payload.end(), chunk.begin(), chunk.end());
            ++pull_buckets;
            ++seq;
          }
        }
        if (payload.size() != total)
          throw PayloadFormatError("reassembled payload for '" + key0 + "' has " +
                                   std::to_string(payload.size()) +
                                   " bytes, expected " + std::to_string(total));

        const ParamMeta& meta = *params.at(desc.param);
        if (!serve.owns(rank, meta)) continue;  // replica pull of a foreign stage
        const auto t0 = Clock::now();
        const ShardDescriptor target = serve.target_of(rank, meta);
        HostTensor& tgt =
            serve.rank_weights[static_cast<std::size_t>(rank)].at(meta.name);
        DecodedPayload decoded = decode_payload(payload);
        if (decoded.is_sparse()) {
          const auto& delta = std::get<SparseDelta>(decoded.value);
          apply_delta(tgt, reslice_delta(delta, desc, target, meta.shape));
        } else {
          const auto& src = std::get<HostTensor>(decoded.value);
          const int dim = !target.full() ? target.slice_dim
                                         : (!desc.full() ? desc.slice_dim : 0);
          copy_overlap(tgt, target.full() ? 0 : target.start, src,
                       desc.full() ? 0 : desc.start, dim);
        }
        apply_ns += std::chrono::duration_cast<std::chrono::nanoseconds>(
                        Clock::now() - t0)
                        .count();
      }
      pulled_bytes += relay.pulled_bytes();
      const double el = secs_between(t_begin, Clock::now());
      std::lock_guard<std::mutex> lk(time_mu);
      pull_elapsed_max = std::max(pull_elapsed_max, el);
    } catch (...) {
      capture_error();
    }
  };

  const auto wall0 = Clock::now();
  std::thread push_thread(pusher);
  if (opts.mode == SyncMode::Batch) push_thread.join();
  std::vector<std::thread> pull_threads;
  for (int r = 0; r < serve.cfg.ranks(); ++r) pull_threads.emplace_back(puller, r);
  for (auto& t : pull_threads) t.join();
  if (push_thread.joinable()) push_thread.join();
  if (first_error) std::rethrow_exception(first_error);

  rep.wall_s = secs_between(wall0, Clock::now());
  rep.push_s = push_elapsed;
  rep.pull_s = pull_elapsed_max;
  rep.encode_s = static_cast<double>(encode_ns.load()) * 1e-9;
  rep.apply_s = static_cast<double>(apply_ns.load()) * 1e-9;
  rep.pushed_bytes = pushed_bytes.load();
  rep.pulled_bytes = pulled_bytes.load();
  rep.push_buckets = push_buckets.load();
  rep.pull_buckets = pull_buckets.load();
  rep.dense_shards = dense_shards.load();
  rep.sparse_shards = sparse_shards.load();
  return rep;
}

}  // namespace coserve::transfer
