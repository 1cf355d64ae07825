#include "coserve/transfer/plan.hpp"

#include <algorithm>
#include <map>

namespace coserve::transfer {

std::vector<std::vector<ShardDescriptor>> plan_pushes(
    const TrainConfig& train, const std::vector<ParamMeta>& manifest) {
  const int layers = manifest_num_layers(manifest);
  std::vector<std::vector<ShardDescriptor>> per_rank(
      static_cast<std::size_t>(std::max(1, train.dp)));
  std::size_t next = 0;
  for (const auto& meta : manifest) {
    for (auto& d : param_shards(meta, train.tp, train.pp, layers)) {
      per_rank[next % per_rank.size()].push_back(std::move(d));
      ++next;
    }
  }
  return per_rank;
}

std::vector<ShardDescriptor> interleave_pushes(
    const std::vector<std::vector<ShardDescriptor>>& per_rank) {
  std::vector<ShardDescriptor> out;
  std::size_t longest = 0;
  for (const auto& r : per_rank) longest = std::max(longest, r.size());
  for (std::size_t i = 0; i < longest; ++i)
    for (const auto& r : per_rank)
      if (i < r.size()) out.push_back(r[i]);
  return out;
}

ShardDescriptor serve_target_shard(const ParamMeta& meta, const ServeConfig& serve,
                                   int tp_rank, int num_layers) {
  const auto shards = param_shards(meta, serve.tp, serve.pp, num_layers);
  if (shards.size() == 1) return shards[0];  // replicated: every rank holds it all
  return shards[static_cast<std::size_t>(tp_rank)];
}

namespace {

// Greedy interval cover of [t0, t1) along dimension `dim` by the available
// source shards of one parameter (sorted by start, prefer the
// farthest-reaching at each step). Sources sliced along a different
// dimension cover a sub-box, not a row range, and are unusable here.
std::vector<ShardDescriptor> cover_slice(const std::string& param, int dim,
                                         std::int64_t extent, std::int64_t t0,
                                         std::int64_t t1,
                                         std::vector<ShardDescriptor> sources) {
  sources.erase(std::remove_if(sources.begin(), sources.end(),
                               [&](const ShardDescriptor& s) {
                                 return !s.full() && s.slice_dim != dim;
                               }),
                sources.end());
  for (auto& s : sources) {
    if (s.full()) {
      s.start = 0;
      s.end = extent;
    }
  }
  std::sort(sources.begin(), sources.end(),
            [](const ShardDescriptor& a, const ShardDescriptor& b) {
              if (a.start != b.start) return a.start < b.start;
              return a.end > b.end;
            });
  std::vector<ShardDescriptor> chosen;
  std::int64_t cur = t0;
  std::size_t i = 0;
  while (cur < t1) {
    const ShardDescriptor* best = nullptr;
    while (i < sources.size() && sources[i].start <= cur) {
      if (!best || sources[i].end > best->end) best = &sources[i];
      ++i;
    }
    if (!best || best->end <= cur)
      throw IncompleteCoverage("parameter '" + param + "': target [" +
                               std::to_string(t0) + "," + std::to_string(t1) +
                               ") has no source covering offset " +
                               std::to_string(cur));
    chosen.push_back(*best);
    cur = best->end;
  }
  return chosen;
}

}  // namespace

std::vector<std::vector<ShardDescriptor>> plan_pulls(
    const ServeConfig& serve, const std::vector<ParamMeta>& manifest,
    const std::vector<ShardDescriptor>& available) {
  const int layers = manifest_num_layers(manifest);
  std::map<std::string, std::vector<ShardDescriptor>> by_param;
  for (const auto& s : available) by_param[s.param].push_back(s);

  std::vector<std::vector<ShardDescriptor>> per_rank(
      static_cast<std::size_t>(serve.ranks()));
  for (const auto& meta : manifest) {
    const int stage = pp_stage_of(meta.layer, layers, serve.pp);
    auto it = by_param.find(meta.name);
    for (int r = 0; r < serve.tp; ++r) {
      const int rank = stage * serve.tp + r;
      const ShardDescriptor target = serve_target_shard(meta, serve, r, layers);
      // Cover along the target's slice dim, or the module's natural shard
      // dim when the target wants the full tensor.
      const auto kind_dim = tp_shard_dim(meta.kind);
      const int dim =
          !target.full() ? target.slice_dim : (kind_dim ? *kind_dim : 0);
      const std::int64_t extent = meta.shape[static_cast<std::size_t>(dim)];
      const std::int64_t t0 = target.full() ? 0 : target.start;
      const std::int64_t t1 = target.full() ? extent : target.end;
      if (it == by_param.end())
        throw IncompleteCoverage("parameter '" + meta.name +
                                 "': no source shards available");
      auto chosen = cover_slice(meta.name, dim, extent, t0, t1, it->second);
      auto& dst = per_rank[static_cast<std::size_t>(rank)];
      dst.insert(dst.end(), chosen.begin(), chosen.end());
    }
  }
  return per_rank;
}

}  // namespace coserve::transfer
