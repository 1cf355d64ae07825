#include "coserve/workload/trajectory.hpp"

#include <algorithm>
#include <cmath>

#include "coserve/sim/rng.hpp"

namespace coserve::workload {
namespace {

int bounded_round(double v, int lo, int hi) {
  const auto r = static_cast<std::int64_t>(std::llround(v));
  return static_cast<int>(std::clamp<std::int64_t>(r, lo, hi));
}

}  // namespace

int TrajectorySpec::total_prompt_tokens() const {
  int total = initial_prompt;
  for (const auto& t : turns) total += t.prompt_growth;
  return total;
}

int TrajectorySpec::total_decode_tokens() const {
  int total = 0;
  for (const auto& t : turns) total += t.decode_tokens;
  return total;
}

std::int64_t TrajectorySpec::context_after_prompt(int turn) const {
  std::int64_t ctx = initial_prompt;
  for (int i = 0; i <= turn && i < num_turns(); i++) {
    if (i > 0) ctx += turns[i].prompt_growth + turns[i - 1].decode_tokens;
  }
  return ctx;
}

std::vector<TrajectorySpec> generate_trajectories(const TrajectoryParams& params,
                                                  int num_groups, int group_size,
                                                  std::uint64_t seed) {
  std::vector<TrajectorySpec> specs;
  specs.reserve(static_cast<std::size_t>(num_groups) * group_size);
  for (int i = 0; i < num_groups * group_size; i++) {
    // One stream per trajectory keyed by its index: specs are independent of
    // how many others are generated alongside them.
    sim::RngStream rng(sim::splitmix64(seed ^ sim::fnv1a64("traj." + std::to_string(i))));

    TrajectorySpec spec;
    spec.group_id = i / group_size;
    spec.idx_in_group = i % group_size;
    spec.initial_prompt = bounded_round(
        rng.lognormal(params.prompt0_log_mean, params.prompt0_log_sigma),
        params.min_prompt0, params.max_prompt0);
    const auto turns = static_cast<int>(
        std::min<std::int64_t>(rng.geometric_trials(params.turn_stop_p), params.max_turns));
    spec.turns.resize(static_cast<std::size_t>(turns));
    for (int t = 0; t < turns; t++) {
      auto& turn = spec.turns[static_cast<std::size_t>(t)];
      turn.prompt_growth =
          t == 0 ? 0
                 : bounded_round(rng.lognormal(params.growth_log_mean, params.growth_log_sigma),
                                 params.min_growth, params.max_growth);
      turn.decode_tokens = bounded_round(
          rng.lognormal(params.decode_log_mean, params.decode_log_sigma),
          params.min_decode, params.max_decode);
      turn.env_delay_us = static_cast<sim::SimTime>(
          std::llround(rng.exponential(params.env_delay_mean_s) * sim::kUsPerSec));
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

sim::SimTime estimate_duration_us(const TrajectorySpec& spec,
                                  const cost::LatencyProfile& profile,
                                  std::int64_t decode_batch_hint) {
  sim::SimTime total = 0;
  const sim::SimTime per_token =
      profile.decode_step_us(decode_batch_hint) / std::max<std::int64_t>(1, decode_batch_hint);
  std::int64_t in_kv = 0;  // tokens already cached: prior prompts plus decoded output
  for (int t = 0; t < spec.num_turns(); t++) {
    const auto& turn = spec.turns[static_cast<std::size_t>(t)];
    const std::int64_t after = spec.context_after_prompt(t);
    // Prefix reuse: only the newly appended context is prefilled each turn.
    total += profile.prefill_us(after, cost::PrefillMode::Mono) -
             (in_kv > 0 ? profile.prefill_us(in_kv, cost::PrefillMode::Mono) : 0);
    total += per_token * turn.decode_tokens;
    if (t + 1 < spec.num_turns()) total += turn.env_delay_us;
    in_kv = after + turn.decode_tokens;
  }
  return total;
}

double prefill_token_share(const std::vector<TrajectorySpec>& specs) {
  std::int64_t prompt = 0, decode = 0;
  for (const auto& s : specs) {
    prompt += s.total_prompt_tokens();
    decode += s.total_decode_tokens();
  }
  if (prompt + decode == 0) return 0.0;
  return static_cast<double>(prompt) / static_cast<double>(prompt + decode);
}

}  // namespace coserve::workload
