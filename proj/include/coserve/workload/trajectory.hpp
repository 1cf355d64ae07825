#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coserve/cost/profile.hpp"
#include "coserve/sim/time.hpp"

namespace coserve::workload {

// Distribution knobs for synthetic agent trajectories. Multi-turn agent
// episodes are prompt-heavy: context accumulates tool output every turn while
// each turn decodes comparatively few tokens, and episode length is
// open-ended. Defaults aim at a 0.75-0.85 prefill token share with a heavy
// completion-time tail (a few episodes run an order of magnitude longer than
// the 75th percentile).
struct TrajectoryParams {
  double turn_stop_p = 0.25;  // P(episode ends after any given turn)
  int max_turns = 32;

  double prompt0_log_mean = 7.50, prompt0_log_sigma = 0.5;  // median ~1800 tokens
  double growth_log_mean = 6.20, growth_log_sigma = 0.8;    // median ~490 tokens/turn
  double decode_log_mean = 5.30, decode_log_sigma = 0.8;    // median ~200 tokens/turn
  double env_delay_mean_s = 8.0;                            // tool/env latency per turn

  int min_prompt0 = 64, max_prompt0 = 8192;
  int min_growth = 16, max_growth = 4096;
  int min_decode = 16, max_decode = 4096;
};

struct TurnSpec {
  int prompt_growth = 0;         // context appended before this turn (0 on turn 0)
  int decode_tokens = 0;         // tokens generated this turn
  sim::SimTime env_delay_us = 0; // environment latency after this turn

  bool operator==(const TurnSpec&) const = default;
};

struct TrajectorySpec {
  int group_id = 0;      // prompt group (GRPO-style): same task, different samples
  int idx_in_group = 0;
  int initial_prompt = 0;
  std::vector<TurnSpec> turns;

  int num_turns() const { return static_cast<int>(turns.size()); }
  int total_prompt_tokens() const;
  int total_decode_tokens() const;
  // Context length after the prompt of turn `i` has been appended (before its
  // decode output). Turn i decodes with context final_context_before(i).
  std::int64_t context_after_prompt(int turn) const;

  bool operator==(const TrajectorySpec&) const = default;
};

// num_groups * group_size specs; trajectory i belongs to group i / group_size.
// Every random quantity is drawn here, so a spec fully determines replay.
// Same (params, counts, seed) yields identical specs regardless of call order.
std::vector<TrajectorySpec> generate_trajectories(const TrajectoryParams& params,
                                                  int num_groups, int group_size,
                                                  std::uint64_t seed);

// Rough end-to-end duration of one trajectory on an uncontended GPU:
// incremental prefill per turn (prefix reuse assumed), decode at a typical
// rollout batch size, plus environment delays between turns.
sim::SimTime estimate_duration_us(const TrajectorySpec& spec,
                                  const cost::LatencyProfile& profile,
                                  std::int64_t decode_batch_hint = 16);

// Share of tokens that enter prefill rather than decode, over a batch.
double prefill_token_share(const std::vector<TrajectorySpec>& specs);

}  // namespace coserve::workload
