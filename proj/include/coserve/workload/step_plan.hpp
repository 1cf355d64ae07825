#pragma once

#include <cstdint>
#include <stdexcept>

#include "coserve/sim/rng.hpp"
#include "coserve/sim/time.hpp"

namespace coserve::workload {

enum class StepMode : std::uint8_t {
  FixedBatch,          // dispatch target_groups and wait for all of them
  RedundantSampling,   // replace rejected groups until target_groups accepted
};

struct StepPlan {
  int step_index = 0;
  StepMode mode = StepMode::FixedBatch;
  int target_groups = 8;  // groups the optimizer consumes per step
  int group_size = 4;     // trajectories per group
  // P(a completed group is usable, i.e. its rewards have non-zero variance).
  // Only consulted in RedundantSampling mode.
  double success_prob = 1.0;
  // Hard cap on total groups launched in one step, so a step terminates even
  // under pathological success probabilities.
  int max_launched_groups = 512;
};

struct StepControllerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Group launch/accept bookkeeping for one training step. The driver owns
// trajectory dispatch; this class answers "launch how many now?" and "is the
// step done?". Acceptance is decided by a seeded oracle: whether a group's
// rewards carry learning signal is a property of the environment, not of
// scheduling, so it can be sampled up front per (seed, step, group).
//
// RedundantSampling starts target_groups and replaces one-for-one on
// rejection, so in-flight + accepted stays pinned at the target until the
// step resolves and total launches follow a negative binomial with mean
// target / success_prob.
class StepController {
 public:
  StepController(const StepPlan& plan, std::uint64_t seed);

  // Groups to dispatch immediately at step start. Call once.
  int take_initial_launch();

  // Records a completed group; returns whether it was accepted. Returns the
  // number of replacement groups to dispatch via out param.
  bool on_group_complete(int* launch_now);

  bool done() const;

  int launched() const { return launched_; }
  int completed() const { return completed_; }
  int accepted() const { return accepted_; }
  int in_flight() const { return launched_ - completed_; }
  double launch_ratio() const {
    return static_cast<double>(launched_) / static_cast<double>(plan_.target_groups);
  }
  const StepPlan& plan() const { return plan_; }

 private:
  int replacements_needed() const;

  StepPlan plan_;
  sim::RngStream oracle_;
  bool started_ = false;
  int launched_ = 0;
  int completed_ = 0;
  int accepted_ = 0;
};

// Wall-clock composition of one training step. Rollout, training compute and
// intra-cluster weight sync are serial; the cross-cluster weight push runs
// concurrently with the surrounding pipeline and only its overhang beyond the
// overlap window extends the step.
struct StepPhases {
  sim::SimTime rollout_us = 0;
  sim::SimTime training_us = 0;
  sim::SimTime intra_sync_us = 0;
  sim::SimTime cross_sync_us = 0;
  sim::SimTime overlap_window_us = 0;
};

sim::SimTime exposed_cross_sync_us(sim::SimTime cross_sync_us,
                                   sim::SimTime overlap_window_us);
sim::SimTime step_total_us(const StepPhases& p);

}  // namespace coserve::workload
