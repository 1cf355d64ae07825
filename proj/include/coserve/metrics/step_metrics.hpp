#pragma once

#include <cstdint>

#include "coserve/metrics/percentile.hpp"
#include "coserve/sim/time.hpp"

namespace coserve::metrics {

struct StepMetrics {
  int step_index = 0;
  sim::SimTime rollout_time_us = 0;
  sim::SimTime step_time_us = 0;
  std::int64_t tokens_in = 0;
  std::int64_t tokens_out = 0;
  int trajectories_launched = 0;
  int trajectories_accepted = 0;
  int trajectories_dropped = 0;
  int trajectories_rerouted = 0;

  // Tokens moved per second of step wall time, exactly
  // (tokens_in + tokens_out) / step_time.
  double throughput_tok_s() const {
    if (step_time_us <= 0) return 0.0;
    return static_cast<double>(tokens_in + tokens_out) / sim::to_seconds(step_time_us);
  }
};

// GPU time lost to reallocation: each borrow/return of a GPU costs one
// recovery window during which that GPU does no useful work.
struct AllocationOverhead {
  sim::SimTime preempted_gpu_time_us = 0;  // sum over events of gpus * recovery
  sim::SimTime total_gpu_time_us = 0;      // gpus * wall time simulated

  void add_preemption(int gpus, sim::SimTime recovery_us) {
    preempted_gpu_time_us += static_cast<sim::SimTime>(gpus) * recovery_us;
  }

  double ratio() const {
    if (total_gpu_time_us <= 0) return 0.0;
    return static_cast<double>(preempted_gpu_time_us) / static_cast<double>(total_gpu_time_us);
  }

  // Overhead can never exceed the GPU time that exists.
  void validate() const {
    if (preempted_gpu_time_us < 0 || total_gpu_time_us < 0 ||
        preempted_gpu_time_us > total_gpu_time_us) {
      throw MetricsError("allocation overhead outside [0, 1]");
    }
  }
};

}  // namespace coserve::metrics
