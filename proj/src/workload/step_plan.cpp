#include "coserve/workload/step_plan.hpp"

#include <algorithm>
#include <string>

namespace coserve::workload {

StepController::StepController(const StepPlan& plan, std::uint64_t seed)
    : plan_(plan),
      oracle_(sim::splitmix64(seed ^ sim::fnv1a64("step.oracle." +
                                                  std::to_string(plan.step_index)))) {
  if (plan_.target_groups <= 0) throw StepControllerError("target_groups must be positive");
  if (plan_.group_size <= 0) throw StepControllerError("group_size must be positive");
  if (plan_.max_launched_groups < plan_.target_groups) {
    throw StepControllerError("max_launched_groups below target_groups");
  }
  if (plan_.mode == StepMode::RedundantSampling && plan_.success_prob <= 0.0) {
    throw StepControllerError("RedundantSampling needs success_prob > 0");
  }
}

int StepController::take_initial_launch() {
  if (started_) throw StepControllerError("initial launch already taken");
  started_ = true;
  launched_ = plan_.target_groups;
  return launched_;
}

int StepController::replacements_needed() const {
  if (plan_.mode != StepMode::RedundantSampling) return 0;
  const int missing = plan_.target_groups - accepted_ - in_flight();
  const int headroom = plan_.max_launched_groups - launched_;
  return std::clamp(missing, 0, std::max(0, headroom));
}

bool StepController::on_group_complete(int* launch_now) {
  if (!started_) throw StepControllerError("group completed before initial launch");
  if (in_flight() <= 0) throw StepControllerError("more completions than launches");
  completed_++;
  const bool accepted =
      plan_.mode == StepMode::FixedBatch || oracle_.bernoulli(plan_.success_prob);
  if (accepted) accepted_++;
  const int n = replacements_needed();
  launched_ += n;
  if (launch_now) *launch_now = n;
  return accepted;
}

bool StepController::done() const {
  if (!started_ || in_flight() > 0) return false;
  if (plan_.mode == StepMode::FixedBatch) return completed_ >= plan_.target_groups;
  return accepted_ >= plan_.target_groups || launched_ >= plan_.max_launched_groups;
}

sim::SimTime exposed_cross_sync_us(sim::SimTime cross_sync_us,
                                   sim::SimTime overlap_window_us) {
  return std::max<sim::SimTime>(0, cross_sync_us - overlap_window_us);
}

sim::SimTime step_total_us(const StepPhases& p) {
  return p.rollout_us + p.training_us + p.intra_sync_us +
         exposed_cross_sync_us(p.cross_sync_us, p.overlap_window_us);
}

}  // namespace coserve::workload
