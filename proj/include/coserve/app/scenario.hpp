#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "coserve/exec/executor.hpp"
#include "coserve/mem/kvc.hpp"
#include "coserve/metrics/latency.hpp"
#include "coserve/sched/scheduler.hpp"
#include "coserve/sim/time.hpp"
#include "coserve/workload/step_plan.hpp"
#include "coserve/workload/trace.hpp"
#include "coserve/workload/trajectory.hpp"

namespace coserve::app {

struct ScenarioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Where serving arrivals come from.
struct TraceConfig {
  std::string kind = "bursty";  // "bursty" | "file" | "none"
  std::string path;             // "file": CSV, resolved against the scenario dir
  double time_scale = 1.0;      // "file" only
  double rate_scale = 1.0;      // "file" only
  workload::BurstyTraceParams bursty;
};

struct ServingConfig {
  exec::AdmissionMode admission = exec::AdmissionMode::Dual;
  metrics::SloConfig slo;
  TraceConfig trace;
};

struct RolloutConfig {
  workload::StepMode mode = workload::StepMode::FixedBatch;
  int target_groups = 4;
  int group_size = 4;
  double success_prob = 1.0;     // redundant-sampling acceptance probability
  int max_launched_groups = 64;  // hard stop per step
  int chunk_tokens = 512;
  sim::SimTime stall_timeout_us = 2 * sim::kUsPerSec;
  sim::SimTime safety_margin_us = 0;
  workload::TrajectoryParams trajectory;
};

// Non-rollout pipeline phases of one optimizer step. Cross-cluster weight
// sync can hide inside the overlap window; only the excess extends the step.
struct StepPhaseConfig {
  sim::SimTime training_us = 5 * sim::kUsPerSec;
  sim::SimTime intra_sync_us = 1 * sim::kUsPerSec;
  sim::SimTime cross_sync_us = 3 * sim::kUsPerSec;
  sim::SimTime overlap_window_us = 10 * sim::kUsPerSec;
};

struct ClusterConfig {
  int serving_gpus = 2;  // gpu ids [0, serving_gpus): borrowable, run the trace
  int rollout_gpus = 1;  // gpu ids [serving_gpus, ...): dedicated to rollout
  std::string profile = "profiles/default.prof";
  std::string serving_model = "serve-7b";
  std::string rollout_model = "roll-8b";
  std::string gpu_class = "sim-h";
};

struct ScenarioConfig {
  std::string name = "default";
  std::uint64_t seed = 1;
  int steps = 2;
  ClusterConfig cluster;
  ServingConfig serving;
  mem::KvcConfig memory;
  RolloutConfig rollout;
  sched::SchedulerConfig scheduler;
  StepPhaseConfig step_phases;
  double exec_jitter = 0.0;

  // Directory the config was loaded from ("" when parsed from a string);
  // relative profile/trace paths resolve against the cwd first, then this.
  std::string base_dir;

  void validate() const;  // throws ScenarioError
};

struct ScenarioVariant {
  std::string name;  // base name, or "<base>@<variant>"
  ScenarioConfig config;
};

// One scenario file: a base config plus named variants, each a set of
// {"/json/pointer": value} overrides applied to the base document.
struct ScenarioFile {
  ScenarioConfig base;
  std::vector<ScenarioVariant> variants;

  // Base first, then the variants.
  std::vector<ScenarioVariant> all() const;
};

ScenarioFile parse_scenario(const std::string& text, const std::string& origin,
                            const std::string& base_dir = "");
ScenarioFile load_scenario_file(const std::string& path);
ScenarioConfig load_scenario(const std::string& path);  // base config only

// path as-is when absolute or when it exists relative to the cwd; otherwise
// joined onto base_dir.
std::string resolve_path(const std::string& path, const std::string& base_dir);

}  // namespace coserve::app
