#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "coserve/app/scenario.hpp"
#include "coserve/cost/profile.hpp"
#include "coserve/exec/executor.hpp"
#include "coserve/metrics/event_log.hpp"
#include "coserve/metrics/latency.hpp"
#include "coserve/metrics/step_metrics.hpp"
#include "coserve/sched/scheduler.hpp"
#include "coserve/sim/engine.hpp"
#include "coserve/sim/rng.hpp"
#include "coserve/workload/step_plan.hpp"
#include "coserve/workload/trace.hpp"
#include "coserve/workload/trajectory.hpp"

namespace coserve::app {

struct GpuRunStats {
  int gpu_id = 0;
  bool dedicated_rollout = false;
  std::int64_t requests_served = 0;
  std::int64_t rollout_tokens_prefilled = 0;
  std::int64_t rollout_tokens_decoded = 0;
  std::int64_t prefix_hits = 0;
  std::int64_t prefix_misses = 0;
  std::int64_t memory_cuts = 0;
  std::int64_t rollout_aborts = 0;
  std::int64_t stall_drops = 0;
};

struct SimulationResult {
  std::string scenario;
  std::uint64_t seed = 0;
  sim::SimTime wall_us = 0;

  std::vector<metrics::LatencySample> latency;
  metrics::SloConfig slo_budgets;
  metrics::SloReport slo;
  std::vector<metrics::StepMetrics> steps;
  metrics::AllocationOverhead overhead;
  std::vector<GpuRunStats> gpus;

  double trace_peak_to_mean = 0.0;
  std::uint64_t event_log_digest = 0;
  std::uint64_t engine_digest = 0;
  std::uint64_t events_processed = 0;

  double mean_rollout_time_s() const;
  double mean_step_time_s() const;
  std::int64_t rollout_tokens() const;
  std::int64_t total(std::int64_t GpuRunStats::* field) const;
};

// One scenario run: a deterministic event loop over the serving executors,
// the rollout scheduler, and the per-step launch controller. Single-shot.
class Simulation {
 public:
  explicit Simulation(const ScenarioConfig& cfg);
  ~Simulation();
  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  // Optional probes; set before run(). after_event fires once per processed
  // event, after all synchronous effects settled.
  std::function<void(int gpu, const exec::AdmissionDecision&)> on_admission;
  std::function<void(Simulation&, const sim::SimEvent&)> after_event;

  SimulationResult run();

  // Live surfaces for probes and tests.
  const ScenarioConfig& config() const { return cfg_; }
  const metrics::EventLog& log() const { return log_; }
  int gpu_count() const { return static_cast<int>(gpus_.size()); }
  exec::GpuExecutor& gpu(int id) { return *gpus_.at(static_cast<std::size_t>(id)); }
  sched::RolloutScheduler& scheduler() { return *sched_; }
  const sim::SimEngine& engine() const { return engine_; }
  const std::vector<workload::ServingTraceRecord>& trace() const { return trace_; }

 private:
  void build_trace();
  void build_gpus();
  void build_scheduler();
  void handle(const sim::SimEvent& ev);
  void tick_all(sim::SimTime now);
  void on_step_boundary_event(int step, sim::SimTime now);
  void start_step(int step, sim::SimTime now);
  void launch_groups(int n, sim::SimTime now);
  void group_member_done(std::int64_t traj, sim::SimTime now);
  void finalize_rollout(sim::SimTime now);
  bool periodic_needed() const;
  std::int64_t sum_prefilled() const;
  std::int64_t sum_decoded() const;

  ScenarioConfig cfg_;
  cost::ProfileBook book_;
  sim::RngHub rng_;
  sim::SimEngine engine_;
  metrics::LatencyCollector lat_;
  metrics::EventLog log_;
  metrics::AllocationOverhead overhead_;

  std::vector<std::unique_ptr<exec::GpuExecutor>> gpus_;
  std::vector<std::unique_ptr<sched::WorkerPort>> ports_;
  std::unique_ptr<sched::RolloutScheduler> sched_;
  std::vector<GpuRunStats> stats_;

  std::vector<workload::ServingTraceRecord> trace_;
  double trace_peak_to_mean_ = 0.0;
  std::size_t arrivals_done_ = 0;

  // Current-step state.
  std::optional<workload::StepController> controller_;
  std::vector<workload::TrajectorySpec> specs_;
  int cur_step_ = -1;
  sim::SimTime step_start_ = 0;
  sim::SimTime rollout_us_ = 0;
  bool in_rollout_ = false;
  bool rollout_done_pending_ = false;
  int next_group_ = 0;
  int launched_trajs_ = 0;
  int accepted_groups_ = 0;
  int dropped_trajs_ = 0;
  std::int64_t reroute_base_ = 0;
  std::int64_t tokens_in_base_ = 0;
  std::int64_t tokens_out_base_ = 0;
  std::vector<std::int64_t> step_trajs_;
  std::map<int, int> group_left_;  // group -> members still running

  struct TrajInfo {
    int step = 0;
    int group = 0;
  };
  std::map<std::int64_t, TrajInfo> traj_info_;
  std::int64_t traj_seq_ = 0;

  std::vector<metrics::StepMetrics> steps_done_;
  bool final_boundary_ = false;
  sim::SimTime last_event_t_ = 0;
  bool ran_ = false;
};

// Runs the scenario; when out_dir is non-empty, writes eventlog.csv,
// latency.csv, steps.csv, and summary.csv into it.
SimulationResult run_scenario(const ScenarioConfig& cfg, const std::string& out_dir = "");

}  // namespace coserve::app
