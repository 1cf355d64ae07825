#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include "coserve/sim/time.hpp"
#include "coserve/workload/trajectory.hpp"

namespace coserve::sched {

struct SchedulerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class TrajStatus : std::uint8_t {
  Pending = 0,     // added, first turn not yet dispatched
  Running = 1,     // a turn is executing on some worker
  WaitingEnv = 2,  // turn done, environment response pending
  Queued = 3,      // a turn is ready but no worker can take it
  Done = 4,
  Dropped = 5,
};

const char* traj_status_name(TrajStatus s);

// What the scheduler needs to know about one GPU worker. Implemented by an
// adapter over a GpuExecutor in the full simulation and by fakes in tests.
class WorkerPort {
 public:
  virtual ~WorkerPort() = default;

  virtual int worker_id() const = 0;
  // Dedicated rollout GPUs take work unconditionally up to the concurrency
  // cap; serving GPUs only while borrowed, activated, and admission-eligible.
  virtual bool dedicated_rollout() const = 0;

  virtual void enqueue_turn(std::int64_t trajectory, int turn, std::int64_t context_tokens,
                            std::int64_t decode_tokens, sim::SimTime now) = 0;
  // True if the turn was still pending or in flight locally.
  virtual bool cancel_turn(std::int64_t trajectory) = 0;

  // Load metric for serving GPUs: KV pages currently held by rollout work.
  virtual std::int64_t rollout_kv_pages() const = 0;
  // Serving GPUs may refuse new turns outright (e.g. frozen memory budget).
  virtual bool rollout_eligible() const { return true; }
  // Mean serving KV usage over the trailing window; ranks borrow candidates.
  virtual double mean_serving_kv_usage(sim::SimTime now, sim::SimTime window) const {
    (void)now;
    (void)window;
    return 0.0;
  }
  // Step boundary hook (budget recompute on real executors).
  virtual void on_step_boundary(sim::SimTime now) { (void)now; }
};

struct SchedulerConfig {
  int concurrency_cap = 16;       // max concurrent trajectories per worker
  bool turn_wise = true;          // false: every turn waits for the last worker
  bool affinity = true;           // prefer the last worker when it has capacity
  int borrow_cap = 0;             // serving GPUs lent to rollout each step
  sim::SimTime heartbeat_period_us = sim::secs(1);
  int heartbeat_k = 3;            // missed beats before a worker is unhealthy
  sim::SimTime activation_delay_us = sim::secs(5);  // fresh borrow warm-up
  sim::SimTime usage_window_us = 3600 * sim::kUsPerSec;
};

struct SchedulerCallbacks {
  // Required: the environment response of a completed turn arrives at fire_at.
  std::function<void(sim::SimTime fire_at, std::int64_t trajectory)> schedule_turn_ready;
  std::function<void(std::int64_t trajectory, int group, sim::SimTime now)> on_trajectory_done;
  std::function<void(std::int64_t trajectory, int turn, int worker, sim::SimTime now)>
      on_dispatch;
  std::function<void(std::int64_t trajectory, int turn, sim::SimTime now)> on_queued;
};

struct TrackedTrajectory {
  std::int64_t id = 0;
  workload::TrajectorySpec spec;
  TrajStatus status = TrajStatus::Pending;
  int turn_index = 0;    // next turn to run (== spec turn count when Done)
  int last_worker = -1;  // worker that completed the most recent turn
  int running_on = -1;
  int reroutes = 0;
};

// Places every ready turn on a worker: the last worker when affine and free,
// else the least-loaded dedicated rollout GPU under the concurrency cap, else
// the least-loaded borrowed serving GPU, else the FIFO queue. Tracks worker
// health via heartbeats and reroutes work away from failed or preempted
// instances; a rerouted turn restarts from its beginning elsewhere.
class RolloutScheduler {
 public:
  RolloutScheduler(const SchedulerConfig& cfg, SchedulerCallbacks cb);

  // Workers must be registered before any trajectory references them.
  void add_worker(WorkerPort* worker, sim::SimTime now);
  void add_trajectory(std::int64_t id, workload::TrajectorySpec spec, sim::SimTime now);
  void drop_trajectory(std::int64_t id, sim::SimTime now);

  // Step boundary: budgets recompute everywhere, then borrowed serving GPUs
  // are (re)selected by lowest mean KV usage. A newly borrowed worker admits
  // nothing until the activation delay passes; a re-selected one stays warm.
  void on_step_start(int step_index, sim::SimTime now);

  // The environment response arrived; dispatch the next turn.
  void on_turn_ready(std::int64_t trajectory, sim::SimTime now);
  // A worker finished a turn. Worker identity is checked: late completions
  // from a worker the trajectory was rerouted away from are a protocol error.
  void on_turn_complete(std::int64_t trajectory, int worker, sim::SimTime now);

  // Local drop signals from a worker: the turn restarts somewhere else.
  void on_stall_drop(std::int64_t trajectory, int worker, sim::SimTime now);
  void on_rollout_abort(std::int64_t trajectory, int worker, sim::SimTime now);

  void on_heartbeat(int worker, sim::SimTime now);
  // Marks workers whose heartbeat lapsed k periods as unhealthy and reroutes
  // their running turns (cancelling them locally).
  void check_health(sim::SimTime now);

  // Re-drains the queue after an external capacity change (e.g. a borrowed
  // worker's activation delay elapsed).
  void pump(sim::SimTime now);

  const TrackedTrajectory& trajectory(std::int64_t id) const;
  const std::deque<std::int64_t>& queued() const { return queue_; }
  std::int64_t running_on_worker(int worker) const;
  bool worker_healthy(int worker) const;
  bool worker_borrowed(int worker) const;
  bool worker_active(int worker, sim::SimTime now) const;
  std::vector<int> borrowed_workers() const;

  // True iff every queued trajectory really has no admissible worker.
  bool work_conserving(sim::SimTime now) const;
  bool all_terminal() const;

  std::int64_t total_dispatches() const { return total_dispatches_; }
  std::int64_t affinity_placements() const { return affinity_placements_; }
  std::int64_t total_reroutes() const { return total_reroutes_; }
  std::int64_t queue_entries() const { return queue_entries_; }
  std::int64_t completed_turns() const { return completed_turns_; }
  std::int64_t done_count() const { return done_count_; }
  std::int64_t dropped_count() const { return dropped_count_; }

 private:
  struct WorkerState {
    WorkerPort* port = nullptr;
    bool healthy = true;
    sim::SimTime last_beat = 0;
    bool borrowed = false;
    sim::SimTime active_from = 0;
    std::set<std::int64_t> running;
  };

  WorkerState& worker_state(int worker);
  const WorkerState& worker_state(int worker) const;
  TrackedTrajectory& tracked(std::int64_t id);
  bool has_capacity(const WorkerState& ws, sim::SimTime now) const;
  int choose_worker(const TrackedTrajectory& t, sim::SimTime now, int exclude) const;
  void dispatch(TrackedTrajectory& t, sim::SimTime now, int exclude);
  void place(TrackedTrajectory& t, int worker, sim::SimTime now);
  void reroute(std::int64_t trajectory, int worker, sim::SimTime now, bool cancel);
  void finish(TrackedTrajectory& t, sim::SimTime now);
  void drain(sim::SimTime now);

  SchedulerConfig cfg_;
  SchedulerCallbacks cb_;
  std::map<int, WorkerState> workers_;
  std::map<std::int64_t, TrackedTrajectory> traj_;
  std::deque<std::int64_t> queue_;
  bool draining_ = false;  // re-entrancy guard: ports may call back synchronously

  std::int64_t total_dispatches_ = 0;
  std::int64_t affinity_placements_ = 0;
  std::int64_t total_reroutes_ = 0;
  std::int64_t queue_entries_ = 0;
  std::int64_t completed_turns_ = 0;
  std::int64_t done_count_ = 0;
  std::int64_t dropped_count_ = 0;
};

}  // namespace coserve::sched
