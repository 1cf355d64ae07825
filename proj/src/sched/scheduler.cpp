#include "coserve/sched/scheduler.hpp"

#include <algorithm>
#include <string>
#include <utility>

namespace coserve::sched {

const char* traj_status_name(TrajStatus s) {
  switch (s) {
    case TrajStatus::Pending: return "pending";
    case TrajStatus::Running: return "running";
    case TrajStatus::WaitingEnv: return "waiting_env";
    case TrajStatus::Queued: return "queued";
    case TrajStatus::Done: return "done";
    case TrajStatus::Dropped: return "dropped";
  }
  return "?";
}

RolloutScheduler::RolloutScheduler(const SchedulerConfig& cfg, SchedulerCallbacks cb)
    : cfg_(cfg), cb_(std::move(cb)) {
  if (cfg_.concurrency_cap < 1) throw SchedulerError("concurrency cap must be at least 1");
  if (cfg_.heartbeat_period_us <= 0) throw SchedulerError("heartbeat period must be positive");
  if (cfg_.heartbeat_k < 1) throw SchedulerError("heartbeat threshold must be at least 1");
  if (cfg_.borrow_cap < 0) throw SchedulerError("borrow cap cannot be negative");
  if (cfg_.activation_delay_us < 0) throw SchedulerError("activation delay cannot be negative");
  if (cfg_.usage_window_us <= 0) throw SchedulerError("usage window must be positive");
  if (!cb_.schedule_turn_ready) {
    throw SchedulerError("scheduler needs a schedule_turn_ready callback");
  }
}

void RolloutScheduler::add_worker(WorkerPort* worker, sim::SimTime now) {
  if (worker == nullptr) throw SchedulerError("null worker");
  const int id = worker->worker_id();
  if (workers_.count(id) != 0) {
    throw SchedulerError("duplicate worker id " + std::to_string(id));
  }
  WorkerState ws;
  ws.port = worker;
  ws.last_beat = now;
  workers_.emplace(id, std::move(ws));
}

void RolloutScheduler::add_trajectory(std::int64_t id, workload::TrajectorySpec spec,
                                      sim::SimTime now) {
  if (traj_.count(id) != 0) {
    throw SchedulerError("duplicate trajectory id " + std::to_string(id));
  }
  if (spec.turns.empty()) {
    throw SchedulerError("trajectory " + std::to_string(id) + " has no turns");
  }
  TrackedTrajectory t;
  t.id = id;
  t.spec = std::move(spec);
  auto [it, _] = traj_.emplace(id, std::move(t));
  dispatch(it->second, now, /*exclude=*/-1);
}

void RolloutScheduler::drop_trajectory(std::int64_t id, sim::SimTime now) {
  auto& t = tracked(id);
  switch (t.status) {
    case TrajStatus::Done:
    case TrajStatus::Dropped:
      throw SchedulerError("trajectory " + std::to_string(id) + " is already terminal");
    case TrajStatus::Running: {
      auto& ws = worker_state(t.running_on);
      ws.port->cancel_turn(id);
      ws.running.erase(id);
      t.running_on = -1;
      break;
    }
    case TrajStatus::Queued:
      queue_.erase(std::find(queue_.begin(), queue_.end(), id));
      break;
    case TrajStatus::Pending:
    case TrajStatus::WaitingEnv:
      break;
  }
  t.status = TrajStatus::Dropped;
  dropped_count_++;
  drain(now);
}

void RolloutScheduler::on_step_start(int step_index, sim::SimTime now) {
  (void)step_index;
  for (auto& [id, ws] : workers_) ws.port->on_step_boundary(now);

  // Borrow the serving GPUs with the lowest mean KV usage. Workers that stay
  // borrowed keep their activation time (warm); fresh ones wait out the delay.
  std::vector<std::pair<double, int>> candidates;
  for (auto& [id, ws] : workers_) {
    if (ws.port->dedicated_rollout()) continue;
    candidates.emplace_back(ws.port->mean_serving_kv_usage(now, cfg_.usage_window_us), id);
  }
  std::sort(candidates.begin(), candidates.end());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto& ws = workers_.at(candidates[i].second);
    const bool selected = i < static_cast<std::size_t>(cfg_.borrow_cap);
    if (selected && !ws.borrowed) {
      ws.borrowed = true;
      ws.active_from = now + cfg_.activation_delay_us;
    } else if (!selected) {
      ws.borrowed = false;
    }
  }
  drain(now);
}

void RolloutScheduler::on_turn_ready(std::int64_t trajectory, sim::SimTime now) {
  auto& t = tracked(trajectory);
  if (t.status == TrajStatus::Dropped) return;  // env response raced the drop
  if (t.status != TrajStatus::WaitingEnv) {
    throw SchedulerError("turn ready for trajectory " + std::to_string(trajectory) +
                         " in state " + traj_status_name(t.status));
  }
  dispatch(t, now, /*exclude=*/-1);
}

void RolloutScheduler::on_turn_complete(std::int64_t trajectory, int worker, sim::SimTime now) {
  auto& t = tracked(trajectory);
  if (t.status != TrajStatus::Running || t.running_on != worker) {
    throw SchedulerError("completion for trajectory " + std::to_string(trajectory) +
                         " from worker " + std::to_string(worker) + " in state " +
                         traj_status_name(t.status));
  }
  worker_state(worker).running.erase(trajectory);
  completed_turns_++;
  t.last_worker = worker;
  t.running_on = -1;
  const auto& turn = t.spec.turns[static_cast<std::size_t>(t.turn_index)];
  t.turn_index++;
  if (t.turn_index >= t.spec.num_turns()) {
    finish(t, now);
  } else {
    t.status = TrajStatus::WaitingEnv;
    cb_.schedule_turn_ready(now + turn.env_delay_us, trajectory);
  }
  drain(now);
}

void RolloutScheduler::on_stall_drop(std::int64_t trajectory, int worker, sim::SimTime now) {
  reroute(trajectory, worker, now, /*cancel=*/false);
  drain(now);
}

void RolloutScheduler::on_rollout_abort(std::int64_t trajectory, int worker, sim::SimTime now) {
  reroute(trajectory, worker, now, /*cancel=*/false);
  drain(now);
}

void RolloutScheduler::on_heartbeat(int worker, sim::SimTime now) {
  auto& ws = worker_state(worker);
  ws.last_beat = now;
  if (!ws.healthy) {
    ws.healthy = true;
    drain(now);
  }
}

void RolloutScheduler::check_health(sim::SimTime now) {
  for (auto& [id, ws] : workers_) {
    if (!ws.healthy) continue;
    if (now - ws.last_beat <= cfg_.heartbeat_k * cfg_.heartbeat_period_us) continue;
    ws.healthy = false;
    const std::vector<std::int64_t> victims(ws.running.begin(), ws.running.end());
    for (auto traj : victims) reroute(traj, id, now, /*cancel=*/true);
  }
}

void RolloutScheduler::pump(sim::SimTime now) { drain(now); }

const TrackedTrajectory& RolloutScheduler::trajectory(std::int64_t id) const {
  auto it = traj_.find(id);
  if (it == traj_.end()) {
    throw SchedulerError("unknown trajectory " + std::to_string(id));
  }
  return it->second;
}

std::int64_t RolloutScheduler::running_on_worker(int worker) const {
  return static_cast<std::int64_t>(worker_state(worker).running.size());
}

bool RolloutScheduler::worker_healthy(int worker) const { return worker_state(worker).healthy; }

bool RolloutScheduler::worker_borrowed(int worker) const {
  return worker_state(worker).borrowed;
}

bool RolloutScheduler::worker_active(int worker, sim::SimTime now) const {
  const auto& ws = worker_state(worker);
  if (ws.port->dedicated_rollout()) return true;
  return ws.borrowed && now >= ws.active_from;
}

std::vector<int> RolloutScheduler::borrowed_workers() const {
  std::vector<int> out;
  for (const auto& [id, ws] : workers_) {
    if (ws.borrowed) out.push_back(id);
  }
  return out;
}

bool RolloutScheduler::work_conserving(sim::SimTime now) const {
  for (auto id : queue_) {
    if (choose_worker(traj_.at(id), now, /*exclude=*/-1) >= 0) return false;
  }
  return true;
}

bool RolloutScheduler::all_terminal() const {
  for (const auto& [id, t] : traj_) {
    if (t.status != TrajStatus::Done && t.status != TrajStatus::Dropped) return false;
  }
  return true;
}

// ---- internals -------------------------------------------------------------------

RolloutScheduler::WorkerState& RolloutScheduler::worker_state(int worker) {
  auto it = workers_.find(worker);
  if (it == workers_.end()) throw SchedulerError("unknown worker " + std::to_string(worker));
  return it->second;
}

const RolloutScheduler::WorkerState& RolloutScheduler::worker_state(int worker) const {
  auto it = workers_.find(worker);
  if (it == workers_.end()) throw SchedulerError("unknown worker " + std::to_string(worker));
  return it->second;
}

TrackedTrajectory& RolloutScheduler::tracked(std::int64_t id) {
  auto it = traj_.find(id);
  if (it == traj_.end()) throw SchedulerError("unknown trajectory " + std::to_string(id));
  return it->second;
}

bool RolloutScheduler::has_capacity(const WorkerState& ws, sim::SimTime now) const {
  if (static_cast<int>(ws.running.size()) >= cfg_.concurrency_cap) return false;
  if (ws.port->dedicated_rollout()) return true;
  return ws.borrowed && now >= ws.active_from && ws.port->rollout_eligible();
}

int RolloutScheduler::choose_worker(const TrackedTrajectory& t, sim::SimTime now,
                                    int exclude) const {
  const bool revisit = t.last_worker >= 0 && t.last_worker != exclude;
  if (revisit) {
    const auto& last = worker_state(t.last_worker);
    if (!cfg_.turn_wise) {
      // Pinned mode: wait for the anchor worker as long as it is healthy.
      if (last.healthy) return has_capacity(last, now) ? t.last_worker : -1;
    } else if (cfg_.affinity && last.healthy && has_capacity(last, now)) {
      return t.last_worker;
    }
  }

  int best = -1;
  std::int64_t best_load = 0;
  for (const auto& [id, ws] : workers_) {
    if (!ws.port->dedicated_rollout() || !ws.healthy || id == exclude) continue;
    if (!has_capacity(ws, now)) continue;
    const auto load = static_cast<std::int64_t>(ws.running.size());
    if (best < 0 || load < best_load) {
      best = id;
      best_load = load;
    }
  }
  if (best >= 0) return best;

  for (const auto& [id, ws] : workers_) {
    if (ws.port->dedicated_rollout() || !ws.healthy || id == exclude) continue;
    if (!has_capacity(ws, now)) continue;
    const auto load = ws.port->rollout_kv_pages();
    if (best < 0 || load < best_load) {
      best = id;
      best_load = load;
    }
  }
  return best;
}

void RolloutScheduler::dispatch(TrackedTrajectory& t, sim::SimTime now, int exclude) {
  const int worker = choose_worker(t, now, exclude);
  if (worker < 0) {
    t.status = TrajStatus::Queued;
    t.running_on = -1;
    queue_.push_back(t.id);
    queue_entries_++;
    if (cb_.on_queued) cb_.on_queued(t.id, t.turn_index, now);
    return;
  }
  place(t, worker, now);
}

void RolloutScheduler::place(TrackedTrajectory& t, int worker, sim::SimTime now) {
  auto& ws = worker_state(worker);
  ws.running.insert(t.id);
  t.status = TrajStatus::Running;
  t.running_on = worker;
  total_dispatches_++;
  if (worker == t.last_worker) affinity_placements_++;
  if (cb_.on_dispatch) cb_.on_dispatch(t.id, t.turn_index, worker, now);
  // State is settled before the port call: a worker that completes the turn
  // synchronously re-enters the scheduler through on_turn_complete.
  const auto& turn = t.spec.turns[static_cast<std::size_t>(t.turn_index)];
  ws.port->enqueue_turn(t.id, t.turn_index, t.spec.context_after_prompt(t.turn_index),
                        turn.decode_tokens, now);
}

void RolloutScheduler::reroute(std::int64_t trajectory, int worker, sim::SimTime now,
                               bool cancel) {
  auto it = traj_.find(trajectory);
  if (it == traj_.end()) return;
  auto& t = it->second;
  // A signal for a turn the trajectory no longer runs there is stale: the
  // reroute already happened through another path.
  if (t.status != TrajStatus::Running || t.running_on != worker) return;
  auto& ws = worker_state(worker);
  if (cancel) ws.port->cancel_turn(trajectory);
  ws.running.erase(trajectory);
  t.running_on = -1;
  t.reroutes++;
  total_reroutes_++;
  dispatch(t, now, /*exclude=*/worker);
}

void RolloutScheduler::finish(TrackedTrajectory& t, sim::SimTime now) {
  t.status = TrajStatus::Done;
  done_count_++;
  if (cb_.on_trajectory_done) cb_.on_trajectory_done(t.id, t.spec.group_id, now);
}

void RolloutScheduler::drain(sim::SimTime now) {
  if (draining_) return;
  draining_ = true;
  bool placed = true;
  while (placed) {
    placed = false;
    for (auto it = queue_.begin(); it != queue_.end(); ++it) {
      auto& t = traj_.at(*it);
      const int worker = choose_worker(t, now, /*exclude=*/-1);
      if (worker < 0) continue;
      queue_.erase(it);
      place(t, worker, now);
      placed = true;
      break;  // placement shifts loads; rescan from the front
    }
  }
  draining_ = false;
}

}  // namespace coserve::sched
