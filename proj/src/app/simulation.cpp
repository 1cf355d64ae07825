#include "coserve/app/simulation.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <utility>

#include "coserve/metrics/csv.hpp"

namespace coserve::app {
namespace {

constexpr sim::SimTime kLeaseSweepUs = 1 * sim::kUsPerSec;
constexpr std::int64_t kPumpOnly = -1;  // Heartbeat payload: activation pump, no beats

// Adapts one executor to the scheduler's placement interface.
class GpuWorker final : public sched::WorkerPort {
 public:
  GpuWorker(exec::GpuExecutor* gpu, bool dedicated) : gpu_(gpu), dedicated_(dedicated) {}

  int worker_id() const override { return gpu_->gpu_id(); }
  bool dedicated_rollout() const override { return dedicated_; }

  void enqueue_turn(std::int64_t trajectory, int turn, std::int64_t context_tokens,
                    std::int64_t decode_tokens, sim::SimTime now) override {
    gpu_->enqueue_rollout_turn(trajectory, turn, context_tokens, decode_tokens, now);
  }
  bool cancel_turn(std::int64_t trajectory) override { return gpu_->cancel_rollout(trajectory); }

  std::int64_t rollout_kv_pages() const override { return gpu_->kvc().rollout_used(); }
  bool rollout_eligible() const override {
    return gpu_->kvc().budget_state() != mem::BudgetState::Frozen;
  }
  double mean_serving_kv_usage(sim::SimTime now, sim::SimTime window) const override {
    return gpu_->kvc().mean_serving_usage(now, window);
  }
  void on_step_boundary(sim::SimTime now) override { gpu_->on_step_boundary(now); }

 private:
  exec::GpuExecutor* gpu_;
  bool dedicated_;
};

sim::EventKind completion_kind(exec::ExecKind k) {
  return (k == exec::ExecKind::ServingPrefill || k == exec::ExecKind::RolloutPrefill)
             ? sim::EventKind::TickPrefiller
             : sim::EventKind::TickDecoder;
}

std::string join_gaps(const std::vector<sim::SimTime>& gaps) {
  std::string out;
  for (std::size_t i = 0; i < gaps.size(); i++) {
    if (i) out += ';';
    out += std::to_string(gaps[i]);
  }
  return out;
}

}  // namespace

double SimulationResult::mean_rollout_time_s() const {
  if (steps.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : steps) sum += static_cast<double>(s.rollout_time_us);
  return sum / (1e6 * static_cast<double>(steps.size()));
}

double SimulationResult::mean_step_time_s() const {
  if (steps.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : steps) sum += static_cast<double>(s.step_time_us);
  return sum / (1e6 * static_cast<double>(steps.size()));
}

std::int64_t SimulationResult::rollout_tokens() const {
  std::int64_t sum = 0;
  for (const auto& s : steps) sum += s.tokens_in + s.tokens_out;
  return sum;
}

std::int64_t SimulationResult::total(std::int64_t GpuRunStats::* field) const {
  std::int64_t sum = 0;
  for (const auto& g : gpus) sum += g.*field;
  return sum;
}

Simulation::Simulation(const ScenarioConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  book_ = cost::ProfileBook::load(resolve_path(cfg_.cluster.profile, cfg_.base_dir));
  for (const auto& model : {cfg_.cluster.serving_model, cfg_.cluster.rollout_model}) {
    if (!book_.has(model, cfg_.cluster.gpu_class)) {
      throw ScenarioError("profile has no entry for model '" + model + "' on gpu class '" +
                          cfg_.cluster.gpu_class + "'");
    }
  }
  build_trace();
  build_gpus();
  build_scheduler();
}

Simulation::~Simulation() = default;

void Simulation::build_trace() {
  const auto& tc = cfg_.serving.trace;
  if (tc.kind == "none") return;
  if (tc.kind == "file") {
    trace_ = workload::load_serving_trace(resolve_path(tc.path, cfg_.base_dir), tc.time_scale,
                                          tc.rate_scale, rng_.stream("trace-file").next_u64());
  } else {
    trace_ = workload::synth_bursty_trace(tc.bursty, rng_.stream("trace-bursty").next_u64());
  }
  if (!trace_.empty()) trace_peak_to_mean_ = workload::peak_to_mean(trace_, sim::kUsPerSec);
}

void Simulation::build_gpus() {
  const int total = cfg_.cluster.serving_gpus + cfg_.cluster.rollout_gpus;
  const auto& serving_prof = book_.get(cfg_.cluster.serving_model, cfg_.cluster.gpu_class);
  const auto& rollout_prof = book_.get(cfg_.cluster.rollout_model, cfg_.cluster.gpu_class);

  stats_.resize(static_cast<std::size_t>(total));
  for (int g = 0; g < total; g++) {
    exec::ExecutorConfig ec;
    ec.role = exec::InstanceRole::Colocated;
    ec.admission = cfg_.serving.admission;
    ec.slo = cfg_.serving.slo;
    ec.chunk_tokens = cfg_.rollout.chunk_tokens;
    ec.stall_timeout_us = cfg_.rollout.stall_timeout_us;
    ec.safety_margin_us = cfg_.rollout.safety_margin_us;
    ec.exec_jitter = cfg_.exec_jitter;
    ec.serving_profile = &serving_prof;
    ec.rollout_profile = &rollout_prof;

    exec::ExecutorCallbacks cb;
    cb.on_serving_token = [this](std::int64_t id, sim::SimTime t, bool first) {
      if (first) {
        lat_.on_first_token(id, t);
      } else {
        lat_.on_token(id, t);
      }
    };
    cb.on_request_done = [this, g](std::int64_t id, sim::SimTime t) {
      lat_.on_done(id);
      const auto& s = lat_.samples().back();
      std::string fields = "req=" + std::to_string(id) + ",ttft_us=" + std::to_string(s.ttft_us);
      if (!s.tpot_us.empty()) fields += ",gaps_us=" + join_gaps(s.tpot_us);
      log_.append(t, "request_done", fields);
      stats_[static_cast<std::size_t>(g)].requests_served++;
    };
    cb.on_turn_complete = [this, g](std::int64_t traj, int turn, sim::SimTime t) {
      (void)turn;
      sched_->on_turn_complete(traj, g, t);
    };
    cb.on_stall_drop = [this, g](std::int64_t traj, int turn, sim::SimTime t) {
      (void)turn;
      stats_[static_cast<std::size_t>(g)].stall_drops++;
      sched_->on_stall_drop(traj, g, t);
    };
    cb.on_rollout_abort = [this, g](std::int64_t traj, int turn, sim::SimTime t) {
      (void)turn;
      stats_[static_cast<std::size_t>(g)].rollout_aborts++;
      sched_->on_rollout_abort(traj, g, t);
    };
    cb.on_memory_cut = [this, g](const mem::CutReport& cut, sim::SimTime t) {
      stats_[static_cast<std::size_t>(g)].memory_cuts++;
      log_.append(t, "memory_cut",
                  "gpu=" + std::to_string(g) + ",old_budget=" + std::to_string(cut.old_budget) +
                      ",new_budget=" + std::to_string(cut.new_budget) +
                      ",aborted=" + std::to_string(cut.aborted_trajectories.size()) +
                      ",freed_pages=" + std::to_string(cut.freed_pages));
    };
    cb.on_rollout_admitted = [this, g](const exec::AdmissionDecision& d) {
      if (on_admission) on_admission(g, d);
    };

    auto* jitter = &rng_.stream("exec-jitter-" + std::to_string(g));
    gpus_.push_back(std::make_unique<exec::GpuExecutor>(g, ec, cfg_.memory, std::move(cb), jitter));
    stats_[static_cast<std::size_t>(g)].gpu_id = g;
    stats_[static_cast<std::size_t>(g)].dedicated_rollout = g >= cfg_.cluster.serving_gpus;
  }
}

void Simulation::build_scheduler() {
  sched::SchedulerCallbacks scb;
  scb.schedule_turn_ready = [this](sim::SimTime at, std::int64_t traj) {
    engine_.schedule(sim::EventKind::RolloutTurnReady, at, traj);
  };
  scb.on_trajectory_done = [this](std::int64_t traj, int group, sim::SimTime t) {
    (void)group;
    group_member_done(traj, t);
  };
  sched_ = std::make_unique<sched::RolloutScheduler>(cfg_.scheduler, std::move(scb));
  for (auto& g : gpus_) {
    const bool dedicated = g->gpu_id() >= cfg_.cluster.serving_gpus;
    ports_.push_back(std::make_unique<GpuWorker>(g.get(), dedicated));
    sched_->add_worker(ports_.back().get(), 0);
  }
}

void Simulation::tick_all(sim::SimTime now) {
  for (auto& g : gpus_) {
    if (g->busy()) continue;
    if (auto launch = g->tick(now)) {
      engine_.schedule(completion_kind(launch->kind), launch->start + launch->duration,
                       g->gpu_id());
    }
  }
}

void Simulation::handle(const sim::SimEvent& ev) {
  const sim::SimTime now = ev.fire_at;
  last_event_t_ = now;
  switch (ev.kind) {
    case sim::EventKind::ServingArrival: {
      const auto& rec = trace_[static_cast<std::size_t>(ev.a)];
      const int g = static_cast<int>(ev.a % cfg_.cluster.serving_gpus);
      const std::int64_t req_id = ev.a + 1;
      lat_.on_arrival(req_id, now);
      gpus_[static_cast<std::size_t>(g)]->on_serving_arrival(req_id, rec.prompt_tokens,
                                                             rec.output_tokens, now);
      arrivals_done_++;
      break;
    }
    case sim::EventKind::RolloutTurnReady:
      sched_->on_turn_ready(ev.a, now);
      break;
    case sim::EventKind::TickPrefiller:
    case sim::EventKind::TickDecoder: {
      auto& g = *gpus_.at(static_cast<std::size_t>(ev.a));
      if (!g.busy() || g.busy_until() != now) {
        throw ScenarioError("stray completion event for gpu " + std::to_string(ev.a));
      }
      g.complete(now);
      break;
    }
    case sim::EventKind::LeaseExpiry:
      for (auto& g : gpus_) g->expire_leases(now);
      if (periodic_needed()) engine_.schedule(sim::EventKind::LeaseExpiry, now + kLeaseSweepUs);
      break;
    case sim::EventKind::Heartbeat: {
      if (ev.a == kPumpOnly) {
        sched_->pump(now);
        break;
      }
      for (auto& p : ports_) sched_->on_heartbeat(p->worker_id(), now);
      sched_->check_health(now);
      sched_->pump(now);
      for (auto& g : gpus_) g->detect_stalls(now);
      if (periodic_needed()) {
        engine_.schedule(sim::EventKind::Heartbeat, now + cfg_.scheduler.heartbeat_period_us);
      }
      break;
    }
    case sim::EventKind::StepBoundary:
      on_step_boundary_event(static_cast<int>(ev.a), now);
      break;
    case sim::EventKind::TransferComplete:
      log_.append(now, "weight_push",
                  "step=" + std::to_string(ev.a) +
                      ",sync_us=" + std::to_string(cfg_.step_phases.cross_sync_us));
      break;
  }
  if (rollout_done_pending_) finalize_rollout(now);
  tick_all(now);
  if (after_event) after_event(*this, ev);
}

void Simulation::on_step_boundary_event(int step, sim::SimTime now) {
  if (step > 0) {
    metrics::StepMetrics m;
    m.step_index = step - 1;
    m.rollout_time_us = rollout_us_;
    m.step_time_us = now - step_start_;
    m.tokens_in = sum_prefilled() - tokens_in_base_;
    m.tokens_out = sum_decoded() - tokens_out_base_;
    m.trajectories_launched = launched_trajs_;
    m.trajectories_accepted = accepted_groups_ * cfg_.rollout.group_size;
    m.trajectories_dropped = dropped_trajs_;
    m.trajectories_rerouted = static_cast<int>(sched_->total_reroutes() - reroute_base_);
    steps_done_.push_back(m);
    log_.append(now, "step_end",
                "step=" + std::to_string(m.step_index) +
                    ",rollout_us=" + std::to_string(m.rollout_time_us) +
                    ",step_us=" + std::to_string(m.step_time_us) +
                    ",tokens_in=" + std::to_string(m.tokens_in) +
                    ",tokens_out=" + std::to_string(m.tokens_out) +
                    ",launched=" + std::to_string(m.trajectories_launched) +
                    ",accepted=" + std::to_string(m.trajectories_accepted) +
                    ",dropped=" + std::to_string(m.trajectories_dropped) +
                    ",rerouted=" + std::to_string(m.trajectories_rerouted));
  }
  if (step >= cfg_.steps) {
    final_boundary_ = true;
    return;
  }
  start_step(step, now);
}

void Simulation::start_step(int step, sim::SimTime now) {
  cur_step_ = step;
  step_start_ = now;
  in_rollout_ = true;
  rollout_done_pending_ = false;
  rollout_us_ = 0;
  next_group_ = 0;
  launched_trajs_ = accepted_groups_ = dropped_trajs_ = 0;
  tokens_in_base_ = sum_prefilled();
  tokens_out_base_ = sum_decoded();
  reroute_base_ = sched_->total_reroutes();
  step_trajs_.clear();
  group_left_.clear();

  const auto before = sched_->borrowed_workers();
  sched_->on_step_start(step, now);
  bool fresh_borrow = false;
  for (int w : sched_->borrowed_workers()) {
    if (std::find(before.begin(), before.end(), w) != before.end()) continue;
    fresh_borrow = true;
    overhead_.add_preemption(1, cfg_.scheduler.activation_delay_us);
    log_.append(now, "gpu_recovery",
                "gpus=1,recovery_us=" + std::to_string(cfg_.scheduler.activation_delay_us) +
                    ",worker=" + std::to_string(w));
  }
  if (fresh_borrow && cfg_.scheduler.activation_delay_us > 0) {
    engine_.schedule(sim::EventKind::Heartbeat, now + cfg_.scheduler.activation_delay_us,
                     kPumpOnly);
  }

  workload::StepPlan plan;
  plan.step_index = step;
  plan.mode = cfg_.rollout.mode;
  plan.target_groups = cfg_.rollout.target_groups;
  plan.group_size = cfg_.rollout.group_size;
  plan.success_prob = cfg_.rollout.success_prob;
  plan.max_launched_groups = cfg_.rollout.max_launched_groups;
  controller_.emplace(plan, rng_.stream("step-ctrl-" + std::to_string(step)).next_u64());
  specs_ = workload::generate_trajectories(cfg_.rollout.trajectory,
                                           cfg_.rollout.max_launched_groups,
                                           cfg_.rollout.group_size,
                                           rng_.stream("step-traj-" + std::to_string(step)).next_u64());
  launch_groups(controller_->take_initial_launch(), now);
  if (controller_->done()) rollout_done_pending_ = true;
}

void Simulation::launch_groups(int n, sim::SimTime now) {
  for (int i = 0; i < n; i++) {
    if (next_group_ >= cfg_.rollout.max_launched_groups) break;
    const int group = next_group_++;
    group_left_[group] = cfg_.rollout.group_size;
    for (int k = 0; k < cfg_.rollout.group_size; k++) {
      const auto& spec =
          specs_[static_cast<std::size_t>(group * cfg_.rollout.group_size + k)];
      const std::int64_t id = ++traj_seq_;
      traj_info_[id] = {cur_step_, group};
      step_trajs_.push_back(id);
      launched_trajs_++;
      sched_->add_trajectory(id, spec, now);
    }
  }
}

void Simulation::group_member_done(std::int64_t traj, sim::SimTime now) {
  const auto& info = traj_info_.at(traj);
  if (info.step != cur_step_ || !in_rollout_) return;
  auto it = group_left_.find(info.group);
  if (it == group_left_.end() || --(it->second) > 0) return;
  group_left_.erase(it);
  if (!controller_ || controller_->done()) {
    rollout_done_pending_ = true;
    return;
  }
  int launch_now = 0;
  if (controller_->on_group_complete(&launch_now)) accepted_groups_++;
  if (launch_now > 0) launch_groups(launch_now, now);
  if (controller_->done()) rollout_done_pending_ = true;
}

void Simulation::finalize_rollout(sim::SimTime now) {
  rollout_done_pending_ = false;
  if (!in_rollout_) return;
  in_rollout_ = false;

  // Leftover in-flight work is waste: queued and waiting trajectories go
  // first so the scheduler's drain cannot re-place them, then running ones.
  if (std::getenv("COSERVE_DEBUG_FINALIZE")) {
    for (auto id : step_trajs_) {
      const auto& tr = sched_->trajectory(id);
      if (tr.status != sched::TrajStatus::Done) {
        std::fprintf(stderr, "finalize t=%lld step=%d traj=%lld status=%s turn=%d/%zu group=%d\n",
                     (long long)now, cur_step_, (long long)id,
                     sched::traj_status_name(tr.status), tr.turn_index, tr.spec.turns.size(),
                     traj_info_.at(id).group);
      }
    }
  }
  for (auto id : step_trajs_) {
    const auto st = sched_->trajectory(id).status;
    if (st == sched::TrajStatus::Queued || st == sched::TrajStatus::WaitingEnv ||
        st == sched::TrajStatus::Pending) {
      sched_->drop_trajectory(id, now);
      dropped_trajs_++;
    }
  }
  for (auto id : step_trajs_) {
    const auto st = sched_->trajectory(id).status;
    if (st != sched::TrajStatus::Done && st != sched::TrajStatus::Dropped) {
      sched_->drop_trajectory(id, now);
      dropped_trajs_++;
    }
  }

  rollout_us_ = now - step_start_;
  workload::StepPhases ph;
  ph.rollout_us = rollout_us_;
  ph.training_us = cfg_.step_phases.training_us;
  ph.intra_sync_us = cfg_.step_phases.intra_sync_us;
  ph.cross_sync_us = cfg_.step_phases.cross_sync_us;
  ph.overlap_window_us = cfg_.step_phases.overlap_window_us;
  engine_.schedule(sim::EventKind::StepBoundary, step_start_ + workload::step_total_us(ph),
                   cur_step_ + 1);
  if (cfg_.step_phases.cross_sync_us > 0) {
    engine_.schedule(sim::EventKind::TransferComplete,
                     now + cfg_.step_phases.training_us + cfg_.step_phases.intra_sync_us +
                         cfg_.step_phases.cross_sync_us,
                     cur_step_);
  }
}

bool Simulation::periodic_needed() const {
  if (!final_boundary_) return true;
  if (arrivals_done_ < trace_.size()) return true;
  if (lat_.open_requests() > 0) return true;
  for (const auto& g : gpus_) {
    if (g->busy()) return true;
  }
  return false;
}

std::int64_t Simulation::sum_prefilled() const {
  std::int64_t sum = 0;
  for (const auto& g : gpus_) sum += g->rollout_tokens_prefilled();
  return sum;
}

std::int64_t Simulation::sum_decoded() const {
  std::int64_t sum = 0;
  for (const auto& g : gpus_) sum += g->rollout_tokens_decoded();
  return sum;
}

SimulationResult Simulation::run() {
  if (ran_) throw ScenarioError("simulation already ran");
  ran_ = true;

  engine_.set_handler([this](const sim::SimEvent& ev) { handle(ev); });
  for (std::size_t i = 0; i < trace_.size(); i++) {
    engine_.schedule(sim::EventKind::ServingArrival, trace_[i].t_arr,
                     static_cast<std::int64_t>(i));
  }
  engine_.schedule(sim::EventKind::StepBoundary, 0, 0);
  engine_.schedule(sim::EventKind::Heartbeat, cfg_.scheduler.heartbeat_period_us, 0);
  engine_.schedule(sim::EventKind::LeaseExpiry, kLeaseSweepUs, 0);

  sim::SimTime horizon = 0;
  int rounds = 0;
  while (engine_.pending() > 0) {
    horizon += 600 * sim::kUsPerSec;
    engine_.run_until(horizon);
    if (++rounds > 1000) throw ScenarioError("scenario did not quiesce within the horizon");
  }

  const auto rep = metrics::slo_report(lat_.samples(), cfg_.serving.slo);
  overhead_.total_gpu_time_us = static_cast<sim::SimTime>(gpus_.size()) * last_event_t_;
  log_.append(last_event_t_, "summary",
              "ttft_budget_us=" + std::to_string(cfg_.serving.slo.ttft_budget_us) +
                  ",tpot_budget_us=" + std::to_string(cfg_.serving.slo.tpot_budget_us) +
                  ",p99_ttft_us=" + std::to_string(rep.p99_ttft_us) +
                  ",p99_tpot_us=" + std::to_string(rep.p99_tpot_us) +
                  ",violated=" + std::to_string(rep.violated ? 1 : 0) +
                  ",preempted_gpu_time_us=" + std::to_string(overhead_.preempted_gpu_time_us) +
                  ",total_gpu_time_us=" + std::to_string(overhead_.total_gpu_time_us) +
                  ",steps=" + std::to_string(steps_done_.size()));

  SimulationResult res;
  res.scenario = cfg_.name;
  res.seed = cfg_.seed;
  res.wall_us = last_event_t_;
  res.latency = lat_.samples();
  res.slo_budgets = cfg_.serving.slo;
  res.slo = rep;
  res.steps = steps_done_;
  res.overhead = overhead_;
  for (std::size_t g = 0; g < gpus_.size(); g++) {
    stats_[g].rollout_tokens_prefilled = gpus_[g]->rollout_tokens_prefilled();
    stats_[g].rollout_tokens_decoded = gpus_[g]->rollout_tokens_decoded();
    stats_[g].prefix_hits = gpus_[g]->prefix_hits();
    stats_[g].prefix_misses = gpus_[g]->prefix_misses();
  }
  res.gpus = stats_;
  res.trace_peak_to_mean = trace_peak_to_mean_;
  res.event_log_digest = log_.digest();
  res.engine_digest = engine_.trace_digest();
  res.events_processed = engine_.processed();
  return res;
}

SimulationResult run_scenario(const ScenarioConfig& cfg, const std::string& out_dir) {
  Simulation sim(cfg);
  auto res = sim.run();
  if (out_dir.empty()) return res;

  std::filesystem::create_directories(out_dir);
  sim.log().write_to(out_dir + "/eventlog.csv");
  metrics::write_latency_csv(out_dir + "/latency.csv", res.latency);
  metrics::write_step_csv(out_dir + "/steps.csv", res.steps);

  char digest[32];
  std::snprintf(digest, sizeof digest, "%016llx",
                static_cast<unsigned long long>(res.event_log_digest));
  std::vector<std::pair<std::string, std::string>> kv = {
      {"scenario", res.scenario},
      {"seed", std::to_string(res.seed)},
      {"wall_us", std::to_string(res.wall_us)},
      {"requests", std::to_string(res.latency.size())},
      {"p99_ttft_us", std::to_string(res.slo.p99_ttft_us)},
      {"p99_tpot_us", std::to_string(res.slo.p99_tpot_us)},
      {"slo_violated", res.slo.violated ? "1" : "0"},
      {"steps", std::to_string(res.steps.size())},
      {"mean_rollout_time_s", metrics::format_fixed3(res.mean_rollout_time_s())},
      {"mean_step_time_s", metrics::format_fixed3(res.mean_step_time_s())},
      {"rollout_tokens", std::to_string(res.rollout_tokens())},
      {"prefix_hits", std::to_string(res.total(&GpuRunStats::prefix_hits))},
      {"memory_cuts", std::to_string(res.total(&GpuRunStats::memory_cuts))},
      {"rollout_aborts", std::to_string(res.total(&GpuRunStats::rollout_aborts))},
      {"stall_drops", std::to_string(res.total(&GpuRunStats::stall_drops))},
      {"preempted_gpu_time_us", std::to_string(res.overhead.preempted_gpu_time_us)},
      {"total_gpu_time_us", std::to_string(res.overhead.total_gpu_time_us)},
      {"alloc_overhead_ratio", metrics::format_fixed3(res.overhead.ratio())},
      {"eventlog_digest", digest},
  };
  metrics::write_summary_csv(out_dir + "/summary.csv", kv);
  return res;
}

}  // namespace coserve::app
