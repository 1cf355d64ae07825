#include "coserve/exec/executor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>

namespace coserve::exec {
namespace {

std::string traj_str(std::int64_t id) { return "trajectory " + std::to_string(id); }
std::string req_str(std::int64_t id) { return "request " + std::to_string(id); }

}  // namespace

const char* role_name(InstanceRole r) {
  switch (r) {
    case InstanceRole::Prefiller: return "prefiller";
    case InstanceRole::Decoder: return "decoder";
    case InstanceRole::Colocated: return "colocated";
  }
  return "?";
}

const char* admission_mode_name(AdmissionMode m) {
  switch (m) {
    case AdmissionMode::Dual: return "dual";
    case AdmissionMode::TtftOnly: return "ttft-only";
    case AdmissionMode::TpotOnly: return "tpot-only";
    case AdmissionMode::Off: return "off";
  }
  return "?";
}

const char* exec_kind_name(ExecKind k) {
  switch (k) {
    case ExecKind::ServingPrefill: return "serving_prefill";
    case ExecKind::ServingDecode: return "serving_decode";
    case ExecKind::RolloutPrefill: return "rollout_prefill";
    case ExecKind::RolloutDecode: return "rollout_decode";
  }
  return "?";
}

GpuExecutor::GpuExecutor(int gpu_id, const ExecutorConfig& cfg,
                         const mem::KvcConfig& kvc_cfg, ExecutorCallbacks callbacks,
                         sim::RngStream* jitter_rng)
    : gpu_id_(gpu_id), cfg_(cfg), kvc_(kvc_cfg), cb_(std::move(callbacks)),
      jitter_rng_(jitter_rng) {
  if (!cfg_.serving_profile || !cfg_.rollout_profile) {
    throw ExecutorError("executor needs serving and rollout latency profiles");
  }
  if (cfg_.slo.ttft_budget_us <= 0 || cfg_.slo.tpot_budget_us <= 0) {
    throw ExecutorError("SLO budgets must be strictly positive");
  }
  if (cfg_.chunk_tokens <= 0) throw ExecutorError("chunk_tokens must be positive");
}

const ServingRequest& GpuExecutor::request(std::int64_t id) const {
  auto it = requests_.find(id);
  if (it == requests_.end()) throw ExecutorError(req_str(id) + " not on gpu");
  return it->second;
}

RolloutTask* GpuExecutor::find_task(std::int64_t trajectory) {
  for (auto& t : rollout_) {
    if (t.trajectory == trajectory) return &t;
  }
  return nullptr;
}

// ---- serving entry points --------------------------------------------------

void GpuExecutor::on_serving_arrival(std::int64_t id, std::int64_t prompt_tokens,
                                     std::int64_t target_output, sim::SimTime now) {
  if (cfg_.role == InstanceRole::Decoder) {
    throw ExecutorError("decoder instance cannot take fresh prefills");
  }
  if (prompt_tokens <= 0 || target_output <= 0) {
    throw ExecutorError(req_str(id) + " needs positive token counts");
  }
  ServingRequest req;
  req.id = id;
  req.t_arr = now;
  req.prompt_tokens = prompt_tokens;
  req.target_output = target_output;
  auto [it, inserted] = requests_.emplace(id, req);
  (void)it;
  if (!inserted) throw ExecutorError(req_str(id) + " already on gpu");
  prefill_queue_.push_back(id);
}

void GpuExecutor::on_decode_handoff(const ServingRequest& req, sim::SimTime now) {
  if (cfg_.role == InstanceRole::Prefiller) {
    throw ExecutorError("prefiller instance cannot take decode handoffs");
  }
  if (req.phase != RequestPhase::Decoding || req.tokens_emitted < 1 || req.t_last < req.t_arr) {
    throw ExecutorError(req_str(req.id) + " handoff without a completed prefill");
  }
  if (requests_.count(req.id)) throw ExecutorError(req_str(req.id) + " already on gpu");
  handoffs_.push_back(req);
  activate_handoffs(now);
}

void GpuExecutor::activate_handoffs(sim::SimTime now) {
  while (!handoffs_.empty()) {
    const auto& req = handoffs_.front();
    const std::int64_t ctx = req.prompt_tokens + req.tokens_emitted;
    auto pages = map_serving_pages(kvc_.pages_for_tokens(ctx), now);
    if (!pages) return;  // blocked: retried on a later tick
    requests_.emplace(req.id, req);
    serving_kv_[req.id] = ServingKv{std::move(*pages), ctx};
    active_decodes_.push_back(req.id);
    handoffs_.pop_front();
  }
}

// ---- rollout entry points ----------------------------------------------------

void GpuExecutor::enqueue_rollout_turn(std::int64_t trajectory, int turn,
                                       std::int64_t context_after_prompt,
                                       std::int64_t decode_tokens, sim::SimTime now) {
  if (find_task(trajectory)) throw ExecutorError(traj_str(trajectory) + " already queued");
  if (context_after_prompt <= 0 || decode_tokens < 0) {
    throw ExecutorError(traj_str(trajectory) + " needs positive context");
  }
  std::int64_t cached = 0;
  if (kvc_.lookup_prefix(static_cast<std::uint64_t>(trajectory), now)) {
    cached = kvc_.take_prefix(static_cast<std::uint64_t>(trajectory), trajectory);
    prefix_hits_++;
  } else {
    prefix_misses_++;
  }
  if (cached > context_after_prompt) {
    throw ExecutorError(traj_str(trajectory) + " cached prefix longer than its context");
  }
  RolloutTask task;
  task.trajectory = trajectory;
  task.turn = turn;
  task.kv_tokens = cached;
  task.prefill_target = context_after_prompt;
  task.decode_total = decode_tokens;
  task.enqueued_at = now;
  task.last_progress = now;
  if (!task.prefill_pending() && task.decode_total == 0) {
    finish_rollout_turn(task, now);  // degenerate: nothing to execute
    return;
  }
  rollout_.push_back(std::move(task));
}

bool GpuExecutor::cancel_rollout(std::int64_t trajectory) {
  for (auto it = rollout_.begin(); it != rollout_.end(); ++it) {
    if (it->trajectory == trajectory) {
      kvc_.release_rollout(trajectory);
      rollout_.erase(it);
      return true;
    }
  }
  return false;
}

// ---- slack -------------------------------------------------------------------

sim::SimTime GpuExecutor::predicted_prefill_us(std::int64_t prompt_tokens) const {
  return cfg_.serving_profile->prefill_us(prompt_tokens, cost::PrefillMode::Mono);
}

sim::SimTime GpuExecutor::serving_decode_cost() const {
  return cfg_.serving_profile->decode_step_us(
      static_cast<std::int64_t>(active_decodes_.size()));
}

sim::SimTime GpuExecutor::prefill_slack(std::int64_t req_id, sim::SimTime now) const {
  sim::SimTime cum = 0;
  for (auto qid : prefill_queue_) {
    cum += predicted_prefill_us(requests_.at(qid).prompt_tokens);
    if (qid == req_id) {
      return requests_.at(qid).t_arr + cfg_.slo.ttft_budget_us - now - cum;
    }
  }
  throw ExecutorError(req_str(req_id) + " not in prefill queue");
}

sim::SimTime GpuExecutor::min_prefill_slack(sim::SimTime now) const {
  sim::SimTime best = kSlackInf;
  sim::SimTime cum = 0;
  for (auto qid : prefill_queue_) {
    const auto& req = requests_.at(qid);
    cum += predicted_prefill_us(req.prompt_tokens);
    best = std::min(best, req.t_arr + cfg_.slo.ttft_budget_us - now - cum);
  }
  return best;
}

sim::SimTime GpuExecutor::decode_slack(std::int64_t req_id, sim::SimTime now) const {
  const auto& req = request(req_id);
  if (req.phase != RequestPhase::Decoding) {
    throw ExecutorError(req_str(req_id) + " is not decoding");
  }
  return req.t_last + cfg_.slo.tpot_budget_us - now - serving_decode_cost();
}

sim::SimTime GpuExecutor::min_decode_slack(sim::SimTime now) const {
  sim::SimTime best = kSlackInf;
  const sim::SimTime step = active_decodes_.empty() ? 0 : serving_decode_cost();
  for (auto id : active_decodes_) {
    best = std::min(best, requests_.at(id).t_last + cfg_.slo.tpot_budget_us - now - step);
  }
  return best;
}

// ---- admission -----------------------------------------------------------------

bool GpuExecutor::admit_rollout(sim::SimTime est_cost, std::int64_t kv_delta_pages,
                                sim::SimTime now, AdmissionDecision* decision) const {
  const bool kvc_ok = kv_delta_pages == 0 || kvc_.can_map_rollout(kv_delta_pages);
  sim::SimTime s_prf = kSlackInf;
  sim::SimTime s_dec = kSlackInf;
  if (cfg_.admission != AdmissionMode::Off) {
    if (cfg_.admission != AdmissionMode::TpotOnly) s_prf = min_prefill_slack(now);
    if (cfg_.admission != AdmissionMode::TtftOnly) s_dec = min_decode_slack(now);
  }
  const sim::SimTime slack = std::min(s_prf, s_dec);
  const bool fits =
      cfg_.admission == AdmissionMode::Off || slack == kSlackInf ||
      est_cost + cfg_.safety_margin_us <= slack;
  if (decision) {
    decision->now = now;
    decision->est_cost = est_cost;
    decision->prefill_slack_min = s_prf;
    decision->decode_slack_min = s_dec;
    decision->kvc_ok = kvc_ok;
  }
  return kvc_ok && fits;
}

// ---- tick ladder -----------------------------------------------------------------

std::optional<std::vector<mem::PageId>> GpuExecutor::map_serving_pages(std::int64_t n,
                                                                       sim::SimTime now) {
  std::optional<mem::CutReport> cut;
  auto pages = kvc_.map_serving(n, now, &cut);
  if (cut) {
    // The cache already reclaimed the aborted trajectories' pages; drop their
    // tasks so no further chunks are launched against vanished KV. Any launch
    // still in flight resolves as a no-op in its finish handler.
    for (auto traj : cut->aborted_trajectories) {
      auto it = std::find_if(rollout_.begin(), rollout_.end(),
                             [traj](const RolloutTask& t) { return t.trajectory == traj; });
      if (it == rollout_.end()) continue;
      const int turn = it->turn;
      rollout_.erase(it);
      if (cb_.on_rollout_abort) cb_.on_rollout_abort(traj, turn, now);
    }
    if (cb_.on_memory_cut) cb_.on_memory_cut(*cut, now);
  }
  if (!pages) serving_blocked_ = true;
  return pages;
}

sim::SimTime GpuExecutor::jittered(sim::SimTime cost) {
  if (cfg_.exec_jitter <= 0.0 || !jitter_rng_) return cost;
  const double factor = 1.0 + cfg_.exec_jitter * (2.0 * jitter_rng_->uniform() - 1.0);
  return std::max<sim::SimTime>(1, static_cast<sim::SimTime>(
                                       std::llround(static_cast<double>(cost) * factor)));
}

std::optional<Launch> GpuExecutor::tick(sim::SimTime now) {
  if (busy()) return std::nullopt;
  serving_blocked_ = false;
  activate_handoffs(now);

  // Serving work is deferrable inside its slack, so rollout admission runs
  // first: a successful admission proves every serving deadline still holds,
  // and a failed one means serving work is due now.
  if (auto launch = try_rollout(now)) return launch;
  if (auto launch = try_serving_prefill(now)) return launch;
  if (auto launch = try_serving_decode(now)) return launch;
  return std::nullopt;
}

std::optional<Launch> GpuExecutor::try_rollout(sim::SimTime now) {
  if (rollout_.empty()) return std::nullopt;
  sim::SimTime oldest_dec = kSlackInf;
  sim::SimTime oldest_prf = kSlackInf;
  for (const auto& t : rollout_) {
    if (t.decode_pending()) oldest_dec = std::min(oldest_dec, t.last_progress);
    else if (t.prefill_pending()) oldest_prf = std::min(oldest_prf, t.last_progress);
  }
  // The stalest task picks which class runs first; ties pick the batched
  // decode step since it advances every decode-phase trajectory at once.
  // The other class is still tried as a fallback (a small chunk can fit in
  // slack a decode step does not). Serving the stalest task first bounds any
  // task's wait by one service round, so a healthy instance never trips the
  // stall timeout on its own.
  if (oldest_dec <= oldest_prf) {
    if (auto launch = try_rollout_decode(now)) return launch;
    return try_rollout_prefill(now);
  }
  if (auto launch = try_rollout_prefill(now)) return launch;
  return try_rollout_decode(now);
}

std::optional<Launch> GpuExecutor::try_rollout_decode(sim::SimTime now) {
  std::vector<RolloutTask*> decoding;
  for (auto& t : rollout_) {
    if (t.decode_pending()) decoding.push_back(&t);
  }
  if (decoding.empty()) return std::nullopt;
  const auto b = static_cast<std::int64_t>(decoding.size());
  const sim::SimTime cost = cfg_.rollout_profile->decode_step_us(b);
  std::int64_t delta = 0;
  for (auto* t : decoding) {
    delta += kvc_.pages_for_tokens(t->kv_tokens + 1) - kvc_.pages_for_tokens(t->kv_tokens);
  }
  AdmissionDecision dec;
  dec.kind = ExecKind::RolloutDecode;
  dec.id = decoding.front()->trajectory;
  dec.tokens = b;
  if (!admit_rollout(cost, delta, now, &dec)) return std::nullopt;
  rollout_batch_.clear();
  for (auto* t : decoding) {
    const auto need =
        kvc_.pages_for_tokens(t->kv_tokens + 1) - kvc_.pages_for_tokens(t->kv_tokens);
    if (need > 0 && !kvc_.map_rollout(t->trajectory, need, now)) {
      throw ExecutorError("rollout decode map failed after admission check");
    }
    t->kv_tokens += 1;
    rollout_batch_.push_back(t->trajectory);
  }
  Launch launch{ExecKind::RolloutDecode, now, jittered(cost), cost,
                decoding.front()->trajectory, b, b};
  busy_until_ = now + launch.duration;
  current_ = launch;
  rollout_admitted_++;
  if (cb_.on_rollout_admitted) cb_.on_rollout_admitted(dec);
  return launch;
}

std::optional<Launch> GpuExecutor::try_rollout_prefill(sim::SimTime now) {
  // Stalest task first; the first admissible chunk wins (a later, smaller
  // chunk may fit when an earlier one does not).
  std::vector<RolloutTask*> pending;
  for (auto& t : rollout_) {
    if (t.prefill_pending()) pending.push_back(&t);
  }
  std::stable_sort(pending.begin(), pending.end(),
                   [](const RolloutTask* a, const RolloutTask* b) {
                     return a->last_progress < b->last_progress;
                   });
  for (auto* tp : pending) {
    auto& t = *tp;
    const std::int64_t n =
        std::min<std::int64_t>(cfg_.chunk_tokens, t.prefill_target - t.kv_tokens);
    const sim::SimTime cost =
        cfg_.rollout_profile->chunk_increment_us(t.kv_tokens, n, cfg_.chunk_tokens);
    const std::int64_t delta =
        kvc_.pages_for_tokens(t.kv_tokens + n) - kvc_.pages_for_tokens(t.kv_tokens);
    AdmissionDecision dec;
    dec.kind = ExecKind::RolloutPrefill;
    dec.id = t.trajectory;
    dec.tokens = n;
    if (!admit_rollout(cost, delta, now, &dec)) continue;
    if (delta > 0 && !kvc_.map_rollout(t.trajectory, delta, now)) {
      throw ExecutorError("rollout prefill map failed after admission check");
    }
    Launch launch{ExecKind::RolloutPrefill, now, jittered(cost), cost, t.trajectory, 1, n};
    busy_until_ = now + launch.duration;
    current_ = launch;
    rollout_admitted_++;
    if (cb_.on_rollout_admitted) cb_.on_rollout_admitted(dec);
    return launch;
  }
  return std::nullopt;
}

std::optional<Launch> GpuExecutor::try_serving_prefill(sim::SimTime now) {
  if (cfg_.role == InstanceRole::Decoder || prefill_queue_.empty()) return std::nullopt;
  const auto id = prefill_queue_.front();
  auto& req = requests_.at(id);
  auto pages = map_serving_pages(kvc_.pages_for_tokens(req.prompt_tokens), now);
  if (!pages) return std::nullopt;
  serving_kv_[id] = ServingKv{std::move(*pages), req.prompt_tokens};
  prefill_queue_.pop_front();
  const sim::SimTime cost = predicted_prefill_us(req.prompt_tokens);
  Launch launch{ExecKind::ServingPrefill, now, jittered(cost), cost, id, 1,
                req.prompt_tokens};
  busy_until_ = now + launch.duration;
  current_ = launch;
  return launch;
}

std::optional<Launch> GpuExecutor::try_serving_decode(sim::SimTime now) {
  if (active_decodes_.empty()) return std::nullopt;
  std::int64_t delta = 0;
  for (auto id : active_decodes_) {
    const auto& kv = serving_kv_.at(id);
    delta += kvc_.pages_for_tokens(kv.kv_tokens + 1) - kvc_.pages_for_tokens(kv.kv_tokens);
  }
  std::vector<mem::PageId> grown;
  if (delta > 0) {
    auto pages = map_serving_pages(delta, now);
    if (!pages) return std::nullopt;
    grown = std::move(*pages);
  }
  std::size_t next_page = 0;
  for (auto id : active_decodes_) {
    auto& kv = serving_kv_.at(id);
    const auto need =
        kvc_.pages_for_tokens(kv.kv_tokens + 1) - kvc_.pages_for_tokens(kv.kv_tokens);
    for (std::int64_t i = 0; i < need; i++) kv.pages.push_back(grown[next_page++]);
    kv.kv_tokens += 1;
  }
  serving_batch_.assign(active_decodes_.begin(), active_decodes_.end());
  const auto b = static_cast<std::int64_t>(active_decodes_.size());
  const sim::SimTime cost = serving_decode_cost();
  Launch launch{ExecKind::ServingDecode, now, jittered(cost), cost, serving_batch_.front(),
                b, b};
  busy_until_ = now + launch.duration;
  current_ = launch;
  return launch;
}

// ---- completions ------------------------------------------------------------------

void GpuExecutor::complete(sim::SimTime now) {
  if (!busy()) throw ExecutorError("complete() with no execution in flight");
  if (now != busy_until_) {
    throw ExecutorError("complete() at " + std::to_string(now) + " but execution ends at " +
                        std::to_string(busy_until_));
  }
  const Launch launch = *current_;
  current_.reset();
  switch (launch.kind) {
    case ExecKind::ServingPrefill: finish_serving_prefill(launch, now); break;
    case ExecKind::ServingDecode: finish_serving_decode(launch, now); break;
    case ExecKind::RolloutPrefill: finish_rollout_prefill(launch, now); break;
    case ExecKind::RolloutDecode: finish_rollout_decode(launch, now); break;
  }
}

void GpuExecutor::finish_serving_prefill(const Launch& launch, sim::SimTime now) {
  auto& req = requests_.at(launch.id);
  req.tokens_emitted = 1;
  req.t_last = now;
  if (cb_.on_serving_token) cb_.on_serving_token(req.id, now, true);
  if (req.tokens_emitted >= req.target_output) {
    req.phase = RequestPhase::Done;
    finish_request(req.id, now);
    return;
  }
  req.phase = RequestPhase::Decoding;
  if (cfg_.role == InstanceRole::Prefiller) {
    // KV moves with the request; this instance's copy is dropped and the
    // decoder maps its own on activation.
    const ServingRequest snapshot = req;
    auto kv = serving_kv_.find(req.id);
    kvc_.unmap_serving(std::move(kv->second.pages), now);
    serving_kv_.erase(kv);
    requests_.erase(req.id);
    if (cb_.on_prefill_handoff) cb_.on_prefill_handoff(snapshot, now);
    return;
  }
  active_decodes_.push_back(req.id);
}

void GpuExecutor::finish_serving_decode(const Launch& launch, sim::SimTime now) {
  (void)launch;
  for (auto id : serving_batch_) {
    auto it = requests_.find(id);
    if (it == requests_.end()) continue;
    auto& req = it->second;
    req.tokens_emitted += 1;
    req.t_last = now;
    if (cb_.on_serving_token) cb_.on_serving_token(id, now, false);
    if (req.tokens_emitted >= req.target_output) {
      req.phase = RequestPhase::Done;
      finish_request(id, now);
    }
  }
  serving_batch_.clear();
}

void GpuExecutor::finish_rollout_prefill(const Launch& launch, sim::SimTime now) {
  auto* task = find_task(launch.id);
  if (!task) return;  // cancelled mid-chunk; pages were already released
  task->kv_tokens += launch.tokens;
  task->last_progress = now;
  rollout_prefill_tokens_ += launch.tokens;
  if (!task->prefill_pending() && task->decode_total == 0) {
    const RolloutTask done = *task;
    rollout_.erase(std::remove_if(rollout_.begin(), rollout_.end(),
                                  [&](const RolloutTask& t) {
                                    return t.trajectory == done.trajectory;
                                  }),
                   rollout_.end());
    finish_rollout_turn(done, now);
  }
}

void GpuExecutor::finish_rollout_decode(const Launch& launch, sim::SimTime now) {
  (void)launch;
  for (auto traj : rollout_batch_) {
    auto* task = find_task(traj);
    if (!task) continue;  // cancelled mid-step
    task->decode_done += 1;
    task->last_progress = now;
    rollout_decode_tokens_ += 1;
    if (task->decode_done >= task->decode_total && !task->prefill_pending()) {
      const RolloutTask done = *task;
      rollout_.erase(std::remove_if(rollout_.begin(), rollout_.end(),
                                    [&](const RolloutTask& t) {
                                      return t.trajectory == done.trajectory;
                                    }),
                     rollout_.end());
      finish_rollout_turn(done, now);
    }
  }
  rollout_batch_.clear();
}

void GpuExecutor::finish_request(std::int64_t id, sim::SimTime now) {
  auto kv = serving_kv_.find(id);
  if (kv != serving_kv_.end()) {
    kvc_.unmap_serving(std::move(kv->second.pages), now);
    serving_kv_.erase(kv);
  }
  active_decodes_.erase(std::remove(active_decodes_.begin(), active_decodes_.end(), id),
                        active_decodes_.end());
  requests_.erase(id);
  if (cb_.on_request_done) cb_.on_request_done(id, now);
}

void GpuExecutor::finish_rollout_turn(const RolloutTask& task, sim::SimTime now) {
  const std::int64_t tokens = task.kv_tokens;
  if (kvc_.rollout_active_pages(task.trajectory) > 0) {
    kvc_.insert_prefix(static_cast<std::uint64_t>(task.trajectory), task.trajectory, tokens,
                       now);
  }
  if (cb_.on_turn_complete) cb_.on_turn_complete(task.trajectory, task.turn, now);
}

// ---- stalls --------------------------------------------------------------------

std::vector<std::int64_t> GpuExecutor::detect_stalls(sim::SimTime now) {
  // Settle all local state before any callback: a listener may synchronously
  // re-route the victim back onto this instance as a fresh task.
  std::vector<std::pair<std::int64_t, int>> victims;
  for (auto it = rollout_.begin(); it != rollout_.end();) {
    const bool in_flight =
        busy() && ((current_->kind == ExecKind::RolloutPrefill &&
                    current_->id == it->trajectory) ||
                   (current_->kind == ExecKind::RolloutDecode &&
                    std::count(rollout_batch_.begin(), rollout_batch_.end(),
                               it->trajectory) > 0));
    if (!in_flight && now - it->last_progress >= cfg_.stall_timeout_us) {
      if (std::getenv("COSERVE_DEBUG_STALL")) {
        std::fprintf(stderr,
                     "stall gpu=%d t=%lld traj=%lld turn=%d kv=%lld/%lld dec=%lld/%lld "
                     "last=%lld busy=%d tasks=%zu\n",
                     gpu_id_, (long long)now, (long long)it->trajectory, it->turn,
                     (long long)it->kv_tokens, (long long)it->prefill_target,
                     (long long)it->decode_done, (long long)it->decode_total,
                     (long long)it->last_progress, busy() ? (int)current_->kind : -1,
                     rollout_.size());
      }
      kvc_.release_rollout(it->trajectory);
      victims.emplace_back(it->trajectory, it->turn);
      it = rollout_.erase(it);
    } else {
      ++it;
    }
  }
  std::vector<std::int64_t> dropped;
  dropped.reserve(victims.size());
  for (const auto& [traj, turn] : victims) {
    dropped.push_back(traj);
    if (cb_.on_stall_drop) cb_.on_stall_drop(traj, turn, now);
  }
  return dropped;
}

std::optional<sim::SimTime> GpuExecutor::next_stall_deadline() const {
  std::optional<sim::SimTime> best;
  for (const auto& t : rollout_) {
    const sim::SimTime deadline = t.last_progress + cfg_.stall_timeout_us;
    if (!best || deadline < *best) best = deadline;
  }
  return best;
}

}  // namespace coserve::exec
