#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "coserve/cost/profile.hpp"
#include "coserve/mem/kvc.hpp"
#include "coserve/metrics/latency.hpp"
#include "coserve/sim/rng.hpp"
#include "coserve/sim/time.hpp"

namespace coserve::exec {

struct ExecutorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class InstanceRole : std::uint8_t { Prefiller, Decoder, Colocated };
enum class AdmissionMode : std::uint8_t { Dual, TtftOnly, TpotOnly, Off };
enum class RequestPhase : std::uint8_t { QueuedPrefill, Decoding, Done };

const char* role_name(InstanceRole r);
const char* admission_mode_name(AdmissionMode m);

// Slack sentinel for "no serving work constrains admission".
constexpr sim::SimTime kSlackInf = std::numeric_limits<sim::SimTime>::max();

struct ServingRequest {
  std::int64_t id = 0;
  sim::SimTime t_arr = 0;
  std::int64_t prompt_tokens = 0;   // L
  std::int64_t target_output = 1;
  sim::SimTime t_last = -1;         // time of most recent emitted token
  std::int64_t tokens_emitted = 0;
  RequestPhase phase = RequestPhase::QueuedPrefill;
};

enum class ExecKind : std::uint8_t {
  ServingPrefill = 0,
  ServingDecode = 1,
  RolloutPrefill = 2,
  RolloutDecode = 3,
};

const char* exec_kind_name(ExecKind k);

struct Launch {
  ExecKind kind = ExecKind::ServingPrefill;
  sim::SimTime start = 0;
  sim::SimTime duration = 0;        // actual occupancy (jitter applied)
  sim::SimTime est_cost = 0;        // cost-model prediction used for admission
  std::int64_t id = 0;              // request id or trajectory id (batch: first)
  std::int64_t batch = 1;
  std::int64_t tokens = 0;          // prefill tokens covered, or tokens emitted
};

// Snapshot of the admission state at the moment a rollout chunk was admitted;
// consumed by the soundness checker in tests.
struct AdmissionDecision {
  sim::SimTime now = 0;
  ExecKind kind = ExecKind::RolloutPrefill;
  std::int64_t id = 0;
  std::int64_t tokens = 0;
  sim::SimTime est_cost = 0;
  sim::SimTime prefill_slack_min = kSlackInf;
  sim::SimTime decode_slack_min = kSlackInf;
  bool kvc_ok = true;
};

struct ExecutorCallbacks {
  // Every emitted serving token (first == true for the prefill-produced one).
  std::function<void(std::int64_t req, sim::SimTime t, bool first)> on_serving_token;
  std::function<void(std::int64_t req, sim::SimTime t)> on_request_done;
  // Prefiller role: request finished prefill here and must continue decoding
  // on a decoder instance. The snapshot already counts the first token.
  std::function<void(const ServingRequest& req, sim::SimTime t)> on_prefill_handoff;
  std::function<void(std::int64_t traj, int turn, sim::SimTime t)> on_turn_complete;
  std::function<void(std::int64_t traj, int turn, sim::SimTime t)> on_stall_drop;
  // A serving burst cut reclaimed the trajectory's KV; its turn is void here
  // and must restart elsewhere.
  std::function<void(std::int64_t traj, int turn, sim::SimTime t)> on_rollout_abort;
  std::function<void(const AdmissionDecision&)> on_rollout_admitted;
  std::function<void(const mem::CutReport&, sim::SimTime t)> on_memory_cut;
};

struct ExecutorConfig {
  InstanceRole role = InstanceRole::Colocated;
  AdmissionMode admission = AdmissionMode::Dual;
  metrics::SloConfig slo;                    // TTFT/TPOT budgets
  int chunk_tokens = 512;                    // rollout prefill chunk size
  sim::SimTime stall_timeout_us = sim::secs(2);
  sim::SimTime safety_margin_us = 0;         // extra slack required to admit
  double exec_jitter = 0.0;                  // multiplicative execution noise
  const cost::LatencyProfile* serving_profile = nullptr;
  const cost::LatencyProfile* rollout_profile = nullptr;
};

// One rollout turn assigned to this GPU: prefill the turn's new context (or
// the whole history on a prefix-cache miss), then decode its output tokens.
struct RolloutTask {
  std::int64_t trajectory = 0;
  int turn = 0;
  std::int64_t kv_tokens = 0;        // tokens currently backed by mapped pages
  std::int64_t prefill_target = 0;   // kv_tokens goal before decode starts
  std::int64_t decode_total = 0;
  std::int64_t decode_done = 0;
  sim::SimTime enqueued_at = 0;
  sim::SimTime last_progress = 0;

  bool prefill_pending() const { return kv_tokens < prefill_target; }
  bool decode_pending() const { return !prefill_pending() && decode_done < decode_total; }
};

// Per-GPU temporal-sharing executor. Exactly one execution occupies the
// instance at a time; serving work owns the instance and rollout chunks are
// admitted into measured slack only. The driver calls tick() whenever state
// may have changed (arrival, completion, enqueue, step boundary) and
// schedules a completion callback at busy_until() after each launch.
class GpuExecutor {
 public:
  GpuExecutor(int gpu_id, const ExecutorConfig& cfg, const mem::KvcConfig& kvc_cfg,
              ExecutorCallbacks callbacks, sim::RngStream* jitter_rng = nullptr);

  int gpu_id() const { return gpu_id_; }
  const ExecutorConfig& config() const { return cfg_; }
  mem::KvcManager& kvc() { return kvc_; }
  const mem::KvcManager& kvc() const { return kvc_; }

  // ---- serving entry points ---------------------------------------------
  // New request starts its prefill here. Prefiller or Colocated roles only.
  void on_serving_arrival(std::int64_t id, std::int64_t prompt_tokens,
                          std::int64_t target_output, sim::SimTime now);
  // Request that finished prefill elsewhere continues decoding here.
  void on_decode_handoff(const ServingRequest& req, sim::SimTime now);

  // ---- rollout entry points ----------------------------------------------
  // context_after_prompt: total context once this turn's prompt is appended.
  // A live prefix-cache entry for the trajectory shrinks the prefill to the
  // new tokens; a miss means the whole history is re-prefilled.
  void enqueue_rollout_turn(std::int64_t trajectory, int turn,
                            std::int64_t context_after_prompt,
                            std::int64_t decode_tokens, sim::SimTime now);
  // Scheduler-driven removal (reroute, failure). Frees active KV, keeps
  // prefix entries. Returns false if the trajectory is not here.
  bool cancel_rollout(std::int64_t trajectory);

  // ---- event-loop surface -------------------------------------------------
  // Launches the next execution if the instance is idle and work fits.
  std::optional<Launch> tick(sim::SimTime now);
  // Applies the effects of the execution finishing at `now` (must equal
  // busy_until()). The driver then calls tick() again.
  void complete(sim::SimTime now);
  // Drops rollout tasks with no admitted progress for the stall timeout.
  std::vector<std::int64_t> detect_stalls(sim::SimTime now);
  std::optional<sim::SimTime> next_stall_deadline() const;
  void on_step_boundary(sim::SimTime now) { kvc_.recompute_budget(now); }
  void expire_leases(sim::SimTime now) { kvc_.expire_leases(now); }

  bool busy() const { return current_.has_value(); }
  sim::SimTime busy_until() const { return busy_until_; }

  // ---- slack (admission inputs; exposed for tests and the checker) -------
  // Remaining TTFT slack of one queued prefill: its deadline minus now minus
  // the predicted completion of all queued prefill work up to and including
  // it (FCFS). With one queued request this is exactly
  // (t_arr + B_TTFT) - now - T_prf(L).
  sim::SimTime prefill_slack(std::int64_t req_id, sim::SimTime now) const;
  sim::SimTime min_prefill_slack(sim::SimTime now) const;  // kSlackInf if none
  // Remaining TPOT slack of one active decode at the current batch size:
  // (t_last + B_TPOT) - now - T_dec(b).
  sim::SimTime decode_slack(std::int64_t req_id, sim::SimTime now) const;
  sim::SimTime min_decode_slack(sim::SimTime now) const;   // kSlackInf if none

  // ---- introspection ------------------------------------------------------
  const std::deque<std::int64_t>& prefill_queue() const { return prefill_queue_; }
  const std::vector<std::int64_t>& active_decodes() const { return active_decodes_; }
  const ServingRequest& request(std::int64_t id) const;
  const std::deque<RolloutTask>& rollout_tasks() const { return rollout_; }
  std::int64_t rollout_chunks_admitted() const { return rollout_admitted_; }
  std::int64_t rollout_tokens_prefilled() const { return rollout_prefill_tokens_; }
  std::int64_t rollout_tokens_decoded() const { return rollout_decode_tokens_; }
  std::int64_t prefix_hits() const { return prefix_hits_; }
  std::int64_t prefix_misses() const { return prefix_misses_; }
  bool serving_blocked() const { return serving_blocked_; }
  std::int64_t pending_handoffs() const { return static_cast<std::int64_t>(handoffs_.size()); }
  std::int64_t open_serving_requests() const {
    return static_cast<std::int64_t>(requests_.size());
  }

 private:
  struct ServingKv {
    std::vector<mem::PageId> pages;
    std::int64_t kv_tokens = 0;
  };

  sim::SimTime predicted_prefill_us(std::int64_t prompt_tokens) const;
  sim::SimTime serving_decode_cost() const;
  sim::SimTime jittered(sim::SimTime cost);
  bool admit_rollout(sim::SimTime est_cost, std::int64_t kv_delta_pages, sim::SimTime now,
                     AdmissionDecision* decision) const;
  std::optional<Launch> try_serving_prefill(sim::SimTime now);
  std::optional<Launch> try_rollout(sim::SimTime now);
  std::optional<Launch> try_rollout_decode(sim::SimTime now);
  std::optional<Launch> try_rollout_prefill(sim::SimTime now);
  std::optional<Launch> try_serving_decode(sim::SimTime now);
  void finish_serving_prefill(const Launch& launch, sim::SimTime now);
  void finish_serving_decode(const Launch& launch, sim::SimTime now);
  void finish_rollout_prefill(const Launch& launch, sim::SimTime now);
  void finish_rollout_decode(const Launch& launch, sim::SimTime now);
  void finish_request(std::int64_t id, sim::SimTime now);
  void finish_rollout_turn(const RolloutTask& task, sim::SimTime now);
  // Maps serving pages, firing the memory-cut callback when a burst cut runs;
  // nullopt marks this tick as serving-blocked.
  std::optional<std::vector<mem::PageId>> map_serving_pages(std::int64_t n, sim::SimTime now);
  void activate_handoffs(sim::SimTime now);
  RolloutTask* find_task(std::int64_t trajectory);

  int gpu_id_;
  ExecutorConfig cfg_;
  mem::KvcManager kvc_;
  ExecutorCallbacks cb_;
  sim::RngStream* jitter_rng_;

  std::map<std::int64_t, ServingRequest> requests_;
  std::map<std::int64_t, ServingKv> serving_kv_;
  std::deque<std::int64_t> prefill_queue_;       // FCFS
  std::vector<std::int64_t> active_decodes_;     // insertion order
  std::deque<ServingRequest> handoffs_;          // awaiting KV activation here
  std::deque<RolloutTask> rollout_;              // FIFO by enqueue

  std::optional<Launch> current_;
  std::vector<std::int64_t> serving_batch_;      // requests in the running decode
  std::vector<std::int64_t> rollout_batch_;      // trajectories in the running decode
  sim::SimTime busy_until_ = 0;
  bool serving_blocked_ = false;

  std::int64_t rollout_admitted_ = 0;
  std::int64_t rollout_prefill_tokens_ = 0;
  std::int64_t rollout_decode_tokens_ = 0;
  std::int64_t prefix_hits_ = 0;
  std::int64_t prefix_misses_ = 0;
};

}  // namespace coserve::exec
