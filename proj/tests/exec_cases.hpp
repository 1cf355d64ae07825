#pragma once

// Shared fixtures for the executor tests and the acceptance suite: exact
// integer latency profiles, a deterministic single-GPU event loop, and an
// admission soundness checker that re-derives every deadline independently.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "coserve/cost/profile.hpp"
#include "coserve/exec/executor.hpp"
#include "coserve/mem/kvc.hpp"
#include "coserve/sim/time.hpp"

namespace coserve::testing {

// Serving-side tables with exact integer arithmetic: monolithic prefill costs
// 100 us per token, decode steps are read off small integer knots.
inline cost::LatencyProfile linear_serving_profile() {
  cost::LatencyProfile p;
  p.model_id = "test-serve";
  p.gpu_class = "unit";
  p.prefill_mono = cost::LatencyTable({{0, 0}, {10000, 1'000'000}});
  p.prefill_chunk[512] = cost::LatencyTable({{0, 0}, {10000, 1'050'000}});
  p.decode_step = cost::LatencyTable(
      {{1, 8000}, {2, 9000}, {4, 10000}, {8, 12000}, {16, 16000}, {64, 40000}});
  p.validate();
  return p;
}

// Rollout-side tables: chunked prefill costs exactly 105 us per token (a 5%
// chunking overhead over the 100 us/token monolithic path).
inline cost::LatencyProfile linear_rollout_profile() {
  cost::LatencyProfile p = linear_serving_profile();
  p.model_id = "test-roll";
  return p;
}

inline mem::KvcConfig test_kvc_config() {
  mem::KvcConfig cfg;
  cfg.total_pages = 2048;
  cfg.tokens_per_page = 16;
  cfg.headroom_fraction = 0.20;
  return cfg;
}

// Deterministic event loop around one GpuExecutor. Completions, injected
// actions, stall scans, and the scheduling tick are processed in that order
// at each event time; stall drops therefore land on the first processed event
// at or after the deadline.
class MiniDriver {
 public:
  explicit MiniDriver(exec::GpuExecutor& gpu) : gpu_(gpu) {}

  void inject(sim::SimTime t, std::function<void(sim::SimTime)> fn) {
    if (t < now_) throw std::runtime_error("injection in the past");
    injections_.emplace(t, std::move(fn));
  }

  sim::SimTime now() const { return now_; }
  const std::vector<exec::Launch>& launches() const { return launches_; }
  const std::vector<std::int64_t>& stall_drops() const { return stall_drops_; }

  // Called after every processed event time (conservation checks etc.).
  std::function<void(sim::SimTime)> after_event;

  void run_until(sim::SimTime t_end) {
    while (true) {
      std::optional<sim::SimTime> next;
      auto consider = [&](sim::SimTime t) {
        if (!next || t < *next) next = t;
      };
      if (!injections_.empty()) consider(injections_.begin()->first);
      if (gpu_.busy()) consider(gpu_.busy_until());
      // A deadline at or before now_ that survived this event's scan belongs
      // to an in-flight task; it resolves at the completion already queued.
      if (auto sd = gpu_.next_stall_deadline(); sd && *sd > now_) consider(*sd);
      if (!next || *next > t_end) break;
      process(*next);
    }
    if (t_end >= now_) process(t_end);
  }

  // Runs until the executor holds no work at all; throws on livelock.
  void drain() {
    for (int i = 0; i < 2'000'000; i++) {
      std::optional<sim::SimTime> next;
      auto consider = [&](sim::SimTime t) {
        if (!next || t < *next) next = t;
      };
      if (!injections_.empty()) consider(injections_.begin()->first);
      if (gpu_.busy()) consider(gpu_.busy_until());
      if (auto sd = gpu_.next_stall_deadline(); sd && *sd > now_) consider(*sd);
      if (!next) return;
      process(*next);
    }
    throw std::runtime_error("drain() did not quiesce");
  }

 private:
  void process(sim::SimTime t) {
    now_ = t;
    if (gpu_.busy() && gpu_.busy_until() == t) gpu_.complete(t);
    while (!injections_.empty() && injections_.begin()->first <= t) {
      auto fn = std::move(injections_.begin()->second);
      injections_.erase(injections_.begin());
      fn(t);
    }
    for (auto traj : gpu_.detect_stalls(t)) stall_drops_.push_back(traj);
    if (auto launch = gpu_.tick(t)) launches_.push_back(*launch);
    if (after_event) after_event(t);
  }

  exec::GpuExecutor& gpu_;
  sim::SimTime now_ = 0;
  std::multimap<sim::SimTime, std::function<void(sim::SimTime)>> injections_;
  std::vector<exec::Launch> launches_;
  std::vector<std::int64_t> stall_drops_;
};

// Re-derives, from the executor's public state and the raw latency tables,
// whether an admitted rollout chunk can push any serving deadline past its
// budget: every queued prefill must still finish by t_arr + B_TTFT under
// FCFS, and every active decode's next token must land by t_last + B_TPOT.
// Independent of the admission mode, so it measures what "off" breaks.
struct SoundnessChecker {
  const exec::GpuExecutor* gpu = nullptr;
  std::int64_t checked = 0;
  std::int64_t ttft_violations = 0;
  std::int64_t tpot_violations = 0;

  std::int64_t violations() const { return ttft_violations + tpot_violations; }

  void on_admit(const exec::AdmissionDecision& d) {
    checked++;
    const auto& cfg = gpu->config();
    const auto* profile = cfg.serving_profile;
    sim::SimTime cum = d.est_cost;
    for (auto id : gpu->prefill_queue()) {
      const auto& req = gpu->request(id);
      cum += profile->prefill_us(req.prompt_tokens, cost::PrefillMode::Mono);
      if (d.now + cum > req.t_arr + cfg.slo.ttft_budget_us) ttft_violations++;
    }
    const auto batch = static_cast<std::int64_t>(gpu->active_decodes().size());
    if (batch > 0) {
      const sim::SimTime step = profile->decode_step_us(batch);
      for (auto id : gpu->active_decodes()) {
        const auto& req = gpu->request(id);
        if (d.now + d.est_cost + step > req.t_last + cfg.slo.tpot_budget_us) {
          tpot_violations++;
        }
      }
    }
  }
};

inline bool launches_exclusive(const std::vector<exec::Launch>& launches) {
  for (std::size_t i = 1; i < launches.size(); i++) {
    if (launches[i].start < launches[i - 1].start + launches[i - 1].duration) {
      return false;
    }
  }
  return true;
}

}  // namespace coserve::testing
