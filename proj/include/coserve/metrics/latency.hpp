#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "coserve/metrics/percentile.hpp"
#include "coserve/sim/time.hpp"

namespace coserve::metrics {

struct LatencySample {
  std::int64_t request_id = 0;
  sim::SimTime ttft_us = 0;               // first token minus arrival
  std::vector<sim::SimTime> tpot_us;      // strictly positive per-token gaps

  bool operator==(const LatencySample&) const = default;
};

// Latency budgets checked at P99. Defaults follow the tight interactive
// deployment point; relaxed() is the slack tier.
struct SloConfig {
  sim::SimTime ttft_budget_us = 500 * sim::kUsPerMs;
  sim::SimTime tpot_budget_us = 150 * sim::kUsPerMs;

  static SloConfig relaxed() { return {1000 * sim::kUsPerMs, 450 * sim::kUsPerMs}; }
};

struct SloReport {
  sim::SimTime p99_ttft_us = 0;
  sim::SimTime p99_tpot_us = 0;
  bool violated = false;  // strict: p99 above (not at) either budget
};

// Violated iff p99_ttft > budget or p99_tpot > budget; sitting exactly at the
// budget complies. No samples of a kind means that kind cannot violate.
SloReport slo_report(const std::vector<LatencySample>& samples, const SloConfig& slo);

// Accumulates per-request timing as the simulation emits it and freezes each
// request into a LatencySample on completion.
class LatencyCollector {
 public:
  void on_arrival(std::int64_t request_id, sim::SimTime t);
  void on_first_token(std::int64_t request_id, sim::SimTime t);
  void on_token(std::int64_t request_id, sim::SimTime t);
  void on_done(std::int64_t request_id);

  const std::vector<LatencySample>& samples() const { return done_; }
  std::size_t open_requests() const { return open_.size(); }

  std::vector<sim::SimTime> all_ttft_us() const;
  std::vector<sim::SimTime> all_tpot_us() const;

 private:
  struct Open {
    sim::SimTime t_arr = 0;
    sim::SimTime last_token = -1;  // -1 until the first token lands
    LatencySample sample;
  };
  std::map<std::int64_t, Open> open_;
  std::vector<LatencySample> done_;
};

}  // namespace coserve::metrics
