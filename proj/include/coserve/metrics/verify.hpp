#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "coserve/metrics/percentile.hpp"
#include "coserve/sim/time.hpp"

namespace coserve::metrics {

struct ParsedEvent {
  sim::SimTime t = 0;
  std::string type;
  std::map<std::string, std::string> fields;

  bool has(const std::string& key) const { return fields.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::int64_t get_i64(const std::string& key) const;
};

// One row: "t_us,type,key=value,key=value,...".
ParsedEvent parse_event_row(const std::string& row);

struct VerifyReport {
  bool ok = false;
  std::size_t rows = 0;
  std::uint64_t digest = 0;           // recomputed over the row bytes
  std::vector<std::string> issues;    // empty iff ok

  std::string to_string() const;
};

// Re-derives every metric a finished event log claims and checks the claims:
//   - schema header and trailing digest line match the actual row bytes;
//   - the summary row's P99 TTFT/TPOT and SLO verdict equal values recomputed
//     from the per-request completion rows;
//   - the summary's preempted GPU time equals the sum of recovery events and
//     never exceeds total GPU time;
//   - step rows are well-formed (positive duration, ordered indexes) and
//     match the summary's step count.
// Issues are collected rather than thrown; I/O problems still throw.
VerifyReport verify_event_log(const std::string& path);

}  // namespace coserve::metrics
