#pragma once

#include <string>
#include <utility>
#include <vector>

#include "coserve/metrics/latency.hpp"
#include "coserve/metrics/step_metrics.hpp"

namespace coserve::metrics {

// All CSV outputs start with a "schema,<name>,<version>" row so downstream
// tooling can reject files it does not understand.

// schema,coserve-latency,1
// request_id,ttft_us,tokens_out,tpot_mean_us,tpot_max_us
void write_latency_csv(const std::string& path, const std::vector<LatencySample>& samples);

// schema,coserve-steps,1
// step,rollout_us,step_us,tokens_in,tokens_out,throughput_tok_s,launched,accepted,dropped,rerouted
void write_step_csv(const std::string& path, const std::vector<StepMetrics>& steps);

// schema,coserve-summary,1 followed by key,value rows in the given order.
void write_summary_csv(const std::string& path,
                       const std::vector<std::pair<std::string, std::string>>& kv);

std::string format_fixed3(double v);  // "%.3f", the one float format we emit

}  // namespace coserve::metrics
