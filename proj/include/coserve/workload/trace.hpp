#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "coserve/sim/rng.hpp"
#include "coserve/sim/time.hpp"

namespace coserve::workload {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ServingTraceRecord {
  sim::SimTime t_arr = 0;  // offset from trace start, microseconds
  int prompt_tokens = 0;
  int output_tokens = 0;

  bool operator==(const ServingTraceRecord&) const = default;
};

// CSV with header "t_arr_us,prompt_tokens,output_tokens". Records must be
// sorted by arrival time with positive token counts. time_scale stretches
// arrival offsets; rate_scale deterministically thins (< 1) or duplicates
// (> 1) records using `seed`. Errors carry 1-based line numbers.
std::vector<ServingTraceRecord> load_serving_trace(const std::string& path,
                                                   double time_scale,
                                                   double rate_scale,
                                                   std::uint64_t seed);

// Same scaling applied to records already in memory (the loader's backend;
// also used on synthesized traces).
std::vector<ServingTraceRecord> scale_trace(const std::vector<ServingTraceRecord>& in,
                                            double time_scale, double rate_scale,
                                            std::uint64_t seed);

struct BurstyTraceParams {
  sim::SimTime duration_us = 600 * sim::kUsPerSec;
  double base_rate_hz = 0.8;
  double burst_rate_hz = 6.0;
  sim::SimTime burst_every_us = 60 * sim::kUsPerSec;  // burst period start spacing
  sim::SimTime burst_len_us = 10 * sim::kUsPerSec;
  double prompt_log_mean = 7.2, prompt_log_sigma = 0.5;   // median ~1340 tokens
  double output_log_mean = 5.0, output_log_sigma = 0.6;   // median ~148 tokens
  int min_prompt = 32, max_prompt = 8192;
  int min_output = 8, max_output = 2048;
};

// Poisson arrivals whose rate alternates between a base and a burst level:
// a short burst window opens at every multiple of burst_every_us.
std::vector<ServingTraceRecord> synth_bursty_trace(const BurstyTraceParams& params,
                                                   std::uint64_t seed);

void write_trace_csv(const std::string& path,
                     const std::vector<ServingTraceRecord>& records);

// Max over fixed windows of the arrival count divided by the mean count per
// window across the whole span. 0 when the trace is empty.
double peak_to_mean(const std::vector<ServingTraceRecord>& records,
                    sim::SimTime window_us);

}  // namespace coserve::workload
