#include "coserve/metrics/csv.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace coserve::metrics {
namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw MetricsError(path + ": cannot open for writing");
  return f;
}

}  // namespace

std::string format_fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

void write_latency_csv(const std::string& path, const std::vector<LatencySample>& samples) {
  auto f = open_out(path);
  f << "schema,coserve-latency,1\n";
  f << "request_id,ttft_us,tokens_out,tpot_mean_us,tpot_max_us\n";
  for (const auto& s : samples) {
    sim::SimTime sum = 0, peak = 0;
    for (auto g : s.tpot_us) {
      sum += g;
      peak = std::max(peak, g);
    }
    const auto n = static_cast<sim::SimTime>(s.tpot_us.size());
    const sim::SimTime mean = n > 0 ? (sum + n / 2) / n : 0;
    f << s.request_id << ',' << s.ttft_us << ',' << (n + 1) << ',' << mean << ',' << peak
      << '\n';
  }
  if (!f) throw MetricsError(path + ": write failed");
}

void write_step_csv(const std::string& path, const std::vector<StepMetrics>& steps) {
  auto f = open_out(path);
  f << "schema,coserve-steps,1\n";
  f << "step,rollout_us,step_us,tokens_in,tokens_out,throughput_tok_s,launched,accepted,"
       "dropped,rerouted\n";
  for (const auto& s : steps) {
    f << s.step_index << ',' << s.rollout_time_us << ',' << s.step_time_us << ','
      << s.tokens_in << ',' << s.tokens_out << ',' << format_fixed3(s.throughput_tok_s())
      << ',' << s.trajectories_launched << ',' << s.trajectories_accepted << ','
      << s.trajectories_dropped << ',' << s.trajectories_rerouted << '\n';
  }
  if (!f) throw MetricsError(path + ": write failed");
}

void write_summary_csv(const std::string& path,
                       const std::vector<std::pair<std::string, std::string>>& kv) {
  auto f = open_out(path);
  f << "schema,coserve-summary,1\n";
  for (const auto& [k, v] : kv) f << k << ',' << v << '\n';
  if (!f) throw MetricsError(path + ": write failed");
}

}  // namespace coserve::metrics
