#include "coserve/workload/trace.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace coserve::workload {
namespace {

constexpr const char* kHeader = "t_arr_us,prompt_tokens,output_tokens";

[[noreturn]] void fail(const std::string& path, int line, const std::string& what) {
  throw ParseError(path + ": line " + std::to_string(line) + ": " + what);
}

std::int64_t parse_field(const std::string& path, int line, const std::string& field,
                         const std::string& name) {
  std::int64_t v = 0;
  const char* b = field.data();
  const char* e = b + field.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e || field.empty()) {
    fail(path, line, "bad " + name + " '" + field + "'");
  }
  return v;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

int bounded_round(double v, int lo, int hi) {
  const auto r = static_cast<std::int64_t>(std::llround(v));
  return static_cast<int>(std::clamp<std::int64_t>(r, lo, hi));
}

}  // namespace

std::vector<ServingTraceRecord> scale_trace(const std::vector<ServingTraceRecord>& in,
                                            double time_scale, double rate_scale,
                                            std::uint64_t seed) {
  sim::RngStream rng(sim::splitmix64(seed ^ sim::fnv1a64("trace.rate")));
  const auto whole = static_cast<int>(std::floor(rate_scale));
  const double frac = rate_scale - whole;
  std::vector<ServingTraceRecord> out;
  out.reserve(static_cast<std::size_t>(static_cast<double>(in.size()) * rate_scale) + 1);
  for (const auto& rec : in) {
    int copies = whole;
    if (frac > 0.0 && rng.bernoulli(frac)) copies++;
    if (copies == 0) continue;
    ServingTraceRecord scaled = rec;
    scaled.t_arr = static_cast<sim::SimTime>(
        std::llround(static_cast<double>(rec.t_arr) * time_scale));
    for (int c = 0; c < copies; c++) out.push_back(scaled);
  }
  return out;
}

std::vector<ServingTraceRecord> load_serving_trace(const std::string& path,
                                                   double time_scale,
                                                   double rate_scale,
                                                   std::uint64_t seed) {
  std::ifstream f(path);
  if (!f) throw ParseError(path + ": cannot open");

  std::string line;
  if (!std::getline(f, line)) throw ParseError(path + ": line 1: missing header");
  if (strip_cr(line) != kHeader) {
    throw ParseError(path + ": line 1: expected header '" + std::string(kHeader) + "'");
  }

  std::vector<ServingTraceRecord> records;
  int lineno = 1;
  while (std::getline(f, line)) {
    lineno++;
    line = strip_cr(line);
    if (line.empty()) continue;
    std::string fields[3];
    int nf = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); i++) {
      if (i == line.size() || line[i] == ',') {
        if (nf == 3) fail(path, lineno, "expected 3 fields");
        fields[nf++] = line.substr(start, i - start);
        start = i + 1;
      }
    }
    if (nf != 3) fail(path, lineno, "expected 3 fields");

    ServingTraceRecord rec;
    rec.t_arr = parse_field(path, lineno, fields[0], "t_arr_us");
    rec.prompt_tokens = static_cast<int>(parse_field(path, lineno, fields[1], "prompt_tokens"));
    rec.output_tokens = static_cast<int>(parse_field(path, lineno, fields[2], "output_tokens"));
    if (rec.t_arr < 0) fail(path, lineno, "t_arr_us must be >= 0");
    if (rec.prompt_tokens <= 0) fail(path, lineno, "prompt_tokens must be positive");
    if (rec.output_tokens <= 0) fail(path, lineno, "output_tokens must be positive");
    if (!records.empty() && rec.t_arr < records.back().t_arr) {
      fail(path, lineno, "records not sorted by t_arr_us");
    }
    records.push_back(rec);
  }
  return scale_trace(records, time_scale, rate_scale, seed);
}

std::vector<ServingTraceRecord> synth_bursty_trace(const BurstyTraceParams& params,
                                                   std::uint64_t seed) {
  sim::RngStream arrivals(sim::splitmix64(seed ^ sim::fnv1a64("trace.arrivals")));
  sim::RngStream shapes(sim::splitmix64(seed ^ sim::fnv1a64("trace.shapes")));

  auto in_burst = [&](sim::SimTime t) {
    return params.burst_every_us > 0 && (t % params.burst_every_us) < params.burst_len_us;
  };

  std::vector<ServingTraceRecord> out;
  double t = 0.0;
  while (true) {
    const auto now = static_cast<sim::SimTime>(t);
    if (now >= params.duration_us) break;
    const double rate = in_burst(now) ? params.burst_rate_hz : params.base_rate_hz;
    t += arrivals.exponential(1.0 / rate) * sim::kUsPerSec;
    const auto arr = static_cast<sim::SimTime>(t);
    if (arr >= params.duration_us) break;
    ServingTraceRecord rec;
    rec.t_arr = arr;
    rec.prompt_tokens = bounded_round(shapes.lognormal(params.prompt_log_mean, params.prompt_log_sigma),
                                      params.min_prompt, params.max_prompt);
    rec.output_tokens = bounded_round(shapes.lognormal(params.output_log_mean, params.output_log_sigma),
                                      params.min_output, params.max_output);
    out.push_back(rec);
  }
  return out;
}

void write_trace_csv(const std::string& path, const std::vector<ServingTraceRecord>& records) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ParseError(path + ": cannot open for writing");
  f << kHeader << "\n";
  for (const auto& r : records) {
    f << r.t_arr << "," << r.prompt_tokens << "," << r.output_tokens << "\n";
  }
  if (!f) throw ParseError(path + ": write failed");
}

double peak_to_mean(const std::vector<ServingTraceRecord>& records, sim::SimTime window_us) {
  if (records.empty() || window_us <= 0) return 0.0;
  const sim::SimTime span = records.back().t_arr + 1;
  const auto nwin = static_cast<std::size_t>((span + window_us - 1) / window_us);
  std::vector<int> counts(nwin, 0);
  for (const auto& r : records) counts[static_cast<std::size_t>(r.t_arr / window_us)]++;
  const int peak = *std::max_element(counts.begin(), counts.end());
  const double mean = static_cast<double>(records.size()) / static_cast<double>(nwin);
  return static_cast<double>(peak) / mean;
}

}  // namespace coserve::workload
