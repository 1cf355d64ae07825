#include "coserve/metrics/latency.hpp"

#include <string>

namespace coserve::metrics {
namespace {

std::string req_str(std::int64_t id) { return "request " + std::to_string(id); }

}  // namespace

SloReport slo_report(const std::vector<LatencySample>& samples, const SloConfig& slo) {
  std::vector<sim::SimTime> ttft, tpot;
  for (const auto& s : samples) {
    ttft.push_back(s.ttft_us);
    tpot.insert(tpot.end(), s.tpot_us.begin(), s.tpot_us.end());
  }
  SloReport rep;
  if (!ttft.empty()) rep.p99_ttft_us = percentile(std::move(ttft), 99.0);
  if (!tpot.empty()) rep.p99_tpot_us = percentile(std::move(tpot), 99.0);
  rep.violated = rep.p99_ttft_us > slo.ttft_budget_us || rep.p99_tpot_us > slo.tpot_budget_us;
  return rep;
}

void LatencyCollector::on_arrival(std::int64_t request_id, sim::SimTime t) {
  auto [it, inserted] = open_.try_emplace(request_id);
  if (!inserted) throw MetricsError(req_str(request_id) + " arrived twice");
  it->second.t_arr = t;
  it->second.sample.request_id = request_id;
}

void LatencyCollector::on_first_token(std::int64_t request_id, sim::SimTime t) {
  auto it = open_.find(request_id);
  if (it == open_.end()) throw MetricsError(req_str(request_id) + " not open");
  auto& open = it->second;
  if (open.last_token >= 0) throw MetricsError(req_str(request_id) + " already has first token");
  if (t < open.t_arr) throw MetricsError(req_str(request_id) + " first token before arrival");
  open.sample.ttft_us = t - open.t_arr;
  open.last_token = t;
}

void LatencyCollector::on_token(std::int64_t request_id, sim::SimTime t) {
  auto it = open_.find(request_id);
  if (it == open_.end()) throw MetricsError(req_str(request_id) + " not open");
  auto& open = it->second;
  if (open.last_token < 0) throw MetricsError(req_str(request_id) + " token before first token");
  const sim::SimTime gap = t - open.last_token;
  if (gap <= 0) throw MetricsError(req_str(request_id) + " non-positive token gap");
  open.sample.tpot_us.push_back(gap);
  open.last_token = t;
}

void LatencyCollector::on_done(std::int64_t request_id) {
  auto it = open_.find(request_id);
  if (it == open_.end()) throw MetricsError(req_str(request_id) + " not open");
  if (it->second.last_token < 0) {
    throw MetricsError(req_str(request_id) + " finished without emitting a token");
  }
  done_.push_back(std::move(it->second.sample));
  open_.erase(it);
}

std::vector<sim::SimTime> LatencyCollector::all_ttft_us() const {
  std::vector<sim::SimTime> out;
  out.reserve(done_.size());
  for (const auto& s : done_) out.push_back(s.ttft_us);
  return out;
}

std::vector<sim::SimTime> LatencyCollector::all_tpot_us() const {
  std::vector<sim::SimTime> out;
  for (const auto& s : done_) out.insert(out.end(), s.tpot_us.begin(), s.tpot_us.end());
  return out;
}

}  // namespace coserve::metrics
