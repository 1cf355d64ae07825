#include "coserve/metrics/verify.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>

#include "coserve/metrics/event_log.hpp"
#include "coserve/metrics/latency.hpp"

namespace coserve::metrics {
namespace {

std::int64_t to_i64(const std::string& s, const std::string& what) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw MetricsError("bad integer '" + s + "' in " + what);
  }
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); i++) {
    if (i == s.size() || s[i] == sep) {
      parts.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return parts;
}

}  // namespace

const std::string& ParsedEvent::get(const std::string& key) const {
  auto it = fields.find(key);
  if (it == fields.end()) throw MetricsError(type + " row missing field " + key);
  return it->second;
}

std::int64_t ParsedEvent::get_i64(const std::string& key) const {
  return to_i64(get(key), type + "." + key);
}

ParsedEvent parse_event_row(const std::string& row) {
  auto parts = split(row, ',');
  if (parts.size() < 2) throw MetricsError("event row needs t_us and type: '" + row + "'");
  ParsedEvent ev;
  ev.t = to_i64(parts[0], "event timestamp");
  ev.type = parts[1];
  if (ev.type.empty()) throw MetricsError("event row with empty type");
  for (std::size_t i = 2; i < parts.size(); i++) {
    const auto eq = parts[i].find('=');
    if (eq == std::string::npos || eq == 0) {
      throw MetricsError("event field without key=value shape: '" + parts[i] + "'");
    }
    ev.fields[parts[i].substr(0, eq)] = parts[i].substr(eq + 1);
  }
  return ev;
}

std::string VerifyReport::to_string() const {
  char head[64];
  std::snprintf(head, sizeof head, "%zu rows, digest %016llx", rows,
                static_cast<unsigned long long>(digest));
  std::string out = std::string(ok ? "OK" : "FAIL") + ": " + head;
  for (const auto& issue : issues) out += "\n  - " + issue;
  return out;
}

VerifyReport verify_event_log(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MetricsError(path + ": cannot open");

  VerifyReport rep;
  std::string line;
  if (!std::getline(f, line) || line != EventLog::kSchemaHeader) {
    rep.issues.push_back("missing or wrong schema header");
    return rep;
  }

  std::vector<std::string> raw;
  std::string digest_line;
  while (std::getline(f, line)) {
    if (line.rfind("digest,", 0) == 0) {
      digest_line = line;
      if (std::getline(f, line)) rep.issues.push_back("content after digest line");
      break;
    }
    raw.push_back(line);
  }
  rep.rows = raw.size();

  // Recompute the running FNV fold the log maintains in memory.
  std::uint64_t digest = 0xcbf29ce484222325ULL;
  auto fold = [&digest](const std::string& row) {
    for (unsigned char c : row) {
      digest ^= c;
      digest *= 0x100000001b3ULL;
    }
    digest ^= '\n';
    digest *= 0x100000001b3ULL;
  };
  for (const auto& row : raw) fold(row);
  rep.digest = digest;

  if (digest_line.empty()) {
    rep.issues.push_back("missing digest line");
  } else {
    char expect[32];
    std::snprintf(expect, sizeof expect, "digest,%016llx",
                  static_cast<unsigned long long>(digest));
    if (digest_line != expect) {
      rep.issues.push_back("digest mismatch: log says '" + digest_line + "', rows give '" +
                           expect + "'");
    }
  }

  std::vector<LatencySample> samples;
  std::vector<ParsedEvent> steps;
  sim::SimTime recovery_sum = 0;
  std::size_t summary_idx = SIZE_MAX;
  std::vector<ParsedEvent> events;
  events.reserve(raw.size());
  sim::SimTime prev_t = 0;
  for (std::size_t i = 0; i < raw.size(); i++) {
    try {
      events.push_back(parse_event_row(raw[i]));
    } catch (const MetricsError& e) {
      rep.issues.push_back("row " + std::to_string(i + 2) + ": " + e.what());
      continue;
    }
    const auto& ev = events.back();
    if (ev.t < prev_t) {
      rep.issues.push_back("row " + std::to_string(i + 2) + ": time went backwards");
    }
    prev_t = ev.t;
    try {
      if (ev.type == "request_done") {
        LatencySample s;
        s.request_id = ev.get_i64("req");
        s.ttft_us = ev.get_i64("ttft_us");
        if (ev.has("gaps_us") && !ev.get("gaps_us").empty()) {
          for (const auto& g : split(ev.get("gaps_us"), ';')) {
            s.tpot_us.push_back(to_i64(g, "request_done.gaps_us"));
          }
        }
        samples.push_back(std::move(s));
      } else if (ev.type == "gpu_recovery") {
        recovery_sum += ev.get_i64("gpus") * ev.get_i64("recovery_us");
      } else if (ev.type == "step_end") {
        steps.push_back(ev);
      } else if (ev.type == "summary") {
        if (summary_idx != SIZE_MAX) rep.issues.push_back("multiple summary rows");
        summary_idx = events.size() - 1;
      }
    } catch (const MetricsError& e) {
      rep.issues.push_back("row " + std::to_string(i + 2) + ": " + e.what());
    }
  }

  for (std::size_t i = 0; i < steps.size(); i++) {
    const auto& st = steps[i];
    try {
      if (st.get_i64("step_us") <= 0) rep.issues.push_back("step with non-positive duration");
      if (st.get_i64("tokens_in") < 0 || st.get_i64("tokens_out") < 0) {
        rep.issues.push_back("step with negative token counts");
      }
      if (st.get_i64("step") != static_cast<std::int64_t>(i)) {
        rep.issues.push_back("step indexes not contiguous from 0");
      }
    } catch (const MetricsError& e) {
      rep.issues.push_back(e.what());
    }
  }

  if (summary_idx != SIZE_MAX) {
    const ParsedEvent* summary = &events[summary_idx];
    try {
      SloConfig slo{summary->get_i64("ttft_budget_us"), summary->get_i64("tpot_budget_us")};
      const auto recomputed = slo_report(samples, slo);
      if (recomputed.p99_ttft_us != summary->get_i64("p99_ttft_us")) {
        rep.issues.push_back("summary p99_ttft_us=" + summary->get("p99_ttft_us") +
                             " but completion rows give " +
                             std::to_string(recomputed.p99_ttft_us));
      }
      if (recomputed.p99_tpot_us != summary->get_i64("p99_tpot_us")) {
        rep.issues.push_back("summary p99_tpot_us=" + summary->get("p99_tpot_us") +
                             " but completion rows give " +
                             std::to_string(recomputed.p99_tpot_us));
      }
      if ((summary->get_i64("violated") != 0) != recomputed.violated) {
        rep.issues.push_back("summary SLO verdict does not match recomputation");
      }
      const auto preempted = summary->get_i64("preempted_gpu_time_us");
      const auto total = summary->get_i64("total_gpu_time_us");
      if (preempted != recovery_sum) {
        rep.issues.push_back("summary preempted_gpu_time_us=" + std::to_string(preempted) +
                             " but recovery rows sum to " + std::to_string(recovery_sum));
      }
      if (preempted < 0 || total < 0 || preempted > total) {
        rep.issues.push_back("allocation overhead outside [0, 1]");
      }
      if (summary->has("steps") &&
          summary->get_i64("steps") != static_cast<std::int64_t>(steps.size())) {
        rep.issues.push_back("summary step count does not match step_end rows");
      }
    } catch (const MetricsError& e) {
      rep.issues.push_back(std::string("summary: ") + e.what());
    }
  }

  rep.ok = rep.issues.empty();
  return rep;
}

}  // namespace coserve::metrics
