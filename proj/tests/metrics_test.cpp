#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "coserve/metrics/csv.hpp"
#include "coserve/metrics/event_log.hpp"
#include "coserve/metrics/latency.hpp"
#include "coserve/metrics/percentile.hpp"
#include "coserve/metrics/step_metrics.hpp"
#include "coserve/metrics/verify.hpp"
#include "coserve/sim/rng.hpp"

using namespace coserve;
using namespace coserve::metrics;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/coserve_metrics_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
  std::string slurp() const {
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  }
  void spit(const std::string& body) const {
    std::ofstream f(path, std::ios::trunc);
    f << body;
  }
};

}  // namespace

TEST_CASE("percentile: nearest rank on known grids") {
  std::vector<sim::SimTime> grid(100);
  std::iota(grid.begin(), grid.end(), 1);  // 1..100
  CHECK(percentile(grid, 99.0) == 99);
  CHECK(percentile(grid, 100.0) == 100);
  CHECK(percentile(grid, 1.0) == 1);
  CHECK(percentile(grid, 50.0) == 50);
  CHECK(percentile(grid, 99.5) == 100);  // rank ceil(99.5) = 100
  CHECK(percentile(grid, 0.5) == 1);

  CHECK(percentile({42}, 1.0) == 42);
  CHECK(percentile({42}, 99.0) == 42);
  CHECK(percentile({7, 3}, 50.0) == 3);
  CHECK(percentile({7, 3}, 51.0) == 7);

  // Exact-boundary ranks: p*n/100 integral must not round up a slot.
  std::vector<sim::SimTime> ten(10);
  std::iota(ten.begin(), ten.end(), 1);
  CHECK(percentile(ten, 30.0) == 3);
  CHECK(percentile(ten, 90.0) == 9);
  CHECK(percentile(ten, 12.5 * 8 / 10 * 10 / 8) == 2);  // 12.5 via float detours

  CHECK_THROWS_AS(percentile({}, 50.0), EmptySamples);
  CHECK_THROWS_AS(percentile({1}, 0.0), MetricsError);
  CHECK_THROWS_AS(percentile({1}, -3.0), MetricsError);
  CHECK_THROWS_AS(percentile({1}, 100.5), MetricsError);
}

TEST_CASE("percentile: matches rank-counting oracle on random samples") {
  sim::RngStream rng(1234);
  for (int iter = 0; iter < 200; iter++) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 400));
    std::vector<sim::SimTime> xs(n);
    for (auto& x : xs) x = rng.uniform_int(0, 50);  // duplicates likely
    const double p = 0.5 + rng.uniform() * 99.5;
    const auto got = percentile(xs, p);

    // Oracle: smallest observed value whose cumulative count reaches the rank.
    const auto rank = static_cast<std::size_t>(
        std::ceil(p * static_cast<double>(n) / 100.0 - 1e-9));
    std::sort(xs.begin(), xs.end());
    const auto want = xs[std::clamp<std::size_t>(rank, 1, n) - 1];
    const auto at_or_below = static_cast<std::size_t>(
        std::count_if(xs.begin(), xs.end(), [&](auto v) { return v <= got; }));
    const auto strictly_below = static_cast<std::size_t>(
        std::count_if(xs.begin(), xs.end(), [&](auto v) { return v < got; }));
    CHECK(got == want);
    CHECK(at_or_below >= rank);        // enough mass at or below the answer
    CHECK(strictly_below < rank);      // nothing smaller already covers the rank
  }
}

TEST_CASE("slo_report: strict comparison against budgets") {
  SloConfig slo;  // 500 ms / 150 ms
  std::vector<LatencySample> all300;
  for (int i = 0; i < 50; i++) all300.push_back({i, 300 * sim::kUsPerMs, {100 * sim::kUsPerMs}});
  auto rep = slo_report(all300, slo);
  CHECK(rep.p99_ttft_us == 300 * sim::kUsPerMs);
  CHECK(!rep.violated);

  std::vector<LatencySample> tpot151{{0, 100, {151 * sim::kUsPerMs}}};
  CHECK(slo_report(tpot151, slo).violated);

  std::vector<LatencySample> at_budget{{0, 500 * sim::kUsPerMs, {150 * sim::kUsPerMs}}};
  auto at = slo_report(at_budget, slo);
  CHECK(at.p99_ttft_us == slo.ttft_budget_us);
  CHECK(at.p99_tpot_us == slo.tpot_budget_us);
  CHECK(!at.violated);  // at the budget is compliant; only above violates

  std::vector<LatencySample> over_ttft{{0, 500 * sim::kUsPerMs + 1, {1000}}};
  CHECK(slo_report(over_ttft, slo).violated);

  CHECK(!slo_report({}, slo).violated);

  auto relaxed = SloConfig::relaxed();
  CHECK(relaxed.ttft_budget_us == 1000 * sim::kUsPerMs);
  CHECK(relaxed.tpot_budget_us == 450 * sim::kUsPerMs);
  CHECK(!slo_report(tpot151, relaxed).violated);
}

TEST_CASE("latency collector: scripted request timings") {
  LatencyCollector col;
  col.on_arrival(7, 1000);
  col.on_first_token(7, 251000);   // ttft 250 ms
  col.on_token(7, 331000);         // gap 80 ms
  col.on_token(7, 411000);         // gap 80 ms
  col.on_token(7, 541000);         // gap 130 ms
  col.on_done(7);

  col.on_arrival(8, 2000);
  col.on_first_token(8, 2000);     // instant first token: ttft 0 is legal
  col.on_done(8);                  // single-token output: no gaps

  REQUIRE(col.samples().size() == 2);
  const auto& s = col.samples()[0];
  CHECK(s.request_id == 7);
  CHECK(s.ttft_us == 250000);
  CHECK(s.tpot_us == std::vector<sim::SimTime>{80000, 80000, 130000});
  CHECK(col.samples()[1].tpot_us.empty());
  CHECK(col.open_requests() == 0);
  CHECK(col.all_ttft_us() == std::vector<sim::SimTime>{250000, 0});
  CHECK(col.all_tpot_us().size() == 3);
}

TEST_CASE("latency collector: rejects malformed sequences") {
  LatencyCollector col;
  col.on_arrival(1, 100);
  CHECK_THROWS_AS(col.on_arrival(1, 200), MetricsError);
  CHECK_THROWS_AS(col.on_token(1, 300), MetricsError);     // token before first token
  CHECK_THROWS_AS(col.on_done(1), MetricsError);           // done without any token
  CHECK_THROWS_AS(col.on_first_token(2, 50), MetricsError);  // never arrived
  col.on_first_token(1, 400);
  CHECK_THROWS_AS(col.on_first_token(1, 500), MetricsError);
  CHECK_THROWS_AS(col.on_token(1, 400), MetricsError);     // zero gap
  CHECK_THROWS_AS(col.on_token(1, 399), MetricsError);     // negative gap
  col.on_token(1, 450);
  col.on_done(1);
  CHECK_THROWS_AS(col.on_done(1), MetricsError);
}

TEST_CASE("step metrics throughput is tokens over step seconds") {
  StepMetrics m;
  m.step_time_us = 2 * sim::kUsPerSec;
  m.tokens_in = 3000;
  m.tokens_out = 1000;
  CHECK(m.throughput_tok_s() == doctest::Approx(2000.0));
  m.step_time_us = 0;
  CHECK(m.throughput_tok_s() == 0.0);
}

TEST_CASE("allocation overhead ratio and bounds") {
  AllocationOverhead ov;
  ov.total_gpu_time_us = 100 * sim::kUsPerSec;
  ov.add_preemption(2, 5 * sim::kUsPerSec);  // 2 GPUs x 5 s
  CHECK(ov.preempted_gpu_time_us == 10 * sim::kUsPerSec);
  CHECK(ov.ratio() == doctest::Approx(0.1));
  CHECK_NOTHROW(ov.validate());

  ov.add_preemption(20, 5 * sim::kUsPerSec);
  CHECK_THROWS_AS(ov.validate(), MetricsError);

  AllocationOverhead zero;
  CHECK(zero.ratio() == 0.0);
  CHECK_NOTHROW(zero.validate());
}

TEST_CASE("event log: append, digest, write, verify round-trip") {
  EventLog log;
  log.append(0, "arrival", "req=1,prompt=100,output=4");
  log.append(150000, "request_done", "req=1,ttft_us=150000,gaps_us=1000;1200;900");
  log.append(200000, "gpu_recovery", "gpus=2,recovery_us=5000000");
  log.append(300000, "step_end",
             "step=0,rollout_us=250000,step_us=300000,tokens_in=100,tokens_out=4");
  log.append(300000, "summary",
             "p99_ttft_us=150000,p99_tpot_us=1200,ttft_budget_us=500000,tpot_budget_us=150000,"
             "violated=0,preempted_gpu_time_us=10000000,total_gpu_time_us=400000000,steps=1");
  CHECK(log.size() == 5);

  EventLog same;
  same.append(0, "arrival", "req=1,prompt=100,output=4");
  CHECK(same.digest() != log.digest());

  TempFile f("roundtrip.log");
  log.write_to(f.path);
  auto body = f.slurp();
  CHECK(body.rfind(EventLog::kSchemaHeader, 0) == 0);
  CHECK(body.find("digest,") != std::string::npos);

  auto rep = verify_event_log(f.path);
  INFO(rep.to_string());
  CHECK(rep.ok);
  CHECK(rep.rows == 5);
  CHECK(rep.digest == log.digest());
}

TEST_CASE("event log verifier: catches tampering and bad claims") {
  EventLog log;
  log.append(0, "request_done", "req=1,ttft_us=100,gaps_us=50;60");
  log.append(10, "request_done", "req=2,ttft_us=900,gaps_us=");
  log.append(20, "summary",
             "p99_ttft_us=900,p99_tpot_us=60,ttft_budget_us=500,tpot_budget_us=150,violated=1,"
             "preempted_gpu_time_us=0,total_gpu_time_us=1000");
  TempFile f("tamper.log");
  log.write_to(f.path);
  CHECK(verify_event_log(f.path).ok);

  SUBCASE("flipped byte breaks the digest") {
    auto body = f.slurp();
    const auto pos = body.find("ttft_us=100");
    body[pos + 8] = '9';  // 100 -> 900
    f.spit(body);
    auto rep = verify_event_log(f.path);
    CHECK(!rep.ok);
    bool digest_issue = false;
    for (const auto& s : rep.issues) digest_issue |= s.find("digest mismatch") != std::string::npos;
    CHECK(digest_issue);
  }

  SUBCASE("summary that contradicts completions") {
    EventLog bad;
    bad.append(0, "request_done", "req=1,ttft_us=100,gaps_us=50;60");
    bad.append(20, "summary",
               "p99_ttft_us=1,p99_tpot_us=60,ttft_budget_us=500,tpot_budget_us=150,violated=0,"
               "preempted_gpu_time_us=0,total_gpu_time_us=1000");
    bad.write_to(f.path);
    auto rep = verify_event_log(f.path);
    CHECK(!rep.ok);
    bool p99_issue = false;
    for (const auto& s : rep.issues) p99_issue |= s.find("p99_ttft_us") != std::string::npos;
    CHECK(p99_issue);
  }

  SUBCASE("recovery rows must sum to the claimed preempted time") {
    EventLog bad;
    bad.append(0, "gpu_recovery", "gpus=1,recovery_us=5");
    bad.append(20, "summary",
               "p99_ttft_us=0,p99_tpot_us=0,ttft_budget_us=500,tpot_budget_us=150,violated=0,"
               "preempted_gpu_time_us=99,total_gpu_time_us=1000");
    bad.write_to(f.path);
    CHECK(!verify_event_log(f.path).ok);
  }

  SUBCASE("time running backwards is flagged") {
    EventLog bad;
    bad.append(50, "arrival", "req=1");
    bad.append(40, "arrival", "req=2");
    bad.write_to(f.path);
    auto rep = verify_event_log(f.path);
    CHECK(!rep.ok);
  }

  SUBCASE("missing digest line") {
    f.spit(std::string(EventLog::kSchemaHeader) + "\n0,arrival,req=1\n");
    CHECK(!verify_event_log(f.path).ok);
  }

  SUBCASE("wrong header") {
    f.spit("schema,other,9\n");
    CHECK(!verify_event_log(f.path).ok);
  }

  CHECK_THROWS_AS(verify_event_log("/nonexistent/x.log"), MetricsError);
}

TEST_CASE("event row parser") {
  auto ev = parse_event_row("123,step_end,step=4,tokens_in=10");
  CHECK(ev.t == 123);
  CHECK(ev.type == "step_end");
  CHECK(ev.get_i64("step") == 4);
  CHECK(ev.get_i64("tokens_in") == 10);
  CHECK(!ev.has("tokens_out"));
  CHECK_THROWS_AS(ev.get("tokens_out"), MetricsError);
  CHECK_THROWS_AS(parse_event_row("oops"), MetricsError);
  CHECK_THROWS_AS(parse_event_row("12,arrival,noequals"), MetricsError);
  CHECK_THROWS_AS(parse_event_row("x,arrival"), MetricsError);

  auto bare = parse_event_row("5,heartbeat");
  CHECK(bare.fields.empty());
}

TEST_CASE("csv writers emit schema headers and exact rows") {
  TempFile lat("lat.csv");
  std::vector<LatencySample> samples{
      {3, 250000, {80000, 80000, 130000}},
      {4, 90000, {}},
  };
  write_latency_csv(lat.path, samples);
  CHECK(lat.slurp() ==
        "schema,coserve-latency,1\n"
        "request_id,ttft_us,tokens_out,tpot_mean_us,tpot_max_us\n"
        "3,250000,4,96667,130000\n"
        "4,90000,1,0,0\n");

  TempFile steps("steps.csv");
  StepMetrics m;
  m.step_index = 0;
  m.rollout_time_us = 1500000;
  m.step_time_us = 2000000;
  m.tokens_in = 3000;
  m.tokens_out = 1000;
  m.trajectories_launched = 12;
  m.trajectories_accepted = 8;
  write_step_csv(steps.path, {m});
  CHECK(steps.slurp() ==
        "schema,coserve-steps,1\n"
        "step,rollout_us,step_us,tokens_in,tokens_out,throughput_tok_s,launched,accepted,"
        "dropped,rerouted\n"
        "0,1500000,2000000,3000,1000,2000.000,12,8,0,0\n");

  TempFile sum("summary.csv");
  write_summary_csv(sum.path, {{"p99_ttft_us", "123"}, {"violated", "0"}});
  CHECK(sum.slurp() ==
        "schema,coserve-summary,1\n"
        "p99_ttft_us,123\n"
        "violated,0\n");
}
