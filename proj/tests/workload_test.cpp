#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "coserve/cost/profile.hpp"
#include "coserve/workload/step_plan.hpp"
#include "coserve/workload/trace.hpp"
#include "coserve/workload/trajectory.hpp"

using namespace coserve;
using namespace coserve::workload;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/coserve_wl_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
  void write(const std::string& body) const {
    std::ofstream f(path, std::ios::trunc);
    f << body;
  }
};

const cost::LatencyProfile& roll_profile() {
  static cost::ProfileBook book =
      cost::ProfileBook::load(std::string(COSERVE_SOURCE_DIR) + "/profiles/default.prof");
  return book.get("roll-8b", "sim-h");
}

}  // namespace

TEST_CASE("trace loader: unit scales keep records and exact gaps") {
  TempFile f("unit.csv");
  f.write(
      "t_arr_us,prompt_tokens,output_tokens\n"
      "0,1200,150\n"
      "2500,800,90\n"
      "2500,3000,410\n"
      "9000000,64,8\n");
  auto recs = load_serving_trace(f.path, 1.0, 1.0, 7);
  REQUIRE(recs.size() == 4);
  CHECK(recs[0] == ServingTraceRecord{0, 1200, 150});
  CHECK(recs[1].t_arr == 2500);
  CHECK(recs[2].t_arr == 2500);
  CHECK(recs[3] == ServingTraceRecord{9000000, 64, 8});
  CHECK(recs[1].t_arr - recs[0].t_arr == 2500);
  CHECK(recs[3].t_arr - recs[2].t_arr == 8997500);
}

TEST_CASE("trace loader: time_scale stretches offsets, rate_scale 2 duplicates") {
  TempFile f("scale.csv");
  f.write(
      "t_arr_us,prompt_tokens,output_tokens\n"
      "1000,100,10\n"
      "3000,200,20\n");
  auto recs = load_serving_trace(f.path, 2.5, 2.0, 7);
  REQUIRE(recs.size() == 4);
  CHECK(recs[0].t_arr == 2500);
  CHECK(recs[1].t_arr == 2500);
  CHECK(recs[2].t_arr == 7500);
  CHECK(recs[0].prompt_tokens == 100);
  CHECK(recs[2].prompt_tokens == 200);
}

TEST_CASE("trace loader: fractional rate_scale thins deterministically") {
  std::string body = "t_arr_us,prompt_tokens,output_tokens\n";
  for (int i = 0; i < 400; i++) {
    body += std::to_string(i * 1000) + ",100,10\n";
  }
  TempFile f("thin.csv");
  f.write(body);

  auto a = load_serving_trace(f.path, 1.0, 0.5, 42);
  auto b = load_serving_trace(f.path, 1.0, 0.5, 42);
  CHECK(a == b);  // same seed, same subset
  // Rough binomial bounds: 400 trials at p=0.5.
  CHECK(a.size() > 120);
  CHECK(a.size() < 280);

  auto c = load_serving_trace(f.path, 1.0, 0.5, 43);
  CHECK(c != a);  // different seed picks a different subset

  auto half_up = load_serving_trace(f.path, 1.0, 1.5, 42);
  CHECK(half_up.size() > 400 + 120);
  CHECK(half_up.size() < 400 + 280);
  CHECK(std::is_sorted(half_up.begin(), half_up.end(),
                       [](const auto& x, const auto& y) { return x.t_arr < y.t_arr; }));
}

TEST_CASE("trace loader: empty body is fine, malformed lines are not") {
  TempFile ok("empty.csv");
  ok.write("t_arr_us,prompt_tokens,output_tokens\n");
  CHECK(load_serving_trace(ok.path, 1.0, 1.0, 1).empty());

  TempFile header("hdr.csv");
  header.write("time,prompt,output\n0,1,1\n");
  CHECK_THROWS_WITH_AS(load_serving_trace(header.path, 1.0, 1.0, 1),
                       doctest::Contains("line 1"), ParseError);

  TempFile badint("badint.csv");
  badint.write("t_arr_us,prompt_tokens,output_tokens\n0,100,10\n5,x,10\n");
  CHECK_THROWS_WITH_AS(load_serving_trace(badint.path, 1.0, 1.0, 1),
                       doctest::Contains("line 3"), ParseError);

  TempFile fields("fields.csv");
  fields.write("t_arr_us,prompt_tokens,output_tokens\n0,100\n");
  CHECK_THROWS_WITH_AS(load_serving_trace(fields.path, 1.0, 1.0, 1),
                       doctest::Contains("line 2"), ParseError);

  TempFile nonpos("nonpos.csv");
  nonpos.write("t_arr_us,prompt_tokens,output_tokens\n0,100,0\n");
  CHECK_THROWS_WITH_AS(load_serving_trace(nonpos.path, 1.0, 1.0, 1),
                       doctest::Contains("positive"), ParseError);

  TempFile unsorted("unsorted.csv");
  unsorted.write("t_arr_us,prompt_tokens,output_tokens\n100,10,10\n50,10,10\n");
  CHECK_THROWS_WITH_AS(load_serving_trace(unsorted.path, 1.0, 1.0, 1),
                       doctest::Contains("line 3"), ParseError);

  CHECK_THROWS_AS(load_serving_trace("/nonexistent/nope.csv", 1.0, 1.0, 1), ParseError);
}

TEST_CASE("trace csv round-trips through write_trace_csv") {
  BurstyTraceParams p;
  p.duration_us = 120 * sim::kUsPerSec;
  auto recs = synth_bursty_trace(p, 99);
  REQUIRE(!recs.empty());
  TempFile f("roundtrip.csv");
  write_trace_csv(f.path, recs);
  auto back = load_serving_trace(f.path, 1.0, 1.0, 0);
  CHECK(back == recs);
}

TEST_CASE("bundled sample trace loads") {
  auto recs = load_serving_trace(std::string(COSERVE_SOURCE_DIR) + "/scenarios/traces/sample_trace.csv",
                                 1.0, 1.0, 0);
  CHECK(recs.size() >= 20);
  CHECK(std::is_sorted(recs.begin(), recs.end(),
                       [](const auto& x, const auto& y) { return x.t_arr < y.t_arr; }));
  CHECK(peak_to_mean(recs, sim::kUsPerSec) >= 1.5);
}

TEST_CASE("synthetic trace is bursty, sorted and seed-stable") {
  BurstyTraceParams p;  // defaults: 10 min, 0.8 Hz base, 6 Hz bursts
  auto recs = synth_bursty_trace(p, 5);
  REQUIRE(recs.size() > 200);
  CHECK(std::is_sorted(recs.begin(), recs.end(),
                       [](const auto& x, const auto& y) { return x.t_arr < y.t_arr; }));
  for (const auto& r : recs) {
    CHECK(r.prompt_tokens >= p.min_prompt);
    CHECK(r.prompt_tokens <= p.max_prompt);
    CHECK(r.output_tokens >= p.min_output);
    CHECK(r.output_tokens <= p.max_output);
  }
  CHECK(peak_to_mean(recs, sim::kUsPerSec) >= 1.5);

  CHECK(synth_bursty_trace(p, 5) == recs);
  CHECK(synth_bursty_trace(p, 6) != recs);
}

TEST_CASE("peak_to_mean on hand-built traces") {
  std::vector<ServingTraceRecord> flat;
  for (int i = 0; i < 10; i++) flat.push_back({i * sim::kUsPerSec, 10, 10});
  CHECK(peak_to_mean(flat, sim::kUsPerSec) == doctest::Approx(1.0));

  // 8 arrivals in one second, then 1 arrival in each of the next 2 seconds.
  std::vector<ServingTraceRecord> spiky;
  for (int i = 0; i < 8; i++) spiky.push_back({i * 1000, 10, 10});
  spiky.push_back({sim::kUsPerSec + 1, 10, 10});
  spiky.push_back({2 * sim::kUsPerSec + 1, 10, 10});
  CHECK(peak_to_mean(spiky, sim::kUsPerSec) == doctest::Approx(8.0 / (10.0 / 3.0)));

  CHECK(peak_to_mean({}, sim::kUsPerSec) == 0.0);
}

TEST_CASE("trajectory generation: counts, grouping, bounds, determinism") {
  TrajectoryParams p;
  auto specs = generate_trajectories(p, 6, 4, 11);
  REQUIRE(specs.size() == 24);
  for (int i = 0; i < 24; i++) {
    CHECK(specs[i].group_id == i / 4);
    CHECK(specs[i].idx_in_group == i % 4);
    CHECK(specs[i].num_turns() >= 1);
    CHECK(specs[i].num_turns() <= p.max_turns);
    CHECK(specs[i].initial_prompt >= p.min_prompt0);
    CHECK(specs[i].initial_prompt <= p.max_prompt0);
    CHECK(specs[i].turns[0].prompt_growth == 0);
    for (int t = 0; t < specs[i].num_turns(); t++) {
      const auto& turn = specs[i].turns[t];
      if (t > 0) {
        CHECK(turn.prompt_growth >= p.min_growth);
        CHECK(turn.prompt_growth <= p.max_growth);
      }
      CHECK(turn.decode_tokens >= p.min_decode);
      CHECK(turn.decode_tokens <= p.max_decode);
      CHECK(turn.env_delay_us >= 0);
    }
  }

  CHECK(generate_trajectories(p, 6, 4, 11) == specs);
  CHECK(generate_trajectories(p, 6, 4, 12) != specs);
  // Trajectory i doesn't depend on how many are generated after it.
  auto fewer = generate_trajectories(p, 2, 4, 11);
  for (int i = 0; i < 8; i++) {
    CHECK(fewer[i].initial_prompt == specs[i].initial_prompt);
    CHECK(fewer[i].turns == specs[i].turns);
  }
}

TEST_CASE("trajectory context accumulates prompts and decoded output") {
  TrajectorySpec s;
  s.initial_prompt = 1000;
  s.turns = {{0, 200, 0}, {300, 150, 0}, {500, 100, 0}};
  CHECK(s.context_after_prompt(0) == 1000);
  CHECK(s.context_after_prompt(1) == 1000 + 200 + 300);
  CHECK(s.context_after_prompt(2) == 1000 + 200 + 300 + 150 + 500);
  CHECK(s.total_prompt_tokens() == 1800);
  CHECK(s.total_decode_tokens() == 450);
}

TEST_CASE("trajectory batch statistics: prefill-heavy with a long completion tail") {
  TrajectoryParams p;
  auto specs = generate_trajectories(p, 250, 4, 2024);  // 1000 trajectories
  REQUIRE(specs.size() == 1000);

  const double share = prefill_token_share(specs);
  INFO("prefill token share ", share);
  CHECK(share >= 0.70);
  CHECK(share <= 0.90);

  std::vector<double> durations;
  double delay_sum = 0.0;
  std::int64_t delay_n = 0;
  for (const auto& s : specs) {
    durations.push_back(sim::to_seconds(estimate_duration_us(s, roll_profile())));
    for (const auto& t : s.turns) {
      delay_sum += sim::to_seconds(t.env_delay_us);
      delay_n++;
    }
  }
  CHECK(delay_sum / static_cast<double>(delay_n) <= 10.0);

  std::sort(durations.begin(), durations.end());
  const double p75 = durations[749];
  const double longest = durations.back();
  INFO("p75 ", p75, "s  max ", longest, "s");
  CHECK(p75 > 0.0);
  CHECK(p75 <= 0.30 * longest);
}

TEST_CASE("step controller: fixed batch waits for every group") {
  StepPlan plan;
  plan.mode = StepMode::FixedBatch;
  plan.target_groups = 8;
  StepController ctl(plan, 1);
  CHECK(!ctl.done());
  CHECK(ctl.take_initial_launch() == 8);
  for (int i = 0; i < 8; i++) {
    CHECK(!ctl.done());
    int more = -1;
    CHECK(ctl.on_group_complete(&more));  // fixed batch accepts everything
    CHECK(more == 0);
  }
  CHECK(ctl.done());
  CHECK(ctl.launched() == 8);
  CHECK(ctl.accepted() == 8);
  CHECK(ctl.launch_ratio() == doctest::Approx(1.0));
}

TEST_CASE("step controller: success_prob 1 degenerates to fixed-batch counts") {
  StepPlan plan;
  plan.mode = StepMode::RedundantSampling;
  plan.target_groups = 8;
  plan.success_prob = 1.0;
  StepController ctl(plan, 3);
  ctl.take_initial_launch();
  for (int i = 0; i < 8; i++) {
    int more = -1;
    CHECK(ctl.on_group_complete(&more));
    CHECK(more == 0);
  }
  CHECK(ctl.done());
  CHECK(ctl.launched() == 8);
  CHECK(ctl.accepted() == 8);
}

TEST_CASE("step controller: one-for-one replacement keeps in-flight pinned") {
  StepPlan plan;
  plan.mode = StepMode::RedundantSampling;
  plan.target_groups = 8;
  plan.success_prob = 0.25;
  StepController ctl(plan, 77);
  int pending = ctl.take_initial_launch();
  while (!ctl.done()) {
    REQUIRE(pending > 0);
    int more = 0;
    ctl.on_group_complete(&more);
    pending += more - 1;
    // Until the step resolves, accepted + in-flight sits exactly at target.
    if (!ctl.done()) CHECK(ctl.accepted() + ctl.in_flight() == 8);
  }
  CHECK(ctl.accepted() == 8);
  CHECK(ctl.in_flight() == 0);
  CHECK(ctl.launched() >= 8);
  CHECK(ctl.launched() <= plan.max_launched_groups);
}

TEST_CASE("step controller: launches follow the negative binomial mean") {
  StepPlan plan;
  plan.mode = StepMode::RedundantSampling;
  plan.target_groups = 8;
  plan.success_prob = 0.25;

  double total = 0.0;
  int max_launched = 0;
  const int kSteps = 500;
  for (int s = 0; s < kSteps; s++) {
    plan.step_index = s;
    StepController ctl(plan, 9001);
    ctl.take_initial_launch();
    while (!ctl.done()) ctl.on_group_complete(nullptr);
    CHECK(ctl.accepted() == 8);
    total += ctl.launched();
    max_launched = std::max(max_launched, ctl.launched());
  }
  const double mean = total / kSteps;
  INFO("mean launched ", mean, " max ", max_launched);
  // E[launched] = target / success_prob = 32; 500 steps keep the sample mean
  // well inside +/-10%.
  CHECK(mean > 32.0 * 0.9);
  CHECK(mean < 32.0 * 1.1);
  // Real-variance filtering forces big over-launch in the tail.
  CHECK(max_launched >= 2 * 8);
}

TEST_CASE("step controller: hard cap terminates hopeless steps") {
  StepPlan plan;
  plan.mode = StepMode::RedundantSampling;
  plan.target_groups = 4;
  plan.success_prob = 1e-6;
  plan.max_launched_groups = 20;
  StepController ctl(plan, 5);
  ctl.take_initial_launch();
  int completions = 0;
  while (!ctl.done()) {
    ctl.on_group_complete(nullptr);
    completions++;
    REQUIRE(completions <= 20);
  }
  CHECK(ctl.launched() <= 20);
  CHECK(ctl.completed() == ctl.launched());
  CHECK(ctl.accepted() < 4);  // step ended by the cap, not by success
}

TEST_CASE("step controller: misuse throws") {
  StepPlan plan;
  plan.target_groups = 2;
  StepController ctl(plan, 1);
  CHECK_THROWS_AS(ctl.on_group_complete(nullptr), StepControllerError);
  ctl.take_initial_launch();
  CHECK_THROWS_AS(ctl.take_initial_launch(), StepControllerError);
  ctl.on_group_complete(nullptr);
  ctl.on_group_complete(nullptr);
  CHECK_THROWS_AS(ctl.on_group_complete(nullptr), StepControllerError);

  StepPlan bad = plan;
  bad.mode = StepMode::RedundantSampling;
  bad.success_prob = 0.0;
  CHECK_THROWS_AS(StepController(bad, 1), StepControllerError);
  bad = plan;
  bad.max_launched_groups = 1;
  CHECK_THROWS_AS(StepController(bad, 1), StepControllerError);
}

TEST_CASE("step timeline: only cross-sync overhang extends the step") {
  using sim::secs;
  // Cross-cluster push fits entirely inside the overlap window.
  StepPhases hidden{secs(300), secs(40), secs(12), secs(20), secs(300)};
  CHECK(exposed_cross_sync_us(secs(20), secs(300)) == 0);
  CHECK(step_total_us(hidden) == secs(352));

  // 200s of transfer against a 100s window leaks 100s into the step.
  StepPhases leaking{secs(300), secs(40), secs(12), secs(200), secs(100)};
  CHECK(exposed_cross_sync_us(secs(200), secs(100)) == secs(100));
  CHECK(step_total_us(leaking) == secs(452));

  StepPhases zero_window{secs(10), secs(5), secs(1), secs(7), 0};
  CHECK(step_total_us(zero_window) == secs(23));
}
