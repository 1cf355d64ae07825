#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <optional>
#include <vector>

#include "coserve/exec/executor.hpp"
#include "coserve/metrics/latency.hpp"
#include "coserve/sim/rng.hpp"
#include "exec_cases.hpp"

using namespace coserve;
using exec::AdmissionDecision;
using exec::AdmissionMode;
using exec::ExecKind;
using exec::ExecutorCallbacks;
using exec::ExecutorConfig;
using exec::ExecutorError;
using exec::GpuExecutor;
using exec::InstanceRole;
using exec::kSlackInf;
using exec::RequestPhase;
using exec::ServingRequest;
using sim::ms;
using sim::secs;
using sim::SimTime;
using testing::MiniDriver;
using testing::SoundnessChecker;

namespace {

const cost::LatencyProfile& serving_prof() {
  static const cost::LatencyProfile p = testing::linear_serving_profile();
  return p;
}

const cost::LatencyProfile& rollout_prof() {
  static const cost::LatencyProfile p = testing::linear_rollout_profile();
  return p;
}

ExecutorConfig make_cfg(InstanceRole role = InstanceRole::Colocated,
                        AdmissionMode mode = AdmissionMode::Dual) {
  ExecutorConfig cfg;
  cfg.role = role;
  cfg.admission = mode;
  cfg.serving_profile = &serving_prof();
  cfg.rollout_profile = &rollout_prof();
  return cfg;
}

ServingRequest decoding_snapshot(std::int64_t id, std::int64_t prompt,
                                 std::int64_t target, SimTime t_arr, SimTime t_last) {
  ServingRequest req;
  req.id = id;
  req.t_arr = t_arr;
  req.prompt_tokens = prompt;
  req.target_output = target;
  req.t_last = t_last;
  req.tokens_emitted = 1;
  req.phase = RequestPhase::Decoding;
  return req;
}

}  // namespace

// With the 100 us/token serving profile, a queued 800-token prompt costs
// 80 ms, so at t=100 ms a request that arrived at t=0 under a 500 ms TTFT
// budget has 500 - 100 - 80 = 320 ms of slack left.
TEST_CASE("prefill slack: single queued request") {
  GpuExecutor gpu(0, make_cfg(), testing::test_kvc_config(), {});
  CHECK(gpu.min_prefill_slack(0) == kSlackInf);

  gpu.on_serving_arrival(1, 800, 10, 0);
  CHECK(gpu.prefill_slack(1, ms(100)) == ms(320));
  CHECK(gpu.prefill_slack(1, ms(420)) == 0);           // exactly at the deadline
  CHECK(gpu.prefill_slack(1, ms(500)) == -ms(80));     // already blown
  CHECK(gpu.min_prefill_slack(ms(100)) == ms(320));
}

TEST_CASE("prefill slack: FCFS queue accumulates predicted work") {
  GpuExecutor gpu(0, make_cfg(), testing::test_kvc_config(), {});
  gpu.on_serving_arrival(1, 800, 5, 0);    //  80 ms of prefill
  gpu.on_serving_arrival(2, 400, 5, 0);    //  40 ms
  gpu.on_serving_arrival(3, 2000, 5, 0);   // 200 ms

  // Cumulative completions: 80, 120, 320 ms.
  CHECK(gpu.prefill_slack(1, ms(100)) == ms(320));
  CHECK(gpu.prefill_slack(2, ms(100)) == ms(280));
  CHECK(gpu.prefill_slack(3, ms(100)) == ms(80));
  CHECK(gpu.min_prefill_slack(ms(100)) == ms(80));
}

TEST_CASE("prefill slack: randomized queues match the FCFS oracle") {
  sim::RngStream rng(7);
  for (int trial = 0; trial < 60; trial++) {
    GpuExecutor gpu(0, make_cfg(), testing::test_kvc_config(), {});
    const int n = static_cast<int>(rng.uniform_int(1, 8));
    SimTime t = 0;
    for (int i = 0; i < n; i++) {
      t += rng.uniform_int(0, ms(200));
      gpu.on_serving_arrival(100 + i, rng.uniform_int(1, 5000), 5, t);
    }
    const SimTime now = t + rng.uniform_int(0, ms(300));
    SimTime cum = 0;
    SimTime best = kSlackInf;
    for (auto id : gpu.prefill_queue()) {
      const auto& req = gpu.request(id);
      cum += serving_prof().prefill_us(req.prompt_tokens, cost::PrefillMode::Mono);
      const SimTime slack = req.t_arr + ms(500) - now - cum;
      CHECK(gpu.prefill_slack(id, now) == slack);
      best = std::min(best, slack);
    }
    CHECK(gpu.min_prefill_slack(now) == best);
  }
}

// Sixteen active decodes step in 16 ms; the tightest request emitted its last
// token at t=1000 ms, so at t=1020 ms it has 1000 + 150 - 1020 - 16 = 114 ms.
TEST_CASE("decode slack at batch sixteen") {
  GpuExecutor gpu(0, make_cfg(InstanceRole::Decoder), testing::test_kvc_config(), {});
  CHECK(gpu.min_decode_slack(ms(1020)) == kSlackInf);

  gpu.on_decode_handoff(decoding_snapshot(100, 100, 50, 0, ms(1000)), ms(1010));
  for (int i = 1; i < 16; i++) {
    gpu.on_decode_handoff(decoding_snapshot(100 + i, 100, 50, 0, ms(1010)), ms(1010));
  }
  CHECK(gpu.active_decodes().size() == 16);
  CHECK(gpu.decode_slack(100, ms(1020)) == ms(114));
  CHECK(gpu.decode_slack(105, ms(1020)) == ms(124));
  CHECK(gpu.min_decode_slack(ms(1020)) == ms(114));
}

TEST_CASE("admission: chunk fits inside decode slack") {
  std::optional<AdmissionDecision> seen;
  ExecutorCallbacks cb;
  cb.on_rollout_admitted = [&](const AdmissionDecision& d) { seen = d; };
  GpuExecutor gpu(0, make_cfg(InstanceRole::Decoder), testing::test_kvc_config(),
                  std::move(cb));
  gpu.on_decode_handoff(decoding_snapshot(1, 100, 50, 0, ms(1000)), ms(1010));
  gpu.enqueue_rollout_turn(77, 0, 300, 4, ms(1010));

  // Decode slack at b=1: 1000 + 150 - 1020 - 8 = 122 ms; the 300-token chunk
  // costs 300 * 105 us = 31.5 ms, so it is admitted.
  auto launch = gpu.tick(ms(1020));
  REQUIRE(launch.has_value());
  CHECK(launch->kind == ExecKind::RolloutPrefill);
  CHECK(launch->est_cost == 31500);
  CHECK(launch->duration == 31500);  // no jitter configured
  CHECK(launch->tokens == 300);
  REQUIRE(seen.has_value());
  CHECK(seen->now == ms(1020));
  CHECK(seen->kind == ExecKind::RolloutPrefill);
  CHECK(seen->id == 77);
  CHECK(seen->est_cost == 31500);
  CHECK(seen->prefill_slack_min == kSlackInf);  // decoder has no prefill queue
  CHECK(seen->decode_slack_min == ms(122));
  CHECK(seen->kvc_ok);
}

TEST_CASE("admission: chunk deferred when decode slack is too small") {
  GpuExecutor gpu(0, make_cfg(InstanceRole::Decoder), testing::test_kvc_config(), {});
  gpu.on_decode_handoff(decoding_snapshot(1, 100, 50, 0, ms(1000)), ms(1010));
  gpu.enqueue_rollout_turn(77, 0, 300, 4, ms(1010));

  // At t=1125 ms the decode slack is 1150 - 1125 - 8 = 17 ms < 31.5 ms, so
  // the tick launches the due serving decode instead.
  auto launch = gpu.tick(ms(1125));
  REQUIRE(launch.has_value());
  CHECK(launch->kind == ExecKind::ServingDecode);
  CHECK(launch->est_cost == 8000);
  CHECK(gpu.rollout_chunks_admitted() == 0);
}

TEST_CASE("admission: no serving work at all means pure harvest") {
  std::optional<AdmissionDecision> seen;
  ExecutorCallbacks cb;
  cb.on_rollout_admitted = [&](const AdmissionDecision& d) { seen = d; };
  GpuExecutor gpu(0, make_cfg(), testing::test_kvc_config(), std::move(cb));
  gpu.enqueue_rollout_turn(5, 0, 300, 0, 0);

  auto launch = gpu.tick(0);
  REQUIRE(launch.has_value());
  CHECK(launch->kind == ExecKind::RolloutPrefill);
  REQUIRE(seen.has_value());
  CHECK(seen->prefill_slack_min == kSlackInf);
  CHECK(seen->decode_slack_min == kSlackInf);
}

TEST_CASE("admission: kv budget gates rollout even with infinite slack") {
  mem::KvcConfig tiny;
  tiny.total_pages = 8;
  tiny.tokens_per_page = 16;
  tiny.headroom_fraction = 0.2;  // rollout budget cap: 6 pages

  for (auto mode : {AdmissionMode::Dual, AdmissionMode::Off}) {
    CAPTURE(admission_mode_name(mode));
    GpuExecutor gpu(0, make_cfg(InstanceRole::Colocated, mode), tiny, {});
    gpu.enqueue_rollout_turn(9, 0, 2000, 0, 0);
    // First chunk of 512 tokens needs 32 pages > the 6-page budget.
    CHECK(!gpu.tick(0).has_value());
    CHECK(gpu.rollout_chunks_admitted() == 0);

    // Serving is not affected by the rollout budget.
    gpu.on_serving_arrival(1, 64, 1, 0);
    auto launch = gpu.tick(0);
    REQUIRE(launch.has_value());
    CHECK(launch->kind == ExecKind::ServingPrefill);
  }
}

TEST_CASE("admission mode masks ignore the other slack") {
  // ttft-only ignores decode slack: the 17 ms decode-slack case admits.
  {
    GpuExecutor gpu(0, make_cfg(InstanceRole::Decoder, AdmissionMode::TtftOnly),
                    testing::test_kvc_config(), {});
    gpu.on_decode_handoff(decoding_snapshot(1, 100, 50, 0, ms(1000)), ms(1010));
    gpu.enqueue_rollout_turn(77, 0, 300, 4, ms(1010));
    auto launch = gpu.tick(ms(1125));
    REQUIRE(launch.has_value());
    CHECK(launch->kind == ExecKind::RolloutPrefill);
  }
  // tpot-only ignores prefill slack: a hopelessly late queued prefill no
  // longer blocks the chunk. Under dual the same state launches the prefill.
  for (auto mode : {AdmissionMode::TpotOnly, AdmissionMode::Off, AdmissionMode::Dual}) {
    CAPTURE(admission_mode_name(mode));
    GpuExecutor gpu(0, make_cfg(InstanceRole::Colocated, mode),
                    testing::test_kvc_config(), {});
    gpu.on_serving_arrival(1, 4000, 1, 0);  // 400 ms prefill, due long ago
    gpu.enqueue_rollout_turn(77, 0, 300, 0, 0);
    auto launch = gpu.tick(ms(450));
    REQUIRE(launch.has_value());
    if (mode == AdmissionMode::Dual) {
      CHECK(launch->kind == ExecKind::ServingPrefill);
    } else {
      CHECK(launch->kind == ExecKind::RolloutPrefill);
    }
  }
}

// Back-to-back 450 ms prefills leave 50 ms of slack at every completion;
// a 53.76 ms chunk never fits, so the whole burst is served first and the
// rollout turn runs entirely in the tail.
TEST_CASE("serving-first: no chunk lands inside a saturated burst") {
  metrics::LatencyCollector collector;
  std::vector<SimTime> turn_done;
  ExecutorCallbacks cb;
  cb.on_serving_token = [&](std::int64_t id, SimTime t, bool first) {
    if (first) collector.on_first_token(id, t);
    else collector.on_token(id, t);
  };
  cb.on_request_done = [&](std::int64_t id, SimTime) { collector.on_done(id); };
  cb.on_turn_complete = [&](std::int64_t, int, SimTime t) { turn_done.push_back(t); };

  auto cfg = make_cfg();
  cfg.stall_timeout_us = secs(10);
  GpuExecutor gpu(0, cfg, testing::test_kvc_config(), std::move(cb));
  MiniDriver driver(gpu);
  driver.after_event = [&](SimTime) { REQUIRE(gpu.kvc().conservation_holds()); };

  for (int i = 0; i < 6; i++) {
    const SimTime t = i * ms(450);
    driver.inject(t, [&, i](SimTime now) {
      collector.on_arrival(i, now);
      gpu.on_serving_arrival(i, 4500, 1, now);
    });
  }
  driver.inject(0, [&](SimTime now) { gpu.enqueue_rollout_turn(42, 0, 2048, 0, now); });
  driver.drain();

  // All six prefills run back to back; every TTFT is exactly 450 ms.
  REQUIRE(collector.samples().size() == 6);
  for (const auto& s : collector.samples()) CHECK(s.ttft_us == ms(450));

  // No rollout chunk starts before the burst drains at t=2700 ms; the four
  // chunks then run back to back and the turn completes at 2700 + 4 * 53.76.
  for (const auto& l : driver.launches()) {
    if (l.kind == ExecKind::RolloutPrefill) CHECK(l.start >= ms(2700));
  }
  CHECK(gpu.rollout_chunks_admitted() == 4);
  REQUIRE(turn_done.size() == 1);
  CHECK(turn_done[0] == ms(2700) + 4 * 53760);
  CHECK(testing::launches_exclusive(driver.launches()));
}

TEST_CASE("pure rollout: completion times match the cost tables exactly") {
  SUBCASE("single task: two chunks then ten decode steps") {
    std::vector<SimTime> turn_done;
    ExecutorCallbacks cb;
    cb.on_turn_complete = [&](std::int64_t, int, SimTime t) { turn_done.push_back(t); };
    GpuExecutor gpu(0, make_cfg(), testing::test_kvc_config(), std::move(cb));
    MiniDriver driver(gpu);
    driver.inject(0, [&](SimTime now) { gpu.enqueue_rollout_turn(1, 0, 1024, 10, now); });
    driver.drain();

    REQUIRE(turn_done.size() == 1);
    CHECK(turn_done[0] == 2 * 53760 + 10 * 8000);
    CHECK(gpu.rollout_tokens_prefilled() == 1024);
    CHECK(gpu.rollout_tokens_decoded() == 10);

    // The finished turn parked its KV (1024 + 10 tokens -> 65 pages) as a
    // prefix entry; nothing is left in the active set.
    CHECK(gpu.kvc().prefix_entries() == 1);
    CHECK(gpu.kvc().prefix_pages() == 65);
    CHECK(gpu.kvc().rollout_active_requests() == 0);
    CHECK(gpu.kvc().rollout_used() == 65);
  }

  SUBCASE("two tasks: prefills alternate, decodes batch") {
    std::vector<SimTime> turn_done;
    ExecutorCallbacks cb;
    cb.on_turn_complete = [&](std::int64_t, int, SimTime t) { turn_done.push_back(t); };
    GpuExecutor gpu(0, make_cfg(), testing::test_kvc_config(), std::move(cb));
    MiniDriver driver(gpu);
    driver.inject(0, [&](SimTime now) {
      gpu.enqueue_rollout_turn(1, 0, 512, 2, now);
      gpu.enqueue_rollout_turn(2, 0, 512, 2, now);
    });
    driver.drain();

    // chunk(1) @0, chunk(2) @53760, then two batch-2 decode steps of 9 ms.
    const auto& launches = driver.launches();
    REQUIRE(launches.size() == 4);
    CHECK(launches[0].kind == ExecKind::RolloutPrefill);
    CHECK(launches[1].kind == ExecKind::RolloutPrefill);
    CHECK(launches[2].kind == ExecKind::RolloutDecode);
    CHECK(launches[3].kind == ExecKind::RolloutDecode);
    CHECK(launches[1].start == 53760);
    CHECK(launches[2].start == 2 * 53760);
    CHECK(launches[2].batch == 2);
    CHECK(launches[3].batch == 2);
    REQUIRE(turn_done.size() == 2);
    CHECK(turn_done[0] == 2 * 53760 + 2 * 9000);
    CHECK(turn_done[1] == turn_done[0]);
  }
}

// A long-decoding task must not starve a queued prefill past the stall
// timeout: the stalest task picks the service class, so chunk and decode
// service alternate and both tasks survive.
TEST_CASE("rollout service alternates by staleness; no self-inflicted stalls") {
  std::vector<std::pair<std::int64_t, SimTime>> turn_done;
  ExecutorCallbacks cb;
  cb.on_turn_complete = [&](std::int64_t traj, int, SimTime t) {
    turn_done.emplace_back(traj, t);
  };
  GpuExecutor gpu(0, make_cfg(), testing::test_kvc_config(), std::move(cb));
  MiniDriver driver(gpu);
  driver.inject(0, [&](SimTime now) {
    gpu.enqueue_rollout_turn(1, 0, 512, 300, now);  // 1 chunk + 2.4 s of decode
    gpu.enqueue_rollout_turn(2, 0, 1024, 0, now);   // 2 chunks, no decode
  });
  driver.drain();

  CHECK(driver.stall_drops().empty());
  REQUIRE(turn_done.size() == 2);
  // Trace: chunk t1 @0; chunk t2 @53760; decode t1 @107520; chunk t2 @115520
  // finishes t2 at 169280; t1 decodes the remaining 299 steps back to back.
  CHECK(turn_done[0] == std::pair<std::int64_t, SimTime>{2, 169280});
  CHECK(turn_done[1] == std::pair<std::int64_t, SimTime>{1, 169280 + 299 * 8000});
  CHECK(testing::launches_exclusive(driver.launches()));
}

TEST_CASE("stall detection") {
  SUBCASE("a task blocked for the full timeout is dropped exactly once") {
    std::vector<std::pair<std::int64_t, SimTime>> drops;
    ExecutorCallbacks cb;
    cb.on_stall_drop = [&](std::int64_t traj, int turn, SimTime t) {
      CHECK(turn == 3);
      drops.emplace_back(traj, t);
    };
    GpuExecutor gpu(0, make_cfg(), testing::test_kvc_config(), std::move(cb));
    MiniDriver driver(gpu);
    driver.inject(0, [&](SimTime now) {
      gpu.on_serving_arrival(1, 25000, 1, now);      // 2.5 s prefill, due now
      gpu.enqueue_rollout_turn(7, 3, 2048, 0, now);  // never admitted
    });
    driver.run_until(secs(4));

    REQUIRE(drops.size() == 1);
    CHECK(drops[0] == std::pair<std::int64_t, SimTime>{7, secs(2)});
    CHECK(driver.stall_drops() == std::vector<std::int64_t>{7});
    CHECK(gpu.rollout_tasks().empty());
    CHECK(gpu.kvc().rollout_used() == 0);
    CHECK(gpu.detect_stalls(secs(4)).empty());  // nothing left to drop
  }

  SUBCASE("progress after 1.9 s beats the 2 s timeout") {
    std::vector<SimTime> turn_done;
    ExecutorCallbacks cb;
    cb.on_turn_complete = [&](std::int64_t, int, SimTime t) { turn_done.push_back(t); };
    GpuExecutor gpu(0, make_cfg(), testing::test_kvc_config(), std::move(cb));
    MiniDriver driver(gpu);
    driver.inject(0, [&](SimTime now) {
      gpu.on_serving_arrival(1, 19000, 1, now);  // occupies until t=1.9 s
      gpu.enqueue_rollout_turn(7, 0, 512, 0, now);
    });
    driver.drain();

    CHECK(driver.stall_drops().empty());
    REQUIRE(turn_done.size() == 1);
    CHECK(turn_done[0] == ms(1900) + 53760);
  }

  SUBCASE("a dropped turn loses its consumed prefix and re-prefills in full") {
    std::vector<std::int64_t> drops;
    ExecutorCallbacks cb;
    cb.on_stall_drop = [&](std::int64_t traj, int, SimTime) { drops.push_back(traj); };
    GpuExecutor gpu(0, make_cfg(), testing::test_kvc_config(), std::move(cb));
    MiniDriver driver(gpu);

    // Turn 0 completes and parks a 512-token prefix.
    driver.inject(0, [&](SimTime now) { gpu.enqueue_rollout_turn(7, 0, 512, 0, now); });
    // Turn 1 consumes the prefix, then a 2.5 s serving prefill starves it.
    driver.inject(ms(60), [&](SimTime now) {
      gpu.enqueue_rollout_turn(7, 1, 1024, 0, now);
      gpu.on_serving_arrival(1, 25000, 1, now);
    });
    // Retry of turn 1 after the burst: the taken prefix is gone, so the whole
    // 1024-token history prefills again.
    driver.inject(ms(2600), [&](SimTime now) { gpu.enqueue_rollout_turn(7, 1, 1024, 0, now); });
    driver.drain();

    CHECK(gpu.prefix_hits() == 1);    // turn 1, first attempt
    CHECK(gpu.prefix_misses() == 2);  // turn 0 and the retry
    CHECK(drops == std::vector<std::int64_t>{7});
    CHECK(gpu.rollout_tokens_prefilled() == 512 + 1024);
    CHECK(gpu.kvc().conservation_holds());
  }
}

TEST_CASE("prefix cache carries context across turns") {
  std::vector<SimTime> turn_done;
  ExecutorCallbacks cb;
  cb.on_turn_complete = [&](std::int64_t, int, SimTime t) { turn_done.push_back(t); };
  GpuExecutor gpu(0, make_cfg(), testing::test_kvc_config(), std::move(cb));
  MiniDriver driver(gpu);

  // Turn 0: 512 prefill + 2 decodes -> 514 tokens of KV parked at 61520 us.
  driver.inject(0, [&](SimTime now) { gpu.enqueue_rollout_turn(9, 0, 512, 2, now); });
  // Turn 1 grows the context to 814 tokens; only 300 prefill on the hit.
  driver.inject(ms(100), [&](SimTime now) { gpu.enqueue_rollout_turn(9, 1, 814, 1, now); });
  driver.drain();

  CHECK(gpu.prefix_hits() == 1);
  CHECK(gpu.prefix_misses() == 1);
  CHECK(gpu.rollout_tokens_prefilled() == 512 + 300);
  REQUIRE(turn_done.size() == 2);
  CHECK(turn_done[0] == 53760 + 2 * 8000);
  // Turn 1: one 300-token chunk at 105 us/token plus one decode step.
  CHECK(turn_done[1] == ms(100) + 300 * 105 + 8000);
  CHECK(gpu.kvc().prefix_entries() == 1);
  CHECK(gpu.kvc().prefix_pages() == gpu.kvc().pages_for_tokens(815));
}

namespace {

// One colocated GPU under a fixed serving + rollout workload, driven to
// completion under a given admission mode.
struct ServeRun {
  metrics::LatencyCollector collector;
  SoundnessChecker checker;
  int turns_done = 0;
  int cuts = 0;
  std::optional<GpuExecutor> gpu;
  std::optional<MiniDriver> driver;

  explicit ServeRun(AdmissionMode mode) {
    ExecutorCallbacks cb;
    cb.on_serving_token = [this](std::int64_t id, SimTime t, bool first) {
      if (first) collector.on_first_token(id, t);
      else collector.on_token(id, t);
    };
    cb.on_request_done = [this](std::int64_t id, SimTime) { collector.on_done(id); };
    cb.on_rollout_admitted = [this](const AdmissionDecision& d) { checker.on_admit(d); };
    cb.on_turn_complete = [this](std::int64_t, int, SimTime) { turns_done++; };
    cb.on_memory_cut = [this](const mem::CutReport&, SimTime) { cuts++; };

    auto cfg = make_cfg(InstanceRole::Colocated, mode);
    cfg.stall_timeout_us = secs(60);
    gpu.emplace(0, cfg, testing::test_kvc_config(), std::move(cb));
    checker.gpu = &*gpu;
    driver.emplace(*gpu);
    driver->after_event = [this](SimTime) { REQUIRE(gpu->kvc().conservation_holds()); };

    // One request per second. Admission may stretch a request to its limits
    // (TTFT up to 500 ms, then three token gaps of up to 150 ms each), so the
    // worst-case span is 950 ms; the 1 s spacing keeps the serving stream
    // from ever interfering with itself and every SLO miss is attributable to
    // rollout admission.
    for (int i = 0; i < 12; i++) {
      driver->inject(i * sim::kUsPerSec, [this, i](SimTime now) {
        collector.on_arrival(i, now);
        gpu->on_serving_arrival(i, 3000, 4, now);
      });
    }
    for (int k = 0; k < 4; k++) {
      driver->inject(0, [this, k](SimTime now) {
        gpu->enqueue_rollout_turn(900 + k, 0, 2048, 50, now);
      });
    }
    driver->drain();
  }
};

}  // namespace

TEST_CASE("dual admission keeps both budgets; off breaks them") {
  ServeRun dual(AdmissionMode::Dual);
  REQUIRE(dual.collector.samples().size() == 12);
  const auto dual_report = metrics::slo_report(dual.collector.samples(), {});
  CHECK(!dual_report.violated);
  // Exact cost tables and zero jitter make the admission predictions sharp:
  // every deadline holds with no margin to spare.
  CHECK(dual_report.p99_ttft_us <= ms(500));
  CHECK(dual_report.p99_tpot_us <= ms(150));
  CHECK(dual.checker.checked > 0);
  CHECK(dual.checker.violations() == 0);
  CHECK(dual.turns_done == 4);  // rollout still finished: cooperation, not corks
  CHECK(dual.gpu->rollout_tokens_prefilled() == 4 * 2048);
  CHECK(dual.gpu->rollout_tokens_decoded() == 4 * 50);
  CHECK(testing::launches_exclusive(dual.driver->launches()));

  ServeRun off(AdmissionMode::Off);
  REQUIRE(off.collector.samples().size() == 12);
  const auto off_report = metrics::slo_report(off.collector.samples(), {});
  CHECK(off_report.violated);
  CHECK(off_report.p99_ttft_us > ms(500));
  CHECK(off.checker.violations() > 0);
  CHECK(testing::launches_exclusive(off.driver->launches()));
}

TEST_CASE("single-sided admission masks break exactly the unguarded budget") {
  ServeRun ttft_only(AdmissionMode::TtftOnly);
  const auto ttft_report = metrics::slo_report(ttft_only.collector.samples(), {});
  CHECK(ttft_only.checker.tpot_violations > 0);
  CHECK(ttft_report.p99_tpot_us > ms(150));

  ServeRun tpot_only(AdmissionMode::TpotOnly);
  const auto tpot_report = metrics::slo_report(tpot_only.collector.samples(), {});
  CHECK(tpot_only.checker.ttft_violations > 0);
  CHECK(tpot_report.p99_ttft_us > ms(500));
}

TEST_CASE("prefiller hands decoding off to a decoder instance") {
  metrics::LatencyCollector collector;
  std::optional<ServingRequest> handed;
  int done_on_decoder = 0;

  ExecutorCallbacks pcb;
  pcb.on_serving_token = [&](std::int64_t id, SimTime t, bool first) {
    REQUIRE(first);
    collector.on_first_token(id, t);
  };
  pcb.on_prefill_handoff = [&](const ServingRequest& req, SimTime) { handed = req; };
  GpuExecutor pre(0, make_cfg(InstanceRole::Prefiller), testing::test_kvc_config(),
                  std::move(pcb));

  ExecutorCallbacks dcb;
  dcb.on_serving_token = [&](std::int64_t id, SimTime t, bool first) {
    REQUIRE(!first);
    collector.on_token(id, t);
  };
  dcb.on_request_done = [&](std::int64_t id, SimTime) {
    collector.on_done(id);
    done_on_decoder++;
  };
  GpuExecutor dec(1, make_cfg(InstanceRole::Decoder), testing::test_kvc_config(),
                  std::move(dcb));

  collector.on_arrival(1, 0);
  pre.on_serving_arrival(1, 800, 4, 0);
  auto launch = pre.tick(0);
  REQUIRE(launch.has_value());
  CHECK(launch->kind == ExecKind::ServingPrefill);
  CHECK(launch->duration == ms(80));
  pre.complete(ms(80));

  // The prefiller is fully drained; the snapshot carries the token state.
  REQUIRE(handed.has_value());
  CHECK(handed->tokens_emitted == 1);
  CHECK(handed->t_last == ms(80));
  CHECK(pre.open_serving_requests() == 0);
  CHECK(pre.kvc().serving_used() == 0);

  // KV re-materializes on the decoder (801 tokens -> 51 pages).
  dec.on_decode_handoff(*handed, ms(80));
  CHECK(dec.kvc().serving_used() == 51);
  SimTime t = ms(80);
  for (int step = 0; step < 3; step++) {
    auto d = dec.tick(t);
    REQUIRE(d.has_value());
    CHECK(d->kind == ExecKind::ServingDecode);
    t += d->duration;
    dec.complete(t);
  }
  CHECK(done_on_decoder == 1);
  CHECK(dec.open_serving_requests() == 0);
  CHECK(dec.kvc().serving_used() == 0);

  REQUIRE(collector.samples().size() == 1);
  const auto& s = collector.samples()[0];
  CHECK(s.ttft_us == ms(80));
  CHECK(s.tpot_us == std::vector<SimTime>{8000, 8000, 8000});
}

TEST_CASE("serving decode grows KV by pages as tokens accumulate") {
  GpuExecutor gpu(0, make_cfg(), testing::test_kvc_config(), {});
  gpu.on_serving_arrival(1, 15, 20, 0);

  auto p = gpu.tick(0);
  REQUIRE(p.has_value());
  CHECK(p->duration == 1500);
  CHECK(gpu.kvc().serving_used() == 1);
  gpu.complete(1500);

  // First decode grows KV 15 -> 16 (still one page); the next needs a second.
  auto d1 = gpu.tick(1500);
  REQUIRE(d1.has_value());
  CHECK(gpu.kvc().serving_used() == 1);
  gpu.complete(1500 + 8000);
  auto d2 = gpu.tick(9500);
  REQUIRE(d2.has_value());
  CHECK(gpu.kvc().serving_used() == 2);

  MiniDriver driver(gpu);
  // MiniDriver starts at t=0 but only processes pending completions/ticks.
  driver.run_until(secs(1));
  CHECK(gpu.open_serving_requests() == 0);
  CHECK(gpu.kvc().serving_used() == 0);
  CHECK(gpu.kvc().free_pages() == gpu.kvc().pool().total());
}

TEST_CASE("blocked serving growth reports a memory cut and stays blocked") {
  mem::KvcConfig tiny;
  tiny.total_pages = 4;
  tiny.tokens_per_page = 16;
  tiny.headroom_fraction = 0.2;
  int cuts = 0;
  ExecutorCallbacks cb;
  cb.on_memory_cut = [&](const mem::CutReport&, SimTime) { cuts++; };
  GpuExecutor gpu(0, make_cfg(), tiny, std::move(cb));

  gpu.on_serving_arrival(1, 64, 30, 0);  // 4 pages: fills the pool exactly
  auto p = gpu.tick(0);
  REQUIRE(p.has_value());
  gpu.complete(6400);

  auto d1 = gpu.tick(6400);  // kv 64 -> 65 needs a fifth page
  CHECK(!d1.has_value());
  CHECK(gpu.serving_blocked());
  CHECK(cuts == 1);  // the burst cut fired once and freed nothing
  CHECK(!gpu.tick(6400).has_value());
  CHECK(cuts == 1);  // frozen budget: no second cut this step
}

// A serving prefill that cannot fit triggers a burst cut which aborts the
// youngest rollout allocation; the executor must drop the matching task so no
// further work runs against the vanished KV, and the serving map then
// succeeds.  The admission side-effect is visible too: decode steps were only
// admitted while the serving deadline had room, so the request still makes
// its TTFT budget after the abort.
TEST_CASE("serving burst cut aborts the resident rollout task") {
  mem::KvcConfig small;               // 64 pages, budget 48, headroom 16
  small.total_pages = 64;
  small.tokens_per_page = 16;
  small.headroom_fraction = 0.25;

  std::vector<std::tuple<std::int64_t, int, SimTime>> aborts;
  std::vector<mem::CutReport> cuts;
  metrics::LatencyCollector lat;
  ExecutorCallbacks cb;
  cb.on_rollout_abort = [&](std::int64_t traj, int turn, SimTime t) {
    aborts.emplace_back(traj, turn, t);
  };
  cb.on_memory_cut = [&](const mem::CutReport& r, SimTime) { cuts.push_back(r); };
  cb.on_serving_token = [&](std::int64_t req, SimTime t, bool first) {
    if (first) lat.on_first_token(req, t);
  };
  cb.on_request_done = [&](std::int64_t req, SimTime) { lat.on_done(req); };

  auto cfg = make_cfg();
  cfg.stall_timeout_us = secs(60);    // keep the stall path out of this story
  GpuExecutor gpu(0, cfg, small, std::move(cb));
  MiniDriver driver(gpu);
  driver.inject(0, [&](SimTime now) {
    // 512-token chunk = 32 pages, then decode grows a page every 16 tokens.
    gpu.enqueue_rollout_turn(5, 0, 512, 200, now);
    gpu.on_serving_arrival(7, 600, 1, now);   // 38 pages once launched
    lat.on_arrival(7, now);
  });
  driver.drain();

  // Decode steps stay admissible while 8 ms fits the prefill slack
  // (500 ms - 60 ms of predicted prefill): the last one launches at
  // 53760 + 47 * 8000 = 429760 and lands at 437760 with 48 tokens decoded.
  CHECK(gpu.rollout_tokens_decoded() == 48);

  // At 437760 the prefill is due but 38 pages > 29 free: the burst cut aborts
  // the resident task (35 pages), the map succeeds, and the task is gone.
  REQUIRE(aborts.size() == 1);
  CHECK(aborts[0] == std::tuple<std::int64_t, int, SimTime>{5, 0, 437760});
  REQUIRE(cuts.size() == 1);
  CHECK(cuts[0].aborted_trajectories == std::vector<std::int64_t>{5});
  CHECK(cuts[0].freed_pages == 35);
  CHECK(gpu.rollout_tasks().empty());
  CHECK(gpu.kvc().rollout_used() == 0);
  CHECK(driver.stall_drops().empty());

  // The aborted turn never completed, and serving still made its deadline.
  CHECK(gpu.rollout_tokens_prefilled() == 512);
  REQUIRE(lat.samples().size() == 1);
  CHECK(lat.samples()[0].ttft_us == 497760);
  CHECK(gpu.open_serving_requests() == 0);
  CHECK(gpu.kvc().conservation_holds());
  CHECK(testing::launches_exclusive(driver.launches()));
}

TEST_CASE("cancel_rollout mid-chunk releases pages and voids the completion") {
  GpuExecutor gpu(0, make_cfg(), testing::test_kvc_config(), {});
  gpu.enqueue_rollout_turn(5, 0, 512, 4, 0);
  auto launch = gpu.tick(0);
  REQUIRE(launch.has_value());
  CHECK(gpu.kvc().rollout_used() == 32);

  CHECK(gpu.cancel_rollout(5));
  CHECK(!gpu.cancel_rollout(5));  // already gone
  CHECK(gpu.kvc().rollout_used() == 0);
  gpu.complete(53760);  // completion of the orphaned chunk is a no-op
  CHECK(gpu.rollout_tokens_prefilled() == 0);
  CHECK(gpu.rollout_tasks().empty());
  CHECK(!gpu.tick(53760).has_value());
  CHECK(gpu.kvc().conservation_holds());
}

TEST_CASE("execution jitter is bounded, applied, and seed-stable") {
  auto run = [&](std::uint64_t seed) {
    sim::RngStream rng(seed);
    auto cfg = make_cfg();
    cfg.exec_jitter = 0.05;
    GpuExecutor gpu(0, cfg, testing::test_kvc_config(), {}, &rng);
    MiniDriver driver(gpu);
    driver.inject(0, [&](SimTime now) { gpu.enqueue_rollout_turn(1, 0, 2048, 20, now); });
    driver.drain();
    std::vector<SimTime> durations;
    for (const auto& l : driver.launches()) durations.push_back(l.duration);
    return durations;
  };

  const auto a = run(99);
  const auto b = run(99);
  const auto c = run(101);
  CHECK(a == b);
  CHECK(a != c);
  bool any_moved = false;
  const auto est = [&](std::size_t i) {
    return i < 4 ? 53760 : 8000;  // 4 chunks then batch-1 decode steps
  };
  for (std::size_t i = 0; i < a.size(); i++) {
    CHECK(a[i] >= 1);
    CHECK(std::abs(a[i] - est(i)) <= est(i) / 20 + 1);
    if (a[i] != est(i)) any_moved = true;
  }
  CHECK(any_moved);
}

TEST_CASE("misuse is rejected loudly") {
  auto kvc = testing::test_kvc_config();

  SUBCASE("constructor validation") {
    auto cfg = make_cfg();
    cfg.serving_profile = nullptr;
    CHECK_THROWS_AS(GpuExecutor(0, cfg, kvc, {}), ExecutorError);
    cfg = make_cfg();
    cfg.slo.tpot_budget_us = 0;
    CHECK_THROWS_AS(GpuExecutor(0, cfg, kvc, {}), ExecutorError);
    cfg = make_cfg();
    cfg.chunk_tokens = 0;
    CHECK_THROWS_AS(GpuExecutor(0, cfg, kvc, {}), ExecutorError);
  }

  SUBCASE("completion protocol") {
    GpuExecutor gpu(0, make_cfg(), kvc, {});
    CHECK_THROWS_AS(gpu.complete(0), ExecutorError);
    gpu.on_serving_arrival(1, 100, 1, 0);
    REQUIRE(gpu.tick(0).has_value());
    CHECK_THROWS_AS(gpu.complete(5000), ExecutorError);  // ends at 10000
    gpu.complete(10000);
  }

  SUBCASE("serving entry points") {
    GpuExecutor gpu(0, make_cfg(), kvc, {});
    gpu.on_serving_arrival(1, 100, 1, 0);
    CHECK_THROWS_AS(gpu.on_serving_arrival(1, 100, 1, 0), ExecutorError);
    CHECK_THROWS_AS(gpu.on_serving_arrival(2, 0, 1, 0), ExecutorError);
    CHECK_THROWS_AS(gpu.request(99), ExecutorError);
    CHECK_THROWS_AS(gpu.decode_slack(1, 0), ExecutorError);  // still queued
    CHECK_THROWS_AS(gpu.prefill_slack(99, 0), ExecutorError);

    GpuExecutor decoder(1, make_cfg(InstanceRole::Decoder), kvc, {});
    CHECK_THROWS_AS(decoder.on_serving_arrival(3, 100, 1, 0), ExecutorError);
    ServingRequest queued;
    queued.id = 4;
    queued.prompt_tokens = 100;
    CHECK_THROWS_AS(decoder.on_decode_handoff(queued, 0), ExecutorError);

    GpuExecutor prefiller(2, make_cfg(InstanceRole::Prefiller), kvc, {});
    CHECK_THROWS_AS(
        prefiller.on_decode_handoff(decoding_snapshot(5, 100, 4, 0, 100), 100),
        ExecutorError);
  }

  SUBCASE("rollout entry points") {
    GpuExecutor gpu(0, make_cfg(), kvc, {});
    gpu.enqueue_rollout_turn(1, 0, 512, 4, 0);
    CHECK_THROWS_AS(gpu.enqueue_rollout_turn(1, 1, 600, 4, 0), ExecutorError);
    CHECK_THROWS_AS(gpu.enqueue_rollout_turn(2, 0, 0, 4, 0), ExecutorError);
    CHECK_THROWS_AS(gpu.enqueue_rollout_turn(3, 0, 512, -1, 0), ExecutorError);
  }
}
