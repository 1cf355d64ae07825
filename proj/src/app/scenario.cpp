#include "coserve/app/scenario.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

namespace coserve::app {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ScenarioError(where + ": " + what);
}

void read_value(const json& v, const std::string& p, bool& out) {
  if (!v.is_boolean()) fail(p, "expected a bool");
  out = v.get<bool>();
}

void read_value(const json& v, const std::string& p, std::int64_t& out) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) fail(p, "expected an integer");
  out = v.get<std::int64_t>();
}

void read_value(const json& v, const std::string& p, int& out) {
  std::int64_t wide = 0;
  read_value(v, p, wide);
  if (wide < std::numeric_limits<int>::min() || wide > std::numeric_limits<int>::max()) {
    fail(p, "integer out of range");
  }
  out = static_cast<int>(wide);
}

void read_value(const json& v, const std::string& p, std::uint64_t& out) {
  if (v.is_number_unsigned()) {
    out = v.get<std::uint64_t>();
    return;
  }
  std::int64_t wide = 0;
  read_value(v, p, wide);
  if (wide < 0) fail(p, "expected a non-negative integer");
  out = static_cast<std::uint64_t>(wide);
}

void read_value(const json& v, const std::string& p, double& out) {
  if (!v.is_number()) fail(p, "expected a number");
  out = v.get<double>();
}

void read_value(const json& v, const std::string& p, std::string& out) {
  if (!v.is_string()) fail(p, "expected a string");
  out = v.get<std::string>();
}

// Checked view over one JSON object: typed reads with key-path errors, and
// every key must be consumed or finish() rejects it as a typo.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  template <typename T>
  void opt(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    read_value(j_.at(key), path_ + "." + key, out);
  }

  // Durations are written in human units; everything internal is micros.
  void opt_secs(const std::string& key, sim::SimTime& out) { opt_scaled(key, 1e6, out); }
  void opt_millis(const std::string& key, sim::SimTime& out) { opt_scaled(key, 1e3, out); }

  bool has_object(const std::string& key) const {
    return j_.contains(key) && j_.at(key).is_object();
  }

  Section enter(const std::string& key) {
    seen_.insert(key);
    return Section(j_.at(key), path_ + "." + key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) fail(path_, "unknown key '" + item.key() + "'");
    }
  }

  const std::string& path() const { return path_; }

 private:
  void opt_scaled(const std::string& key, double to_us, sim::SimTime& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const std::string p = path_ + "." + key;
    double v = 0.0;
    read_value(j_.at(key), p, v);
    if (v < 0.0) fail(p, "durations must be >= 0");
    out = static_cast<sim::SimTime>(std::llround(v * to_us));
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Enum>
Enum pick(Section& s, const std::string& key, Enum cur,
          std::initializer_list<std::pair<const char*, Enum>> table) {
  std::string word;
  s.opt(key, word);
  if (word.empty()) return cur;
  for (const auto& [name, value] : table) {
    if (word == name) return value;
  }
  std::string options;
  for (const auto& [name, value] : table) {
    (void)value;
    options += options.empty() ? name : std::string("|") + name;
  }
  fail(s.path() + "." + key, "expected one of " + options + ", got '" + word + "'");
}

void parse_trace(Section& s, TraceConfig& out) {
  s.opt("kind", out.kind);
  if (out.kind != "bursty" && out.kind != "file" && out.kind != "none") {
    fail(s.path() + ".kind", "expected one of bursty|file|none, got '" + out.kind + "'");
  }
  s.opt("path", out.path);
  s.opt("time_scale", out.time_scale);
  s.opt("rate_scale", out.rate_scale);
  auto& b = out.bursty;
  s.opt_secs("duration_s", b.duration_us);
  s.opt("base_rate_hz", b.base_rate_hz);
  s.opt("burst_rate_hz", b.burst_rate_hz);
  s.opt_secs("burst_every_s", b.burst_every_us);
  s.opt_secs("burst_len_s", b.burst_len_us);
  s.opt("prompt_log_mean", b.prompt_log_mean);
  s.opt("prompt_log_sigma", b.prompt_log_sigma);
  s.opt("output_log_mean", b.output_log_mean);
  s.opt("output_log_sigma", b.output_log_sigma);
  s.opt("min_prompt", b.min_prompt);
  s.opt("max_prompt", b.max_prompt);
  s.opt("min_output", b.min_output);
  s.opt("max_output", b.max_output);
  s.finish();
  if (out.kind == "file" && out.path.empty()) fail(s.path(), "file traces need a path");
}

void parse_trajectory(Section& s, workload::TrajectoryParams& p) {
  s.opt("turn_stop_p", p.turn_stop_p);
  s.opt("max_turns", p.max_turns);
  s.opt("prompt0_log_mean", p.prompt0_log_mean);
  s.opt("prompt0_log_sigma", p.prompt0_log_sigma);
  s.opt("growth_log_mean", p.growth_log_mean);
  s.opt("growth_log_sigma", p.growth_log_sigma);
  s.opt("decode_log_mean", p.decode_log_mean);
  s.opt("decode_log_sigma", p.decode_log_sigma);
  s.opt("env_delay_mean_s", p.env_delay_mean_s);
  s.opt("min_prompt0", p.min_prompt0);
  s.opt("max_prompt0", p.max_prompt0);
  s.opt("min_growth", p.min_growth);
  s.opt("max_growth", p.max_growth);
  s.opt("min_decode", p.min_decode);
  s.opt("max_decode", p.max_decode);
  s.finish();
}

ScenarioConfig config_from_json(const json& doc, const std::string& origin,
                                const std::string& base_dir) {
  ScenarioConfig cfg;
  cfg.base_dir = base_dir;
  Section root(doc, origin);
  root.opt("name", cfg.name);
  root.opt("seed", cfg.seed);
  root.opt("steps", cfg.steps);
  root.opt("exec_jitter", cfg.exec_jitter);

  if (root.has_object("cluster")) {
    Section s = root.enter("cluster");
    s.opt("serving_gpus", cfg.cluster.serving_gpus);
    s.opt("rollout_gpus", cfg.cluster.rollout_gpus);
    s.opt("profile", cfg.cluster.profile);
    s.opt("serving_model", cfg.cluster.serving_model);
    s.opt("rollout_model", cfg.cluster.rollout_model);
    s.opt("gpu_class", cfg.cluster.gpu_class);
    s.finish();
  }

  if (root.has_object("serving")) {
    Section s = root.enter("serving");
    cfg.serving.admission =
        pick(s, "admission", cfg.serving.admission,
             {std::pair{"dual", exec::AdmissionMode::Dual},
              {"ttft-only", exec::AdmissionMode::TtftOnly},
              {"tpot-only", exec::AdmissionMode::TpotOnly},
              {"off", exec::AdmissionMode::Off}});
    if (s.has_object("slo")) {
      Section slo = s.enter("slo");
      slo.opt_millis("ttft_budget_ms", cfg.serving.slo.ttft_budget_us);
      slo.opt_millis("tpot_budget_ms", cfg.serving.slo.tpot_budget_us);
      slo.finish();
    }
    if (s.has_object("trace")) {
      Section tr = s.enter("trace");
      parse_trace(tr, cfg.serving.trace);
    }
    s.finish();
  }

  if (root.has_object("memory")) {
    Section s = root.enter("memory");
    s.opt("total_pages", cfg.memory.total_pages);
    s.opt("page_bytes", cfg.memory.page_bytes);
    s.opt("tokens_per_page", cfg.memory.tokens_per_page);
    s.opt("headroom", cfg.memory.headroom_fraction);
    s.opt("watermark_into_headroom", cfg.memory.watermark_into_headroom);
    s.opt("cut_factor", cfg.memory.cut_factor);
    s.opt_secs("lease_s", cfg.memory.lease_us);
    s.opt("lease_renew_on_hit", cfg.memory.lease_renew_on_hit);
    cfg.memory.policy = pick(s, "policy", cfg.memory.policy,
                             {std::pair{"preemptive", mem::MemoryPolicy::Preemptive},
                              {"static", mem::MemoryPolicy::StaticPartition}});
    s.opt("static_serving_fraction", cfg.memory.static_serving_fraction);
    s.finish();
  }

  if (root.has_object("rollout")) {
    Section s = root.enter("rollout");
    cfg.rollout.mode = pick(s, "mode", cfg.rollout.mode,
                            {std::pair{"fixed", workload::StepMode::FixedBatch},
                             {"redundant", workload::StepMode::RedundantSampling}});
    s.opt("target_groups", cfg.rollout.target_groups);
    s.opt("group_size", cfg.rollout.group_size);
    s.opt("success_prob", cfg.rollout.success_prob);
    s.opt("max_launched_groups", cfg.rollout.max_launched_groups);
    s.opt("chunk_tokens", cfg.rollout.chunk_tokens);
    s.opt_secs("stall_timeout_s", cfg.rollout.stall_timeout_us);
    s.opt_millis("safety_margin_ms", cfg.rollout.safety_margin_us);
    if (s.has_object("trajectory")) {
      Section tr = s.enter("trajectory");
      parse_trajectory(tr, cfg.rollout.trajectory);
    }
    s.finish();
  }

  if (root.has_object("scheduler")) {
    Section s = root.enter("scheduler");
    s.opt("concurrency_cap", cfg.scheduler.concurrency_cap);
    s.opt("turn_wise", cfg.scheduler.turn_wise);
    s.opt("affinity", cfg.scheduler.affinity);
    s.opt("borrow_cap", cfg.scheduler.borrow_cap);
    s.opt_secs("heartbeat_period_s", cfg.scheduler.heartbeat_period_us);
    s.opt("heartbeat_k", cfg.scheduler.heartbeat_k);
    s.opt_secs("activation_delay_s", cfg.scheduler.activation_delay_us);
    s.opt_secs("usage_window_s", cfg.scheduler.usage_window_us);
    s.finish();
  }

  if (root.has_object("step_phases")) {
    Section s = root.enter("step_phases");
    s.opt_secs("training_s", cfg.step_phases.training_us);
    s.opt_secs("intra_sync_s", cfg.step_phases.intra_sync_us);
    s.opt_secs("cross_sync_s", cfg.step_phases.cross_sync_us);
    s.opt_secs("overlap_window_s", cfg.step_phases.overlap_window_us);
    s.finish();
  }

  root.finish();
  cfg.validate();
  return cfg;
}

}  // namespace

void ScenarioConfig::validate() const {
  auto bad = [&](const std::string& what) { fail("scenario '" + name + "'", what); };
  if (name.empty()) bad("name must not be empty");
  if (steps < 0) bad("steps must be >= 0");
  if (cluster.serving_gpus < 0 || cluster.rollout_gpus < 0) bad("gpu counts must be >= 0");
  if (cluster.serving_gpus + cluster.rollout_gpus < 1) bad("cluster has no gpus");
  if (serving.trace.kind != "none" && cluster.serving_gpus < 1) {
    bad("a serving trace needs at least one serving gpu");
  }
  if (steps > 0 && cluster.rollout_gpus == 0 && scheduler.borrow_cap == 0) {
    bad("rollout steps need a rollout gpu or a non-zero borrow cap");
  }
  if (rollout.target_groups < 1 || rollout.group_size < 1) {
    bad("rollout batch shape must be positive");
  }
  if (rollout.max_launched_groups < rollout.target_groups) {
    bad("max_launched_groups must be >= target_groups");
  }
  if (rollout.success_prob <= 0.0 || rollout.success_prob > 1.0) {
    bad("success_prob must be in (0, 1]");
  }
  if (rollout.chunk_tokens < 1) bad("chunk_tokens must be >= 1");
  if (exec_jitter < 0.0 || exec_jitter >= 1.0) bad("exec_jitter must be in [0, 1)");
}

std::vector<ScenarioVariant> ScenarioFile::all() const {
  std::vector<ScenarioVariant> out;
  out.push_back({base.name, base});
  out.insert(out.end(), variants.begin(), variants.end());
  return out;
}

ScenarioFile parse_scenario(const std::string& text, const std::string& origin,
                            const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(text, nullptr, /*allow_exceptions=*/true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ScenarioError(origin + ": " + e.what());
  }
  if (!doc.is_object()) fail(origin, "expected a JSON object");

  json base_doc = doc;
  base_doc.erase("variants");

  ScenarioFile out;
  out.base = config_from_json(base_doc, origin, base_dir);

  if (!doc.contains("variants")) return out;
  const json& vs = doc.at("variants");
  if (!vs.is_array()) fail(origin + ".variants", "expected an array");
  for (std::size_t i = 0; i < vs.size(); i++) {
    const std::string where = origin + ".variants[" + std::to_string(i) + "]";
    const json& v = vs[i];
    if (!v.is_object()) fail(where, "expected an object");
    for (const auto& item : v.items()) {
      if (item.key() != "name" && item.key() != "set") {
        fail(where, "unknown key '" + item.key() + "'");
      }
    }
    if (!v.contains("name") || !v.at("name").is_string()) fail(where, "variants need a name");
    const std::string vname = v.at("name").get<std::string>();
    if (vname.empty()) fail(where, "variant name must not be empty");

    json patched = base_doc;
    if (v.contains("set")) {
      const json& set = v.at("set");
      if (!set.is_object()) fail(where + ".set", "expected an object of pointer -> value");
      for (const auto& item : set.items()) {
        if (item.key().empty() || item.key()[0] != '/') {
          fail(where + ".set", "override keys are JSON pointers like /scheduler/affinity");
        }
        try {
          patched[json::json_pointer(item.key())] = item.value();
        } catch (const json::exception& e) {
          fail(where + ".set" + item.key(), e.what());
        }
      }
    }
    ScenarioConfig c = config_from_json(patched, where, base_dir);
    c.name = out.base.name + "@" + vname;
    out.variants.push_back({vname, std::move(c)});
  }
  return out;
}

ScenarioFile load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string dir = std::filesystem::path(path).parent_path().string();
  return parse_scenario(buf.str(), path, dir);
}

ScenarioConfig load_scenario(const std::string& path) {
  return load_scenario_file(path).base;
}

std::string resolve_path(const std::string& path, const std::string& base_dir) {
  namespace fs = std::filesystem;
  if (path.empty() || fs::path(path).is_absolute() || base_dir.empty()) return path;
  if (fs::exists(path)) return path;
  return (fs::path(base_dir) / path).string();
}

}  // namespace coserve::app
