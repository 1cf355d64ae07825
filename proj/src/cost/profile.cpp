#include "coserve/cost/profile.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace coserve::cost {

sim::SimTime LatencyProfile::prefill_us(std::int64_t prompt_tokens, PrefillMode mode,
                                        int chunk_tokens) const {
  if (mode == PrefillMode::Mono) return prefill_mono.lookup(prompt_tokens);
  auto it = prefill_chunk.find(chunk_tokens);
  if (it == prefill_chunk.end()) {
    throw UnknownProfile("no chunked-prefill table for chunk_tokens=" +
                         std::to_string(chunk_tokens) + " in " + model_id + "/" +
                         gpu_class);
  }
  return it->second.lookup(prompt_tokens);
}

sim::SimTime LatencyProfile::decode_step_us(std::int64_t batch) const {
  return decode_step.lookup(batch);
}

sim::SimTime LatencyProfile::chunk_increment_us(std::int64_t done, std::int64_t n,
                                                int chunk_tokens) const {
  const auto total = prefill_us(done + n, PrefillMode::Chunked, chunk_tokens);
  const auto before = done == 0 ? 0 : prefill_us(done, PrefillMode::Chunked, chunk_tokens);
  return total - before;
}

void LatencyProfile::validate() const {
  if (prefill_mono.empty() || decode_step.empty()) {
    throw ProfileError("profile " + model_id + "/" + gpu_class + " missing tables");
  }
  for (const auto& [chunk, table] : prefill_chunk) {
    if (chunk <= 0) throw ProfileError("non-positive chunk size in profile");
    // Piecewise-linear dominance: checking at the union of knot positions plus
    // a tail-slope comparison covers every point including extrapolation.
    std::set<std::int64_t> xs;
    for (const auto& k : prefill_mono.knots()) xs.insert(k.x);
    for (const auto& k : table.knots()) xs.insert(k.x);
    for (auto x : xs) {
      if (table.lookup(x) < prefill_mono.lookup(x)) {
        throw ProfileError("chunked prefill undercuts monolithic at L=" +
                           std::to_string(x) + " in " + model_id + "/" + gpu_class);
      }
    }
    const auto [cy, cx] = table.tail_slope();
    const auto [my, mx] = prefill_mono.tail_slope();
    if (static_cast<__int128>(cy) * mx < static_cast<__int128>(my) * cx) {
      throw ProfileError("chunked prefill tail slope undercuts monolithic in " +
                         model_id + "/" + gpu_class);
    }
  }
}

void ProfileBook::put(LatencyProfile profile) {
  profile.validate();
  auto key = std::make_pair(profile.model_id, profile.gpu_class);
  profiles_[key] = std::move(profile);
}

const LatencyProfile& ProfileBook::get(const std::string& model_id,
                                       const std::string& gpu_class) const {
  auto it = profiles_.find(std::make_pair(model_id, gpu_class));
  if (it == profiles_.end()) {
    throw UnknownProfile("no latency profile for " + model_id + "/" + gpu_class);
  }
  return it->second;
}

bool ProfileBook::has(const std::string& model_id, const std::string& gpu_class) const {
  return profiles_.count(std::make_pair(model_id, gpu_class)) > 0;
}

namespace {

struct Parser {
  std::istream& in;
  int line_no = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ProfileError("profile parse error at line " + std::to_string(line_no) + ": " +
                       msg);
  }
};

}  // namespace

ProfileBook ProfileBook::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ProfileError("cannot open profile file: " + path);

  ProfileBook book;
  Parser p{in};
  std::string line;

  std::map<std::pair<std::string, std::string>, LatencyProfile> pending;
  // Current open table.
  LatencyProfile* cur_profile = nullptr;
  std::string cur_kind;
  int cur_chunk = 0;
  std::vector<LatencyTable::Knot> cur_knots;

  auto close_table = [&]() {
    if (!cur_profile) return;
    LatencyTable table(cur_knots);
    if (cur_kind == "prefill_mono") {
      cur_profile->prefill_mono = std::move(table);
    } else if (cur_kind == "prefill_chunk") {
      cur_profile->prefill_chunk[cur_chunk] = std::move(table);
    } else {
      cur_profile->decode_step = std::move(table);
    }
    cur_profile = nullptr;
    cur_knots.clear();
  };

  while (std::getline(in, line)) {
    ++p.line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;

    if (tok == "table") {
      if (cur_profile) p.fail("previous table not closed with 'end'");
      std::string model, gpu, kind;
      if (!(ls >> model >> gpu >> kind)) p.fail("expected: table <model> <gpu> <kind>");
      if (kind != "prefill_mono" && kind != "prefill_chunk" && kind != "decode_step") {
        p.fail("unknown table kind '" + kind + "'");
      }
      int chunk = 0;
      if (kind == "prefill_chunk" && !(ls >> chunk)) {
        p.fail("prefill_chunk table needs a chunk size");
      }
      cur_profile = &pending[std::make_pair(model, gpu)];
      cur_profile->model_id = model;
      cur_profile->gpu_class = gpu;
      cur_kind = kind;
      cur_chunk = chunk;
    } else if (tok == "knot") {
      if (!cur_profile) p.fail("knot outside a table");
      LatencyTable::Knot k;
      if (!(ls >> k.x >> k.y_us)) p.fail("expected: knot <x> <duration_us>");
      if (!cur_knots.empty() && k.x <= cur_knots.back().x) {
        p.fail("knots must be strictly increasing");
      }
      if (!cur_knots.empty() && k.y_us < cur_knots.back().y_us) {
        p.fail("durations must be non-decreasing");
      }
      cur_knots.push_back(k);
    } else if (tok == "end") {
      if (!cur_profile) p.fail("'end' without an open table");
      try {
        close_table();
      } catch (const ProfileError& e) {
        p.fail(e.what());
      }
    } else {
      p.fail("unknown directive '" + tok + "'");
    }
  }
  if (cur_profile) throw ProfileError("profile file ends inside a table");

  for (auto& [key, profile] : pending) book.put(std::move(profile));
  return book;
}

void ProfileBook::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ProfileError("cannot write profile file: " + path);
  out << "# coserve latency profile v1\n";
  for (const auto& [key, prof] : profiles_) {
    auto dump = [&](const std::string& kind, const LatencyTable& t, int chunk) {
      out << "table " << prof.model_id << ' ' << prof.gpu_class << ' ' << kind;
      if (chunk > 0) out << ' ' << chunk;
      out << '\n';
      for (const auto& k : t.knots()) out << "knot " << k.x << ' ' << k.y_us << '\n';
      out << "end\n";
    };
    dump("prefill_mono", prof.prefill_mono, 0);
    for (const auto& [chunk, table] : prof.prefill_chunk) {
      dump("prefill_chunk", table, chunk);
    }
    dump("decode_step", prof.decode_step, 0);
  }
}

}  // namespace coserve::cost
