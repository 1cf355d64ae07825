#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "coserve/cost/latency_table.hpp"
#include "coserve/sim/time.hpp"

namespace coserve::cost {

struct UnknownProfile : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class PrefillMode { Mono, Chunked };

// Measured latency tables for one (model, gpu class) pair.
//
// prefill_chunk maps a chunk size to the *total* chunked-prefill latency
// table over prompt length L. The cost of an individual chunk covering
// tokens [s, s+c) is the increment prefill_chunk(s+c) - prefill_chunk(s),
// so per-chunk costs telescope to the table's total and each chunk can be
// admitted on its own.
struct LatencyProfile {
  std::string model_id;
  std::string gpu_class;
  LatencyTable prefill_mono;
  std::map<int, LatencyTable> prefill_chunk;  // chunk_tokens -> table
  LatencyTable decode_step;                   // batch size -> step duration

  sim::SimTime prefill_us(std::int64_t prompt_tokens, PrefillMode mode,
                          int chunk_tokens = 0) const;
  sim::SimTime decode_step_us(std::int64_t batch) const;

  // Incremental cost of prefilling (done, done+n] under chunked execution.
  sim::SimTime chunk_increment_us(std::int64_t done, std::int64_t n,
                                  int chunk_tokens) const;

  // Dominance check: chunked total must never undercut monolithic prefill,
  // including on the extrapolated tail.
  void validate() const;
};

// All loaded profiles, keyed by (model_id, gpu_class).
class ProfileBook {
 public:
  void put(LatencyProfile profile);
  const LatencyProfile& get(const std::string& model_id,
                            const std::string& gpu_class) const;
  bool has(const std::string& model_id, const std::string& gpu_class) const;

  sim::SimTime prefill_us(const std::string& model, const std::string& gpu,
                          std::int64_t prompt_tokens, PrefillMode mode,
                          int chunk_tokens = 0) const {
    return get(model, gpu).prefill_us(prompt_tokens, mode, chunk_tokens);
  }
  sim::SimTime decode_step_us(const std::string& model, const std::string& gpu,
                              std::int64_t batch) const {
    return get(model, gpu).decode_step_us(batch);
  }

  std::size_t size() const { return profiles_.size(); }

  // Text format: `table <model> <gpu_class> <kind> [chunk_tokens]` followed by
  // `knot <x> <duration_us>` lines and a closing `end`. `#` starts a comment.
  static ProfileBook load(const std::string& path);
  void save(const std::string& path) const;

 private:
  std::map<std::pair<std::string, std::string>, LatencyProfile> profiles_;
};

}  // namespace coserve::cost
