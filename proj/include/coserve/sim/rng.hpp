#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>

namespace coserve::sim {

// Named random stream. Each consumer (workload gen, reward oracle, failure
// injection, ...) gets its own stream so adding draws in one place never
// shifts the values another consumer sees.
//
// The engine is std::mt19937_64 (fully specified by the standard); the
// samplers below are hand-inverted instead of std::*_distribution because the
// standard leaves distribution algorithms implementation-defined and we need
// bit-identical runs across toolchains.
class RngStream {
 public:
  RngStream() : eng_(0) {}
  explicit RngStream(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    const auto r = static_cast<unsigned __int128>(eng_()) * span;
    return lo + static_cast<std::int64_t>(r >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  double exponential(double mean) {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    return -mean * std::log(u);
  }

  // Standard normal via Box-Muller (no cached spare: one value per call so
  // the stream position is easy to reason about).
  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double lognormal(double mu, double sigma) { return std::exp(mu + sigma * normal()); }

  // Number of Bernoulli(p) trials up to and including the first success, >= 1.
  std::int64_t geometric_trials(double p) {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    const auto k = static_cast<std::int64_t>(std::floor(std::log(u) / std::log1p(-p)));
    return 1 + (k < 0 ? 0 : k);
  }

 private:
  std::mt19937_64 eng_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Hands out named streams derived from one master seed. Stream identity is
// the name alone, so creation order does not matter.
class RngHub {
 public:
  explicit RngHub(std::uint64_t master_seed) : master_(master_seed) {}

  RngStream& stream(const std::string& name) {
    auto it = streams_.find(name);
    if (it == streams_.end()) {
      it = streams_.emplace(name, RngStream(splitmix64(master_ ^ fnv1a64(name)))).first;
    }
    return it->second;
  }

  std::uint64_t master_seed() const { return master_; }

 private:
  std::uint64_t master_;
  std::map<std::string, RngStream> streams_;
};

}  // namespace coserve::sim
