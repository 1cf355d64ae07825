#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "coserve/sim/time.hpp"

namespace coserve::cost {

struct ProfileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Monotone piecewise-linear lookup table: strictly increasing integer x knots,
// non-decreasing integer durations (us). Between knots: linear interpolation
// (round half up). Beyond the last knot: linear extrapolation from the last
// two knots. Below the first knot the first value is used.
class LatencyTable {
 public:
  struct Knot {
    std::int64_t x = 0;
    sim::SimTime y_us = 0;
  };

  LatencyTable() = default;
  explicit LatencyTable(std::vector<Knot> knots) { reset(std::move(knots)); }

  void reset(std::vector<Knot> knots) {
    if (knots.empty()) throw ProfileError("latency table needs at least one knot");
    for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
      if (knots[i + 1].x <= knots[i].x) {
        throw ProfileError("latency table knots not strictly increasing at x=" +
                           std::to_string(knots[i + 1].x));
      }
      if (knots[i + 1].y_us < knots[i].y_us) {
        throw ProfileError("latency table not monotone at x=" +
                           std::to_string(knots[i + 1].x));
      }
    }
    if (knots.front().y_us < 0) throw ProfileError("negative latency knot");
    knots_ = std::move(knots);
  }

  bool empty() const { return knots_.empty(); }
  const std::vector<Knot>& knots() const { return knots_; }

  sim::SimTime lookup(std::int64_t x) const {
    if (knots_.empty()) throw ProfileError("lookup on empty latency table");
    if (x <= knots_.front().x) return knots_.front().y_us;
    if (knots_.size() == 1) return knots_.front().y_us;
    // Find the segment: last knot with knot.x <= x, or extrapolate past the end.
    std::size_t hi = knots_.size() - 1;
    if (x >= knots_[hi].x) {
      const auto& a = knots_[hi - 1];
      const auto& b = knots_[hi];
      return b.y_us + interp_delta(b.x, a, b, x);
    }
    std::size_t lo = 0;
    while (lo + 1 < knots_.size() && knots_[lo + 1].x <= x) ++lo;
    const auto& a = knots_[lo];
    const auto& b = knots_[lo + 1];
    return a.y_us + interp_delta(a.x, a, b, x);
  }

  // Slope of the final segment as a rational (dy, dx); used for validating
  // table dominance out to the extrapolation region.
  std::pair<std::int64_t, std::int64_t> tail_slope() const {
    if (knots_.size() < 2) return {0, 1};
    const auto& a = knots_[knots_.size() - 2];
    const auto& b = knots_.back();
    return {b.y_us - a.y_us, b.x - a.x};
  }

 private:
  // Linear delta from anchor x0 along segment (a,b), rounded half up.
  // All quantities are non-negative by the monotonicity invariants.
  static sim::SimTime interp_delta(std::int64_t x0, const Knot& a, const Knot& b,
                                   std::int64_t x) {
    const auto dy = static_cast<__int128>(b.y_us - a.y_us);
    const auto dx = static_cast<__int128>(b.x - a.x);
    const auto off = static_cast<__int128>(x - x0);
    return static_cast<sim::SimTime>((dy * off + dx / 2) / dx);
  }

  std::vector<Knot> knots_;
};

}  // namespace coserve::cost
