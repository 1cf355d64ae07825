#include "coserve/metrics/percentile.hpp"

#include <algorithm>
#include <cmath>

namespace coserve::metrics {

sim::SimTime percentile_sorted(const std::vector<sim::SimTime>& sorted, double p) {
  if (sorted.empty()) throw EmptySamples("percentile of zero samples");
  if (!(p > 0.0) || p > 100.0) {
    throw MetricsError("percentile p must be in (0, 100], got " + std::to_string(p));
  }
  const auto n = static_cast<double>(sorted.size());
  // The exact rank is rational; shave representation noise before ceil so a
  // value that is mathematically integral doesn't round up a slot.
  auto rank = static_cast<std::size_t>(std::ceil(p * n / 100.0 - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

sim::SimTime percentile(std::vector<sim::SimTime> samples, double p) {
  std::sort(samples.begin(), samples.end());
  return percentile_sorted(samples, p);
}

}  // namespace coserve::metrics
