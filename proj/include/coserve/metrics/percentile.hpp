#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "coserve/sim/time.hpp"

namespace coserve::metrics {

struct MetricsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptySamples : MetricsError {
  using MetricsError::MetricsError;
};

// Nearest-rank percentile: the value at (1-based) index ceil(p/100 * n) of the
// sorted samples. p in (0, 100]. No interpolation, so the result is always an
// observed sample.
sim::SimTime percentile(std::vector<sim::SimTime> samples, double p);

// Same, for samples the caller already sorted ascending.
sim::SimTime percentile_sorted(const std::vector<sim::SimTime>& sorted, double p);

}  // namespace coserve::metrics
