#pragma once

#include <cstdint>

namespace coserve::sim {

// Virtual simulation time in integer microseconds. All scheduling, latency
// tables and metrics use this unit so runs are bit-exact across platforms.
using SimTime = std::int64_t;

constexpr SimTime kUsPerMs = 1'000;
constexpr SimTime kUsPerSec = 1'000'000;

constexpr SimTime ms(std::int64_t v) { return v * kUsPerMs; }
constexpr SimTime secs(std::int64_t v) { return v * kUsPerSec; }

constexpr double to_seconds(SimTime t) { return static_cast<double>(t) / 1e6; }

}  // namespace coserve::sim
