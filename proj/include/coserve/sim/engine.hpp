#pragma once

#include <cstdint>
#include <functional>
#include <queue>
#include <stdexcept>
#include <vector>

#include "coserve/sim/event.hpp"
#include "coserve/sim/time.hpp"

namespace coserve::sim {

struct SchedulingInPast : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Discrete-event engine: a virtual clock plus an event queue with a total
// order. Handlers run strictly in (fire_at, kind, seq) order; the clock never
// moves backwards.
class SimEngine {
 public:
  using Handler = std::function<void(const SimEvent&)>;

  SimTime now() const { return now_; }
  std::uint64_t processed() const { return processed_; }
  std::size_t pending() const { return queue_.size(); }

  void set_handler(Handler h) { handler_ = std::move(h); }

  // Enqueue an event; fire_at must not precede the current clock.
  std::uint64_t schedule(EventKind kind, SimTime fire_at, std::int64_t a = 0,
                         std::int64_t b = 0);

  // Process every event with fire_at <= t_end in order. The clock equals
  // t_end on return even if the queue drained early. Returns events processed.
  std::uint64_t run_until(SimTime t_end);

  // FNV-1a digest over every processed (fire_at, kind, a, b, seq) tuple.
  // Two runs of the same scenario must produce identical digests.
  std::uint64_t trace_digest() const { return digest_; }

 private:
  void fold_digest(const SimEvent& ev);

  SimTime now_ = 0;
  std::uint64_t next_seq_ = 0;
  std::uint64_t processed_ = 0;
  std::uint64_t digest_ = 0xcbf29ce484222325ULL;
  Handler handler_;
  std::priority_queue<SimEvent, std::vector<SimEvent>, EventAfter> queue_;
};

}  // namespace coserve::sim
