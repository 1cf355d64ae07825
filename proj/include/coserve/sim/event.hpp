#pragma once

#include <cstdint>

#include "coserve/sim/time.hpp"

namespace coserve::sim {

// Every event kind the simulator processes. The enum order is part of the
// deterministic tie-break: events with equal fire time are processed in enum
// order, then by insertion sequence.
enum class EventKind : std::uint8_t {
  ServingArrival = 0,
  RolloutTurnReady = 1,
  TickPrefiller = 2,
  TickDecoder = 3,
  LeaseExpiry = 4,
  Heartbeat = 5,
  StepBoundary = 6,
  TransferComplete = 7,
};

const char* event_kind_name(EventKind k);

// Payload is two generic integer slots; what they mean depends on the kind
// (gpu id, request id, trajectory id, step index, ...). Keeping the event POD
// keeps the queue fast and the total order trivial to state.
struct SimEvent {
  SimTime fire_at = 0;
  EventKind kind = EventKind::ServingArrival;
  std::int64_t a = 0;
  std::int64_t b = 0;
  std::uint64_t seq = 0;  // assigned by the engine at schedule time
};

// Total order: (fire_at, kind ordinal, seq ascending). Used as the
// priority-queue comparator, so operator() returns "lhs after rhs".
struct EventAfter {
  bool operator()(const SimEvent& lhs, const SimEvent& rhs) const {
    if (lhs.fire_at != rhs.fire_at) return lhs.fire_at > rhs.fire_at;
    if (lhs.kind != rhs.kind) return lhs.kind > rhs.kind;
    return lhs.seq > rhs.seq;
  }
};

}  // namespace coserve::sim
