#include "coserve/sim/engine.hpp"

#include <string>

namespace coserve::sim {

const char* event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::ServingArrival: return "ServingArrival";
    case EventKind::RolloutTurnReady: return "RolloutTurnReady";
    case EventKind::TickPrefiller: return "TickPrefiller";
    case EventKind::TickDecoder: return "TickDecoder";
    case EventKind::LeaseExpiry: return "LeaseExpiry";
    case EventKind::Heartbeat: return "Heartbeat";
    case EventKind::StepBoundary: return "StepBoundary";
    case EventKind::TransferComplete: return "TransferComplete";
  }
  return "?";
}

std::uint64_t SimEngine::schedule(EventKind kind, SimTime fire_at, std::int64_t a,
                                  std::int64_t b) {
  if (fire_at < now_) {
    throw SchedulingInPast("schedule " + std::string(event_kind_name(kind)) + " at " +
                           std::to_string(fire_at) + "us but clock is " +
                           std::to_string(now_) + "us");
  }
  SimEvent ev{fire_at, kind, a, b, next_seq_++};
  queue_.push(ev);
  return ev.seq;
}

std::uint64_t SimEngine::run_until(SimTime t_end) {
  std::uint64_t n = 0;
  while (!queue_.empty() && queue_.top().fire_at <= t_end) {
    SimEvent ev = queue_.top();
    queue_.pop();
    now_ = ev.fire_at;
    fold_digest(ev);
    ++processed_;
    ++n;
    if (handler_) handler_(ev);
  }
  if (t_end > now_) now_ = t_end;
  return n;
}

void SimEngine::fold_digest(const SimEvent& ev) {
  auto mix = [this](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      digest_ ^= (v >> (i * 8)) & 0xff;
      digest_ *= 0x100000001b3ULL;
    }
  };
  mix(static_cast<std::uint64_t>(ev.fire_at));
  mix(static_cast<std::uint64_t>(ev.kind));
  mix(static_cast<std::uint64_t>(ev.a));
  mix(static_cast<std::uint64_t>(ev.b));
  mix(ev.seq);
}

}  // namespace coserve::sim
