#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "coserve/sim/time.hpp"

namespace coserve::mem {

struct OutOfPages : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NotMapped : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using PageId = std::int32_t;

enum class PageOwner : std::uint8_t { Free = 0, Serving = 1, Rollout = 2 };

// Fixed-size physical page pool for one GPU. Page identity is tracked so
// conservation (free + serving + rollout == total, each page owned exactly
// once) can be recounted from the ground truth at any time.
class PagePool {
 public:
  PagePool() = default;
  PagePool(std::int64_t total_pages, std::int64_t page_bytes);

  std::int64_t total() const { return total_; }
  std::int64_t page_bytes() const { return page_bytes_; }
  std::int64_t free_pages() const { return counts_[0]; }
  std::int64_t used(PageOwner o) const { return counts_[static_cast<int>(o)]; }

  std::vector<PageId> alloc(PageOwner owner, std::int64_t n);
  void release(PageOwner owner, const std::vector<PageId>& pages);

  // Ground-truth recount of the owner array; must match the counters.
  bool conservation_holds() const;

 private:
  std::int64_t total_ = 0;
  std::int64_t page_bytes_ = 0;
  std::vector<PageOwner> owners_;
  std::vector<PageId> free_stack_;  // LIFO reuse keeps runs deterministic
  std::int64_t counts_[3] = {0, 0, 0};
};

// Per-model virtual KV space: an ordered list of mapped physical pages. The
// layout tag names the owning model so serving and rollout mappings are never
// interchangeable.
struct VirtualKvSpace {
  PageOwner role = PageOwner::Serving;
  std::string layout_tag;
  std::vector<PageId> mapped;
};

struct PrefixEntry {
  std::vector<PageId> pages;
  std::int64_t tokens = 0;
  sim::SimTime expires_at = 0;
  sim::SimTime last_touch = 0;
  std::uint64_t touch_seq = 0;  // tie-break for LRU
  std::int64_t trajectory = -1;
};

enum class BudgetState : std::uint8_t { Normal = 0, Pressure = 1, Frozen = 2 };

enum class MemoryPolicy : std::uint8_t {
  Preemptive = 0,   // serving first: headroom, burst cut, per-step budget
  StaticPartition,  // fixed split, no preemption
};

struct KvcConfig {
  std::int64_t total_pages = 2048;
  std::int64_t page_bytes = 2 * 1024 * 1024;
  std::int64_t tokens_per_page = 16;
  double headroom_fraction = 0.20;        // H: KVC share reserved for serving
  double watermark_into_headroom = 0.0;   // where inside the band the cut fires
  int cut_factor = 2;                     // emergency cut divides budget by this
  sim::SimTime lease_us = sim::secs(10);  // prefix entry lease
  bool lease_renew_on_hit = true;
  MemoryPolicy policy = MemoryPolicy::Preemptive;
  double static_serving_fraction = 0.5;   // StaticPartition only
};

struct CutReport {
  std::int64_t old_budget = 0;
  std::int64_t new_budget = 0;
  std::vector<std::int64_t> aborted_trajectories;
  std::int64_t evicted_prefix_entries = 0;
  std::int64_t freed_pages = 0;
};

// KV-cache manager for one GPU: the physical pool, the serving and rollout
// virtual spaces, the rollout prefix cache, and the memory budget state
// machine that implements serving-first preemption.
class KvcManager {
 public:
  KvcManager() = default;
  explicit KvcManager(const KvcConfig& cfg);

  const KvcConfig& config() const { return cfg_; }
  const PagePool& pool() const { return pool_; }

  std::int64_t pages_for_tokens(std::int64_t tokens) const {
    return (tokens + cfg_.tokens_per_page - 1) / cfg_.tokens_per_page;
  }

  std::int64_t serving_used() const { return pool_.used(PageOwner::Serving); }
  std::int64_t rollout_used() const { return pool_.used(PageOwner::Rollout); }
  std::int64_t free_pages() const { return pool_.free_pages(); }
  std::int64_t rollout_budget() const { return budget_; }
  BudgetState budget_state() const { return state_; }
  std::int64_t budget_cap() const { return budget_cap_; }
  std::int64_t headroom_pages() const { return cfg_.total_pages - budget_cap_; }

  // ---- serving side ----------------------------------------------------
  bool can_map_serving(std::int64_t n) const;
  // Maps n pages for serving, triggering the burst path (emergency cut) when
  // usage crosses the watermark or the pool cannot satisfy a burst under the
  // preemptive policy. Returns pages, or nullopt if the map stays blocked.
  std::optional<std::vector<PageId>> map_serving(std::int64_t n, sim::SimTime now,
                                                 std::optional<CutReport>* cut);
  void unmap_serving(std::vector<PageId> pages, sim::SimTime now);

  // ---- rollout side ----------------------------------------------------
  // Capacity checks treat parked prefix entries as reclaimable (they are a
  // cache, not a reservation); map_rollout evicts them LRU-first on demand.
  bool can_map_rollout(std::int64_t n) const;
  bool map_rollout(std::int64_t trajectory, std::int64_t n, sim::SimTime now);
  // Frees the trajectory's active pages (stall drop, abort, cancel).
  std::int64_t release_rollout(std::int64_t trajectory);
  std::int64_t rollout_active_pages(std::int64_t trajectory) const;
  std::int64_t rollout_active_requests() const {
    return static_cast<std::int64_t>(active_.size());
  }

  // ---- prefix cache ----------------------------------------------------
  // Converts the trajectory's active pages into a cached prefix under `key`.
  // Replaces any entry already stored under the key. Returns the lease expiry.
  sim::SimTime insert_prefix(std::uint64_t key, std::int64_t trajectory,
                             std::int64_t tokens, sim::SimTime now);
  // Hit: entry live at `now`; the lease is renewed when configured. An entry
  // found expired is reclaimed on the spot and reported as a miss.
  bool lookup_prefix(std::uint64_t key, sim::SimTime now);
  // Consumes a live entry into the trajectory's active allocation; the caller
  // must have seen a hit. Returns cached token count.
  std::int64_t take_prefix(std::uint64_t key, std::int64_t trajectory);
  std::int64_t expire_leases(sim::SimTime now);
  std::optional<sim::SimTime> next_lease_expiry() const;
  std::int64_t prefix_entries() const { return static_cast<std::int64_t>(prefix_.size()); }
  std::int64_t prefix_pages() const;

  // ---- budget state machine ---------------------------------------------
  // Burst response: divide the rollout budget once per step, abort active
  // rollout requests youngest-first, then evict prefix entries LRU-first
  // until usage fits, and freeze the budget until the next step boundary.
  CutReport on_serving_pressure(sim::SimTime now);
  // Step boundary: budget = cap - previous window's peak serving usage,
  // clamped to [0, cap]; the watermark re-anchors at that peak.
  void recompute_budget(sim::SimTime now);

  // Mean serving usage (pages) over the trailing window; borrow selection key.
  double mean_serving_usage(sim::SimTime now, sim::SimTime window) const;
  std::int64_t peak_serving_this_step() const { return peak_serving_; }

  bool conservation_holds() const;

 private:
  void note_serving_usage(sim::SimTime now);
  std::int64_t watermark_pages() const;
  // Frees the least-recently-used prefix entry; returns its page count.
  // Callers guarantee the cache is non-empty.
  std::int64_t evict_lru_prefix();

  KvcConfig cfg_;
  PagePool pool_;
  VirtualKvSpace serving_space_;
  VirtualKvSpace rollout_space_;

  struct ActiveAlloc {
    std::vector<PageId> pages;
    sim::SimTime created_at = 0;
  };
  std::map<std::int64_t, ActiveAlloc> active_;  // trajectory -> pages
  std::map<std::uint64_t, PrefixEntry> prefix_;
  std::uint64_t touch_counter_ = 0;

  BudgetState state_ = BudgetState::Normal;
  std::int64_t budget_cap_ = 0;   // floor(total * (1 - H))
  std::int64_t budget_ = 0;
  std::int64_t serving_limit_ = 0;  // StaticPartition only
  std::int64_t watermark_base_ = 0;
  std::int64_t peak_serving_ = 0;
  int cuts_this_step_ = 0;

  // Piecewise-constant serving usage history for the trailing-window mean.
  std::deque<std::pair<sim::SimTime, std::int64_t>> usage_history_;
};

}  // namespace coserve::mem
