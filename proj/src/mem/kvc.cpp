#include "coserve/mem/kvc.hpp"

#include <algorithm>
#include <cmath>

namespace coserve::mem {

PagePool::PagePool(std::int64_t total_pages, std::int64_t page_bytes)
    : total_(total_pages), page_bytes_(page_bytes) {
  owners_.assign(static_cast<std::size_t>(total_pages), PageOwner::Free);
  free_stack_.resize(static_cast<std::size_t>(total_pages));
  // Stack top is page 0 so fresh allocations start from low ids.
  for (std::int64_t i = 0; i < total_pages; ++i) {
    free_stack_[static_cast<std::size_t>(i)] = static_cast<PageId>(total_pages - 1 - i);
  }
  counts_[0] = total_pages;
}

std::vector<PageId> PagePool::alloc(PageOwner owner, std::int64_t n) {
  if (owner == PageOwner::Free) throw OutOfPages("cannot alloc with owner Free");
  if (n > free_pages()) {
    throw OutOfPages("alloc of " + std::to_string(n) + " pages with only " +
                     std::to_string(free_pages()) + " free");
  }
  std::vector<PageId> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    PageId p = free_stack_.back();
    free_stack_.pop_back();
    owners_[static_cast<std::size_t>(p)] = owner;
    out.push_back(p);
  }
  counts_[0] -= n;
  counts_[static_cast<int>(owner)] += n;
  return out;
}

void PagePool::release(PageOwner owner, const std::vector<PageId>& pages) {
  for (PageId p : pages) {
    if (p < 0 || p >= total_ || owners_[static_cast<std::size_t>(p)] != owner) {
      throw NotMapped("release of page " + std::to_string(p) +
                      " not mapped with the expected owner");
    }
    owners_[static_cast<std::size_t>(p)] = PageOwner::Free;
    free_stack_.push_back(p);
  }
  const auto n = static_cast<std::int64_t>(pages.size());
  counts_[0] += n;
  counts_[static_cast<int>(owner)] -= n;
}

bool PagePool::conservation_holds() const {
  std::int64_t tally[3] = {0, 0, 0};
  for (PageOwner o : owners_) ++tally[static_cast<int>(o)];
  return tally[0] == counts_[0] && tally[1] == counts_[1] && tally[2] == counts_[2] &&
         tally[0] + tally[1] + tally[2] == total_ &&
         static_cast<std::int64_t>(free_stack_.size()) == counts_[0];
}

KvcManager::KvcManager(const KvcConfig& cfg) : cfg_(cfg), pool_(cfg.total_pages, cfg.page_bytes) {
  serving_space_ = {PageOwner::Serving, "serving", {}};
  rollout_space_ = {PageOwner::Rollout, "rollout", {}};
  budget_cap_ = static_cast<std::int64_t>(
      std::floor(static_cast<double>(cfg_.total_pages) * (1.0 - cfg_.headroom_fraction)));
  if (cfg_.policy == MemoryPolicy::StaticPartition) {
    serving_limit_ = static_cast<std::int64_t>(
        std::floor(static_cast<double>(cfg_.total_pages) * cfg_.static_serving_fraction));
    budget_ = cfg_.total_pages - serving_limit_;
  } else {
    budget_ = budget_cap_;
  }
  usage_history_.emplace_back(0, 0);
}

std::int64_t KvcManager::watermark_pages() const {
  const auto band = static_cast<double>(headroom_pages());
  return watermark_base_ +
         static_cast<std::int64_t>(std::floor(cfg_.watermark_into_headroom * band));
}

bool KvcManager::can_map_serving(std::int64_t n) const {
  if (cfg_.policy == MemoryPolicy::StaticPartition && serving_used() + n > serving_limit_) {
    return false;
  }
  return n <= free_pages();
}

std::optional<std::vector<PageId>> KvcManager::map_serving(
    std::int64_t n, sim::SimTime now, std::optional<CutReport>* cut) {
  if (cut) cut->reset();
  if (cfg_.policy == MemoryPolicy::StaticPartition) {
    if (serving_used() + n > serving_limit_ || n > free_pages()) return std::nullopt;
    auto pages = pool_.alloc(PageOwner::Serving, n);
    serving_space_.mapped.insert(serving_space_.mapped.end(), pages.begin(), pages.end());
    note_serving_usage(now);
    return pages;
  }

  // Preemptive policy: a blocked map is itself a burst signal.
  if (n > free_pages() && state_ == BudgetState::Normal) {
    auto report = on_serving_pressure(now);
    if (cut) *cut = std::move(report);
  }
  if (n > free_pages()) return std::nullopt;
  auto pages = pool_.alloc(PageOwner::Serving, n);
  serving_space_.mapped.insert(serving_space_.mapped.end(), pages.begin(), pages.end());
  note_serving_usage(now);
  if (state_ == BudgetState::Normal && serving_used() > watermark_pages()) {
    auto report = on_serving_pressure(now);
    if (cut && !*cut) *cut = std::move(report);
  }
  return pages;
}

void KvcManager::unmap_serving(std::vector<PageId> pages, sim::SimTime now) {
  for (PageId p : pages) {
    auto it = std::find(serving_space_.mapped.begin(), serving_space_.mapped.end(), p);
    if (it == serving_space_.mapped.end()) {
      throw NotMapped("serving unmap of page " + std::to_string(p) +
                      " not mapped in the serving space");
    }
    serving_space_.mapped.erase(it);
  }
  pool_.release(PageOwner::Serving, pages);
  note_serving_usage(now);
}

bool KvcManager::can_map_rollout(std::int64_t n) const {
  // Parked prefix entries are a cache, not a reservation: capacity checks see
  // their pages as reclaimable, and map_rollout evicts them for real.
  const auto reclaimable = prefix_pages();
  if (rollout_used() - reclaimable + n > budget_) return false;
  if (n > free_pages() + reclaimable) return false;
  if (cfg_.policy == MemoryPolicy::Preemptive) {
    // Serving-first memory: rollout never consumes the reserved headroom.
    if (free_pages() + reclaimable - n < headroom_pages()) return false;
  }
  return true;
}

bool KvcManager::map_rollout(std::int64_t trajectory, std::int64_t n, sim::SimTime now) {
  if (!can_map_rollout(n)) return false;
  while (!prefix_.empty() &&
         (rollout_used() + n > budget_ || n > free_pages() ||
          (cfg_.policy == MemoryPolicy::Preemptive &&
           free_pages() - n < headroom_pages()))) {
    evict_lru_prefix();
  }
  auto pages = pool_.alloc(PageOwner::Rollout, n);
  rollout_space_.mapped.insert(rollout_space_.mapped.end(), pages.begin(), pages.end());
  auto& alloc = active_[trajectory];
  if (alloc.pages.empty()) alloc.created_at = now;
  alloc.pages.insert(alloc.pages.end(), pages.begin(), pages.end());
  return true;
}

namespace {

void erase_from_space(VirtualKvSpace& space, const std::vector<PageId>& pages) {
  for (PageId p : pages) {
    auto it = std::find(space.mapped.begin(), space.mapped.end(), p);
    if (it != space.mapped.end()) space.mapped.erase(it);
  }
}

}  // namespace

std::int64_t KvcManager::release_rollout(std::int64_t trajectory) {
  auto it = active_.find(trajectory);
  if (it == active_.end()) return 0;
  const auto n = static_cast<std::int64_t>(it->second.pages.size());
  erase_from_space(rollout_space_, it->second.pages);
  pool_.release(PageOwner::Rollout, it->second.pages);
  active_.erase(it);
  return n;
}

std::int64_t KvcManager::rollout_active_pages(std::int64_t trajectory) const {
  auto it = active_.find(trajectory);
  return it == active_.end() ? 0 : static_cast<std::int64_t>(it->second.pages.size());
}

sim::SimTime KvcManager::insert_prefix(std::uint64_t key, std::int64_t trajectory,
                                       std::int64_t tokens, sim::SimTime now) {
  auto old = prefix_.find(key);
  if (old != prefix_.end()) {
    erase_from_space(rollout_space_, old->second.pages);
    pool_.release(PageOwner::Rollout, old->second.pages);
    prefix_.erase(old);
  }
  PrefixEntry entry;
  auto it = active_.find(trajectory);
  if (it != active_.end()) {
    entry.pages = std::move(it->second.pages);
    active_.erase(it);
  }
  entry.tokens = tokens;
  entry.expires_at = now + cfg_.lease_us;
  entry.last_touch = now;
  entry.touch_seq = ++touch_counter_;
  entry.trajectory = trajectory;
  const auto expires = entry.expires_at;
  prefix_[key] = std::move(entry);
  return expires;
}

bool KvcManager::lookup_prefix(std::uint64_t key, sim::SimTime now) {
  auto it = prefix_.find(key);
  if (it == prefix_.end()) return false;
  if (it->second.expires_at <= now) {
    // Lazy reclaim of an entry whose lease already lapsed.
    erase_from_space(rollout_space_, it->second.pages);
    pool_.release(PageOwner::Rollout, it->second.pages);
    prefix_.erase(it);
    return false;
  }
  it->second.last_touch = now;
  it->second.touch_seq = ++touch_counter_;
  if (cfg_.lease_renew_on_hit) it->second.expires_at = now + cfg_.lease_us;
  return true;
}

std::int64_t KvcManager::take_prefix(std::uint64_t key, std::int64_t trajectory) {
  auto it = prefix_.find(key);
  if (it == prefix_.end()) throw NotMapped("take_prefix of absent key");
  auto& alloc = active_[trajectory];
  if (alloc.pages.empty()) alloc.created_at = it->second.last_touch;
  alloc.pages.insert(alloc.pages.end(), it->second.pages.begin(), it->second.pages.end());
  const auto tokens = it->second.tokens;
  prefix_.erase(it);
  return tokens;
}

std::int64_t KvcManager::expire_leases(sim::SimTime now) {
  std::int64_t reclaimed = 0;
  for (auto it = prefix_.begin(); it != prefix_.end();) {
    if (it->second.expires_at <= now) {
      erase_from_space(rollout_space_, it->second.pages);
      pool_.release(PageOwner::Rollout, it->second.pages);
      it = prefix_.erase(it);
      ++reclaimed;
    } else {
      ++it;
    }
  }
  return reclaimed;
}

std::optional<sim::SimTime> KvcManager::next_lease_expiry() const {
  std::optional<sim::SimTime> next;
  for (const auto& [key, entry] : prefix_) {
    if (!next || entry.expires_at < *next) next = entry.expires_at;
  }
  return next;
}

std::int64_t KvcManager::prefix_pages() const {
  std::int64_t n = 0;
  for (const auto& [key, entry] : prefix_) n += static_cast<std::int64_t>(entry.pages.size());
  return n;
}

std::int64_t KvcManager::evict_lru_prefix() {
  auto victim = prefix_.begin();
  for (auto it = prefix_.begin(); it != prefix_.end(); ++it) {
    if (it->second.last_touch < victim->second.last_touch ||
        (it->second.last_touch == victim->second.last_touch &&
         it->second.touch_seq < victim->second.touch_seq)) {
      victim = it;
    }
  }
  const auto freed = static_cast<std::int64_t>(victim->second.pages.size());
  erase_from_space(rollout_space_, victim->second.pages);
  pool_.release(PageOwner::Rollout, victim->second.pages);
  prefix_.erase(victim);
  return freed;
}

CutReport KvcManager::on_serving_pressure(sim::SimTime now) {
  CutReport report;
  report.old_budget = budget_;
  if (state_ != BudgetState::Normal || cfg_.policy != MemoryPolicy::Preemptive) {
    report.new_budget = budget_;
    return report;  // at most one cut per step; static partition never cuts
  }
  state_ = BudgetState::Pressure;
  ++cuts_this_step_;
  budget_ = budget_ / cfg_.cut_factor;
  report.new_budget = budget_;

  // Reclaim at request granularity, youngest first (least progress lost).
  while (rollout_used() > budget_ && !active_.empty()) {
    auto victim = active_.begin();
    for (auto it = active_.begin(); it != active_.end(); ++it) {
      if (it->second.created_at > victim->second.created_at ||
          (it->second.created_at == victim->second.created_at && it->first > victim->first)) {
        victim = it;
      }
    }
    report.freed_pages += static_cast<std::int64_t>(victim->second.pages.size());
    report.aborted_trajectories.push_back(victim->first);
    erase_from_space(rollout_space_, victim->second.pages);
    pool_.release(PageOwner::Rollout, victim->second.pages);
    active_.erase(victim);
  }
  // Then prefix entries, least recently used first.
  while (rollout_used() > budget_ && !prefix_.empty()) {
    ++report.evicted_prefix_entries;
    report.freed_pages += evict_lru_prefix();
  }
  state_ = BudgetState::Frozen;
  (void)now;
  return report;
}

void KvcManager::recompute_budget(sim::SimTime now) {
  if (cfg_.policy != MemoryPolicy::Preemptive) {
    cuts_this_step_ = 0;
    return;
  }
  const auto prev_peak = peak_serving_;
  budget_ = std::clamp<std::int64_t>(budget_cap_ - prev_peak, 0, budget_cap_);
  watermark_base_ = prev_peak;
  state_ = BudgetState::Normal;
  cuts_this_step_ = 0;
  peak_serving_ = serving_used();
  (void)now;
}

void KvcManager::note_serving_usage(sim::SimTime now) {
  const auto used = serving_used();
  peak_serving_ = std::max(peak_serving_, used);
  if (!usage_history_.empty() && usage_history_.back().first == now) {
    usage_history_.back().second = used;
  } else {
    usage_history_.emplace_back(now, used);
  }
  // Keep a bounded tail; pruning happens against the largest window queried.
  if (usage_history_.size() > 1u << 16) usage_history_.pop_front();
}

double KvcManager::mean_serving_usage(sim::SimTime now, sim::SimTime window) const {
  if (usage_history_.empty() || window <= 0) return 0.0;
  const sim::SimTime start = now > window ? now - window : 0;
  double integral = 0;
  // Walk samples; each holds from its time until the next sample (or now).
  for (std::size_t i = 0; i < usage_history_.size(); ++i) {
    const auto [t0, v] = usage_history_[i];
    const auto t1 = i + 1 < usage_history_.size() ? usage_history_[i + 1].first : now;
    const auto lo = std::max(t0, start);
    const auto hi = std::min(t1, now);
    if (hi > lo) integral += static_cast<double>(v) * static_cast<double>(hi - lo);
  }
  const auto span = static_cast<double>(now - start);
  return span > 0 ? integral / span : static_cast<double>(usage_history_.back().second);
}

bool KvcManager::conservation_holds() const {
  if (!pool_.conservation_holds()) return false;
  // Every rollout page is attributed to exactly one active alloc or prefix entry.
  std::int64_t attributed = prefix_pages();
  for (const auto& [traj, alloc] : active_) {
    attributed += static_cast<std::int64_t>(alloc.pages.size());
  }
  if (attributed != rollout_used()) return false;
  if (static_cast<std::int64_t>(rollout_space_.mapped.size()) != rollout_used()) return false;
  if (static_cast<std::int64_t>(serving_space_.mapped.size()) != serving_used()) return false;
  return true;
}

}  // namespace coserve::mem
