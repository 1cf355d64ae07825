#include "coserve/transfer/relay.hpp"

#include <thread>

namespace coserve::transfer {

void MemoryRelay::put(const std::string& key, std::vector<std::uint8_t> payload) {
  {
    std::lock_guard<std::mutex> lk(mu_);
    store_[key] = std::move(payload);
  }
  cv_.notify_all();
}

std::vector<std::uint8_t> MemoryRelay::get(const std::string& key, int timeout_ms) {
  std::unique_lock<std::mutex> lk(mu_);
  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  if (!cv_.wait_until(lk, deadline, [&] { return store_.count(key) > 0; }))
    throw RelayTimeout("get '" + key + "' timed out after " +
                       std::to_string(timeout_ms) + "ms");
  return store_.at(key);
}

std::pair<std::string, std::vector<std::uint8_t>> MemoryRelay::get_any(
    const std::vector<std::string>& keys, int timeout_ms) {
  std::unique_lock<std::mutex> lk(mu_);
  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  const std::string* hit = nullptr;
  auto probe = [&] {
    for (const auto& k : keys) {
      if (store_.count(k)) {
        hit = &k;
        return true;
      }
    }
    return false;
  };
  if (!cv_.wait_until(lk, deadline, probe))
    throw RelayTimeout("get_any over " + std::to_string(keys.size()) +
                       " keys timed out after " + std::to_string(timeout_ms) + "ms");
  return {*hit, store_.at(*hit)};
}

std::vector<std::string> MemoryRelay::list(const std::string& prefix) {
  std::lock_guard<std::mutex> lk(mu_);
  std::vector<std::string> out;
  for (auto it = store_.lower_bound(prefix); it != store_.end(); ++it) {
    if (it->first.compare(0, prefix.size(), prefix) != 0) break;
    out.push_back(it->first);
  }
  return out;
}

std::size_t MemoryRelay::size() const {
  std::lock_guard<std::mutex> lk(mu_);
  return store_.size();
}

TokenBucket::TokenBucket(double bytes_per_s, double burst_bytes)
    : rate_(bytes_per_s), burst_(burst_bytes), tokens_(burst_bytes),
      last_(std::chrono::steady_clock::now()) {}

void TokenBucket::acquire(std::uint64_t bytes) {
  if (!enabled() || bytes == 0) return;
  std::chrono::duration<double> wait_s{0};
  {
    std::lock_guard<std::mutex> lk(mu_);
    const auto now = std::chrono::steady_clock::now();
    tokens_ += std::chrono::duration<double>(now - last_).count() * rate_;
    if (tokens_ > burst_) tokens_ = burst_;
    last_ = now;
    tokens_ -= static_cast<double>(bytes);
    if (tokens_ < 0.0) wait_s = std::chrono::duration<double>(-tokens_ / rate_);
  }
  if (wait_s.count() > 0.0) std::this_thread::sleep_for(wait_s);
}

ThrottledRelay::ThrottledRelay(std::shared_ptr<Relay> inner,
                               std::shared_ptr<TokenBucket> push,
                               std::shared_ptr<TokenBucket> pull)
    : inner_(std::move(inner)), push_(std::move(push)), pull_(std::move(pull)) {}

void ThrottledRelay::put(const std::string& key, std::vector<std::uint8_t> payload) {
  const std::uint64_t n = payload.size();
  if (push_) push_->acquire(n);
  pushed_ += n;
  inner_->put(key, std::move(payload));
}

std::vector<std::uint8_t> ThrottledRelay::get(const std::string& key, int timeout_ms) {
  auto payload = inner_->get(key, timeout_ms);
  if (pull_) pull_->acquire(payload.size());
  pulled_ += payload.size();
  return payload;
}

std::pair<std::string, std::vector<std::uint8_t>> ThrottledRelay::get_any(
    const std::vector<std::string>& keys, int timeout_ms) {
  auto kv = inner_->get_any(keys, timeout_ms);
  if (pull_) pull_->acquire(kv.second.size());
  pulled_ += kv.second.size();
  return kv;
}

std::vector<std::string> ThrottledRelay::list(const std::string& prefix) {
  return inner_->list(prefix);
}

}  // namespace coserve::transfer
