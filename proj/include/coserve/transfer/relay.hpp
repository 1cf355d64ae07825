#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "coserve/transfer/tensor.hpp"

namespace coserve::transfer {

struct RelayTimeout : TransferError {
  using TransferError::TransferError;
};
struct IntegrityError : TransferError {
  using TransferError::TransferError;
};

// Key/value rendezvous between the pushing and pulling side. put() publishes
// a bucket; get()/get_any() block until the key exists (so pullers can start
// before pushers) and fail with RelayTimeout after timeout_ms.
class Relay {
 public:
  virtual ~Relay() = default;
  virtual void put(const std::string& key, std::vector<std::uint8_t> payload) = 0;
  virtual std::vector<std::uint8_t> get(const std::string& key, int timeout_ms) = 0;
  virtual std::pair<std::string, std::vector<std::uint8_t>> get_any(
      const std::vector<std::string>& keys, int timeout_ms) = 0;
  virtual std::vector<std::string> list(const std::string& prefix) = 0;
};

class MemoryRelay : public Relay {
 public:
  void put(const std::string& key, std::vector<std::uint8_t> payload) override;
  std::vector<std::uint8_t> get(const std::string& key, int timeout_ms) override;
  std::pair<std::string, std::vector<std::uint8_t>> get_any(
      const std::vector<std::string>& keys, int timeout_ms) override;
  std::vector<std::string> list(const std::string& prefix) override;

  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, std::vector<std::uint8_t>> store_;
};

// Paces a byte stream at a fixed rate against the wall clock. Callers may
// overdraw (a single bucket can exceed the burst); the debt is slept off, so
// long streams settle at exactly `bytes_per_s`.
class TokenBucket {
 public:
  TokenBucket() = default;  // disabled: acquire() returns immediately
  TokenBucket(double bytes_per_s, double burst_bytes);

  void acquire(std::uint64_t bytes);
  bool enabled() const { return rate_ > 0.0; }
  double rate() const { return rate_; }

 private:
  double rate_ = 0.0;
  double burst_ = 0.0;
  double tokens_ = 0.0;
  std::chrono::steady_clock::time_point last_{};
  std::mutex mu_;
};

// Wraps a relay with per-direction pacing (independent push and pull lanes,
// as on a full-duplex link) and byte accounting.
class ThrottledRelay : public Relay {
 public:
  ThrottledRelay(std::shared_ptr<Relay> inner, std::shared_ptr<TokenBucket> push,
                 std::shared_ptr<TokenBucket> pull);

  void put(const std::string& key, std::vector<std::uint8_t> payload) override;
  std::vector<std::uint8_t> get(const std::string& key, int timeout_ms) override;
  std::pair<std::string, std::vector<std::uint8_t>> get_any(
      const std::vector<std::string>& keys, int timeout_ms) override;
  std::vector<std::string> list(const std::string& prefix) override;

  std::uint64_t pushed_bytes() const { return pushed_.load(); }
  std::uint64_t pulled_bytes() const { return pulled_.load(); }

 private:
  std::shared_ptr<Relay> inner_;
  std::shared_ptr<TokenBucket> push_;
  std::shared_ptr<TokenBucket> pull_;
  std::atomic<std::uint64_t> pushed_{0};
  std::atomic<std::uint64_t> pulled_{0};
};

}  // namespace coserve::transfer
