#pragma once

#include <thread>

#include "coserve/transfer/relay.hpp"

namespace coserve::transfer {

// Relay served over a localhost TCP socket. Request/response protocol, one
// request in flight per connection:
//   [op u8] ...
//   op 0x01 PUT:     bucket frame                  -> [status u8]
//   op 0x02 GET:     [key_len u32][key][timeout u32] -> [status][bucket frame]
//   op 0x03 GET_ANY: [n u32]([key_len][key])*n [timeout u32]
//                                                  -> [status][bucket frame]
//   op 0x04 LIST:    [len u32][prefix]             -> [status][n u32]([len][key])*n
// status: 0 ok, 1 timeout, 2 malformed request, 3 integrity failure.
// Bucket frames are CRC-checked on both directions (see wire.hpp).
class TcpRelayServer {
 public:
  explicit TcpRelayServer(std::uint16_t port = 0);  // 0 = pick a free port
  ~TcpRelayServer();
  TcpRelayServer(const TcpRelayServer&) = delete;
  TcpRelayServer& operator=(const TcpRelayServer&) = delete;

  std::uint16_t port() const { return port_; }
  void stop();
  std::size_t stored_buckets() const { return store_.size(); }

 private:
  void accept_loop();
  void serve_connection(int fd);

  MemoryRelay store_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::mutex conns_mu_;
  std::vector<int> conn_fds_;
  std::vector<std::thread> conn_threads_;
};

// Client-side relay speaking to a TcpRelayServer. One connection; not
// thread-safe — each worker thread opens its own client.
class TcpRelayClient : public Relay {
 public:
  TcpRelayClient(const std::string& host, std::uint16_t port);
  ~TcpRelayClient() override;
  TcpRelayClient(const TcpRelayClient&) = delete;
  TcpRelayClient& operator=(const TcpRelayClient&) = delete;

  void put(const std::string& key, std::vector<std::uint8_t> payload) override;
  std::vector<std::uint8_t> get(const std::string& key, int timeout_ms) override;
  std::pair<std::string, std::vector<std::uint8_t>> get_any(
      const std::vector<std::string>& keys, int timeout_ms) override;
  std::vector<std::string> list(const std::string& prefix) override;

 private:
  std::vector<std::uint8_t> request(const std::vector<std::uint8_t>& req,
                                    int timeout_ms);
  int fd_ = -1;
};

}  // namespace coserve::transfer
