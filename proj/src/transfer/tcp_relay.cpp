#include "coserve/transfer/tcp_relay.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

#include "coserve/transfer/wire.hpp"

namespace coserve::transfer {

namespace {

constexpr std::uint8_t kOpPut = 0x01;
constexpr std::uint8_t kOpGet = 0x02;
constexpr std::uint8_t kOpGetAny = 0x03;
constexpr std::uint8_t kOpList = 0x04;

constexpr std::uint8_t kStatusOk = 0;
constexpr std::uint8_t kStatusTimeout = 1;
constexpr std::uint8_t kStatusMalformed = 2;
constexpr std::uint8_t kStatusIntegrity = 3;

struct ConnectionClosed : TransferError {
  using TransferError::TransferError;
};

[[noreturn]] void sys_fail(const std::string& what) {
  throw TransferError(what + ": " + std::strerror(errno));
}

void write_full(int fd, const std::uint8_t* data, std::size_t len) {
  std::size_t off = 0;
  while (off < len) {
    const ssize_t n = ::send(fd, data + off, len - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      sys_fail("send");
    }
    off += static_cast<std::size_t>(n);
  }
}

void read_full(int fd, std::uint8_t* data, std::size_t len) {
  std::size_t off = 0;
  while (off < len) {
    const ssize_t n = ::recv(fd, data + off, len - off, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK)
        throw RelayTimeout("socket read timed out");
      sys_fail("recv");
    }
    if (n == 0) throw ConnectionClosed("peer closed connection");
    off += static_cast<std::size_t>(n);
  }
}

std::uint32_t read_u32(int fd) {
  std::uint8_t buf[4];
  read_full(fd, buf, 4);
  std::uint32_t v;
  std::memcpy(&v, buf, 4);
  return v;
}

void write_u32(int fd, std::uint32_t v) {
  write_full(fd, reinterpret_cast<const std::uint8_t*>(&v), 4);
}

std::string read_sized_string(int fd, std::uint32_t max_len, const char* what) {
  const std::uint32_t len = read_u32(fd);
  if (len > max_len)
    throw PayloadFormatError(std::string(what) + " length " + std::to_string(len) +
                             " out of range");
  std::string s(len, '\0');
  if (len) read_full(fd, reinterpret_cast<std::uint8_t*>(s.data()), len);
  return s;
}

// Reads one bucket frame off the stream and CRC-checks it.
BucketFrame read_bucket_frame(int fd) {
  std::vector<std::uint8_t> buf;
  std::uint8_t head[4];
  read_full(fd, head, 4);
  buf.insert(buf.end(), head, head + 4);
  std::uint32_t key_len;
  std::memcpy(&key_len, head, 4);
  if (key_len > kMaxKeyLen) throw PayloadFormatError("frame key length out of range");
  std::size_t at = buf.size();
  buf.resize(at + key_len);
  read_full(fd, buf.data() + at, key_len);
  read_full(fd, head, 4);
  buf.insert(buf.end(), head, head + 4);
  std::uint32_t payload_len;
  std::memcpy(&payload_len, head, 4);
  if (payload_len > kMaxPayloadLen)
    throw PayloadFormatError("frame payload length out of range");
  at = buf.size();
  buf.resize(at + payload_len + 4);
  read_full(fd, buf.data() + at, payload_len + 4);
  std::size_t consumed = 0;
  return decode_bucket_frame(buf.data(), buf.size(), consumed);
}

void write_bucket_frame(int fd, const std::string& key,
                        const std::vector<std::uint8_t>& payload) {
  const auto frame = encode_bucket_frame(key, payload);
  write_full(fd, frame.data(), frame.size());
}

void set_recv_timeout(int fd, int timeout_ms) {
  timeval tv{};
  tv.tv_sec = timeout_ms / 1000;
  tv.tv_usec = (timeout_ms % 1000) * 1000;
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

TcpRelayServer::TcpRelayServer(std::uint16_t port) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) sys_fail("socket");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0)
    sys_fail("bind");
  if (::listen(listen_fd_, 32) < 0) sys_fail("listen");
  socklen_t alen = sizeof(addr);
  if (::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &alen) < 0)
    sys_fail("getsockname");
  port_ = ntohs(addr.sin_port);
  accept_thread_ = std::thread([this] { accept_loop(); });
}

TcpRelayServer::~TcpRelayServer() { stop(); }

void TcpRelayServer::stop() {
  if (stopping_.exchange(true)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  {
    std::lock_guard<std::mutex> lk(conns_mu_);
    for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  std::vector<std::thread> threads;
  {
    std::lock_guard<std::mutex> lk(conns_mu_);
    threads.swap(conn_threads_);
  }
  for (auto& t : threads)
    if (t.joinable()) t.join();
  ::close(listen_fd_);
}

void TcpRelayServer::accept_loop() {
  while (!stopping_.load()) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      break;  // listener shut down
    }
    set_nodelay(fd);
    std::lock_guard<std::mutex> lk(conns_mu_);
    if (stopping_.load()) {
      ::close(fd);
      break;
    }
    conn_fds_.push_back(fd);
    conn_threads_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void TcpRelayServer::serve_connection(int fd) {
  // Blocking waits are sliced so stop() never hangs behind a long GET.
  constexpr int kSliceMs = 100;
  auto sliced_wait = [&](int timeout_ms, auto&& attempt) {
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    while (true) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                            deadline - std::chrono::steady_clock::now())
                            .count();
      if (left <= 0 || stopping_.load()) return false;
      try {
        attempt(static_cast<int>(std::min<long long>(left, kSliceMs)));
        return true;
      } catch (const RelayTimeout&) {
      }
    }
  };

  try {
    while (!stopping_.load()) {
      std::uint8_t op;
      try {
        read_full(fd, &op, 1);
      } catch (const ConnectionClosed&) {
        break;
      }
      switch (op) {
        case kOpPut: {
          (void)0;
          std::uint8_t status = kStatusOk;
          try {
            BucketFrame f = read_bucket_frame(fd);
            store_.put(f.key, std::move(f.payload));
          } catch (const IntegrityError&) {
            status = kStatusIntegrity;
          }
          write_full(fd, &status, 1);
          break;
        }
        case kOpGet: {
          const std::string key = read_sized_string(fd, kMaxKeyLen, "key");
          const int timeout_ms = static_cast<int>(read_u32(fd));
          std::vector<std::uint8_t> payload;
          const bool ok = sliced_wait(timeout_ms, [&](int slice) {
            payload = store_.get(key, slice);
          });
          const std::uint8_t status = ok ? kStatusOk : kStatusTimeout;
          write_full(fd, &status, 1);
          if (ok) write_bucket_frame(fd, key, payload);
          break;
        }
        case kOpGetAny: {
          const std::uint32_t n = read_u32(fd);
          if (n == 0 || n > 4096) throw PayloadFormatError("get_any key count");
          std::vector<std::string> keys;
          keys.reserve(n);
          for (std::uint32_t i = 0; i < n; ++i)
            keys.push_back(read_sized_string(fd, kMaxKeyLen, "key"));
          const int timeout_ms = static_cast<int>(read_u32(fd));
          std::pair<std::string, std::vector<std::uint8_t>> hit;
          const bool ok = sliced_wait(timeout_ms, [&](int slice) {
            hit = store_.get_any(keys, slice);
          });
          const std::uint8_t status = ok ? kStatusOk : kStatusTimeout;
          write_full(fd, &status, 1);
          if (ok) write_bucket_frame(fd, hit.first, hit.second);
          break;
        }
        case kOpList: {
          const std::string prefix = read_sized_string(fd, kMaxKeyLen, "prefix");
          const auto keys = store_.list(prefix);
          std::uint8_t status = kStatusOk;
          write_full(fd, &status, 1);
          write_u32(fd, static_cast<std::uint32_t>(keys.size()));
          for (const auto& k : keys) {
            write_u32(fd, static_cast<std::uint32_t>(k.size()));
            write_full(fd, reinterpret_cast<const std::uint8_t*>(k.data()), k.size());
          }
          break;
        }
        default: {
          std::uint8_t status = kStatusMalformed;
          write_full(fd, &status, 1);
          throw PayloadFormatError("unknown op " + std::to_string(op));
        }
      }
    }
  } catch (const TransferError&) {
    // protocol error or torn connection: drop it
  }
  {
    std::lock_guard<std::mutex> lk(conns_mu_);
    conn_fds_.erase(std::remove(conn_fds_.begin(), conn_fds_.end(), fd),
                    conn_fds_.end());
  }
  ::close(fd);
}

TcpRelayClient::TcpRelayClient(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) sys_fail("socket");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw TransferError("bad relay host '" + host + "'");
  }
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    const int err = errno;
    ::close(fd_);
    errno = err;
    sys_fail("connect to " + host + ":" + std::to_string(port));
  }
  set_nodelay(fd_);
}

TcpRelayClient::~TcpRelayClient() {
  if (fd_ >= 0) ::close(fd_);
}

void TcpRelayClient::put(const std::string& key, std::vector<std::uint8_t> payload) {
  std::uint8_t op = kOpPut;
  set_recv_timeout(fd_, 30000);
  write_full(fd_, &op, 1);
  write_bucket_frame(fd_, key, payload);
  std::uint8_t status;
  read_full(fd_, &status, 1);
  if (status == kStatusIntegrity)
    throw IntegrityError("relay rejected put of '" + key + "': crc mismatch");
  if (status != kStatusOk)
    throw TransferError("put '" + key + "' failed, status " + std::to_string(status));
}

std::vector<std::uint8_t> TcpRelayClient::get(const std::string& key, int timeout_ms) {
  std::uint8_t op = kOpGet;
  set_recv_timeout(fd_, timeout_ms + 10000);
  write_full(fd_, &op, 1);
  write_u32(fd_, static_cast<std::uint32_t>(key.size()));
  write_full(fd_, reinterpret_cast<const std::uint8_t*>(key.data()), key.size());
  write_u32(fd_, static_cast<std::uint32_t>(timeout_ms));
  std::uint8_t status;
  read_full(fd_, &status, 1);
  if (status == kStatusTimeout)
    throw RelayTimeout("get '" + key + "' timed out after " +
                       std::to_string(timeout_ms) + "ms");
  if (status != kStatusOk)
    throw TransferError("get '" + key + "' failed, status " + std::to_string(status));
  return read_bucket_frame(fd_).payload;
}

std::pair<std::string, std::vector<std::uint8_t>> TcpRelayClient::get_any(
    const std::vector<std::string>& keys, int timeout_ms) {
  std::uint8_t op = kOpGetAny;
  set_recv_timeout(fd_, timeout_ms + 10000);
  write_full(fd_, &op, 1);
  write_u32(fd_, static_cast<std::uint32_t>(keys.size()));
  for (const auto& k : keys) {
    write_u32(fd_, static_cast<std::uint32_t>(k.size()));
    write_full(fd_, reinterpret_cast<const std::uint8_t*>(k.data()), k.size());
  }
  write_u32(fd_, static_cast<std::uint32_t>(timeout_ms));
  std::uint8_t status;
  read_full(fd_, &status, 1);
  if (status == kStatusTimeout)
    throw RelayTimeout("get_any timed out after " + std::to_string(timeout_ms) + "ms");
  if (status != kStatusOk)
    throw TransferError("get_any failed, status " + std::to_string(status));
  BucketFrame f = read_bucket_frame(fd_);
  return {std::move(f.key), std::move(f.payload)};
}

std::vector<std::string> TcpRelayClient::list(const std::string& prefix) {
  std::uint8_t op = kOpList;
  set_recv_timeout(fd_, 30000);
  write_full(fd_, &op, 1);
  write_u32(fd_, static_cast<std::uint32_t>(prefix.size()));
  write_full(fd_, reinterpret_cast<const std::uint8_t*>(prefix.data()), prefix.size());
  std::uint8_t status;
  read_full(fd_, &status, 1);
  if (status != kStatusOk)
    throw TransferError("list failed, status " + std::to_string(status));
  const std::uint32_t n = read_u32(fd_);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i)
    out.push_back(read_sized_string(fd_, kMaxKeyLen, "key"));
  return out;
}

}  // namespace coserve::transfer
