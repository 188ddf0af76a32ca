#include "bodyfuse/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstring>

namespace bodyfuse::transport {

using Clock = std::chrono::steady_clock;

Endpoint Endpoint::parse(std::string_view uri) {
  std::string_view rest = uri;
  if (rest.starts_with("tcp://")) rest.remove_prefix(6);
  const auto colon = rest.rfind(':');
  if (colon == std::string_view::npos) throw Error(ErrorCode::InvalidArgument, "endpoint needs host:port: " + std::string(uri));
  Endpoint ep;
  ep.host = std::string(rest.substr(0, colon));
  if (ep.host.empty() || ep.host == "*" || ep.host == "localhost") ep.host = "127.0.0.1";
  const auto port = rest.substr(colon + 1);
  unsigned value = 0;
  const auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
  if (ec != std::errc() || ptr != port.data() + port.size() || value > 65535)
    throw Error(ErrorCode::InvalidArgument, "bad port in endpoint " + std::string(uri));
  ep.port = static_cast<std::uint16_t>(value);
  return ep;
}

std::string Endpoint::uri() const { return "tcp://" + host + ":" + std::to_string(port); }

namespace {

sockaddr_in to_sockaddr(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  if (inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) != 1)
    throw Error(ErrorCode::InvalidArgument, "not an IPv4 address: " + ep.host);
  return addr;
}

bool write_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0 && errno == EINTR) continue;
    if (w <= 0) return false;
    data += w;
    n -= static_cast<std::size_t>(w);
  }
  return true;
}

bool read_all(int fd, std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t r = ::recv(fd, data, n, 0);
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) return false;
    data += r;
    n -= static_cast<std::size_t>(r);
  }
  return true;
}

/// Reads one frame body; nullopt on EOF or a broken stream.
std::optional<std::vector<std::uint8_t>> read_frame(int fd) {
  std::uint8_t len_bytes[4];
  if (!read_all(fd, len_bytes, 4)) return std::nullopt;
  const std::uint32_t len = static_cast<std::uint32_t>(len_bytes[0]) | (static_cast<std::uint32_t>(len_bytes[1]) << 8) |
                            (static_cast<std::uint32_t>(len_bytes[2]) << 16) |
                            (static_cast<std::uint32_t>(len_bytes[3]) << 24);
  if (len == 0 || len > wire::kMaxFrameBytes) return std::nullopt;
  std::vector<std::uint8_t> body(len);
  if (!read_all(fd, body.data(), len)) return std::nullopt;
  return body;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

wire::WireMessage error_reply(ErrorCode code, const std::string& what) {
  return {std::string(wire::kErrorTopic), wire::encode(wire::ErrorMessage{std::string(to_string(code)), what})};
}

}  // namespace

// --- server ----------------------------------------------------------------------------------

struct RequestServer::Connection {
  int fd = -1;
  std::mutex write_mu;
  std::atomic<bool> open{true};

  bool write(const std::vector<std::uint8_t>& frame) {
    std::lock_guard lock(write_mu);
    return open && write_all(fd, frame.data(), frame.size());
  }
};

RequestServer::RequestServer(const Endpoint& endpoint, Handler handler, ServerOptions options)
    : handler_(std::move(handler)), options_(std::move(options)) {
  const sockaddr_in addr = to_sockaddr(endpoint);
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error(ErrorCode::BindFailure, std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(listen_fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(listen_fd_, 16) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    throw Error(ErrorCode::BindFailure, endpoint.uri() + ": " + why);
  }
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
  accept_thread_ = std::thread([this] { accept_loop(); });
  delay_thread_ = std::thread([this] { delay_loop(); });
}

RequestServer::~RequestServer() { stop(); }

void RequestServer::stop() {
  if (stopping_.exchange(true)) return;
  if (accept_thread_.joinable()) accept_thread_.join();
  ::close(listen_fd_);
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(mu_);
    for (auto& c : connections_) {
      c->open = false;
      ::shutdown(c->fd, SHUT_RDWR);
    }
    threads.swap(connection_threads_);
  }
  delay_cv_.notify_all();
  for (auto& t : threads) t.join();
  if (delay_thread_.joinable()) delay_thread_.join();
  std::lock_guard lock(mu_);
  for (auto& c : connections_) ::close(c->fd);
  connections_.clear();
}

void RequestServer::accept_loop() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 50) <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    set_nodelay(fd);
    auto conn = std::make_shared<Connection>();
    conn->fd = fd;
    std::lock_guard lock(mu_);
    if (stopping_) {
      ::close(fd);
      break;
    }
    connections_.push_back(conn);
    connection_threads_.emplace_back([this, conn] { serve_connection(conn); });
  }
}

void RequestServer::serve_connection(std::shared_ptr<Connection> conn) {
  while (!stopping_) {
    const auto body = read_frame(conn->fd);
    if (!body) break;
    wire::WireMessage reply;
    wire::WireMessage request;
    try {
      request = wire::decode_frame_body(*body);
      reply = handler_(request);
    } catch (const Error& e) {
      reply = error_reply(e.code(), e.what());
    } catch (const std::exception& e) {
      reply = error_reply(ErrorCode::TransportError, e.what());
    }
    ++served_;
    const auto delay = options_.delay_for ? options_.delay_for(request) : options_.reply_delay;
    auto frame = wire::encode_frame(reply);
    if (delay.count() <= 0) {
      if (!conn->write(frame)) break;
      continue;
    }
    std::lock_guard lock(mu_);
    delayed_.push_back({Clock::now() + delay, delayed_seq_++, conn, std::move(frame)});
    std::push_heap(delayed_.begin(), delayed_.end(), std::greater<>());
    delay_cv_.notify_all();
  }
  conn->open = false;
}

void RequestServer::delay_loop() {
  std::unique_lock lock(mu_);
  while (!stopping_) {
    if (delayed_.empty()) {
      delay_cv_.wait(lock);
      continue;
    }
    const auto due = delayed_.front().due;
    if (Clock::now() < due) {
      delay_cv_.wait_until(lock, due);
      continue;
    }
    std::pop_heap(delayed_.begin(), delayed_.end(), std::greater<>());
    Delayed item = std::move(delayed_.back());
    delayed_.pop_back();
    lock.unlock();
    item.conn->write(item.frame);
    lock.lock();
  }
}

// --- client ----------------------------------------------------------------------------------

RequestClient::RequestClient(Endpoint endpoint, std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout) {
  to_sockaddr(endpoint_);  // validate early
  reaper_ = std::thread([this] { reaper_loop(); });
}

RequestClient::~RequestClient() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
    while (!pending_.empty()) resolve_locked(pending_.begin()->first, {std::nullopt, ErrorCode::TransportError, {}});
    disconnect_locked();
  }
  cv_.notify_all();
  reaper_.join();
  if (reader_.joinable()) reader_.join();
  for (auto& t : retired_readers_) t.join();
}

ClientCounters RequestClient::counters() const {
  std::lock_guard lock(mu_);
  return counters_;
}

bool RequestClient::connected() const {
  std::lock_guard lock(mu_);
  return fd_ >= 0;
}

bool RequestClient::ensure_connected_locked() {
  if (fd_ >= 0) return true;
  if (stopping_) return false;
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) return false;
  const sockaddr_in addr = to_sockaddr(endpoint_);
  if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    return false;
  }
  set_nodelay(fd);
  fd_ = fd;
  if (reader_.joinable()) retired_readers_.push_back(std::move(reader_));
  reader_ = std::thread([this, fd] { reader_loop(fd); });
  return true;
}

void RequestClient::disconnect_locked() {
  // The reader thread owns close(); shutdown wakes it.
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  fd_ = -1;
}

void RequestClient::flush_unsent_locked() {
  for (auto& [key, p] : pending_) {
    if (p.written) continue;
    if (!ensure_connected_locked()) return;
    if (!write_all(fd_, p.frame.data(), p.frame.size())) {
      disconnect_locked();
      return;
    }
    p.written = true;
    p.frame.clear();
    ++counters_.sent;
  }
}

void RequestClient::resolve_locked(const wire::RequestKey& key, Outcome outcome) {
  const auto it = pending_.find(key);
  if (it == pending_.end()) return;
  outcome.latency = std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - it->second.sent_at);
  it->second.promise.set_value(std::move(outcome));
  pending_.erase(it);
}

std::shared_future<Outcome> RequestClient::send(const wire::CropMessage& crop) {
  std::promise<Outcome> immediate;
  std::vector<std::uint8_t> frame;
  try {
    frame = wire::encode_frame({std::string(wire::kCropTopic), wire::encode(crop)});
  } catch (const Error& e) {
    immediate.set_value({std::nullopt, e.code(), {}});
    return immediate.get_future().share();
  }

  std::unique_lock lock(mu_);
  const wire::RequestKey key = wire::key_of(crop);
  if (stopping_ || pending_.contains(key)) {
    ++counters_.errors;
    immediate.set_value({std::nullopt, ErrorCode::TransportError, {}});
    return immediate.get_future().share();
  }
  const auto now = Clock::now();
  Pending& p = pending_[key];
  p.frame = std::move(frame);
  p.sent_at = now;
  p.deadline = now + timeout_;
  auto future = p.promise.get_future().share();
  flush_unsent_locked();
  lock.unlock();
  cv_.notify_all();
  return future;
}

void RequestClient::reader_loop(int fd) {
  for (;;) {
    const auto body = read_frame(fd);
    if (!body) break;
    std::lock_guard lock(mu_);
    try {
      const wire::WireMessage msg = wire::decode_frame_body(*body);
      const wire::AnyMessage any = wire::decode_any(msg.payload);
      if (const auto* r = std::get_if<wire::ResultMessage>(&any)) {
        const auto it = pending_.find(wire::key_of(*r));
        if (it != pending_.end() && it->second.written) {
          ++counters_.replies;
          resolve_locked(it->first, {*r, std::nullopt, {}});
        }
      } else {
        ++counters_.errors;
      }
    } catch (const Error&) {
      ++counters_.errors;
    }
  }
  std::lock_guard lock(mu_);
  if (fd_ == fd) fd_ = -1;
  ::close(fd);
}

void RequestClient::reaper_loop() {
  std::unique_lock lock(mu_);
  while (!stopping_) {
    const auto now = Clock::now();
    std::vector<wire::RequestKey> expired;
    auto next = Clock::time_point::max();
    bool unsent = false;
    for (const auto& [key, p] : pending_) {
      if (p.deadline <= now) {
        expired.push_back(key);
      } else {
        next = std::min(next, p.deadline);
        unsent = unsent || !p.written;
      }
    }
    for (const auto& key : expired) {
      ++counters_.timeouts;
      resolve_locked(key, {std::nullopt, ErrorCode::Timeout, {}});
    }
    if (unsent) {
      flush_unsent_locked();
      next = std::min(next, now + std::chrono::milliseconds(10));
    }
    if (next == Clock::time_point::max()) {
      cv_.wait(lock);
    } else {
      cv_.wait_until(lock, next);
    }
  }
}

}  // namespace bodyfuse::transport
