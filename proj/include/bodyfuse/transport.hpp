#pragma once

// Request/reply over TCP using the wire frame layout. The client multiplexes any number of
// in-flight crops on one connection and correlates replies by (ts_us, person_id, part).
// Requests are sent at most once; a request without a reply by its deadline resolves as
// Timeout and is never retried.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "bodyfuse/error.hpp"
#include "bodyfuse/wire.hpp"

namespace bodyfuse::transport {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  /// Accepts "tcp://host:port" or "host:port". Throws InvalidArgument.
  static Endpoint parse(std::string_view uri);
  std::string uri() const;
};

using Handler = std::function<wire::WireMessage(const wire::WireMessage&)>;

struct ServerOptions {
  /// Artificial latency before each reply is written.
  std::chrono::microseconds reply_delay{0};
  /// Per-request latency; overrides reply_delay when set.
  std::function<std::chrono::microseconds(const wire::WireMessage&)> delay_for;
};

/// Serves every request independently: the handler runs on the connection's reader thread
/// and must be reentrant.
class RequestServer {
 public:
  /// Binds and starts listening; port 0 picks a free port. Throws BindFailure.
  RequestServer(const Endpoint& endpoint, Handler handler, ServerOptions options = {});
  ~RequestServer();
  RequestServer(const RequestServer&) = delete;
  RequestServer& operator=(const RequestServer&) = delete;

  std::uint16_t port() const { return port_; }
  void stop();
  std::uint64_t requests_served() const { return served_.load(); }

 private:
  struct Connection;
  struct Delayed {
    std::chrono::steady_clock::time_point due;
    std::uint64_t seq;
    std::shared_ptr<Connection> conn;
    std::vector<std::uint8_t> frame;
    bool operator>(const Delayed& o) const { return due != o.due ? due > o.due : seq > o.seq; }
  };

  void accept_loop();
  void serve_connection(std::shared_ptr<Connection> conn);
  void delay_loop();

  Handler handler_;
  ServerOptions options_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> served_{0};
  std::thread accept_thread_;
  std::thread delay_thread_;
  std::mutex mu_;
  std::condition_variable delay_cv_;
  std::vector<Delayed> delayed_;  // min-heap on due
  std::uint64_t delayed_seq_ = 0;
  std::vector<std::shared_ptr<Connection>> connections_;
  std::vector<std::thread> connection_threads_;
};

struct Outcome {
  std::optional<wire::ResultMessage> result;
  std::optional<ErrorCode> error;  // Timeout, TransportError, MalformedMessage ...
  std::chrono::microseconds latency{0};
};

struct ClientCounters {
  std::uint64_t sent = 0;
  std::uint64_t replies = 0;
  std::uint64_t timeouts = 0;
  std::uint64_t errors = 0;
};

class RequestClient {
 public:
  explicit RequestClient(Endpoint endpoint, std::chrono::milliseconds timeout = std::chrono::milliseconds(300));
  ~RequestClient();
  RequestClient(const RequestClient&) = delete;
  RequestClient& operator=(const RequestClient&) = delete;

  /// Never throws for transport problems; they arrive as Outcome::error.
  std::shared_future<Outcome> send(const wire::CropMessage& crop);
  Outcome request(const wire::CropMessage& crop) { return send(crop).get(); }

  ClientCounters counters() const;
  bool connected() const;

 private:
  struct Pending {
    std::promise<Outcome> promise;
    std::vector<std::uint8_t> frame;
    std::chrono::steady_clock::time_point sent_at;
    std::chrono::steady_clock::time_point deadline;
    bool written = false;
  };

  bool ensure_connected_locked();
  void disconnect_locked();
  void flush_unsent_locked();
  void reader_loop(int fd);
  void reaper_loop();
  void resolve_locked(const wire::RequestKey& key, Outcome outcome);

  Endpoint endpoint_;
  std::chrono::milliseconds timeout_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  int fd_ = -1;
  bool stopping_ = false;
  std::map<wire::RequestKey, Pending> pending_;
  ClientCounters counters_;
  std::thread reader_;
  std::thread reaper_;
  std::vector<std::thread> retired_readers_;
};

}  // namespace bodyfuse::transport
