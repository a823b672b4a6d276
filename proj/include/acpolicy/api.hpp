#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include <json.hpp>

#include "acpolicy/session.hpp"

namespace acpolicy::api {

struct ServerOptions {
  // Event logs live here as <session-id>.jsonl; existing logs are replayed
  // at startup. Empty keeps sessions in memory only.
  std::filesystem::path data_dir;
  // Null means wall-clock time.
  const Clock* clock = nullptr;
  // When positive, a background thread closes rounds past their deadline
  // and opens the next one every `tick_ms`.
  std::int64_t tick_ms = 0;
  // Upper bound on a long-poll wait.
  std::int64_t max_wait_ms = 30000;
};

// HTTP front of the session engine. Routes:
//   GET  /health
//   POST /sessions
//   GET  /sessions/{id}/round
//   POST /sessions/{id}/reports
//   GET  /sessions/{id}/ledger
//   GET  /sessions/{id}/events?after=k[&wait_ms=t]
//   GET  /sessions/{id}/events/stream?after=k      (text/event-stream)
//   POST /sessions/{id}/admin/open-round
//   POST /sessions/{id}/admin/close-round
// Occupant and admin tokens go in "Authorization: Bearer ..." or ?token=.
class Server {
 public:
  explicit Server(ServerOptions options = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds and serves until stop(). Returns false when the bind fails.
  bool listen(const std::string& host, int port);
  // Binds to a free port and returns it, or -1.
  int bind_any(const std::string& host);
  // Serves on a port taken by bind_any(); blocks until stop().
  bool listen_after_bind();
  void stop();
  bool running() const;
  void wait_until_ready() const;

  std::size_t session_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Hex-encoded cryptographically random token of `bytes` bytes.
std::string random_token(std::size_t bytes = 16);

}  // namespace acpolicy::api
