#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <string_view>

#include "cardood/encoding.hpp"
#include "cardood/model.hpp"

namespace cardood {

/// Pure request handler: one JSON query object (workload format, label
/// ignored) in, `{"cardinality": c}` or `{"error": message}` out. Safe to
/// call concurrently.
class EstimateService {
 public:
  EstimateService(Model<float> model, const Database& db, EncoderOptions options = {});

  std::string handle(std::string_view line) const;

 private:
  Model<float> model_;
  const Database* db_;
  QueryEncoder encoder_;
};

/// Newline-delimited TCP front end for an EstimateService. Connections are
/// served one at a time per worker; `workers` > 1 runs that many accept
/// loops over the shared (read-only) service.
class EstimateServer {
 public:
  /// Binds 127.0.0.1:`port` (0 picks a free port). Throws DataError when
  /// the port cannot be bound.
  EstimateServer(const EstimateService& service, std::uint16_t port, std::size_t workers = 1);
  ~EstimateServer();
  EstimateServer(const EstimateServer&) = delete;
  EstimateServer& operator=(const EstimateServer&) = delete;

  std::uint16_t port() const { return port_; }
  /// Blocks until stop() is called.
  void run();
  /// Async-signal-safe; in-flight requests are completed.
  void stop() { stopping_.store(true); }

 private:
  void accept_loop();
  void serve_connection(int fd);

  const EstimateService& service_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::size_t workers_ = 1;
  std::atomic<bool> stopping_{false};
};

}  // namespace cardood
