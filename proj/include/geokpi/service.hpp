#pragma once

#include <memory>
#include <mutex>
#include <string>

#include <json.hpp>

#include "geokpi/errors.hpp"
#include "geokpi/pipeline.hpp"

namespace geokpi::service {

nlohmann::json to_json(const pipeline::WhatIfResponse& r);
nlohmann::json to_json(const pipeline::CellForecast& f);
nlohmann::json run_json(const pipeline::RunSnapshot& run);
nlohmann::json clusters_json(const pipeline::RunSnapshot& run);

/// Reads a CellConfig from {cell_id?, latitude, longitude, azimuth, tilt?,
/// range_m}, optionally wrapped in {"candidate": ...}.
geometry::CellConfig candidate_from_json(const nlohmann::json& j);

/// HTTP status used for an error code.
int http_status(ErrorCode code) noexcept;

/// HTTP front end over one immutable run snapshot. `promote` swaps in a new
/// snapshot; requests already in flight finish on the one they started with.
class Server {
public:
  explicit Server(std::shared_ptr<const pipeline::RunSnapshot> snapshot = nullptr);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  void promote(std::shared_ptr<const pipeline::RunSnapshot> snapshot);
  std::shared_ptr<const pipeline::RunSnapshot> snapshot() const;

  /// Binds to an ephemeral port and returns it.
  int bind_any(const std::string& host = "127.0.0.1");
  bool bind(const std::string& host, int port);
  /// Blocks until stop().
  bool listen();
  void stop();
  void wait_until_ready() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  mutable std::mutex mutex_;
  std::shared_ptr<const pipeline::RunSnapshot> snapshot_;
};

}  // namespace geokpi::service
