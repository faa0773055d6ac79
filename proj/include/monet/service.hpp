#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "json.hpp"

#include "monet/errors.hpp"
#include "monet/matcher.hpp"
#include "monet/sig_store.hpp"

namespace httplib {
class Server;
}

namespace monet {

/// Malformed or invalid request body; answered with HTTP 400.
class BadRequest : public Error {
 public:
  using Error::Error;
};

struct MatchRequest {
  RuntimeBehaviorSignature signature;
  Mode mode = Mode::combined;
  std::optional<double> threshold;
  std::optional<std::size_t> alpha;
};

struct MatchResponse {
  Verdict verdict;
  double timing_ms = 0.0;
  std::uint64_t store_version = 0;
};

/// Throws BadRequest, including for graphs of static origin.
MatchRequest request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MatchRequest& request);
/// {"verdict":{...},"timing_ms":x,"store_version":n}
nlohmann::json to_json(const MatchResponse& response);

struct ServiceOptions {
  double threshold = kDefaultThreshold;
  std::size_t alpha = kDefaultAlpha;
  /// When set, admin inserts are saved here before they become visible.
  std::optional<std::filesystem::path> persist_dir;
};

/// Matches uploaded signatures against an immutable store snapshot. Readers
/// grab the current snapshot and never see a partial update; inserts build a
/// new snapshot and swap it in (single writer).
class DetectionService {
 public:
  explicit DetectionService(SignatureStore store, ServiceOptions options = {});

  std::shared_ptr<const SignatureStore> snapshot() const;

  MatchResponse match(const MatchRequest& request) const;
  MatchResponse match(const MatchRequest& request, const SignatureStore& snapshot) const;

  /// Returns the new store version.
  std::uint64_t insert(const FamilySignature& family);

  /// {"status":"ok","store_version":n,"families":k,"graphs":g}
  nlohmann::json health() const;

  const ServiceOptions& options() const { return options_; }

 private:
  ServiceOptions options_;
  mutable std::mutex snapshot_mutex_;
  std::mutex writer_mutex_;
  std::shared_ptr<const SignatureStore> current_;
};

/// Offline detection bundle: a store directory loaded fail-closed.
SignatureStore preload(const std::filesystem::path& bundle);

/// HTTP/1.1 front end: POST /v1/match, POST /v1/signatures, GET /v1/health.
class HttpFrontend {
 public:
  explicit HttpFrontend(DetectionService& service);
  ~HttpFrontend();
  HttpFrontend(const HttpFrontend&) = delete;
  HttpFrontend& operator=(const HttpFrontend&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port. Throws IoError.
  int bind(const std::string& host, int port);
  /// Blocks until stop() is called.
  void listen();
  void stop();

 private:
  DetectionService& service_;
  std::unique_ptr<httplib::Server> server_;
};

struct ServeConfig {
  std::filesystem::path store_dir;
  std::string listen = "127.0.0.1:8080";
  ServiceOptions options;
  bool persist = false;
};

/// Splits "host:port"; throws BadRequest on malformed input.
std::pair<std::string, int> parse_listen_address(const std::string& address);

/// Loads the store, binds and serves until the process is stopped.
/// Startup failures throw.
void serve(const ServeConfig& config);

} // namespace monet
