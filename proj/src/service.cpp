#include "monet/service.hpp"

#include <chrono>
#include <iostream>

#include "httplib.h"

namespace monet {

using nlohmann::json;

MatchRequest request_from_json(const json& j) {
  if (!j.is_object() || !j.contains("signature")) {
    throw BadRequest("request requires a 'signature' object");
  }
  MatchRequest req;
  try {
    req.signature = signature_from_json(j["signature"]);
  } catch (const Error& e) {
    throw BadRequest(e.what());
  }
  if (req.signature.rbg.origin() != Origin::runtime) {
    throw BadRequest("signature rbg must have runtime origin");
  }
  if (auto it = j.find("mode"); it != j.end()) {
    auto mode = it->is_string() ? mode_from_string(it->get<std::string>()) : std::nullopt;
    if (!mode) {
      throw BadRequest("mode must be one of sss_only, rbg_only, combined");
    }
    req.mode = *mode;
  }
  if (auto it = j.find("threshold"); it != j.end()) {
    if (!it->is_number() || it->get<double>() <= 0.0 || it->get<double>() > 1.0) {
      throw BadRequest("threshold must be a number in (0, 1]");
    }
    req.threshold = it->get<double>();
  }
  if (auto it = j.find("alpha"); it != j.end()) {
    if (!it->is_number_unsigned()) {
      throw BadRequest("alpha must be a non-negative integer");
    }
    req.alpha = it->get<std::size_t>();
  }
  return req;
}

json to_json(const MatchRequest& request) {
  json j = {{"signature", to_json(request.signature)}, {"mode", to_string(request.mode)}};
  if (request.threshold) {
    j["threshold"] = *request.threshold;
  }
  if (request.alpha) {
    j["alpha"] = *request.alpha;
  }
  return j;
}

json to_json(const MatchResponse& response) {
  return {
      {"verdict", to_json(response.verdict)},
      {"timing_ms", response.timing_ms},
      {"store_version", response.store_version},
  };
}

// ---------------------------------------------------------------------------

DetectionService::DetectionService(SignatureStore store, ServiceOptions options)
    : options_(std::move(options)),
      current_(std::make_shared<const SignatureStore>(std::move(store))) {}

std::shared_ptr<const SignatureStore> DetectionService::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return current_;
}

MatchResponse DetectionService::match(const MatchRequest& request) const {
  auto snap = snapshot();
  return match(request, *snap);
}

MatchResponse DetectionService::match(
    const MatchRequest& request, const SignatureStore& snapshot) const {
  auto start = std::chrono::steady_clock::now();
  MatchResponse resp;
  resp.verdict = decide(
      request.signature,
      snapshot,
      request.threshold.value_or(options_.threshold),
      request.mode,
      request.alpha.value_or(options_.alpha));
  resp.store_version = snapshot.version();
  resp.timing_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return resp;
}

std::uint64_t DetectionService::insert(const FamilySignature& family) {
  std::lock_guard writer(writer_mutex_);
  auto next = std::make_shared<SignatureStore>(insert_signature(*snapshot(), family));
  if (options_.persist_dir) {
    save_store(*next, *options_.persist_dir);
  }
  std::uint64_t version = next->version();
  std::lock_guard lock(snapshot_mutex_);
  current_ = std::move(next);
  return version;
}

json DetectionService::health() const {
  auto snap = snapshot();
  return {
      {"status", "ok"},
      {"store_version", snap->version()},
      {"families", snap->families().size()},
      {"graphs", snap->graph_count()},
  };
}

SignatureStore preload(const std::filesystem::path& bundle) {
  return load_store(bundle);
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded()) {
    throw BadRequest("request body is not valid JSON");
  }
  return body;
}

} // namespace

HttpFrontend::HttpFrontend(DetectionService& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  server_->Post("/v1/match", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      reply(res, 200, to_json(service_.match(request_from_json(parse_body(req)))));
    } catch (const BadRequest& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 422, {{"error", e.what()}});
    }
  });
  server_->Post("/v1/signatures", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      FamilySignature family = family_from_json(parse_body(req));
      std::uint64_t version = service_.insert(family);
      reply(res, 200, {{"store_version", version}});
    } catch (const BadRequest& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const IoError& e) {
      reply(res, 500, {{"error", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 400, {{"error", e.what()}});
    }
  });
  server_->Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, service_.health());
  });
}

HttpFrontend::~HttpFrontend() {
  stop();
}

int HttpFrontend::bind(const std::string& host, int port) {
  int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    throw IoError("cannot bind " + host + ":" + std::to_string(port));
  }
  return bound;
}

void HttpFrontend::listen() {
  server_->listen_after_bind();
}

void HttpFrontend::stop() {
  if (server_) {
    server_->stop();
  }
}

std::pair<std::string, int> parse_listen_address(const std::string& address) {
  auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == address.size()) {
    throw BadRequest("listen address must be host:port, got '" + address + "'");
  }
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(address.substr(colon + 1), &used);
    if (used != address.size() - colon - 1 || port < 0 || port > 65535) {
      throw BadRequest("bad port");
    }
  } catch (const std::exception&) {
    throw BadRequest("listen address has an invalid port: '" + address + "'");
  }
  return {address.substr(0, colon), port};
}

void serve(const ServeConfig& config) {
  auto [host, port] = parse_listen_address(config.listen);
  ServiceOptions options = config.options;
  if (config.persist) {
    options.persist_dir = config.store_dir;
  }
  DetectionService service(preload(config.store_dir), options);
  HttpFrontend frontend(service);
  int bound = frontend.bind(host, port);
  std::cerr << "monet: serving " << config.store_dir.string() << " (version "
            << service.snapshot()->version() << ") on " << host << ":" << bound << "\n";
  frontend.listen();
}

} // namespace monet
