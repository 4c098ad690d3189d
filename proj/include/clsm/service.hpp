#pragma once

// Request handling for the inference service. Transport-free: handle() maps
// (method, path, body) to (status, body) so it can be driven directly or from
// an HTTP server (see service_http.hpp).
//
// Endpoints
//   GET  /health       -> {status, model_version, d_z}
//   POST /session      {window, span, seed?}            -> {session_id, span, window}
//   POST /generate     {session_id, seed?}               -> {z_handle, tokens, target}
//   POST /interpolate  {session_id, handles: [a, b], J}  -> {J, sequences}
//   POST /vary         {session_id, z_handle, delta, seed?} -> {z_handle, tokens, target}
//
// Windows are arrays of token strings (a space-separated string is accepted
// on input); spans are {start, length} or "a:b". Latents stay on the server
// behind opaque handles.

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "clsm/errors.hpp"
#include "clsm/model.hpp"
#include "clsm/sampler.hpp"
#include "clsm/tokens.hpp"

namespace clsm {

struct Response {
  int status = 200;
  nlohmann::json body;
};

struct ServiceOptions {
  std::chrono::seconds session_ttl{3600};
  std::string model_version = "clsm";
  std::size_t max_handles_per_session = 256;
  int max_J = 64;
};

namespace service_detail {

class HttpError : public Error {
 public:
  HttpError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex_id(const std::string& prefix, std::uint64_t h) {
  std::ostringstream os;
  os << prefix << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace service_detail

class Service {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;

  explicit Service(std::shared_ptr<const ClsmModel<float>> model, ServiceOptions opt = {},
                   Clock clock = [] { return std::chrono::steady_clock::now(); })
      : model_(std::move(model)), opt_(std::move(opt)), clock_(std::move(clock)) {
    if (!model_) throw InvalidInput("service needs a model");
  }

  Response handle(const std::string& method, const std::string& path, const std::string& body) {
    using service_detail::HttpError;
    try {
      purge_expired();
      if (path == "/health") {
        if (method != "GET") throw HttpError(405, "use GET for /health");
        return {200, {{"status", "ok"}, {"model_version", opt_.model_version}, {"d_z", model_->config().d_z}}};
      }
      static const std::map<std::string, Response (Service::*)(const nlohmann::json&)> routes = {
          {"/session", &Service::create_session},
          {"/generate", &Service::generate},
          {"/interpolate", &Service::interpolate},
          {"/vary", &Service::vary},
      };
      auto it = routes.find(path);
      if (it == routes.end()) throw HttpError(404, "no such endpoint: " + path);
      if (method != "POST") throw HttpError(405, "use POST for " + path);
      nlohmann::json req;
      try {
        req = nlohmann::json::parse(body);
      } catch (const nlohmann::json::exception&) {
        throw HttpError(400, "request body is not valid JSON");
      }
      if (!req.is_object()) throw HttpError(400, "request body must be an object");
      return (this->*(it->second))(req);
    } catch (const HttpError& e) {
      return {e.status(), {{"error", e.what()}}};
    } catch (const NumericalError& e) {
      return {500, {{"error", e.what()}}};
    } catch (const Error& e) {
      return {400, {{"error", e.what()}}};
    } catch (const nlohmann::json::exception& e) {
      return {400, {{"error", std::string("malformed request: ") + e.what()}}};
    } catch (const std::exception& e) {
      return {500, {{"error", e.what()}}};
    }
  }

  std::size_t session_count() const {
    std::lock_guard lock(mu_);
    return sessions_.size();
  }

 private:
  struct Session {
    std::mutex mu;
    TokenSeq window;
    TargetSpan span;
    std::uint64_t seed = 0;
    std::chrono::steady_clock::time_point last_used;
    std::map<std::string, ag::RowVec<float>> latents;
    std::deque<std::string> order;  // insertion order for eviction
  };

  void purge_expired() {
    std::lock_guard lock(mu_);
    const auto now = clock_();
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (now - it->second->last_used > opt_.session_ttl)
        it = sessions_.erase(it);
      else
        ++it;
    }
  }

  std::shared_ptr<Session> find_session(const nlohmann::json& req) {
    if (!req.contains("session_id") || !req["session_id"].is_string())
      throw service_detail::HttpError(400, "missing session_id");
    std::lock_guard lock(mu_);
    auto it = sessions_.find(req["session_id"].get<std::string>());
    if (it == sessions_.end()) throw service_detail::HttpError(404, "unknown session");
    it->second->last_used = clock_();
    return it->second;
  }

  static TokenSeq parse_window(const nlohmann::json& j) {
    if (j.is_string()) return from_text(j.get<std::string>());
    if (!j.is_array()) throw service_detail::HttpError(400, "window must be an array of token strings");
    TokenSeq out;
    for (const auto& t : j) {
      if (!t.is_string()) throw service_detail::HttpError(400, "window must be an array of token strings");
      out.push_back(alphabet::from_string(t.get<std::string>()));
    }
    return out;
  }

  TargetSpan parse_span_field(const nlohmann::json& j) const {
    const SpanGrid grid = model_->config().grid();
    if (j.is_string()) return parse_span(j.get<std::string>(), grid);
    if (!j.is_object()) throw service_detail::HttpError(400, "span must be {start, length} or \"a:b\"");
    TargetSpan s{j.at("start").get<int>(), j.at("length").get<int>()};
    validate(s, grid);
    return s;
  }

  static std::uint64_t seed_of(const nlohmann::json& req, std::uint64_t fallback = 0) {
    if (!req.contains("seed")) return fallback;
    if (!req["seed"].is_number_integer()) throw service_detail::HttpError(400, "seed must be an integer");
    return req["seed"].get<std::uint64_t>();
  }

  nlohmann::json window_record(const Session& s, const TokenSeq& window) const {
    return {{"tokens", to_strings(window)}, {"target", to_strings(target_of(window, s.span))}};
  }

  std::string store_latent(Session& s, const std::string& key, const ag::RowVec<float>& z) {
    const std::string handle = service_detail::hex_id("z", service_detail::fnv1a(key));
    if (!s.latents.count(handle)) {
      s.order.push_back(handle);
      while (s.order.size() > opt_.max_handles_per_session) {
        s.latents.erase(s.order.front());
        s.order.pop_front();
      }
    }
    s.latents[handle] = z;
    return handle;
  }

  const ag::RowVec<float>& latent(const Session& s, const nlohmann::json& j) const {
    if (!j.is_string()) throw service_detail::HttpError(400, "z handle must be a string");
    auto it = s.latents.find(j.get<std::string>());
    if (it == s.latents.end()) throw service_detail::HttpError(404, "unknown z handle");
    return it->second;
  }

  Response create_session(const nlohmann::json& req) {
    if (!req.contains("window") || !req.contains("span")) throw service_detail::HttpError(400, "need window and span");
    TokenSeq window = parse_window(req["window"]);
    if (static_cast<int>(window.size()) != model_->config().K)
      throw InvalidInput("window must hold " + std::to_string(model_->config().K) + " tokens");
    for (Token t : window)
      if (!alphabet::is_data(t)) throw InvalidToken("window contains a non-data token");
    const TargetSpan span = parse_span_field(req["span"]);
    const std::uint64_t seed = seed_of(req);
    const std::string key = to_text(window) + "|" + std::to_string(span.start) + ":" +
                            std::to_string(span.length) + "|" + std::to_string(seed);
    const std::string id = service_detail::hex_id("s", service_detail::fnv1a(key));
    {
      std::lock_guard lock(mu_);
      auto& slot = sessions_[id];
      if (!slot) {
        slot = std::make_shared<Session>();
        slot->window = window;
        slot->span = span;
        slot->seed = seed;
      }
      slot->last_used = clock_();
    }
    return {200,
            {{"session_id", id}, {"span", {{"start", span.start}, {"length", span.length}}}, {"window", to_strings(window)}}};
  }

  Response generate(const nlohmann::json& req) {
    auto s = find_session(req);
    std::lock_guard lock(s->mu);
    const std::uint64_t seed = seed_of(req, s->seed);
    const auto [left, right] = contexts_of(s->window, s->span);
    nn::Rng rng(seed);
    const auto z = sample_from_prior(*model_, left, right, s->span, rng);
    const auto window = assemble(left, greedy_decode_target(*model_, z, left, right, s->span), right);
    const std::string handle = store_latent(*s, "generate|" + std::to_string(seed), z);
    auto out = window_record(*s, window);
    out["z_handle"] = handle;
    return {200, out};
  }

  Response interpolate(const nlohmann::json& req) {
    auto s = find_session(req);
    std::lock_guard lock(s->mu);
    if (!req.contains("handles") || !req["handles"].is_array() || req["handles"].size() != 2)
      throw service_detail::HttpError(400, "handles must be an array of two z handles");
    if (!req.contains("J") || !req["J"].is_number_integer()) throw service_detail::HttpError(400, "J must be an integer");
    const int J = req["J"].get<int>();
    if (J < 1 || J > opt_.max_J) throw service_detail::HttpError(400, "J out of range");
    const auto& z1 = latent(*s, req["handles"][0]);
    const auto& z2 = latent(*s, req["handles"][1]);
    const auto [left, right] = contexts_of(s->window, s->span);
    nlohmann::json seqs = nlohmann::json::array();
    for (const auto& w : interpolate_contextual(*model_, z1, z2, J, left, right, s->span))
      seqs.push_back(window_record(*s, w));
    return {200, {{"J", J}, {"sequences", seqs}}};
  }

  Response vary(const nlohmann::json& req) {
    auto s = find_session(req);
    std::lock_guard lock(s->mu);
    if (!req.contains("z_handle")) throw service_detail::HttpError(400, "missing z_handle");
    if (!req.contains("delta") || !req["delta"].is_number()) throw service_detail::HttpError(400, "delta must be a number");
    const double delta = req["delta"].get<double>();
    if (!(delta >= 0)) throw service_detail::HttpError(400, "delta must be non-negative");
    const auto& z = latent(*s, req["z_handle"]);
    const std::uint64_t seed = seed_of(req, s->seed);
    const auto [left, right] = contexts_of(s->window, s->span);
    nn::Rng rng(seed);
    const auto zd = vary_latent(*model_, z, delta, left, right, s->span, rng);
    const auto window = assemble(left, greedy_decode_target(*model_, zd, left, right, s->span), right);
    std::ostringstream key;
    key << "vary|" << req["z_handle"].get<std::string>() << "|" << std::setprecision(17) << delta << "|" << seed;
    const std::string handle = delta == 0 ? req["z_handle"].get<std::string>() : store_latent(*s, key.str(), zd);
    auto out = window_record(*s, window);
    out["z_handle"] = handle;
    return {200, out};
  }

  std::shared_ptr<const ClsmModel<float>> model_;
  ServiceOptions opt_;
  Clock clock_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

}  // namespace clsm
