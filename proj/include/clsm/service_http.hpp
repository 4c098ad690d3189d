#pragma once

// cpp-httplib front end for Service.

#include <cstdlib>
#include <string>

#include <httplib.h>

#include "clsm/service.hpp"

namespace clsm {

// Explicit port if given (> 0), else CLSM_PORT, else 8080.
inline int resolve_port(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CLSM_PORT")) {
    try {
      const int p = std::stoi(env);
      if (p > 0 && p < 65536) return p;
    } catch (const std::exception&) {
    }
    throw InvalidConfig(std::string("CLSM_PORT is not a valid port: ") + env);
  }
  return 8080;
}

inline void mount(httplib::Server& server, Service& service) {
  const auto forward = [&service](const httplib::Request& req, httplib::Response& res) {
    const Response r = service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body.dump(), "application/json");
  };
  server.Get(R"(/.*)", forward);
  server.Post(R"(/.*)", forward);
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.status = 204;
  });
}

// Blocks until the server stops.
inline void serve(Service& service, const std::string& host, int port) {
  httplib::Server server;
  mount(server, service);
  if (!server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace clsm
