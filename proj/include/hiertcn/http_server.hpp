// SPDX-License-Identifier: Apache-2.0
#pragma once

// Thin HTTP/JSON wire layer over the serving engine:
//   POST /v1/interactions              {user_id, item_id, timestamp}
//   POST /v1/recommendations           {user_id, candidate_ids, k}
//   POST /v1/maintenance/close-idle    {now}
//   GET  /v1/health
// Malformed requests answer 400, data failures (unknown item, timestamp
// regression) answer 422.

#include <cstdint>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include <hiertcn/serving.hpp>

namespace hiertcn {

class ServingHttp {
 public:
  explicit ServingHttp(ServingEngine& engine) : engine_(engine) { routes(); }

  // Binds an OS-chosen port; returns it. Serve with listen_after_bind().
  int bind_any_port(const std::string& host = "127.0.0.1") {
    return server_.bind_to_any_port(host);
  }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }
  void stop() { server_.stop(); }
  bool is_running() const { return server_.is_running(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

 private:
  static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  template <class Fn>
  static void guarded(const httplib::Request& req, httplib::Response& res, Fn&& fn) {
    try {
      const nlohmann::json body =
          req.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(req.body);
      fn(body);
    } catch (const nlohmann::json::exception& e) {
      reply(res, 400, {{"error", std::string("bad request: ") + e.what()}});
    } catch (const ConfigError& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const DataError& e) {
      reply(res, 422, {{"error", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  }

  void routes() {
    server_.Post("/v1/interactions", [this](const httplib::Request& req,
                                            httplib::Response& res) {
      guarded(req, res, [&](const nlohmann::json& b) {
        engine_.on_interaction(b.at("user_id").get<std::uint64_t>(),
                               b.at("item_id").get<std::uint64_t>(),
                               b.at("timestamp").get<std::int64_t>());
        reply(res, 200, {{"status", "ok"}});
      });
    });

    server_.Post("/v1/recommendations", [this](const httplib::Request& req,
                                               httplib::Response& res) {
      guarded(req, res, [&](const nlohmann::json& b) {
        const auto user = b.at("user_id").get<std::uint64_t>();
        const auto pool = b.at("candidate_ids").get<std::vector<std::uint64_t>>();
        const auto k = b.value("k", pool.size());
        auto r = engine_.recommend(user, pool, k);
        nlohmann::json items = nlohmann::json::array();
        for (const auto& it : r.items)
          items.push_back({{"item_id", it.id}, {"score", it.score}});
        reply(res, 200,
              {{"items", items},
               {"model_version", r.model_version},
               {"state_version", r.state_version},
               {"cold_user", r.cold_user}});
      });
    });

    server_.Post("/v1/maintenance/close-idle", [this](const httplib::Request& req,
                                                      httplib::Response& res) {
      guarded(req, res, [&](const nlohmann::json& b) {
        const auto closed = engine_.close_idle_sessions(b.at("now").get<std::int64_t>());
        reply(res, 200, {{"closed", closed}});
      });
    });

    server_.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, {{"status", "ok"}, {"model_version", engine_.model_version()}});
    });
  }

  ServingEngine& engine_;
  httplib::Server server_;
};

}  // namespace hiertcn
