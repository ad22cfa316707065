#pragma once

// HTTP front end for the session store.
//
//   POST /sessions                         create
//   GET  /sessions                         list
//   GET  /sessions/{id}                    snapshot
//   POST /sessions/{id}/outcomes           {outcome, echo, note?, stimulus?}
//   POST /sessions/{id}/close              {status: finished|abandoned}
//   GET  /sessions/{id}/export?format=csv|json

#include <string>

#include <httplib.h>

#include "sensitest/session.hpp"

namespace sensitest::service {

namespace detail {

inline void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

inline json error_body(const std::string& message, const std::string& field = {}) {
    json j{{"error", message}};
    if (!field.empty()) j["field"] = field;
    return j;
}

inline json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        return json::parse(req.body);
    } catch (const json::parse_error&) {
        throw ConfigError("request body is not valid JSON", "body");
    }
}

/// Runs a handler, mapping library errors onto HTTP statuses.
template <class F>
void guarded(httplib::Response& res, F&& f) {
    try {
        f();
    } catch (const StaleEchoError& e) {
        send_json(res, 409, {{"error", e.what()}, {"reason", "stale-echo"}, {"current", e.current()}});
    } catch (const SessionClosedError& e) {
        send_json(res, 409, {{"error", e.what()}, {"reason", "closed"}, {"current", e.current()}});
    } catch (const NotFoundError& e) {
        send_json(res, 404, error_body(e.what()));
    } catch (const ConfigError& e) {
        send_json(res, 400, error_body(e.what(), e.field()));
    } catch (const DomainError& e) {
        send_json(res, 400, error_body(e.what()));
    } catch (const StatisticalError& e) {
        send_json(res, 422, error_body(e.what()));
    } catch (const StateError& e) {
        send_json(res, 409, error_body(e.what()));
    } catch (const std::exception& e) {
        send_json(res, 500, error_body(e.what()));
    }
}

}  // namespace detail

/// Registers the session routes on `server`. The store must outlive it.
inline void install_routes(httplib::Server& server, SessionStore& store) {
    using detail::guarded;
    using detail::send_json;

    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Post("/sessions", [&store](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 201, store.create(detail::parse_body(req))); });
    });
    server.Get("/sessions", [&store](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, store.list()); });
    });
    server.Get(R"(/sessions/([A-Za-z0-9_-]+))", [&store](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, store.snapshot(req.matches[1])); });
    });
    server.Post(R"(/sessions/([A-Za-z0-9_-]+)/outcomes)",
                [&store](const httplib::Request& req, httplib::Response& res) {
                    guarded(res, [&] { send_json(res, 200, store.record(req.matches[1], detail::parse_body(req))); });
                });
    server.Post(R"(/sessions/([A-Za-z0-9_-]+)/close)", [&store](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const json body = detail::parse_body(req);
            send_json(res, 200,
                      store.close(req.matches[1], json_io::optional_field<std::string>(body, "status", "finished")));
        });
    });
    server.Get(R"(/sessions/([A-Za-z0-9_-]+)/export)", [&store](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::string format = req.has_param("format") ? req.get_param_value("format") : "csv";
            const std::string id = req.matches[1];
            const std::string body = store.export_session(id, format);
            const bool csv = json_io::parse_result_format(format) == json_io::ResultFormat::delimited;
            res.set_header("Content-Disposition",
                           "attachment; filename=\"" + id + (csv ? ".csv" : ".json") + "\"");
            res.set_content(body, csv ? "text/csv" : "application/json");
        });
    });
}

}  // namespace sensitest::service
