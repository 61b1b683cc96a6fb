#pragma once

// cpp-httplib binding of AnnotationService.

#include <optional>
#include <string>

#include "httplib.h"

#include "cseg/service.hpp"

namespace cseg {

namespace detail {

inline std::optional<long> parse_revision(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(s, &used);
  } catch (const std::exception&) {
    throw ServiceError(400, "bad_request", "revision must be an integer");
  }
  if (used != s.size()) throw ServiceError(400, "bad_request", "revision must be an integer");
  return v;
}

inline void send(httplib::Response& res, const ServiceResponse& r) {
  res.status = r.status;
  for (const auto& [k, v] : r.headers) res.set_header(k, v);
  res.set_content(r.body, r.content_type);
}

inline void send_error(httplib::Response& res, const ServiceError& e) {
  res.status = e.status;
  res.set_content(nlohmann::json{{"code", e.code}, {"message", e.what()}}.dump(), "application/json");
}

}  // namespace detail

// Registers the session routes on `server`. The service must outlive it.
inline void bind_routes(httplib::Server& server, AnnotationService& service) {
  server.set_payload_max_length(service.config().max_body_bytes);
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Expose-Headers",
                               "X-Session-Id, X-Revision, X-Regions, X-Region-Summary, X-Warnings"}});
  server.Options(R"(/session.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type, Expected-Revision");
    res.status = 204;
  });
  server.Post("/session", [&service](const httplib::Request& req, httplib::Response& res) {
    detail::send(res, service.create_session(req.get_header_value("Content-Type"), req.body));
  });
  auto mutation = [&service](bool points) {
    return [&service, points](const httplib::Request& req, httplib::Response& res) {
      try {
        const auto expected = detail::parse_revision(req.get_header_value("Expected-Revision"));
        const std::string id = req.matches[1];
        detail::send(res, points ? service.submit_extreme_points(id, req.body, expected)
                                 : service.submit_scribbles(id, req.body, expected));
      } catch (const ServiceError& e) {
        detail::send_error(res, e);
      }
    };
  };
  server.Post(R"(/session/([A-Za-z0-9_-]+)/extreme-points)", mutation(true));
  server.Post(R"(/session/([A-Za-z0-9_-]+)/scribbles)", mutation(false));
  server.Get(R"(/session/([A-Za-z0-9_-]+)/segmentation)", [&service](const httplib::Request& req,
                                                                     httplib::Response& res) {
    try {
      const auto rev = detail::parse_revision(req.get_param_value("revision"));
      const std::string format = req.get_param_value("format");
      if (!format.empty() && format != "png" && format != "json")
        throw ServiceError(400, "bad_request", "format must be png or json");
      detail::send(res, service.get_segmentation(req.matches[1], rev, format == "json"));
    } catch (const ServiceError& e) {
      detail::send_error(res, e);
    }
  });
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const std::string code = res.status == 404 ? "not_found" : res.status == 413 ? "payload_too_large" : "http_error";
    res.set_content(nlohmann::json{{"code", code}, {"message", httplib::status_message(res.status)}}.dump(),
                    "application/json");
  });
}

}  // namespace cseg
