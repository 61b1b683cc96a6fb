#pragma once

// Session-based annotation service. Transport-independent core; see
// http_server.hpp for the HTTP binding.
//
// Wire format
//   POST /session                      body: image/png bytes, or JSON {"scene_id": "..."}
//                                      -> 200 JSON {"session_id", "revision": 0, "width", "height"}
//   POST /session/{id}/extreme-points  JSON {"regions": [{"left": [x, y], "right": [x, y],
//                                      "top": [x, y], "bottom": [x, y]}, ...]}
//   POST /session/{id}/scribbles       JSON {"scribbles": [{"region_id": i, "points": [[x, y], ...]}, ...]}
//   GET  /session/{id}/segmentation    optional ?revision=k, optional ?format=json
//
// Mutations accept an optional "Expected-Revision" header; a mismatch is
// rejected with 409. Segmentation responses carry the 16-bit label PNG
// (indices 1..N) as the body with headers X-Session-Id, X-Revision,
// X-Regions and X-Region-Summary (JSON array of {region, pixels,
// mean_probability}). Mutation responses add X-Warnings (JSON array of
// strings). Errors are JSON {"code", "message"}.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cseg/annotation.hpp"
#include "cseg/model.hpp"
#include "cseg/png.hpp"
#include "cseg/synthetic.hpp"

namespace cseg {

struct ServiceConfig {
  std::size_t max_image_pixels = 512 * 512;
  std::size_t max_body_bytes = 16u << 20;
  std::size_t revisions_retained = 32;
  Sharing sharing = Sharing::shared;
  std::filesystem::path scene_root;  // empty disables scene ids
};

struct ServiceResponse {
  int status = 200;
  std::string content_type;
  std::string body;
  std::vector<std::pair<std::string, std::string>> headers;

  std::string header(std::string_view name) const {
    for (const auto& [k, v] : headers)
      if (k == name) return v;
    return {};
  }
};

class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status(status), code(std::move(code)) {}
  int status;
  std::string code;
};

struct RegionSummary {
  int region = 0;
  std::size_t pixels = 0;
  double mean_probability = 0;  // mean P_region over the pixels labelled region
};

class AnnotationService {
 public:
  AnnotationService(ModelParams<float> params, ServiceConfig cfg = {})
      : params_(std::move(params)), cfg_(std::move(cfg)) {}

  ServiceResponse create_session(std::string_view content_type, std::string_view body) {
    return guarded([&] { return do_create(content_type, body); });
  }

  ServiceResponse submit_extreme_points(const std::string& id, std::string_view body,
                                        std::optional<long> expected_revision = std::nullopt) {
    return guarded([&] { return do_extreme_points(id, body, expected_revision); });
  }

  ServiceResponse submit_scribbles(const std::string& id, std::string_view body,
                                   std::optional<long> expected_revision = std::nullopt) {
    return guarded([&] { return do_scribbles(id, body, expected_revision); });
  }

  ServiceResponse get_segmentation(const std::string& id, std::optional<long> revision = std::nullopt,
                                   bool as_json = false) {
    return guarded([&] { return do_get(id, revision, as_json); });
  }

  // Snapshot of a session's annotation state (for inspection and tests).
  std::optional<AnnotationState> annotation_state(const std::string& id) const {
    auto s = find(id);
    if (!s) return std::nullopt;
    std::lock_guard lk(s->mutex);
    return s->state;
  }

  const ServiceConfig& config() const { return cfg_; }
  const ModelParams<float>& params() const { return params_; }

 private:
  struct Revision {
    long number = 0;
    std::string png;
    std::string summary;  // serialized X-Region-Summary
    int regions = 0;
  };

  struct Session {
    std::string id;
    Tensor<float> image;
    AnnotationState state;
    long revision = 0;
    std::deque<Revision> history;  // oldest first
    mutable std::mutex mutex;
  };

  template <class F>
  static ServiceResponse guarded(F&& f) {
    try {
      return f();
    } catch (const ServiceError& e) {
      return error_response(e.status, e.code, e.what());
    } catch (const PngError& e) {
      return error_response(400, "bad_image", e.what());
    } catch (const nlohmann::json::exception& e) {
      return error_response(400, "bad_request", e.what());
    } catch (const std::invalid_argument& e) {
      return error_response(400, "bad_request", e.what());
    }
  }

  static ServiceResponse error_response(int status, const std::string& code, const std::string& message) {
    ServiceResponse r;
    r.status = status;
    r.content_type = "application/json";
    r.body = nlohmann::json{{"code", code}, {"message", message}}.dump();
    return r;
  }

  static ServiceResponse json_response(const nlohmann::json& j) {
    ServiceResponse r;
    r.content_type = "application/json";
    r.body = j.dump();
    return r;
  }

  std::shared_ptr<Session> find(const std::string& id) const {
    std::shared_lock lk(sessions_mutex_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  std::shared_ptr<Session> require(const std::string& id) const {
    auto s = find(id);
    if (!s) throw ServiceError(404, "unknown_session", "no session '" + id + "'");
    return s;
  }

  static nlohmann::json parse_json(std::string_view body) {
    if (body.empty()) throw ServiceError(400, "bad_request", "empty request body");
    try {
      return nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      throw ServiceError(400, "bad_request", std::string("malformed JSON: ") + e.what());
    }
  }

  static Point parse_point(const nlohmann::json& j, int w, int h, const char* what) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
      throw ServiceError(400, "malformed_points", std::string(what) + ": expected [x, y] integers");
    const Point p{j[0].get<int>(), j[1].get<int>()};
    if (p.x < 0 || p.y < 0 || p.x >= w || p.y >= h)
      throw ServiceError(400, "malformed_points", std::string(what) + ": point outside the image");
    return p;
  }

  static void check_revision(const Session& s, std::optional<long> expected) {
    if (expected && *expected != s.revision)
      throw ServiceError(409, "stale_revision",
                         "expected revision " + std::to_string(*expected) + ", current is " +
                             std::to_string(s.revision));
  }

  ServiceResponse do_create(std::string_view content_type, std::string_view body) {
    if (body.size() > cfg_.max_body_bytes) throw ServiceError(413, "payload_too_large", "request body too large");
    Tensor<float> image;
    if (content_type.starts_with("application/json")) {
      const auto j = parse_json(body);
      if (!j.is_object() || !j.contains("scene_id") || !j["scene_id"].is_string())
        throw ServiceError(400, "bad_request", "expected {\"scene_id\": string}");
      image = load_scene_image(j["scene_id"].get<std::string>());
    } else {
      const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(body.data()), body.size());
      try {
        image = decode_png_rgb8(bytes, cfg_.max_image_pixels);
      } catch (const PngError& e) {
        const bool too_big = std::string_view(e.what()).find("size limit") != std::string_view::npos;
        throw ServiceError(too_big ? 413 : 400, too_big ? "image_too_large" : "bad_image", e.what());
      }
    }
    const int h = image.dim(0), w = image.dim(1);
    if (h % params_.config.reduction != 0 || w % params_.config.reduction != 0)
      throw ServiceError(400, "bad_image",
                         "image sides must be multiples of " + std::to_string(params_.config.reduction));
    auto s = std::make_shared<Session>();
    s->image = std::move(image);
    s->state.width = w;
    s->state.height = h;
    {
      std::unique_lock lk(sessions_mutex_);
      char buf[32];
      std::snprintf(buf, sizeof buf, "s%06llu", static_cast<unsigned long long>(++next_session_));
      s->id = buf;
      sessions_[s->id] = s;
    }
    return json_response({{"session_id", s->id}, {"revision", 0}, {"width", w}, {"height", h}});
  }

  Tensor<float> load_scene_image(const std::string& scene_id) const {
    if (cfg_.scene_root.empty()) throw ServiceError(404, "unknown_scene", "scene ids are not enabled");
    const bool safe = !scene_id.empty() && std::all_of(scene_id.begin(), scene_id.end(), [](char ch) {
      return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-';
    });
    const auto dir = cfg_.scene_root / scene_id;
    if (!safe || !std::filesystem::exists(dir / "image.png"))
      throw ServiceError(404, "unknown_scene", "no scene '" + scene_id + "'");
    return decode_png_rgb8(read_file(dir / "image.png"), cfg_.max_image_pixels);
  }

  ServiceResponse do_extreme_points(const std::string& id, std::string_view body, std::optional<long> expected) {
    auto s = require(id);
    const auto j = parse_json(body);
    std::lock_guard lk(s->mutex);
    check_revision(*s, expected);
    if (s->state.regions() > 0)
      throw ServiceError(409, "already_initialized", "extreme points were already submitted for this session");
    if (!j.is_object() || !j.contains("regions") || !j["regions"].is_array() || j["regions"].empty())
      throw ServiceError(400, "malformed_points", "expected {\"regions\": [...]} with at least one region");
    const int w = s->state.width, h = s->state.height;
    std::vector<ExtremePoints> eps;
    for (const auto& r : j["regions"]) {
      if (!r.is_object()) throw ServiceError(400, "malformed_points", "region entry must be an object");
      for (const char* k : {"left", "right", "top", "bottom"})
        if (!r.contains(k)) throw ServiceError(400, "malformed_points", std::string("missing '") + k + "'");
      ExtremePoints ep{parse_point(r["left"], w, h, "left"), parse_point(r["right"], w, h, "right"),
                       parse_point(r["top"], w, h, "top"), parse_point(r["bottom"], w, h, "bottom")};
      if (!ep.valid(w, h))
        throw ServiceError(400, "malformed_points", "extreme points must satisfy left.x <= right.x and top.y <= bottom.y");
      eps.push_back(ep);
    }
    s->state.extreme_points = std::move(eps);
    return commit(*s, {});
  }

  ServiceResponse do_scribbles(const std::string& id, std::string_view body, std::optional<long> expected) {
    auto s = require(id);
    const auto j = parse_json(body);
    std::lock_guard lk(s->mutex);
    check_revision(*s, expected);
    if (s->history.empty()) throw ServiceError(409, "no_prediction", "submit extreme points first");
    if (!j.is_object() || !j.contains("scribbles") || !j["scribbles"].is_array())
      throw ServiceError(400, "bad_request", "expected {\"scribbles\": [...]}");
    const int w = s->state.width, h = s->state.height, n = s->state.regions();
    const LabelMap current = decode_png_gray16(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(s->history.back().png.data()), s->history.back().png.size()));
    std::vector<std::vector<Point>> lines;
    std::vector<int> regions;
    std::vector<std::string> warnings;
    for (const auto& sc : j["scribbles"]) {
      if (!sc.is_object() || !sc.contains("region_id") || !sc["region_id"].is_number_integer())
        throw ServiceError(400, "bad_request", "scribble needs an integer region_id");
      const int rid = sc["region_id"].get<int>();
      if (rid < 1 || rid > n) throw ServiceError(400, "unknown_region", "region_id " + std::to_string(rid) + " out of range");
      if (!sc.contains("points") || !sc["points"].is_array() || sc["points"].empty())
        throw ServiceError(400, "empty_scribble", "scribble has no points");
      std::vector<Point> pts;
      for (const auto& p : sc["points"]) pts.push_back(parse_point(p, w, h, "scribble point"));
      if (current.at(pts[0].x, pts[0].y) != rid)
        warnings.push_back("scribble " + std::to_string(lines.size()) + " starts outside the current prediction of region " +
                           std::to_string(rid));
      lines.push_back(std::move(pts));
      regions.push_back(rid);
    }
    if (lines.empty()) return segmentation_response(*s, s->history.back(), warnings);
    s->state.polylines.insert(s->state.polylines.end(), lines.begin(), lines.end());
    s->state.polyline_regions.insert(s->state.polyline_regions.end(), regions.begin(), regions.end());
    return commit(*s, warnings);
  }

  // Re-runs the model on the session state and records a new revision.
  ServiceResponse commit(Session& s, const std::vector<std::string>& warnings) {
    const auto pred = predict_segmentation(s.image, s.state, params_, cfg_.sharing);
    const int n = pred.probs.dim(2);
    std::vector<RegionSummary> summary(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) summary[i].region = i + 1;
    for (std::size_t p = 0; p < pred.labels.size(); ++p) {
      const int k = pred.labels[p] - 1;
      ++summary[k].pixels;
      summary[k].mean_probability += pred.probs[p * n + k];
    }
    nlohmann::json js = nlohmann::json::array();
    for (auto& r : summary) {
      if (r.pixels) r.mean_probability /= double(r.pixels);
      js.push_back({{"region", r.region}, {"pixels", r.pixels}, {"mean_probability", r.mean_probability}});
    }
    const auto png = encode_png_gray16(pred.labels);
    Revision rev;
    rev.number = ++s.revision;
    rev.png.assign(png.begin(), png.end());
    rev.summary = js.dump();
    rev.regions = n;
    s.history.push_back(std::move(rev));
    while (s.history.size() > cfg_.revisions_retained) s.history.pop_front();
    return segmentation_response(s, s.history.back(), warnings);
  }

  static ServiceResponse segmentation_response(const Session& s, const Revision& rev,
                                               const std::optional<std::vector<std::string>>& warnings) {
    ServiceResponse r;
    r.content_type = "image/png";
    r.body = rev.png;
    r.headers = {{"X-Session-Id", s.id},
                 {"X-Revision", std::to_string(rev.number)},
                 {"X-Regions", std::to_string(rev.regions)},
                 {"X-Region-Summary", rev.summary}};
    if (warnings) r.headers.emplace_back("X-Warnings", nlohmann::json(*warnings).dump());
    return r;
  }

  ServiceResponse do_get(const std::string& id, std::optional<long> revision, bool as_json) {
    auto s = require(id);
    std::lock_guard lk(s->mutex);
    if (s->history.empty()) throw ServiceError(404, "no_prediction", "session has no prediction yet");
    const Revision* rev = &s->history.back();
    if (revision) {
      rev = nullptr;
      for (const auto& h : s->history)
        if (h.number == *revision) rev = &h;
      if (!rev) throw ServiceError(404, "unknown_revision", "revision " + std::to_string(*revision) + " not available");
    }
    if (as_json)
      return json_response({{"session_id", s->id},
                            {"revision", rev->number},
                            {"regions", rev->regions},
                            {"width", s->state.width},
                            {"height", s->state.height},
                            {"summary", nlohmann::json::parse(rev->summary)}});
    return segmentation_response(*s, *rev, std::nullopt);
  }

  ModelParams<float> params_;
  ServiceConfig cfg_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_session_ = 0;
};

}  // namespace cseg
