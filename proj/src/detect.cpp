#include "logoid/detect.hpp"

#include "logoid/http.hpp"
#include "logoid/subprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <map>
#include <spdlog/spdlog.h>
#include <sstream>

namespace logoid {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<Scene> group_scenes(const DatasetManifest& manifest) {
  std::vector<Scene> scenes;
  std::map<fs::path, std::size_t> where;
  for (const LogoRecord& r : manifest.records) {
    auto [it, fresh] = where.emplace(r.image_path, scenes.size());
    if (fresh) scenes.push_back({r.image_path, {}});
    scenes[it->second].instances.push_back(&r);
  }
  return scenes;
}

std::vector<Detection> oracle_detect(const LogoRecord& record) {
  if (!record.bbox) {
    throw std::invalid_argument(fmt::format("oracle detector: record '{}' ({}) has no bbox",
                                            record.image_path.string(), record.brand.str()));
  }
  return {{*record.bbox, 1.0}};
}

std::vector<Detection> oracle_detect(const Scene& scene) {
  if (scene.instances.empty()) {
    throw std::invalid_argument(
        fmt::format("oracle detector: scene '{}' has no records", scene.image_path.string()));
  }
  std::vector<Detection> out;
  for (const LogoRecord* r : scene.instances) {
    auto d = oracle_detect(*r);
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

std::vector<RawDetection> parse_detections(const std::string& text) {
  auto malformed = [&](const std::string& why) {
    return Error(fmt::format("malformed detector output ({}): {}", why, text));
  };
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception&) {
    throw malformed("not JSON");
  }
  if (!j.is_object() || !j.contains("boxes") || !j.at("boxes").is_array()) {
    throw malformed("expected an object with a 'boxes' array");
  }
  std::vector<RawDetection> out;
  for (const auto& b : j.at("boxes")) {
    if (!b.is_array() || b.size() != 5) throw malformed("each box must be [x, y, w, h, conf]");
    for (const auto& v : b) {
      if (!v.is_number()) throw malformed("box entries must be numbers");
    }
    out.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                   b[3].get<double>(), b[4].get<double>()});
  }
  return out;
}

std::vector<Detection> validate_detections(const std::vector<RawDetection>& raw, int width,
                                           int height, const DetectionFilter& filter,
                                           std::vector<std::string>* warnings) {
  auto warn = [&](std::string msg) {
    spdlog::warn("detector: {}", msg);
    if (warnings) warnings->push_back(std::move(msg));
  };
  std::vector<Detection> out;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const RawDetection& r = raw[i];
    if (!std::isfinite(r.x) || !std::isfinite(r.y) || !std::isfinite(r.w) || !std::isfinite(r.h) ||
        !std::isfinite(r.confidence)) {
      warn(fmt::format("box {} has non-finite values, dropped", i));
      continue;
    }
    double conf = r.confidence;
    if (conf < 0.0 || conf > 1.0) {
      warn(fmt::format("box {} confidence {} clamped to [0, 1]", i, conf));
      conf = std::clamp(conf, 0.0, 1.0);
    }
    if (conf < filter.confidence_threshold) continue;

    const double x0 = std::round(r.x);
    const double y0 = std::round(r.y);
    const double x1 = std::round(r.x + r.w);
    const double y1 = std::round(r.y + r.h);
    const double cx0 = std::clamp(x0, 0.0, static_cast<double>(width));
    const double cy0 = std::clamp(y0, 0.0, static_cast<double>(height));
    const double cx1 = std::clamp(x1, 0.0, static_cast<double>(width));
    const double cy1 = std::clamp(y1, 0.0, static_cast<double>(height));
    if (cx0 != x0 || cy0 != y0 || cx1 != x1 || cy1 != y1) {
      warn(fmt::format("box {} [{}, {}, {}, {}] clipped to the {}x{} image", i, r.x, r.y, r.w, r.h,
                       width, height));
    }
    if (cx1 - cx0 < 1.0 || cy1 - cy0 < 1.0) {
      warn(fmt::format("box {} is empty after clipping, dropped", i));
      continue;
    }
    out.push_back({BBox{static_cast<int>(cx0), static_cast<int>(cy0), static_cast<int>(cx1 - cx0),
                        static_cast<int>(cy1 - cy0)},
                   conf});
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    return a.confidence > b.confidence;
  });
  if (filter.max_detections >= 0 && out.size() > static_cast<std::size_t>(filter.max_detections)) {
    out.resize(static_cast<std::size_t>(filter.max_detections));
  }
  return out;
}

ExternalDetector::ExternalDetector(ExternalDetectorConfig config) : config_(std::move(config)) {
  if (config_.command.empty() == config_.url.empty()) {
    throw std::invalid_argument("external detector: set exactly one of command and url");
  }
}

std::vector<Detection> ExternalDetector::detect(const Scene& scene) const {
  const auto [width, height] = image_size(scene.image_path);
  std::string output;
  if (!config_.url.empty()) {
    std::ifstream in(scene.image_path, std::ios::binary);
    if (!in) throw Error(fmt::format("cannot read scene '{}'", scene.image_path.string()));
    std::ostringstream bytes;
    bytes << in.rdbuf();
    HttpOptions opts;
    opts.read_timeout_s = config_.timeout_s;
    const HttpResponse res = http_post(config_.url, bytes.str(), "application/octet-stream", opts);
    if (!res.ok()) {
      throw Error(fmt::format("detector endpoint {} unreachable or failed (status {} {}): {}",
                              config_.url, res.status, res.error, res.body));
    }
    output = res.body;
  } else {
    const CommandResult res =
        run_command(expand_command(config_.command, {{"image", scene.image_path.string()}}));
    if (res.exit_code != 0) {
      throw Error(fmt::format("detector command exited with {}: {}", res.exit_code, res.output));
    }
    output = res.output;
  }
  while (!output.empty() && std::isspace(static_cast<unsigned char>(output.back()))) {
    output.pop_back();
  }
  return validate_detections(parse_detections(output), width, height, config_.filter);
}

std::unique_ptr<Detector> make_detector(const json& config) {
  const std::string kind = config.value("kind", std::string("oracle"));
  if (kind == "oracle") return std::make_unique<OracleDetector>();
  ExternalDetectorConfig c;
  c.filter.confidence_threshold =
      config.value("confidence_threshold", c.filter.confidence_threshold);
  c.filter.max_detections = config.value("max_detections", c.filter.max_detections);
  c.timeout_s = config.value("timeout_s", c.timeout_s);
  if (kind == "command") {
    c.command = config.value("command", std::string());
  } else if (kind == "http") {
    c.url = config.value("url", std::string());
  } else {
    throw std::invalid_argument(fmt::format("unknown detector kind '{}'", kind));
  }
  return std::make_unique<ExternalDetector>(std::move(c));
}

}  // namespace logoid
