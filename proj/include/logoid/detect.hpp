#pragma once

#include "logoid/common.hpp"
#include "logoid/dataio.hpp"
#include "logoid/image.hpp"

#include <filesystem>
#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

namespace logoid {

/// Class-agnostic detection. Box lies inside the image, confidence in [0, 1].
struct Detection {
  BBox bbox;
  double confidence = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// One scene image and the ground-truth logo records that point at it.
struct Scene {
  std::filesystem::path image_path;
  std::vector<const LogoRecord*> instances;
};

/// Groups records by image_path in order of first appearance.
std::vector<Scene> group_scenes(const DatasetManifest& manifest);

/// Ground-truth boxes with confidence 1.0, in record order. Throws
/// std::invalid_argument when a record has no bbox.
std::vector<Detection> oracle_detect(const LogoRecord& record);
std::vector<Detection> oracle_detect(const Scene& scene);

/// Unvalidated adapter output.
struct RawDetection {
  double x = 0, y = 0, w = 0, h = 0;
  double confidence = 0;
};

/// Parses one `{"boxes": [[x, y, w, h, conf], ...]}` object. Throws
/// logoid::Error quoting the adapter output verbatim when malformed.
std::vector<RawDetection> parse_detections(const std::string& text);

struct DetectionFilter {
  double confidence_threshold = 0.25;
  int max_detections = 10;
};

/// Rounds boxes to pixels and clips them to the image; drops empty or
/// non-finite boxes and those under the threshold; clamps confidence into
/// [0, 1]; sorts by confidence (stable) and keeps max_detections. Each
/// adjustment appends a message to `warnings`.
std::vector<Detection> validate_detections(const std::vector<RawDetection>& raw, int width,
                                           int height, const DetectionFilter& filter,
                                           std::vector<std::string>* warnings = nullptr);

class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::string kind() const = 0;
  /// Detections for the scene image, already validated.
  virtual std::vector<Detection> detect(const Scene& scene) const = 0;
};

class OracleDetector final : public Detector {
 public:
  std::string kind() const override { return "oracle"; }
  std::vector<Detection> detect(const Scene& scene) const override { return oracle_detect(scene); }
};

struct ExternalDetectorConfig {
  /// Shell command with an {image} placeholder, printing one JSON object.
  std::string command;
  /// Alternatively an HTTP endpoint receiving the image bytes by POST.
  std::string url;
  DetectionFilter filter;
  int timeout_s = 60;
};

class ExternalDetector final : public Detector {
 public:
  explicit ExternalDetector(ExternalDetectorConfig config);
  std::string kind() const override { return config_.url.empty() ? "command" : "http"; }
  std::vector<Detection> detect(const Scene& scene) const override;

 private:
  ExternalDetectorConfig config_;
};

/// {"kind": "oracle"} or {"kind": "command", "command": ...} or
/// {"kind": "http", "url": ...}, plus confidence_threshold, max_detections.
std::unique_ptr<Detector> make_detector(const nlohmann::json& config);

}  // namespace logoid
