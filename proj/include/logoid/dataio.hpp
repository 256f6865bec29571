#pragma once

#include "logoid/image.hpp"

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace logoid {

/// Business brand label. Never empty or whitespace-only.
class BrandId {
 public:
  explicit BrandId(std::string value);

  const std::string& str() const { return value_; }

  friend bool operator==(const BrandId&, const BrandId&) = default;
  friend auto operator<=>(const BrandId&, const BrandId&) = default;

 private:
  std::string value_;
};

enum class Split { train, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

/// One logo instance. For scene images several records share image_path,
/// one per ground-truth logo.
struct LogoRecord {
  std::filesystem::path image_path;  // absolute after load_manifest
  BrandId brand;
  std::optional<BBox> bbox;
  std::optional<std::string> ocr_text;
  Split split = Split::train;

  friend bool operator==(const LogoRecord&, const LogoRecord&) = default;
};

struct ManifestIssue {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct DatasetManifest {
  std::vector<LogoRecord> records;
  bool open_set = false;
  std::vector<ManifestIssue> invalid;

  /// Distinct brands in order of first appearance.
  std::vector<BrandId> brands() const;
  /// Throws logoid::Error if open_set is set and train/test brands overlap.
  void check_open_set() const;
};

struct LoadOptions {
  /// Any invalid line becomes a thrown logoid::Error instead of an issue.
  bool strict = false;
  /// Check that image files exist and that boxes fit inside them.
  bool check_images = true;
  /// Mark the result open-set and verify train/test brand disjointness.
  bool open_set = false;
};

/// Reads a JSONL manifest. Relative image paths resolve against the
/// manifest's directory. Missing file throws; bad lines are collected in
/// `invalid` with their line numbers (or thrown when strict).
DatasetManifest load_manifest(const std::filesystem::path& path, const LoadOptions& options = {});

/// Writes JSONL. Paths under the manifest's directory are stored relative.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Brand-level split: every brand lands wholly in train or in test. The
/// test side gets round(test_fraction * brands) brands, clamped to
/// [1, brands - 1]. Both outputs are flagged open_set.
std::pair<DatasetManifest, DatasetManifest> make_open_set_split(const DatasetManifest& manifest,
                                                                double test_fraction,
                                                                std::uint64_t seed);

/// Decodes the record's image and crops it to its bbox when present.
Image load_record_image(const LogoRecord& record);

}  // namespace logoid
