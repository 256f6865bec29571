#pragma once

#include "logoid/augment.hpp"
#include "logoid/encoder.hpp"
#include "logoid/loss.hpp"
#include "logoid/train.hpp"
#include "logoid/wirld.hpp"

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

namespace logoid {

struct DataSection {
  std::string train_manifest;
  std::string test_manifest;
  std::string reference_manifest;
  std::string distractor_manifest;
  bool strict = false;
  bool check_images = true;
  double open_set_test_fraction = 0.33;
  std::uint64_t split_seed = 0;
};

struct AugmentSection {
  AugmentationPolicy view_a = AugmentationPolicy::default_a();
  AugmentationPolicy view_b = AugmentationPolicy::default_b();
};

struct EncoderSection {
  std::string backbone = "tiny_convnet";  // tiny_convnet | external
  int input_size = 64;
  std::vector<int> channels{16, 32, 64};
  int visual_dim = 128;
  std::uint64_t init_seed = 0;
  std::string backbone_command;  // external only
  std::string recognizer = "perfect_ocr";  // none | perfect_ocr | external
  std::string recognizer_command;
  TrigramEmbedderConfig text;
  int head_hidden = 2048;
  int head_output = 512;
  std::uint64_t head_seed = 1;
  bool use_projection = false;

  EncoderConfig to_encoder_config() const;
};

struct TrainSection {
  std::int64_t steps = 1000;
  double learning_rate = 1e-4;
  double momentum = 0.9;
  int batch_size = 32;
  int brands_per_batch = 8;
  int samples_per_brand = 4;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 100;
  std::string checkpoint_dir = "checkpoints";
  bool reference_injection = false;
};

struct GallerySection {
  std::string path = "gallery.lgal";
  int batch_size = 64;
};

struct EvalSection {
  std::vector<int> ks{1, 5, 10};
  std::int64_t verification_pairs = 20000;
  std::uint64_t verification_seed = 0;
  std::vector<std::int64_t> sweep_sizes{1000, 2000, 5000, 10000, 20000, 50000, 100000};
  std::uint64_t sweep_seed = 0;
  std::string detector = "oracle";  // oracle | command | http
  std::string detector_command;
  std::string detector_url;
  double confidence_threshold = 0.25;
  int max_detections = 10;
  std::string out_dir = "reports";
};

struct HarvestSection {
  HarvestConfig config;
  std::string out_dir = "harvest";
};

/// Every tunable of a run, one section per module.
struct RunConfig {
  DataSection data;
  AugmentSection augment;
  EncoderSection encoder;
  LossConfig loss;
  TrainSection train;
  GallerySection gallery;
  EvalSection eval;
  HarvestSection harvest;

  /// Fully materialized TOML text (all defaults written out). Stable for
  /// equal configs.
  std::string to_toml() const;
  /// FNV-1a of to_toml(), 16 hex digits.
  std::string hash() const;

  TrainConfig train_config() const;
  void validate() const;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Reads a TOML config over the defaults. Unknown sections or keys and
/// type mismatches throw ConfigError. `overrides` are "section.key=value"
/// strings (value in TOML syntax, bare words taken as strings) applied
/// after the file, so flags beat file keys beat defaults.
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});
RunConfig parse_run_config(std::string_view toml_text,
                           const std::vector<std::string>& overrides = {});

/// Writes <dir>/resolved_config.toml and <dir>/config_hash.txt.
void write_resolved_config(const RunConfig& config, const std::filesystem::path& dir);

}  // namespace logoid
