#pragma once

#include "logoid/augment.hpp"
#include "logoid/checkpoint.hpp"
#include "logoid/dataio.hpp"
#include "logoid/encoder.hpp"
#include "logoid/loss.hpp"
#include "logoid/params.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace logoid {

/// Class-balanced (P x K) batch sampling.
struct SamplerConfig {
  int batch_size = 32;
  int brands_per_batch = 8;
  int samples_per_brand = 4;
  std::uint64_t seed = 0;

  /// batch_size >= 4, brands_per_batch >= 2, samples_per_brand >= 1 and
  /// brands_per_batch * samples_per_brand == batch_size.
  void validate() const;
};

struct OptimizerConfig {
  double learning_rate = 1e-4;
  double momentum = 0.9;
  std::int64_t steps = 1000;

  void validate() const;
};

/// Record indices of the batch for `step`: brands_per_batch distinct
/// brands, samples_per_brand records each (drawn with replacement only when
/// a brand has fewer records). Deterministic in (seed, step).
std::vector<std::size_t> sample_batch_indices(const DatasetManifest& manifest,
                                              const SamplerConfig& config, std::int64_t step);
std::vector<LogoRecord> sample_batch(const DatasetManifest& manifest, const SamplerConfig& config,
                                     std::int64_t step);

/// A sampled batch before augmentation. Hooks may edit it in place.
struct BatchContents {
  std::vector<Image> images;
  std::vector<const LogoRecord*> records;
};
using BatchHook = std::function<void(BatchContents&)>;

/// Replaces the first image of every sampled brand with that brand's clean
/// reference image from `references` (one record per brand). Brands without
/// a reference are left alone.
BatchHook make_reference_injection_hook(const DatasetManifest& references);

struct TrainConfig {
  SamplerConfig sampler;
  OptimizerConfig optimizer;
  LossConfig loss;
  AugmentationPolicy policy_a = AugmentationPolicy::default_a();
  AugmentationPolicy policy_b = AugmentationPolicy::default_b();
  std::int64_t checkpoint_every = 100;
  /// Hash of the resolved run config, stamped into checkpoints.
  std::string config_hash;
  BatchHook batch_hook;  // off when empty
};

struct StepResult {
  double loss = 0.0;
  double backbone_grad_norm = 0.0;
  double head_grad_norm = 0.0;
};

/// Raised when a step produces a non-finite loss or gradient.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// SGD with heavy-ball momentum: buf = momentum * buf + grad;
/// weight -= learning_rate * buf.
class Trainer {
 public:
  Trainer(Encoder& encoder, const TrainConfig& config);

  /// One optimization step on already-decoded images. The returned loss is
  /// the objective at the pre-update weights.
  StepResult train_step(std::span<const Image> images, std::span<const LogoRecord* const> records,
                        std::uint64_t augment_seed);

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t step) { step_ = step; }
  ParameterSet momentum() const;
  void set_momentum(const ParameterSet& momentum);

 private:
  Encoder& encoder_;
  TrainConfig config_;
  ParameterSet backbone_momentum_;
  ParameterSet head_momentum_;
  std::uint64_t textual_hash_;
  std::int64_t step_ = 0;
};

struct LogRow {
  std::int64_t step = 0;
  double loss = 0.0;
  double seconds = 0.0;
};

struct FitOptions {
  bool resume = true;
  /// Stop after this many steps in this invocation (leaves a checkpoint),
  /// to emulate an interrupted run.
  std::optional<std::int64_t> stop_after;
};

/// Trains the encoder on the manifest. Writes checkpoints
/// (step_XXXXXXXX.lckp) every checkpoint_every steps and at the end, and
/// appends `step,loss,seconds` rows to train_log.csv. With resume, picks up
/// from the newest checkpoint in checkpoint_dir.
Checkpoint fit(const DatasetManifest& train, Encoder& encoder, const TrainConfig& config,
               const std::filesystem::path& checkpoint_dir, const FitOptions& options = {});

/// Newest step_*.lckp in a directory, if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& dir);

/// Reads train_log.csv.
std::vector<LogRow> read_train_log(const std::filesystem::path& path);

}  // namespace logoid
