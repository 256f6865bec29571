#pragma once

#include "logoid/common.hpp"
#include "logoid/image.hpp"
#include "logoid/params.hpp"

#include <array>
#include <json.hpp>
#include <memory>
#include <span>
#include <string>

namespace logoid {

/// Activations a backbone keeps from forward() for its backward pass.
struct BackboneTape {
  virtual ~BackboneTape() = default;
};

/// Visual encoder: a batch of S x S RGB images to an n x D_v feature matrix.
///
/// forward() never mutates the weights, so concurrent inference is safe.
/// Training code calls forward() with a tape, then backward() to accumulate
/// parameter gradients.
class VisualBackbone {
 public:
  virtual ~VisualBackbone() = default;

  virtual std::string kind() const = 0;
  virtual int output_dim() const = 0;
  virtual int input_size() const = 0;
  virtual bool trainable() const { return true; }
  /// Construction config, stored in checkpoints.
  virtual nlohmann::json config() const = 0;

  /// Images must be 3 x input_size x input_size, values in [0, 1]. The
  /// backbone's own per-channel normalization is applied inside.
  virtual MatrixF forward(std::span<const Image> batch,
                          std::unique_ptr<BackboneTape>* tape = nullptr) const = 0;
  virtual void backward(const BackboneTape& tape, const MatrixF& grad_features,
                        ParameterSet& grads) const = 0;

  virtual ParameterSet& parameters() = 0;
  virtual const ParameterSet& parameters() const = 0;
};

struct TinyConvNetConfig {
  int input_size = 64;
  /// Widths of the first three conv blocks; the fourth has output_dim.
  std::array<int, 3> channels{16, 32, 64};
  int output_dim = 128;
  std::uint64_t init_seed = 0;
};

/// Four 3x3 conv blocks (conv, ReLU, 2x2 max-pool; the last block ends in
/// global average pooling). No input normalization.
class TinyConvNet final : public VisualBackbone {
 public:
  explicit TinyConvNet(const TinyConvNetConfig& config);

  std::string kind() const override { return "tiny_convnet"; }
  int output_dim() const override { return config_.output_dim; }
  int input_size() const override { return config_.input_size; }
  nlohmann::json config() const override;

  MatrixF forward(std::span<const Image> batch,
                  std::unique_ptr<BackboneTape>* tape = nullptr) const override;
  void backward(const BackboneTape& tape, const MatrixF& grad_features,
                ParameterSet& grads) const override;

  ParameterSet& parameters() override { return params_; }
  const ParameterSet& parameters() const override { return params_; }

  static TinyConvNetConfig parse_config(const nlohmann::json& j);

 private:
  TinyConvNetConfig config_;
  ParameterSet params_;
};

struct ExternalBackboneConfig {
  /// Shell command with {input} and {output} placeholders. {input} is a
  /// float32 file: int32 header (n, 3, S, S) then pixels, already
  /// normalized with mean/std. The command writes n x output_dim float32
  /// to {output}.
  std::string command;
  int input_size = 224;
  int output_dim = 2048;
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> std{0.229f, 0.224f, 0.225f};
};

/// Adapter for a pretrained deep backbone run out of process. Frozen: it has
/// no parameters, so training updates only the projection head.
class ExternalBackbone final : public VisualBackbone {
 public:
  explicit ExternalBackbone(ExternalBackboneConfig config);

  std::string kind() const override { return "external"; }
  int output_dim() const override { return config_.output_dim; }
  int input_size() const override { return config_.input_size; }
  bool trainable() const override { return false; }
  nlohmann::json config() const override;

  MatrixF forward(std::span<const Image> batch,
                  std::unique_ptr<BackboneTape>* tape = nullptr) const override;
  void backward(const BackboneTape&, const MatrixF&, ParameterSet&) const override {}

  ParameterSet& parameters() override { return params_; }
  const ParameterSet& parameters() const override { return params_; }

  static ExternalBackboneConfig parse_config(const nlohmann::json& j);

 private:
  ExternalBackboneConfig config_;
  ParameterSet params_;
};

/// Builds a backbone from {"kind": ..., ...}.
std::unique_ptr<VisualBackbone> make_backbone(const nlohmann::json& config);

}  // namespace logoid
