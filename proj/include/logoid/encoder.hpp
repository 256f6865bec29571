#pragma once

#include "logoid/backbone.hpp"
#include "logoid/common.hpp"
#include "logoid/dataio.hpp"
#include "logoid/projection_head.hpp"
#include "logoid/textual.hpp"

#include <json.hpp>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace logoid {

/// Visual features V and textual features T for one batch (same row count).
struct FeatureBatch {
  MatrixF visual;   // n x D_v
  MatrixF textual;  // n x D_t
  std::vector<std::string> texts;
};

struct EncoderConfig {
  nlohmann::json backbone = {{"kind", "tiny_convnet"}};
  nlohmann::json recognizer = {{"kind", "perfect_ocr"}};
  TrigramEmbedderConfig text;
  /// input_dim is derived from the backbone and text dims.
  ProjectionHeadConfig head;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

/// Divides each row by its L2 norm. Throws logoid::Error when a row's norm
/// is below min_norm.
void normalize_rows(MatrixF& m, double min_norm = 1e-12);

/// Full map from images to embeddings: backbone f, frozen textual encoder g,
/// projection head h and row normalization.
class Encoder {
 public:
  explicit Encoder(const EncoderConfig& config);

  const EncoderConfig& config() const { return config_; }
  /// Hash of the resolved encoder config (not of the weights).
  std::string config_hash() const;

  VisualBackbone& backbone() { return *backbone_; }
  const VisualBackbone& backbone() const { return *backbone_; }
  const TextualEncoder& textual() const { return *textual_; }
  ProjectionHead& head() { return *head_; }
  const ProjectionHead& head() const { return *head_; }

  int visual_dim() const { return backbone_->output_dim(); }
  int text_dim() const { return textual_->dim(); }
  /// D_v + D_t by default, the head's output size with projection.
  int inference_dim(bool use_projection) const;

  /// Resizes to the backbone's S x S input when needed.
  Image prepare(const Image& image) const;

  /// V from the backbone and T from the frozen textual encoder. `records`
  /// is empty or aligned with images (used by ground-truth recognizers).
  FeatureBatch encode_features(std::span<const Image> images,
                               std::span<const LogoRecord* const> records,
                               std::unique_ptr<BackboneTape>* tape = nullptr) const;

  /// Concatenates [V, T], applies the head and normalizes each row.
  /// `pre_norm`, when given, receives the head output before normalization.
  MatrixF project_and_normalize(const FeatureBatch& features,
                                ProjectionHead::Tape* head_tape = nullptr,
                                MatrixF* pre_norm = nullptr) const;

  /// Inference embedding: normalized [V, T] by default, normalized head
  /// output with use_projection.
  MatrixF encode_inference(std::span<const Image> images,
                           std::span<const LogoRecord* const> records,
                           bool use_projection = false) const;

 private:
  EncoderConfig config_;
  std::unique_ptr<VisualBackbone> backbone_;
  std::unique_ptr<TextualEncoder> textual_;
  std::unique_ptr<ProjectionHead> head_;
};

}  // namespace logoid
