#pragma once

#include "logoid/common.hpp"
#include "logoid/dataio.hpp"
#include "logoid/image.hpp"
#include "logoid/params.hpp"

#include <json.hpp>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace logoid {

struct RecognizedText {
  std::string text;
  /// Set when the recognizer exports its own embedding (e.g. a recurrent
  /// decoder's last hidden state); otherwise the string embedder is used.
  std::optional<std::vector<float>> embedding;
};

/// Reads text from a logo crop. The record, when given, is the manifest
/// entry the crop came from.
class TextRecognizer {
 public:
  virtual ~TextRecognizer() = default;
  virtual std::string kind() const = 0;
  virtual nlohmann::json config() const { return {{"kind", kind()}}; }
  virtual RecognizedText recognize(const Image& image, const LogoRecord* record) const = 0;
};

/// Never detects text. Makes the fused encoder visual-only.
class NoTextRecognizer final : public TextRecognizer {
 public:
  std::string kind() const override { return "none"; }
  RecognizedText recognize(const Image&, const LogoRecord*) const override { return {}; }
};

/// Perfect OCR: returns the record's ground-truth ocr_text.
class GroundTruthTextRecognizer final : public TextRecognizer {
 public:
  std::string kind() const override { return "perfect_ocr"; }
  RecognizedText recognize(const Image&, const LogoRecord* record) const override;
};

/// Out-of-process recognizer. The command template receives {image} (a PNG
/// path) and prints one JSON object: {"text": "...", "embedding": [...]},
/// where "embedding" is optional.
class ExternalTextRecognizer final : public TextRecognizer {
 public:
  explicit ExternalTextRecognizer(std::string command);
  std::string kind() const override { return "external"; }
  nlohmann::json config() const override;
  RecognizedText recognize(const Image& image, const LogoRecord* record) const override;

 private:
  std::string command_;
};

std::unique_ptr<TextRecognizer> make_text_recognizer(const nlohmann::json& config);

struct TrigramEmbedderConfig {
  int dim = 256;
  int buckets = 4096;
  std::uint64_t seed = 7;
};

/// Deterministic string embedding: lowercased character-trigram counts,
/// hashed into buckets, then a fixed seeded Gaussian projection, then L2
/// normalization. The empty string maps to the zero vector.
class TrigramTextEmbedder {
 public:
  explicit TrigramTextEmbedder(const TrigramEmbedderConfig& config = {});

  int dim() const { return config_.dim; }
  const TrigramEmbedderConfig& config() const { return config_; }
  VectorF embed(std::string_view text) const;
  const ParameterSet& weights() const { return weights_; }

 private:
  TrigramEmbedderConfig config_;
  ParameterSet weights_;  // "projection": buckets x dim
};

struct TextFeatures {
  std::vector<std::string> texts;
  MatrixF embeddings;  // n x D_t
};

/// Frozen textual encoder g: recognizer + string embedder. Has no
/// trainable parameters; training never touches it.
class TextualEncoder {
 public:
  TextualEncoder(std::unique_ptr<TextRecognizer> recognizer, const TrigramEmbedderConfig& embedder);

  int dim() const { return embedder_.dim(); }
  const TextRecognizer& recognizer() const { return *recognizer_; }
  const TrigramTextEmbedder& embedder() const { return embedder_; }
  nlohmann::json config() const;
  /// Hash of the frozen weights; constant across training.
  std::uint64_t weights_hash() const { return embedder_.weights().content_hash(); }

  /// records may be empty (no ground truth) or have one entry per image.
  TextFeatures encode(std::span<const Image> images,
                      std::span<const LogoRecord* const> records) const;

 private:
  std::unique_ptr<TextRecognizer> recognizer_;
  TrigramTextEmbedder embedder_;
};

}  // namespace logoid
