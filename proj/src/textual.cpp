#include "logoid/textual.hpp"

#include "logoid/rng.hpp"
#include "logoid/subprocess.hpp"

#include <atomic>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fmt/format.h>
#include <unistd.h>

namespace logoid {

namespace fs = std::filesystem;

RecognizedText GroundTruthTextRecognizer::recognize(const Image&, const LogoRecord* record) const {
  if (record == nullptr || !record->ocr_text) return {};
  return {*record->ocr_text, std::nullopt};
}

ExternalTextRecognizer::ExternalTextRecognizer(std::string command) : command_(std::move(command)) {
  if (command_.empty()) throw std::invalid_argument("external recognizer: empty command");
}

nlohmann::json ExternalTextRecognizer::config() const {
  return {{"kind", kind()}, {"command", command_}};
}

RecognizedText ExternalTextRecognizer::recognize(const Image& image, const LogoRecord*) const {
  static std::atomic<unsigned long> counter{0};
  const fs::path path =
      fs::temp_directory_path() / fmt::format("logoid-ocr-{}-{}.png", ::getpid(), counter++);
  save_png(image, path);
  const auto result = run_command(expand_command(command_, {{"image", path.string()}}));
  fs::remove(path);
  if (result.exit_code != 0) {
    throw Error(fmt::format("external recognizer exited with {}: {}", result.exit_code,
                            result.output));
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(result.output);
  } catch (const std::exception&) {
    throw Error(fmt::format("external recognizer output is not JSON: {}", result.output));
  }
  RecognizedText out;
  out.text = j.value("text", std::string());
  if (j.contains("embedding") && !j.at("embedding").is_null()) {
    out.embedding = j.at("embedding").get<std::vector<float>>();
  }
  return out;
}

std::unique_ptr<TextRecognizer> make_text_recognizer(const nlohmann::json& config) {
  const std::string kind = config.value("kind", std::string("perfect_ocr"));
  if (kind == "none") return std::make_unique<NoTextRecognizer>();
  if (kind == "perfect_ocr") return std::make_unique<GroundTruthTextRecognizer>();
  if (kind == "external") {
    return std::make_unique<ExternalTextRecognizer>(config.value("command", std::string()));
  }
  throw std::invalid_argument(fmt::format("unknown text recognizer '{}'", kind));
}

TrigramTextEmbedder::TrigramTextEmbedder(const TrigramEmbedderConfig& config) : config_(config) {
  if (config.dim < 1 || config.buckets < 1) {
    throw std::invalid_argument("trigram embedder: dim and buckets must be >= 1");
  }
  Tensor& proj = weights_.add("projection", {config.buckets, config.dim});
  Rng rng(derive_seed({config.seed, 0x74726967ULL}));
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.dim));
  for (float& v : proj.data) v = static_cast<float>(rng.normal() * scale);
}

VectorF TrigramTextEmbedder::embed(std::string_view text) const {
  VectorF out = VectorF::Zero(config_.dim);
  if (text.empty()) return out;
  std::string padded = "^";
  for (unsigned char c : text) padded += static_cast<char>(std::tolower(c));
  padded += "$";
  const Tensor& proj = weights_.at("projection");
  Eigen::Map<const MatrixF> R(proj.data.data(), config_.buckets, config_.dim);
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    const auto bucket = fnv1a64(std::string_view(padded).substr(i, 3)) %
                        static_cast<std::uint64_t>(config_.buckets);
    out += R.row(static_cast<Eigen::Index>(bucket)).transpose();
  }
  const float norm = out.norm();
  if (norm > 0.0f) out /= norm;
  return out;
}

TextualEncoder::TextualEncoder(std::unique_ptr<TextRecognizer> recognizer,
                               const TrigramEmbedderConfig& embedder)
    : recognizer_(std::move(recognizer)), embedder_(embedder) {
  if (!recognizer_) throw std::invalid_argument("textual encoder: null recognizer");
}

nlohmann::json TextualEncoder::config() const {
  return {{"recognizer", recognizer_->config()},
          {"dim", embedder_.config().dim},
          {"buckets", embedder_.config().buckets},
          {"seed", embedder_.config().seed}};
}

TextFeatures TextualEncoder::encode(std::span<const Image> images,
                                    std::span<const LogoRecord* const> records) const {
  if (!records.empty() && records.size() != images.size()) {
    throw std::invalid_argument("textual encoder: records and images differ in length");
  }
  TextFeatures out;
  out.texts.reserve(images.size());
  out.embeddings = MatrixF::Zero(static_cast<Eigen::Index>(images.size()), dim());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const LogoRecord* rec = records.empty() ? nullptr : records[i];
    RecognizedText r = recognizer_->recognize(images[i], rec);
    if (r.text.empty()) {
      out.texts.emplace_back();
      continue;  // row stays exactly zero
    }
    if (r.embedding) {
      if (static_cast<int>(r.embedding->size()) != dim()) {
        throw Error(fmt::format("recognizer embedding has {} dims, expected {}",
                                r.embedding->size(), dim()));
      }
      out.embeddings.row(static_cast<Eigen::Index>(i)) =
          Eigen::Map<const VectorF>(r.embedding->data(), dim()).transpose();
    } else {
      out.embeddings.row(static_cast<Eigen::Index>(i)) = embedder_.embed(r.text).transpose();
    }
    out.texts.push_back(std::move(r.text));
  }
  return out;
}

}  // namespace logoid
