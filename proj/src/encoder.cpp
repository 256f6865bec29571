#include "logoid/encoder.hpp"

#include <cmath>
#include <fmt/format.h>

namespace logoid {

nlohmann::json EncoderConfig::to_json() const {
  return {{"backbone", backbone},
          {"recognizer", recognizer},
          {"text", {{"dim", text.dim}, {"buckets", text.buckets}, {"seed", text.seed}}},
          {"head",
           {{"hidden_dim", head.hidden_dim},
            {"output_dim", head.output_dim},
            {"init_seed", head.init_seed}}}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  if (j.contains("backbone")) c.backbone = j.at("backbone");
  if (j.contains("recognizer")) c.recognizer = j.at("recognizer");
  if (j.contains("text")) {
    const auto& t = j.at("text");
    c.text.dim = t.value("dim", c.text.dim);
    c.text.buckets = t.value("buckets", c.text.buckets);
    c.text.seed = t.value("seed", c.text.seed);
  }
  if (j.contains("head")) c.head = ProjectionHead::parse_config(j.at("head"));
  return c;
}

void normalize_rows(MatrixF& m, double min_norm) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    double sq = 0.0;
    for (Eigen::Index k = 0; k < m.cols(); ++k) sq += static_cast<double>(m(i, k)) * m(i, k);
    const double norm = std::sqrt(sq);
    if (!(norm >= min_norm)) {
      throw Error(fmt::format("row {} has norm {:.3g} below {:.3g}; cannot normalize", i, norm,
                              min_norm));
    }
    m.row(i) /= static_cast<float>(norm);
  }
}

Encoder::Encoder(const EncoderConfig& config) : config_(config) {
  backbone_ = make_backbone(config_.backbone);
  textual_ = std::make_unique<TextualEncoder>(make_text_recognizer(config_.recognizer),
                                              config_.text);
  config_.backbone = backbone_->config();
  config_.recognizer = textual_->recognizer().config();
  config_.head.input_dim = backbone_->output_dim() + textual_->dim();
  head_ = std::make_unique<ProjectionHead>(config_.head);
}

std::string Encoder::config_hash() const { return hex64(fnv1a64(config_.to_json().dump())); }

int Encoder::inference_dim(bool use_projection) const {
  return use_projection ? head_->config().output_dim : visual_dim() + text_dim();
}

Image Encoder::prepare(const Image& image) const {
  const int S = backbone_->input_size();
  if (image.height() == S && image.width() == S) return image;
  return resize(image, S, S);
}

FeatureBatch Encoder::encode_features(std::span<const Image> images,
                                      std::span<const LogoRecord* const> records,
                                      std::unique_ptr<BackboneTape>* tape) const {
  if (images.empty()) throw std::invalid_argument("encode_features: empty batch");
  std::vector<Image> prepared;
  prepared.reserve(images.size());
  for (const Image& img : images) prepared.push_back(prepare(img));

  FeatureBatch out;
  out.visual = backbone_->forward(prepared, tape);
  TextFeatures text = textual_->encode(prepared, records);
  out.textual = std::move(text.embeddings);
  out.texts = std::move(text.texts);

  const auto n = static_cast<Eigen::Index>(images.size());
  if (out.visual.rows() != n || out.visual.cols() != visual_dim()) {
    throw Error(fmt::format("backbone produced {}x{} features, expected {}x{}", out.visual.rows(),
                            out.visual.cols(), n, visual_dim()));
  }
  if (out.textual.rows() != n || out.textual.cols() != text_dim()) {
    throw Error(fmt::format("textual encoder produced {}x{} features, expected {}x{}",
                            out.textual.rows(), out.textual.cols(), n, text_dim()));
  }
  return out;
}

namespace {

MatrixF concat(const FeatureBatch& f) {
  if (f.visual.rows() != f.textual.rows()) {
    throw std::invalid_argument("feature batch: visual and textual row counts differ");
  }
  MatrixF out(f.visual.rows(), f.visual.cols() + f.textual.cols());
  out << f.visual, f.textual;
  return out;
}

}  // namespace

MatrixF Encoder::project_and_normalize(const FeatureBatch& features,
                                       ProjectionHead::Tape* head_tape, MatrixF* pre_norm) const {
  MatrixF z = head_->forward(concat(features), head_tape);
  if (pre_norm) *pre_norm = z;
  normalize_rows(z);
  return z;
}

MatrixF Encoder::encode_inference(std::span<const Image> images,
                                  std::span<const LogoRecord* const> records,
                                  bool use_projection) const {
  const FeatureBatch features = encode_features(images, records);
  if (use_projection) return project_and_normalize(features);
  MatrixF fused = concat(features);
  normalize_rows(fused);
  return fused;
}

}  // namespace logoid
