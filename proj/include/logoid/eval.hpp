#pragma once

#include "logoid/dataio.hpp"
#include "logoid/detect.hpp"
#include "logoid/encoder.hpp"
#include "logoid/gallery.hpp"

#include <cstdint>
#include <json.hpp>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace logoid {

struct VerificationPair {
  std::vector<float> embedding_1;
  std::vector<float> embedding_2;
  bool same_brand = false;
};

struct RocPoint {
  double threshold = 0.0;  // +inf for the (0, 0) start point
  double tpr = 0.0;
  double fpr = 0.0;

  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

struct SweepPoint {
  std::size_t gallery_size = 0;
  double top1 = 0.0;

  friend bool operator==(const SweepPoint&, const SweepPoint&) = default;
};

struct EvalReport {
  std::string task;  // verification, identification, e2e, sweep, text_baseline
  std::optional<double> auc;
  std::optional<std::vector<RocPoint>> roc;
  std::optional<std::map<int, double>> topk;
  std::optional<std::vector<SweepPoint>> sweep;
  /// Counts: queries, pairs, excluded, failures, ...
  std::map<std::string, std::int64_t> counts;
  /// Brands or items left out, with reasons.
  std::vector<std::string> notes;
  /// config hash, gallery meta, timestamps, seed.
  nlohmann::ordered_json provenance = nlohmann::ordered_json::object();

  /// {"task", "metrics": {...}, "counts", "notes", "provenance"}; key order
  /// is fixed.
  nlohmann::ordered_json to_json() const;
  /// The metrics part only (no provenance), for comparing two runs.
  nlohmann::ordered_json metrics_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

double cosine(std::span<const float> a, std::span<const float> b);

/// ROC over every distinct score threshold, from (0, 0) to (1, 1).
/// Throws std::invalid_argument unless both classes are present.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const bool> positive);
/// Trapezoidal area under (fpr, tpr).
double auc_trapezoid(std::span<const RocPoint> roc);

/// Score = cosine(e1, e2). Needs at least one positive and one negative.
EvalReport verification_eval(std::span<const VerificationPair> pairs);

/// Balanced pair set from labelled embeddings: count / 2 same-brand pairs
/// of distinct rows, the rest different-brand pairs, all seeded.
std::vector<VerificationPair> make_verification_pairs(const MatrixF& embeddings,
                                                      std::span<const BrandId> labels,
                                                      std::size_t count, std::uint64_t seed);

/// Inference embeddings of records, one image per forward pass so results
/// do not depend on how queries are grouped.
MatrixF embed_records(std::span<const LogoRecord* const> records, const Encoder& encoder,
                      bool use_projection);

struct IdentificationOptions {
  std::vector<int> ks{1, 5, 10};
  bool use_projection = false;
};

/// Top-k accuracy of precomputed query embeddings against the gallery.
/// Queries whose brand is absent are excluded, listed in notes and warned.
EvalReport identification_eval(const MatrixF& queries, std::span<const BrandId> labels,
                               const Gallery& gallery, std::span<const int> ks);
EvalReport identification_eval(std::span<const LogoRecord> queries, const Gallery& gallery,
                               const Encoder& encoder, const IdentificationOptions& options = {});

/// Per ground-truth instance: the highest-confidence detection with
/// IoU >= 0.5 is cropped, encoded and ranked. Unmatched instances and
/// scenes whose detector call fails count as misses.
EvalReport e2e_eval(std::span<const LogoRecord> scene_records, const Detector& detector,
                    const Encoder& encoder, const Gallery& gallery,
                    const IdentificationOptions& options = {});

inline const std::vector<std::size_t> kDefaultSweepSizes{1000,  2000,  5000,  10000,
                                                         20000, 50000, 100000};

/// Top-1 over nested subsets of base + distractors (distractor rows whose
/// brand is already in base are skipped), each containing every query
/// brand.
EvalReport scale_sweep(const MatrixF& queries, std::span<const BrandId> labels,
                       const Gallery& base, const Gallery* distractors,
                       std::span<const std::size_t> sizes, std::uint64_t seed);
EvalReport scale_sweep(std::span<const LogoRecord> queries, const Gallery& base,
                       const Gallery* distractors, std::span<const std::size_t> sizes,
                       std::uint64_t seed, const Encoder& encoder, bool use_projection = false);

/// Unit-cost edit distance over Unicode code points (UTF-8 input; invalid
/// bytes count as single units).
std::size_t levenshtein(std::string_view a, std::string_view b);

struct BrandText {
  BrandId brand;
  std::string text;
};

/// Ascending edit distance, score = -distance, ties by gallery order.
RankingResult levenshtein_rank(std::string_view query, std::span<const BrandText> gallery,
                               std::size_t k);

/// Text-only baseline: query texts from the recognizer (ground truth
/// ocr_text with perfect_ocr) ranked against reference texts.
EvalReport text_baseline_eval(std::span<const LogoRecord> queries,
                              std::span<const LogoRecord> references,
                              const TextRecognizer& recognizer, std::span<const int> ks);

}  // namespace logoid
