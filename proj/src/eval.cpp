#include "logoid/eval.hpp"

#include "logoid/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <limits>
#include <map>
#include <set>
#include <spdlog/spdlog.h>

namespace logoid {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

json threshold_json(double t) { return std::isinf(t) ? json(nullptr) : json(t); }

}  // namespace

ordered_json EvalReport::metrics_json() const {
  ordered_json m = ordered_json::object();
  if (auc) m["auc"] = *auc;
  if (roc) {
    ordered_json pts = ordered_json::array();
    for (const RocPoint& p : *roc) {
      ordered_json e;
      e["threshold"] = threshold_json(p.threshold);
      e["tpr"] = p.tpr;
      e["fpr"] = p.fpr;
      pts.push_back(std::move(e));
    }
    m["roc"] = std::move(pts);
  }
  if (topk) {
    ordered_json t = ordered_json::object();
    for (const auto& [k, acc] : *topk) t[fmt::format("top{}", k)] = acc;
    m["topk"] = std::move(t);
  }
  if (sweep) {
    ordered_json s = ordered_json::array();
    for (const SweepPoint& p : *sweep) {
      ordered_json e;
      e["gallery_size"] = p.gallery_size;
      e["top1"] = p.top1;
      s.push_back(std::move(e));
    }
    m["sweep"] = std::move(s);
  }
  return m;
}

ordered_json EvalReport::to_json() const {
  ordered_json j;
  j["task"] = task;
  j["metrics"] = metrics_json();
  ordered_json c = ordered_json::object();
  for (const auto& [k, v] : counts) c[k] = v;
  j["counts"] = std::move(c);
  j["notes"] = notes;
  j["provenance"] = provenance;
  return j;
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  r.task = j.at("task").get<std::string>();
  const json& m = j.at("metrics");
  if (m.contains("auc")) r.auc = m.at("auc").get<double>();
  if (m.contains("roc")) {
    r.roc.emplace();
    for (const auto& p : m.at("roc")) {
      const double t = p.at("threshold").is_null() ? std::numeric_limits<double>::infinity()
                                                   : p.at("threshold").get<double>();
      r.roc->push_back({t, p.at("tpr").get<double>(), p.at("fpr").get<double>()});
    }
  }
  if (m.contains("topk")) {
    r.topk.emplace();
    for (const auto& [key, v] : m.at("topk").items()) {
      (*r.topk)[std::stoi(key.substr(3))] = v.get<double>();
    }
  }
  if (m.contains("sweep")) {
    r.sweep.emplace();
    for (const auto& p : m.at("sweep")) {
      r.sweep->push_back({p.at("gallery_size").get<std::size_t>(), p.at("top1").get<double>()});
    }
  }
  if (j.contains("counts")) {
    for (const auto& [k, v] : j.at("counts").items()) r.counts[k] = v.get<std::int64_t>();
  }
  if (j.contains("notes")) r.notes = j.at("notes").get<std::vector<std::string>>();
  if (j.contains("provenance")) r.provenance = ordered_json::parse(j.at("provenance").dump());
  return r;
}

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(
        fmt::format("cosine: dimensions {} and {} differ", a.size(), b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) {
    throw std::invalid_argument("roc: scores and labels differ in length");
  }
  const auto P = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  const std::size_t N = positive.size() - P;
  if (P == 0 || N == 0) {
    throw std::invalid_argument(fmt::format(
        "roc: need at least one positive and one negative pair (got {} and {})", P, N));
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw std::invalid_argument("roc: non-finite score");
  }
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> roc{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    while (i < order.size() && scores[order[i]] == t) {
      (positive[order[i]] ? tp : fp) += 1;
      ++i;
    }
    roc.push_back({t, static_cast<double>(tp) / static_cast<double>(P),
                   static_cast<double>(fp) / static_cast<double>(N)});
  }
  return roc;
}

double auc_trapezoid(std::span<const RocPoint> roc) {
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2.0;
  }
  return area;
}

EvalReport verification_eval(std::span<const VerificationPair> pairs) {
  std::vector<double> scores;
  std::vector<char> labels;
  scores.reserve(pairs.size());
  for (const VerificationPair& p : pairs) {
    scores.push_back(cosine(p.embedding_1, p.embedding_2));
    labels.push_back(p.same_brand);
  }
  std::unique_ptr<bool[]> flags(new bool[labels.size()]);
  for (std::size_t i = 0; i < labels.size(); ++i) flags[i] = labels[i] != 0;
  EvalReport r;
  r.task = "verification";
  r.roc = roc_curve(scores, std::span<const bool>(flags.get(), labels.size()));
  r.auc = auc_trapezoid(*r.roc);
  r.counts["pairs"] = static_cast<std::int64_t>(pairs.size());
  r.counts["positive_pairs"] = std::count(labels.begin(), labels.end(), 1);
  r.counts["negative_pairs"] = std::count(labels.begin(), labels.end(), 0);
  return r;
}

std::vector<VerificationPair> make_verification_pairs(const MatrixF& embeddings,
                                                      std::span<const BrandId> labels,
                                                      std::size_t count, std::uint64_t seed) {
  if (static_cast<std::size_t>(embeddings.rows()) != labels.size()) {
    throw std::invalid_argument("verification pairs: embeddings and labels differ in length");
  }
  std::map<BrandId, std::vector<std::size_t>> by_brand;
  for (std::size_t i = 0; i < labels.size(); ++i) by_brand[labels[i]].push_back(i);
  std::vector<const std::vector<std::size_t>*> multi;
  for (const auto& [b, rows] : by_brand) {
    if (rows.size() >= 2) multi.push_back(&rows);
  }
  if (multi.empty()) throw Error("verification pairs: no brand has two or more images");
  if (by_brand.size() < 2) throw Error("verification pairs: need at least two brands");

  auto row = [&](std::size_t i) {
    const auto r = embeddings.row(static_cast<Eigen::Index>(i));
    return std::vector<float>(r.data(), r.data() + r.size());
  };
  Rng rng(derive_seed({seed, 0x70616972}));
  const std::size_t n_pos = count / 2;
  std::vector<VerificationPair> out;
  out.reserve(count);
  for (std::size_t p = 0; p < n_pos; ++p) {
    const auto& rows = *multi[rng.index(multi.size())];
    const std::size_t a = rng.index(rows.size());
    std::size_t b = rng.index(rows.size() - 1);
    if (b >= a) ++b;
    out.push_back({row(rows[a]), row(rows[b]), true});
  }
  while (out.size() < count) {
    const std::size_t a = rng.index(labels.size());
    const std::size_t b = rng.index(labels.size());
    if (labels[a] == labels[b]) continue;
    out.push_back({row(a), row(b), false});
  }
  return out;
}

MatrixF embed_records(std::span<const LogoRecord* const> records, const Encoder& encoder,
                      bool use_projection) {
  const int D = encoder.inference_dim(use_projection);
  MatrixF out(static_cast<Eigen::Index>(records.size()), D);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Image img = load_record_image(*records[i]);
    const LogoRecord* rec = records[i];
    out.row(static_cast<Eigen::Index>(i)) =
        encoder.encode_inference(std::span<const Image>(&img, 1),
                                 std::span<const LogoRecord* const>(&rec, 1), use_projection)
            .row(0);
  }
  return out;
}

namespace {

void check_ks(std::span<const int> ks) {
  if (ks.empty()) throw std::invalid_argument("identification: no k values");
  for (int k : ks) {
    if (k < 1) throw std::invalid_argument(fmt::format("identification: bad k {}", k));
  }
}

/// Position (1-based) of the true row in the full ranking restricted to
/// `included`, given precomputed scores.
std::size_t true_rank(const std::vector<double>& scores, std::size_t truth,
                      const std::vector<char>* included) {
  const double st = scores[truth];
  std::size_t better = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j == truth || (included && !(*included)[j])) continue;
    if (scores[j] > st || (scores[j] == st && j < truth)) ++better;
  }
  return better + 1;
}

void fill_provenance(EvalReport& r, const Gallery& gallery) {
  r.provenance["gallery_size"] = gallery.size();
  r.provenance["gallery_dim"] = gallery.dim();
  r.provenance["gallery"] = ordered_json::parse(gallery.meta().to_json().dump());
}

}  // namespace

EvalReport identification_eval(const MatrixF& queries, std::span<const BrandId> labels,
                               const Gallery& gallery, std::span<const int> ks) {
  check_ks(ks);
  if (static_cast<std::size_t>(queries.rows()) != labels.size()) {
    throw std::invalid_argument("identification: queries and labels differ in length");
  }
  if (queries.rows() > 0 && queries.cols() != gallery.dim()) {
    throw std::invalid_argument(fmt::format("identification: query dim {} vs gallery dim {}",
                                            queries.cols(), gallery.dim()));
  }
  EvalReport r;
  r.task = "identification";
  std::map<int, std::int64_t> hits;
  for (int k : ks) hits[k] = 0;
  std::int64_t used = 0;
  std::set<std::string> missing;
  for (std::size_t q = 0; q < labels.size(); ++q) {
    const auto truth = gallery.index_of(labels[q]);
    if (truth < 0) {
      missing.insert(labels[q].str());
      continue;
    }
    const auto row = queries.row(static_cast<Eigen::Index>(q));
    const std::vector<double> scores =
        score_all(std::span<const float>(row.data(), static_cast<std::size_t>(row.size())),
                  gallery.matrix());
    const std::size_t pos = true_rank(scores, static_cast<std::size_t>(truth), nullptr);
    for (int k : ks) {
      if (pos <= static_cast<std::size_t>(k)) ++hits[k];
    }
    ++used;
  }
  std::int64_t excluded = static_cast<std::int64_t>(labels.size()) - used;
  if (excluded > 0) {
    spdlog::warn("identification: {} queries excluded, brands absent from gallery: {}", excluded,
                 fmt::join(missing, ", "));
    for (const auto& b : missing) r.notes.push_back(fmt::format("brand absent from gallery: {}", b));
  }
  if (used == 0) throw Error("identification: no query brand is present in the gallery");
  r.topk.emplace();
  for (int k : ks) (*r.topk)[k] = static_cast<double>(hits[k]) / static_cast<double>(used);
  r.counts["queries"] = used;
  r.counts["excluded"] = excluded;
  fill_provenance(r, gallery);
  return r;
}

EvalReport identification_eval(std::span<const LogoRecord> queries, const Gallery& gallery,
                               const Encoder& encoder, const IdentificationOptions& options) {
  std::vector<const LogoRecord*> ptrs;
  std::vector<BrandId> labels;
  for (const LogoRecord& r : queries) {
    ptrs.push_back(&r);
    labels.push_back(r.brand);
  }
  const MatrixF emb = embed_records(ptrs, encoder, options.use_projection);
  EvalReport r = identification_eval(emb, labels, gallery, options.ks);
  r.provenance["encoder_config_hash"] = encoder.config_hash();
  return r;
}

EvalReport e2e_eval(std::span<const LogoRecord> scene_records, const Detector& detector,
                    const Encoder& encoder, const Gallery& gallery,
                    const IdentificationOptions& options) {
  check_ks(options.ks);
  DatasetManifest view;
  view.records.assign(scene_records.begin(), scene_records.end());
  const std::vector<Scene> scenes = group_scenes(view);

  // Matched crops are encoded and ranked exactly as cropped queries are;
  // misses are kept as rows that can never succeed.
  std::vector<BrandId> labels;
  std::vector<std::optional<std::vector<float>>> embeddings;
  std::int64_t detector_failures = 0, unmatched = 0;
  const int D = encoder.inference_dim(options.use_projection);

  for (const Scene& scene : scenes) {
    std::vector<Detection> dets;
    bool failed = false;
    try {
      dets = detector.detect(scene);
    } catch (const std::exception& e) {
      spdlog::warn("e2e: detector failed on '{}': {}", scene.image_path.string(), e.what());
      failed = true;
      ++detector_failures;
    }
    std::optional<Image> scene_image;
    for (const LogoRecord* inst : scene.instances) {
      labels.push_back(inst->brand);
      if (failed || !inst->bbox) {
        if (!failed) ++unmatched;
        embeddings.emplace_back();
        continue;
      }
      const Detection* best = nullptr;
      for (const Detection& d : dets) {
        if (iou(d.bbox, *inst->bbox) >= 0.5 && (!best || d.confidence > best->confidence)) {
          best = &d;
        }
      }
      if (!best) {
        ++unmatched;
        embeddings.emplace_back();
        continue;
      }
      if (!scene_image) scene_image = load_image(scene.image_path);
      const Image crop_img = crop(*scene_image, best->bbox);
      const MatrixF e = encoder.encode_inference(std::span<const Image>(&crop_img, 1),
                                                 std::span<const LogoRecord* const>(&inst, 1),
                                                 options.use_projection);
      embeddings.emplace_back(std::vector<float>(e.row(0).data(), e.row(0).data() + D));
    }
  }

  EvalReport r;
  r.task = "e2e";
  std::map<int, std::int64_t> hits;
  for (int k : options.ks) hits[k] = 0;
  std::int64_t used = 0;
  std::set<std::string> missing;
  for (std::size_t q = 0; q < labels.size(); ++q) {
    const auto truth = gallery.index_of(labels[q]);
    if (truth < 0) {
      missing.insert(labels[q].str());
      continue;
    }
    ++used;
    if (!embeddings[q]) continue;
    const std::vector<double> scores = score_all(*embeddings[q], gallery.matrix());
    const std::size_t pos = true_rank(scores, static_cast<std::size_t>(truth), nullptr);
    for (int k : options.ks) {
      if (pos <= static_cast<std::size_t>(k)) ++hits[k];
    }
  }
  const std::int64_t excluded = static_cast<std::int64_t>(labels.size()) - used;
  if (excluded > 0) {
    spdlog::warn("e2e: {} instances excluded, brands absent from gallery: {}", excluded,
                 fmt::join(missing, ", "));
    for (const auto& b : missing) r.notes.push_back(fmt::format("brand absent from gallery: {}", b));
  }
  if (used == 0) throw Error("e2e: no instance brand is present in the gallery");
  r.topk.emplace();
  for (int k : options.ks) (*r.topk)[k] = static_cast<double>(hits[k]) / static_cast<double>(used);
  r.counts["queries"] = used;
  r.counts["excluded"] = excluded;
  r.counts["unmatched"] = unmatched;
  r.counts["detector_failures"] = detector_failures;
  r.counts["scenes"] = static_cast<std::int64_t>(scenes.size());
  fill_provenance(r, gallery);
  r.provenance["encoder_config_hash"] = encoder.config_hash();
  r.provenance["detector"] = detector.kind();
  return r;
}

EvalReport scale_sweep(const MatrixF& queries, std::span<const BrandId> labels,
                       const Gallery& base, const Gallery* distractors,
                       std::span<const std::size_t> sizes, std::uint64_t seed) {
  if (sizes.empty()) throw std::invalid_argument("sweep: no sizes");
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    if (sizes[i] <= sizes[i - 1]) throw std::invalid_argument("sweep: sizes must be ascending");
  }
  std::set<BrandId> needed;
  for (const BrandId& b : labels) {
    if (!base.contains(b)) {
      throw std::invalid_argument(
          fmt::format("sweep: query brand '{}' is not in the base gallery", b.str()));
    }
    needed.insert(b);
  }

  std::optional<Gallery> merged;
  std::int64_t skipped = 0;
  if (distractors) {
    std::vector<BrandId> ids;
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < distractors->size(); ++i) {
      if (base.contains(distractors->brand_ids()[i])) {
        ++skipped;
        continue;
      }
      ids.push_back(distractors->brand_ids()[i]);
      rows.push_back(static_cast<Eigen::Index>(i));
    }
    if (!ids.empty()) {
      MatrixF m(static_cast<Eigen::Index>(rows.size()), distractors->dim());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        m.row(static_cast<Eigen::Index>(r)) = distractors->matrix().row(rows[r]);
      }
      merged = append(base, Gallery(std::move(ids), std::move(m), distractors->meta()));
    }
  }
  const Gallery& pool = merged ? *merged : base;
  if (sizes.back() > pool.size()) {
    throw std::invalid_argument(fmt::format("sweep: size {} exceeds the pool of {} brands",
                                            sizes.back(), pool.size()));
  }
  if (sizes.front() < needed.size()) {
    throw std::invalid_argument(fmt::format("sweep: size {} is below the {} query brands",
                                            sizes.front(), needed.size()));
  }

  // Scores against the whole pool once; each subset is a mask over rows.
  std::vector<std::vector<double>> scores(labels.size());
  std::vector<std::size_t> truth(labels.size());
  for (std::size_t q = 0; q < labels.size(); ++q) {
    const auto row = queries.row(static_cast<Eigen::Index>(q));
    scores[q] = score_all(std::span<const float>(row.data(), static_cast<std::size_t>(row.size())),
                          pool.matrix());
    truth[q] = static_cast<std::size_t>(pool.index_of(labels[q]));
  }

  EvalReport r;
  r.task = "sweep";
  r.sweep.emplace();
  for (std::size_t s : sizes) {
    const Gallery sub = subset(pool, s, seed, needed);
    std::vector<char> included(pool.size(), 0);
    for (const BrandId& b : sub.brand_ids()) included[static_cast<std::size_t>(pool.index_of(b))] = 1;
    std::int64_t hits = 0;
    for (std::size_t q = 0; q < labels.size(); ++q) {
      if (true_rank(scores[q], truth[q], &included) == 1) ++hits;
    }
    r.sweep->push_back(
        {s, labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(labels.size())});
  }
  r.counts["queries"] = static_cast<std::int64_t>(labels.size());
  r.counts["pool"] = static_cast<std::int64_t>(pool.size());
  r.counts["distractors_skipped"] = skipped;
  r.provenance["seed"] = seed;
  fill_provenance(r, base);
  return r;
}

EvalReport scale_sweep(std::span<const LogoRecord> queries, const Gallery& base,
                       const Gallery* distractors, std::span<const std::size_t> sizes,
                       std::uint64_t seed, const Encoder& encoder, bool use_projection) {
  std::vector<const LogoRecord*> ptrs;
  std::vector<BrandId> labels;
  for (const LogoRecord& r : queries) {
    ptrs.push_back(&r);
    labels.push_back(r.brand);
  }
  const MatrixF emb = embed_records(ptrs, encoder, use_projection);
  EvalReport r = scale_sweep(emb, labels, base, distractors, sizes, seed);
  r.provenance["encoder_config_hash"] = encoder.config_hash();
  return r;
}

namespace {

std::vector<std::uint32_t> code_points(std::string_view s) {
  std::vector<std::uint32_t> out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    int len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
    bool ok = len > 0 && i + static_cast<std::size_t>(len) <= s.size();
    for (int k = 1; ok && k < len; ++k) {
      ok = (static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]) & 0xC0) == 0x80;
    }
    if (!ok) {
      out.push_back(0x110000u + c);  // invalid byte: its own unit outside Unicode
      ++i;
      continue;
    }
    std::uint32_t cp = len == 1 ? c : c & (0x7F >> len);
    for (int k = 1; k < len; ++k) {
      cp = (cp << 6) | (static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]) & 0x3F);
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(len);
  }
  return out;
}

}  // namespace

std::size_t levenshtein(std::string_view a, std::string_view b) {
  const auto x = code_points(a);
  const auto y = code_points(b);
  std::vector<std::size_t> row(y.size() + 1);
  for (std::size_t j = 0; j <= y.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= y.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (x[i - 1] == y[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[y.size()];
}

RankingResult levenshtein_rank(std::string_view query, std::span<const BrandText> gallery,
                               std::size_t k) {
  if (k < 1) throw std::invalid_argument("levenshtein_rank: k must be >= 1");
  std::vector<std::size_t> dist(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) dist[i] = levenshtein(query, gallery[i].text);
  std::vector<std::size_t> idx(gallery.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  idx.resize(std::min(k, idx.size()));
  RankingResult out;
  for (std::size_t i : idx) {
    out.entries.push_back({gallery[i].brand, -static_cast<double>(dist[i]), i});
  }
  return out;
}

EvalReport text_baseline_eval(std::span<const LogoRecord> queries,
                              std::span<const LogoRecord> references,
                              const TextRecognizer& recognizer, std::span<const int> ks) {
  check_ks(ks);
  const bool needs_pixels = recognizer.kind() == "external";
  auto read = [&](const LogoRecord& r) {
    const Image img = needs_pixels ? load_record_image(r) : Image();
    return recognizer.recognize(img, &r).text;
  };
  std::vector<BrandText> texts;
  std::set<BrandId> brands;
  for (const LogoRecord& r : references) {
    if (!brands.insert(r.brand).second) {
      throw Error(fmt::format("text baseline: brand '{}' has more than one reference", r.brand.str()));
    }
    texts.push_back({r.brand, read(r)});
  }
  const int kmax = *std::max_element(ks.begin(), ks.end());
  EvalReport out;
  out.task = "text_baseline";
  std::map<int, std::int64_t> hits;
  for (int k : ks) hits[k] = 0;
  std::int64_t used = 0;
  std::set<std::string> missing;
  for (const LogoRecord& q : queries) {
    if (!brands.contains(q.brand)) {
      missing.insert(q.brand.str());
      continue;
    }
    ++used;
    const RankingResult res = levenshtein_rank(read(q), texts, static_cast<std::size_t>(kmax));
    const std::size_t pos = res.position_of(q.brand);
    for (int k : ks) {
      if (pos != 0 && pos <= static_cast<std::size_t>(k)) ++hits[k];
    }
  }
  for (const auto& b : missing) out.notes.push_back(fmt::format("brand absent from gallery: {}", b));
  if (!missing.empty()) {
    spdlog::warn("text baseline: brands absent from references: {}", fmt::join(missing, ", "));
  }
  if (used == 0) throw Error("text baseline: no query brand has a reference");
  out.topk.emplace();
  for (int k : ks) (*out.topk)[k] = static_cast<double>(hits[k]) / static_cast<double>(used);
  out.counts["queries"] = used;
  out.counts["excluded"] = static_cast<std::int64_t>(queries.size()) - used;
  out.counts["references"] = static_cast<std::int64_t>(texts.size());
  out.provenance["recognizer"] = recognizer.kind();
  return out;
}

}  // namespace logoid
