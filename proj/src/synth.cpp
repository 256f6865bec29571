#include "logoid/synth.hpp"

#include "logoid/common.hpp"
#include "logoid/rng.hpp"

#include <fmt/format.h>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

namespace logoid {
namespace {

constexpr std::uint64_t kBrandTag = 0x6272616e;
constexpr std::uint64_t kSampleTag = 0x73616d70;
constexpr std::uint64_t kSceneTag = 0x7363656e;

std::array<double, 3> random_color(Rng& rng) {
  return {rng.uniform(), rng.uniform(), rng.uniform()};
}

double luminance(const std::array<double, 3>& c) {
  return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
}

// Colour at least `gap` away in luminance from the background, so shapes
// and text stay visible.
std::array<double, 3> contrasting(Rng& rng, const std::array<double, 3>& bg, double gap) {
  for (int tries = 0; tries < 64; ++tries) {
    auto c = random_color(rng);
    if (std::abs(luminance(c) - luminance(bg)) >= gap) return c;
  }
  return luminance(bg) > 0.5 ? std::array<double, 3>{0.05, 0.05, 0.05}
                             : std::array<double, 3>{0.95, 0.95, 0.95};
}

std::string make_name(Rng& rng) {
  static const char* consonants[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p",
                                     "r", "s", "t", "v", "z", "ch", "st", "tr", "x"};
  static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
  int syllables = 2 + static_cast<int>(rng.index(2));
  std::string name;
  for (int s = 0; s < syllables; ++s) {
    name += consonants[rng.index(std::size(consonants))];
    name += vowels[rng.index(std::size(vowels))];
  }
  if (rng.bernoulli(0.4)) name += consonants[rng.index(std::size(consonants))];
  name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
  return name;
}

cv::Scalar to_scalar(const std::array<double, 3>& c) { return {c[0], c[1], c[2]}; }

void draw_shape(cv::Mat& canvas, const GlyphShape& shape, double scale_px) {
  cv::Point2d center(shape.cx * scale_px, shape.cy * scale_px);
  double r = shape.size * scale_px;
  auto color = to_scalar(shape.color);
  auto rotated = [&](double dx, double dy) {
    double c = std::cos(shape.angle), s = std::sin(shape.angle);
    return cv::Point(static_cast<int>(std::lround(center.x + c * dx - s * dy)),
                     static_cast<int>(std::lround(center.y + s * dx + c * dy)));
  };
  switch (shape.kind) {
    case 0:
      cv::circle(canvas, center, static_cast<int>(r), color, cv::FILLED, cv::LINE_AA);
      break;
    case 1: {
      std::vector<cv::Point> pts{rotated(-r, -r), rotated(r, -r), rotated(r, r), rotated(-r, r)};
      cv::fillConvexPoly(canvas, pts, color, cv::LINE_AA);
      break;
    }
    case 2: {
      std::vector<cv::Point> pts{rotated(0, -r), rotated(r * 0.9, r * 0.7),
                                 rotated(-r * 0.9, r * 0.7)};
      cv::fillConvexPoly(canvas, pts, color, cv::LINE_AA);
      break;
    }
    case 3:
      cv::circle(canvas, center, static_cast<int>(r),
                 color, std::max(2, static_cast<int>(r * 0.35)), cv::LINE_AA);
      break;
    default: {
      std::vector<cv::Point> pts{rotated(-r * 1.4, -r * 0.3), rotated(r * 1.4, -r * 0.3),
                                 rotated(r * 1.4, r * 0.3), rotated(-r * 1.4, r * 0.3)};
      cv::fillConvexPoly(canvas, pts, color, cv::LINE_AA);
      break;
    }
  }
}

const int kFonts[] = {cv::FONT_HERSHEY_SIMPLEX, cv::FONT_HERSHEY_DUPLEX,
                      cv::FONT_HERSHEY_COMPLEX, cv::FONT_HERSHEY_TRIPLEX};

// Clean logo, float RGB in [0, 1].
cv::Mat draw_clean(const BrandSpec& brand, int size) {
  cv::Mat canvas(size, size, CV_32FC3, to_scalar(brand.background));
  for (const auto& shape : brand.shapes) draw_shape(canvas, shape, size);

  // Text band along the bottom quarter, scaled to fit the width.
  int font = kFonts[brand.font % static_cast<int>(std::size(kFonts))];
  int thickness = std::max(1, size / 48);
  int baseline = 0;
  cv::Size unit = cv::getTextSize(brand.name, font, 1.0, thickness, &baseline);
  double target_w = size * 0.86;
  double target_h = size * 0.2;
  double scale = std::min(target_w / unit.width, target_h / unit.height);
  cv::Size text = cv::getTextSize(brand.name, font, scale, thickness, &baseline);
  cv::Point origin((size - text.width) / 2, size - std::max(2, size / 20) - baseline);
  cv::putText(canvas, brand.name, origin, font, scale, to_scalar(brand.text_color), thickness,
              cv::LINE_AA);
  return canvas;
}

Image to_image(const cv::Mat& m) {
  Image out(3, m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<cv::Vec3f>(y);
    for (int x = 0; x < m.cols; ++x) {
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = std::clamp(row[x][c], 0.0f, 1.0f);
    }
  }
  return out;
}

cv::Mat distort(const cv::Mat& clean, const std::array<double, 3>& background, Rng& rng) {
  int size = clean.rows;
  double angle = rng.uniform(-12.0, 12.0);
  double scale = rng.uniform(0.8, 1.08);
  cv::Mat warp = cv::getRotationMatrix2D(cv::Point2f(size / 2.0f, size / 2.0f), angle, scale);
  warp.at<double>(0, 2) += rng.uniform(-0.07, 0.07) * size;
  warp.at<double>(1, 2) += rng.uniform(-0.07, 0.07) * size;
  cv::Mat out;
  cv::warpAffine(clean, out, warp, clean.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT,
                 to_scalar(background));

  // Per-channel gain and offset, then global contrast.
  cv::Scalar gain(rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2));
  cv::Scalar offset(rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08));
  cv::multiply(out, gain, out);
  cv::add(out, offset, out);

  if (rng.bernoulli(0.5)) {
    double sigma = rng.uniform(0.4, 1.4);
    cv::GaussianBlur(out, out, cv::Size(0, 0), sigma);
  }
  double noise_sd = rng.uniform(0.0, 0.06);
  if (noise_sd > 0.0) {
    for (int y = 0; y < out.rows; ++y) {
      auto* row = out.ptr<cv::Vec3f>(y);
      for (int x = 0; x < out.cols; ++x) {
        for (int c = 0; c < 3; ++c) row[x][c] += static_cast<float>(noise_sd * rng.normal());
      }
    }
  }
  return out;
}

std::string corrupt_text(const std::string& text, double p, Rng& rng) {
  static const char alphabet[] = "abcdefghijklmnopqrstuvwxyz0123456789";
  std::string out;
  for (char ch : text) {
    if (!rng.bernoulli(p)) {
      out += ch;
      continue;
    }
    switch (rng.index(3)) {
      case 0:
        break;  // drop
      case 1:
        out += alphabet[rng.index(sizeof(alphabet) - 1)];
        break;
      default:
        out += ch;
        out += alphabet[rng.index(sizeof(alphabet) - 1)];
        break;
    }
  }
  if (out.empty()) out = text.substr(0, 1);
  return out;
}

LogoRecord make_record(const std::filesystem::path& path, const BrandSpec& brand, Split split,
                       std::optional<std::string> ocr) {
  LogoRecord r{path, BrandId(brand.name), std::nullopt, std::move(ocr), split};
  return r;
}

DatasetManifest save_and_load(DatasetManifest manifest, const std::filesystem::path& path) {
  save_manifest(manifest, path);
  LoadOptions options;
  options.strict = true;
  return load_manifest(path, options);
}

}  // namespace

std::vector<BrandSpec> make_brands(const SynthConfig& config) {
  if (config.brands < 2) throw std::invalid_argument("synth: need at least 2 brands");
  if (config.train_brands < 1 || config.train_brands >= config.brands)
    throw std::invalid_argument("synth: train_brands must be in [1, brands)");
  if (config.shared_glyph_brands < 0 ||
      config.shared_glyph_brands > config.brands - config.train_brands)
    throw std::invalid_argument("synth: shared_glyph_brands exceeds the held-out brands");

  Rng rng(derive_seed({config.seed, kBrandTag}));
  std::set<std::string> used;
  std::vector<BrandSpec> brands;
  for (int b = 0; b < config.brands; ++b) {
    BrandSpec spec;
    do {
      spec.name = make_name(rng);
    } while (!used.insert(spec.name).second);
    spec.background = rng.bernoulli(0.5) ? std::array<double, 3>{1, 1, 1} : random_color(rng);
    spec.text_color = contrasting(rng, spec.background, 0.35);
    spec.font = static_cast<int>(rng.index(std::size(kFonts)));
    int shapes = 1 + static_cast<int>(rng.index(3));
    for (int s = 0; s < shapes; ++s) {
      GlyphShape g;
      g.kind = static_cast<int>(rng.index(5));
      g.cx = rng.uniform(0.25, 0.75);
      g.cy = rng.uniform(0.22, 0.5);
      g.size = rng.uniform(0.1, 0.22);
      g.angle = rng.uniform(0.0, std::numbers::pi);
      g.color = contrasting(rng, spec.background, 0.25);
      spec.shapes.push_back(g);
    }
    brands.push_back(std::move(spec));
  }

  int first_shared = config.brands - config.shared_glyph_brands;
  for (int b = first_shared + 1; b < config.brands; ++b) {
    brands[b].shapes = brands[first_shared].shapes;
    brands[b].background = brands[first_shared].background;
    brands[b].text_color = brands[first_shared].text_color;
    brands[b].font = brands[first_shared].font;
  }
  return brands;
}

Image render_logo(const BrandSpec& brand, int size, bool clean, std::uint64_t seed) {
  if (size < 16) throw std::invalid_argument("synth: image size must be at least 16");
  cv::Mat canvas = draw_clean(brand, size);
  if (!clean) {
    Rng rng(seed);
    canvas = distort(canvas, brand.background, rng);
  }
  return to_image(canvas);
}

SynthCorpus write_synth_corpus(const SynthConfig& config, const std::filesystem::path& dir) {
  if (config.samples_per_brand < 1) throw std::invalid_argument("synth: samples_per_brand < 1");
  auto brands = make_brands(config);
  std::filesystem::create_directories(dir / "images");

  SynthCorpus corpus;
  corpus.dir = std::filesystem::absolute(dir);
  int first_shared = config.brands - config.shared_glyph_brands;

  for (int b = 0; b < config.brands; ++b) {
    const auto& brand = brands[b];
    bool train = b < config.train_brands;
    bool shared = b >= first_shared;

    auto ref_path = corpus.dir / "images" / fmt::format("ref_{:04d}.png", b);
    save_png(render_logo(brand, config.image_size, true, 0), ref_path);
    auto ref = make_record(ref_path, brand, train ? Split::train : Split::test, brand.name);
    corpus.all_references.records.push_back(ref);
    if (!train) corpus.references.records.push_back(ref);
    if (shared) corpus.shared_references.records.push_back(ref);

    for (int s = 0; s < config.samples_per_brand; ++s) {
      std::uint64_t seed = derive_seed({config.seed, kSampleTag, static_cast<std::uint64_t>(b),
                                        static_cast<std::uint64_t>(s)});
      auto path = corpus.dir / "images" / fmt::format("img_{:04d}_{:03d}.png", b, s);
      save_png(render_logo(brand, config.image_size, false, seed), path);
      Rng text_rng(derive_seed({seed, 0x6f6372}));
      std::string ocr = config.ocr_noise > 0.0
                            ? corrupt_text(brand.name, config.ocr_noise, text_rng)
                            : brand.name;
      auto record = make_record(path, brand, train ? Split::train : Split::test, ocr);
      (train ? corpus.train : corpus.queries).records.push_back(record);
      if (shared) corpus.shared_queries.records.push_back(record);
    }
  }

  // Scenes: held-out logos pasted onto a textured background.
  Rng scene_rng(derive_seed({config.seed, kSceneTag}));
  for (int sc = 0; sc < config.scenes; ++sc) {
    int size = config.scene_size;
    cv::Mat scene(size, size, CV_32FC3);
    auto c0 = random_color(scene_rng), c1 = random_color(scene_rng);
    for (int y = 0; y < size; ++y) {
      auto* row = scene.ptr<cv::Vec3f>(y);
      for (int x = 0; x < size; ++x) {
        double t = (x + y) / (2.0 * size);
        for (int c = 0; c < 3; ++c)
          row[x][c] = static_cast<float>(c0[c] * (1 - t) + c1[c] * t + 0.03 * scene_rng.normal());
      }
    }
    int count = 1 + static_cast<int>(scene_rng.index(3));
    std::vector<std::pair<int, BBox>> placed;
    for (int attempt = 0; attempt < 50 && static_cast<int>(placed.size()) < count; ++attempt) {
      int side = static_cast<int>(scene_rng.uniform(0.22, 0.4) * size);
      BBox box{static_cast<int>(scene_rng.index(size - side)),
               static_cast<int>(scene_rng.index(size - side)), side, side};
      bool overlaps = std::any_of(placed.begin(), placed.end(),
                                  [&](const auto& p) { return iou(p.second, box) > 0.0; });
      if (overlaps) continue;
      int b = config.train_brands +
              static_cast<int>(scene_rng.index(config.brands - config.train_brands));
      Rng logo_rng(scene_rng.next_u64());
      cv::Mat logo = distort(draw_clean(brands[b], side), brands[b].background, logo_rng);
      logo.copyTo(scene(cv::Rect(box.x, box.y, box.w, box.h)));
      placed.emplace_back(b, box);
    }
    auto path = corpus.dir / "images" / fmt::format("scene_{:04d}.png", sc);
    save_png(to_image(scene), path);
    for (const auto& [b, box] : placed) {
      auto record = make_record(path, brands[b], Split::test, brands[b].name);
      record.bbox = box;
      corpus.scenes.records.push_back(record);
    }
  }

  corpus.train = save_and_load(std::move(corpus.train), dir / "train.jsonl");
  corpus.queries = save_and_load(std::move(corpus.queries), dir / "queries.jsonl");
  corpus.references = save_and_load(std::move(corpus.references), dir / "references.jsonl");
  corpus.all_references =
      save_and_load(std::move(corpus.all_references), dir / "all_references.jsonl");
  if (!corpus.shared_queries.records.empty()) {
    corpus.shared_queries =
        save_and_load(std::move(corpus.shared_queries), dir / "shared_queries.jsonl");
    corpus.shared_references =
        save_and_load(std::move(corpus.shared_references), dir / "shared_references.jsonl");
  }
  if (!corpus.scenes.records.empty())
    corpus.scenes = save_and_load(std::move(corpus.scenes), dir / "scenes.jsonl");
  return corpus;
}

}  // namespace logoid
