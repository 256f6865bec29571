#pragma once

#include "logoid/dataio.hpp"
#include "logoid/image.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace logoid {

/// Procedural logo: a few coloured shapes above the brand name.
struct GlyphShape {
  int kind = 0;  // 0 disc, 1 box, 2 triangle, 3 ring, 4 bar
  double cx = 0.5, cy = 0.4, size = 0.2, angle = 0.0;
  std::array<double, 3> color{0, 0, 0};
};

struct BrandSpec {
  std::string name;
  std::array<double, 3> background{1, 1, 1};
  std::array<double, 3> text_color{0, 0, 0};
  std::vector<GlyphShape> shapes;
  int font = 0;
};

struct SynthConfig {
  int brands = 60;
  int train_brands = 40;
  /// Of the held-out brands, how many share one glyph and differ only in
  /// their text.
  int shared_glyph_brands = 0;
  int samples_per_brand = 8;  // noisy renders per brand
  int image_size = 96;
  std::uint64_t seed = 0;
  /// Per-character corruption probability of the ocr_text of noisy samples.
  double ocr_noise = 0.0;
  /// Scenes with 1-3 pasted logos each (0: none).
  int scenes = 0;
  int scene_size = 256;
};

/// Seeded brand list. Names are unique pronounceable words; brands from
/// index (brands - shared_glyph_brands) on reuse the glyph of that first
/// shared brand.
std::vector<BrandSpec> make_brands(const SynthConfig& config);

/// Clean render (reference) or a jittered, noisy one (query/training).
Image render_logo(const BrandSpec& brand, int size, bool clean, std::uint64_t seed);

struct SynthCorpus {
  std::filesystem::path dir;
  DatasetManifest train;          // noisy samples of training brands
  DatasetManifest queries;        // noisy samples of held-out brands
  DatasetManifest references;     // one clean render per held-out brand
  DatasetManifest all_references; // one clean render per brand
  DatasetManifest shared_queries;     // queries of the shared-glyph brands only
  DatasetManifest shared_references;  // their references
  DatasetManifest scenes;         // scene records with boxes (may be empty)
};

/// Renders everything into dir (images/ plus *.jsonl manifests) and
/// returns the loaded manifests.
SynthCorpus write_synth_corpus(const SynthConfig& config, const std::filesystem::path& dir);

}  // namespace logoid
