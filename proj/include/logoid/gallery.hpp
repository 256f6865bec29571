#pragma once

#include "logoid/common.hpp"
#include "logoid/dataio.hpp"
#include "logoid/encoder.hpp"

#include <filesystem>
#include <json.hpp>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace logoid {

struct GalleryMeta {
  std::string encoder_config_hash;
  std::string created;  // ISO-8601 UTC
  std::string source_manifest;
  bool use_projection = false;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
  static GalleryMeta from_json(const nlohmann::json& j);
  friend bool operator==(const GalleryMeta&, const GalleryMeta&) = default;
};

/// K reference brands and their unit-norm embeddings, one row per brand.
/// Immutable once constructed.
class Gallery {
 public:
  /// Validates K >= 1, unique ids, matching row count, and unit-norm rows
  /// within 1e-5. Throws logoid::Error otherwise.
  Gallery(std::vector<BrandId> brand_ids, MatrixF matrix, GalleryMeta meta = {});

  std::size_t size() const { return brand_ids_.size(); }
  int dim() const { return static_cast<int>(matrix_.cols()); }
  const std::vector<BrandId>& brand_ids() const { return brand_ids_; }
  const MatrixF& matrix() const { return matrix_; }
  const GalleryMeta& meta() const { return meta_; }

  /// Row of a brand, or -1.
  std::ptrdiff_t index_of(const BrandId& brand) const;
  bool contains(const BrandId& brand) const { return index_of(brand) >= 0; }

  friend bool operator==(const Gallery& a, const Gallery& b);

 private:
  std::vector<BrandId> brand_ids_;
  MatrixF matrix_;
  GalleryMeta meta_;
  std::vector<std::size_t> sorted_;  // row indices ordered by brand, for lookup
};

struct RankEntry {
  BrandId brand;
  double score = 0.0;
  std::size_t index = 0;  // gallery row
};

/// Top-k, score descending; equal scores in ascending gallery index order.
struct RankingResult {
  std::vector<RankEntry> entries;

  /// 1-based position of a brand within the entries, 0 when absent.
  std::size_t position_of(const BrandId& brand) const;
};

/// Dot products of query with every row, accumulated in double in column
/// order. Shared by rank() and the streaming variant.
std::vector<double> score_all(std::span<const float> query, const MatrixF& rows);

/// Exact top-k by cosine (= dot product for unit rows). Throws
/// std::invalid_argument on dimension mismatch, k < 1 or a non-finite
/// query.
RankingResult rank(std::span<const float> query, const Gallery& gallery, std::size_t k);

/// Ranks every row of `queries`. Queries are spread across threads.
std::vector<RankingResult> rank_batch(const MatrixF& queries, const Gallery& gallery,
                                      std::size_t k, unsigned threads = 0);

struct BuildIssue {
  std::filesystem::path image_path;
  BrandId brand;
  std::string message;
};

/// One reference image per brand, encoded with the inference embedding.
/// Duplicate brands throw logoid::Error naming the brand. Unreadable images
/// are skipped and reported through `issues`.
Gallery build_gallery(const DatasetManifest& references, const Encoder& encoder,
                      bool use_projection, std::vector<BuildIssue>* issues = nullptr,
                      const std::string& source_manifest = {}, std::size_t batch_size = 64);

/// LGAL file: 64-byte header (magic "LGAL", u32 version, u64 K, u64 D,
/// u32 dtype, u32 reserved, u64 id-table bytes, u64 meta bytes, zero pad),
/// row-major float32 K x D matrix, id table (u32 length + UTF-8 bytes per
/// id), JSON metadata. Little-endian.
inline constexpr std::size_t kGalleryHeaderBytes = 64;

void save_gallery(const Gallery& gallery, const std::filesystem::path& path);
Gallery load_gallery(const std::filesystem::path& path);

struct GalleryInfo {
  std::uint32_t version = 0;
  std::uint64_t count = 0;
  std::uint64_t dim = 0;
  std::uint64_t file_bytes = 0;
  GalleryMeta meta;
  std::vector<BrandId> first_ids;  // up to 5
};

/// Header and metadata only; the matrix is not read.
GalleryInfo gallery_info(const std::filesystem::path& path);

/// Streams the matrix from disk in chunks of `chunk_rows`, for machines
/// that cannot hold the whole gallery. Same result as rank() on the loaded
/// gallery.
RankingResult rank_streaming(std::span<const float> query, const std::filesystem::path& path,
                             std::size_t k, std::size_t chunk_rows = 8192);

/// Seeded subset of `size` brands containing must_include. Selection is a
/// prefix of one seeded permutation (must_include first), so equal seeds
/// give nested subsets. Rows keep their original relative order.
Gallery subset(const Gallery& gallery, std::size_t size, std::uint64_t seed,
               const std::set<BrandId>& must_include = {});

/// Rows of `a` followed by rows of `b`. Throws on dimension mismatch or a
/// brand present in both.
Gallery append(const Gallery& a, const Gallery& b);

}  // namespace logoid
