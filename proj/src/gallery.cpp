#include "logoid/gallery.hpp"

#include "logoid/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fmt/chrono.h>
#include <fmt/format.h>
#include <fstream>
#include <spdlog/spdlog.h>
#include <thread>

namespace logoid {

namespace fs = std::filesystem;
using nlohmann::json;

json GalleryMeta::to_json() const {
  json j = {{"encoder_config_hash", encoder_config_hash},
            {"created", created},
            {"source_manifest", source_manifest},
            {"use_projection", use_projection}};
  if (!extra.empty()) j["extra"] = extra;
  return j;
}

GalleryMeta GalleryMeta::from_json(const json& j) {
  GalleryMeta m;
  m.encoder_config_hash = j.value("encoder_config_hash", std::string());
  m.created = j.value("created", std::string());
  m.source_manifest = j.value("source_manifest", std::string());
  m.use_projection = j.value("use_projection", false);
  if (j.contains("extra")) m.extra = j.at("extra");
  return m;
}

Gallery::Gallery(std::vector<BrandId> brand_ids, MatrixF matrix, GalleryMeta meta)
    : brand_ids_(std::move(brand_ids)), matrix_(std::move(matrix)), meta_(std::move(meta)) {
  if (brand_ids_.empty()) throw Error("gallery: needs at least one brand");
  if (static_cast<std::size_t>(matrix_.rows()) != brand_ids_.size()) {
    throw Error(fmt::format("gallery: {} ids but {} rows", brand_ids_.size(), matrix_.rows()));
  }
  if (matrix_.cols() < 1) throw Error("gallery: zero-dimensional embeddings");
  sorted_.resize(brand_ids_.size());
  for (std::size_t i = 0; i < sorted_.size(); ++i) sorted_[i] = i;
  std::sort(sorted_.begin(), sorted_.end(),
            [&](std::size_t a, std::size_t b) { return brand_ids_[a] < brand_ids_[b]; });
  for (std::size_t i = 1; i < sorted_.size(); ++i) {
    if (brand_ids_[sorted_[i]] == brand_ids_[sorted_[i - 1]]) {
      throw Error(fmt::format("gallery: duplicate brand '{}'", brand_ids_[sorted_[i]].str()));
    }
  }
  for (Eigen::Index r = 0; r < matrix_.rows(); ++r) {
    double sq = 0.0;
    for (Eigen::Index c = 0; c < matrix_.cols(); ++c) {
      sq += static_cast<double>(matrix_(r, c)) * matrix_(r, c);
    }
    const double norm = std::sqrt(sq);
    if (!(std::abs(norm - 1.0) <= 1e-5)) {
      throw Error(fmt::format("gallery: row {} ('{}') has norm {:.8f}, expected unit norm", r,
                              brand_ids_[static_cast<std::size_t>(r)].str(), norm));
    }
  }
}

std::ptrdiff_t Gallery::index_of(const BrandId& brand) const {
  auto it = std::lower_bound(sorted_.begin(), sorted_.end(), brand,
                             [&](std::size_t i, const BrandId& b) { return brand_ids_[i] < b; });
  if (it == sorted_.end() || brand_ids_[*it] != brand) return -1;
  return static_cast<std::ptrdiff_t>(*it);
}

bool operator==(const Gallery& a, const Gallery& b) {
  return a.brand_ids_ == b.brand_ids_ && a.meta_ == b.meta_ &&
         a.matrix_.rows() == b.matrix_.rows() && a.matrix_.cols() == b.matrix_.cols() &&
         std::memcmp(a.matrix_.data(), b.matrix_.data(),
                     static_cast<std::size_t>(a.matrix_.size()) * sizeof(float)) == 0;
}

std::size_t RankingResult::position_of(const BrandId& brand) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].brand == brand) return i + 1;
  }
  return 0;
}

namespace {

void score_rows(const float* q, const float* rows, std::size_t count, std::size_t dim,
                double* out) {
  std::size_t r = 0;
  // Four rows at a time for independent accumulation chains; each row's sum
  // still runs over columns in order.
  for (; r + 4 <= count; r += 4) {
    const float* a = rows + r * dim;
    const float* b = a + dim;
    const float* c = b + dim;
    const float* d = c + dim;
    double sa = 0.0, sb = 0.0, sc = 0.0, sd = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double qk = q[k];
      sa += qk * a[k];
      sb += qk * b[k];
      sc += qk * c[k];
      sd += qk * d[k];
    }
    out[r] = sa;
    out[r + 1] = sb;
    out[r + 2] = sc;
    out[r + 3] = sd;
  }
  for (; r < count; ++r) {
    const float* a = rows + r * dim;
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) s += static_cast<double>(q[k]) * a[k];
    out[r] = s;
  }
}

bool better(double sa, std::size_t ia, double sb, std::size_t ib) {
  return sa > sb || (sa == sb && ia < ib);
}

void check_query(std::span<const float> query, std::size_t dim, std::size_t k) {
  if (k < 1) throw std::invalid_argument("rank: k must be >= 1");
  if (query.size() != dim) {
    throw std::invalid_argument(
        fmt::format("rank: query has dimension {}, gallery has {}", query.size(), dim));
  }
  for (float v : query) {
    if (!std::isfinite(v)) throw std::invalid_argument("rank: query has non-finite values");
  }
}

std::vector<std::size_t> top_indices(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const std::size_t take = std::min(k, idx.size());
  auto cmp = [&](std::size_t a, std::size_t b) { return better(scores[a], a, scores[b], b); };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(), cmp);
  idx.resize(take);
  return idx;
}

}  // namespace

std::vector<double> score_all(std::span<const float> query, const MatrixF& rows) {
  if (query.size() != static_cast<std::size_t>(rows.cols())) {
    throw std::invalid_argument("score_all: dimension mismatch");
  }
  std::vector<double> out(static_cast<std::size_t>(rows.rows()));
  score_rows(query.data(), rows.data(), out.size(), query.size(), out.data());
  return out;
}

RankingResult rank(std::span<const float> query, const Gallery& gallery, std::size_t k) {
  check_query(query, static_cast<std::size_t>(gallery.dim()), k);
  const std::vector<double> scores = score_all(query, gallery.matrix());
  RankingResult result;
  for (std::size_t i : top_indices(scores, k)) {
    result.entries.push_back({gallery.brand_ids()[i], scores[i], i});
  }
  return result;
}

std::vector<RankingResult> rank_batch(const MatrixF& queries, const Gallery& gallery,
                                      std::size_t k, unsigned threads) {
  const auto n = static_cast<std::size_t>(queries.rows());
  std::vector<RankingResult> out(n);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < n; i += step) {
      out[i] = rank(std::span<const float>(queries.row(static_cast<Eigen::Index>(i)).data(),
                                           static_cast<std::size_t>(queries.cols())),
                    gallery, k);
    }
  };
  if (threads <= 1) {
    work(0, 1);
    return out;
  }
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  for (auto& t : pool) t.join();
  return out;
}

namespace {

std::string utc_now() {
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", now);
}

}  // namespace

Gallery build_gallery(const DatasetManifest& references, const Encoder& encoder,
                      bool use_projection, std::vector<BuildIssue>* issues,
                      const std::string& source_manifest, std::size_t batch_size) {
  {
    std::vector<BrandId> sorted;
    for (const LogoRecord& r : references.records) sorted.push_back(r.brand);
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 1; i < sorted.size(); ++i) {
      if (sorted[i] == sorted[i - 1]) {
        throw Error(fmt::format(
            "gallery build: brand '{}' has more than one reference record (one per brand allowed)",
            sorted[i].str()));
      }
    }
  }
  if (batch_size < 1) batch_size = 1;
  const int D = encoder.inference_dim(use_projection);
  std::vector<BrandId> ids;
  std::vector<std::vector<float>> rows;

  std::vector<Image> images;
  std::vector<const LogoRecord*> records;
  auto flush = [&]() {
    if (images.empty()) return;
    const MatrixF emb = encoder.encode_inference(images, records, use_projection);
    for (Eigen::Index r = 0; r < emb.rows(); ++r) {
      ids.push_back(records[static_cast<std::size_t>(r)]->brand);
      rows.emplace_back(emb.row(r).data(), emb.row(r).data() + D);
    }
    images.clear();
    records.clear();
  };
  for (const LogoRecord& r : references.records) {
    try {
      images.push_back(encoder.prepare(load_record_image(r)));
      records.push_back(&r);
    } catch (const std::exception& e) {
      spdlog::warn("gallery build: skipping '{}' ({}): {}", r.image_path.string(), r.brand.str(),
                   e.what());
      if (issues) issues->push_back({r.image_path, r.brand, e.what()});
      continue;
    }
    if (images.size() >= batch_size) flush();
  }
  flush();
  if (ids.empty()) throw Error("gallery build: no reference image could be encoded");

  MatrixF matrix(static_cast<Eigen::Index>(rows.size()), D);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::memcpy(matrix.row(static_cast<Eigen::Index>(i)).data(), rows[i].data(),
                sizeof(float) * static_cast<std::size_t>(D));
  }
  GalleryMeta meta;
  meta.encoder_config_hash = encoder.config_hash();
  meta.created = utc_now();
  meta.source_manifest = source_manifest;
  meta.use_projection = use_projection;
  return Gallery(std::move(ids), std::move(matrix), std::move(meta));
}

namespace {

constexpr char kMagic[4] = {'L', 'G', 'A', 'L'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF32 = 1;

struct Header {
  std::uint32_t version = 0;
  std::uint64_t count = 0;
  std::uint64_t dim = 0;
  std::uint32_t dtype = 0;
  std::uint64_t id_bytes = 0;
  std::uint64_t meta_bytes = 0;
};

template <typename T>
void put(char* buf, std::size_t& off, T v) {
  std::memcpy(buf + off, &v, sizeof(T));
  off += sizeof(T);
}

template <typename T>
T get(const char* buf, std::size_t& off) {
  T v;
  std::memcpy(&v, buf + off, sizeof(T));
  off += sizeof(T);
  return v;
}

Header read_header(std::ifstream& in, const fs::path& path) {
  char buf[kGalleryHeaderBytes];
  if (!in.read(buf, kGalleryHeaderBytes)) {
    throw Error(fmt::format("gallery file '{}' is truncated (no header)", path.string()));
  }
  if (std::memcmp(buf, kMagic, 4) != 0) {
    throw Error(fmt::format("'{}' is not a gallery file (bad magic)", path.string()));
  }
  std::size_t off = 4;
  Header h;
  h.version = get<std::uint32_t>(buf, off);
  h.count = get<std::uint64_t>(buf, off);
  h.dim = get<std::uint64_t>(buf, off);
  h.dtype = get<std::uint32_t>(buf, off);
  off += 4;
  h.id_bytes = get<std::uint64_t>(buf, off);
  h.meta_bytes = get<std::uint64_t>(buf, off);
  if (h.version != kVersion) {
    throw Error(fmt::format("gallery file '{}' has unsupported version {}", path.string(),
                            h.version));
  }
  if (h.dtype != kDtypeF32) {
    throw Error(fmt::format("gallery file '{}' has unsupported dtype {}", path.string(), h.dtype));
  }
  if (h.count == 0 || h.dim == 0) {
    throw Error(fmt::format("gallery file '{}' declares an empty matrix", path.string()));
  }
  const auto expected = kGalleryHeaderBytes + h.count * h.dim * sizeof(float) + h.id_bytes +
                        h.meta_bytes;
  const auto actual = fs::file_size(path);
  if (actual < expected) {
    throw Error(fmt::format("gallery file '{}' is truncated: {} bytes, header implies {}",
                            path.string(), actual, expected));
  }
  if (actual > expected) {
    throw Error(fmt::format("gallery file '{}' has {} trailing bytes beyond its header counts",
                            path.string(), actual - expected));
  }
  return h;
}

std::vector<BrandId> read_ids(std::ifstream& in, const Header& h, const fs::path& path,
                              std::size_t limit) {
  std::string table(h.id_bytes, '\0');
  if (!in.read(table.data(), static_cast<std::streamsize>(table.size()))) {
    throw Error(fmt::format("gallery file '{}' is truncated in the id table", path.string()));
  }
  std::vector<BrandId> ids;
  std::size_t off = 0;
  for (std::uint64_t i = 0; i < h.count && ids.size() < limit; ++i) {
    if (off + 4 > table.size()) {
      throw Error(fmt::format("gallery file '{}': id table holds fewer than {} ids", path.string(),
                              h.count));
    }
    const auto len = get<std::uint32_t>(table.data(), off);
    if (off + len > table.size()) {
      throw Error(fmt::format("gallery file '{}': id {} overruns the id table", path.string(), i));
    }
    ids.emplace_back(table.substr(off, len));
    off += len;
  }
  if (limit >= h.count && off != table.size()) {
    throw Error(fmt::format("gallery file '{}': id table size does not match count {}",
                            path.string(), h.count));
  }
  return ids;
}

}  // namespace

void save_gallery(const Gallery& gallery, const fs::path& path) {
  std::string ids;
  for (const BrandId& b : gallery.brand_ids()) {
    const auto len = static_cast<std::uint32_t>(b.str().size());
    ids.append(reinterpret_cast<const char*>(&len), sizeof(len));
    ids += b.str();
  }
  const std::string meta = gallery.meta().to_json().dump();

  char header[kGalleryHeaderBytes] = {};
  std::memcpy(header, kMagic, 4);
  std::size_t off = 4;
  put<std::uint32_t>(header, off, kVersion);
  put<std::uint64_t>(header, off, gallery.size());
  put<std::uint64_t>(header, off, static_cast<std::uint64_t>(gallery.dim()));
  put<std::uint32_t>(header, off, kDtypeF32);
  put<std::uint32_t>(header, off, 0);
  put<std::uint64_t>(header, off, ids.size());
  put<std::uint64_t>(header, off, meta.size());

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write gallery '{}'", tmp.string()));
    out.write(header, kGalleryHeaderBytes);
    out.write(reinterpret_cast<const char*>(gallery.matrix().data()),
              static_cast<std::streamsize>(gallery.matrix().size() * sizeof(float)));
    out.write(ids.data(), static_cast<std::streamsize>(ids.size()));
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    out.flush();
    if (!out) throw Error(fmt::format("write failed for gallery '{}'", tmp.string()));
  }
  fs::rename(tmp, path);
}

Gallery load_gallery(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("gallery file '{}' not found", path.string()));
  const Header h = read_header(in, path);
  MatrixF matrix(static_cast<Eigen::Index>(h.count), static_cast<Eigen::Index>(h.dim));
  if (!in.read(reinterpret_cast<char*>(matrix.data()),
               static_cast<std::streamsize>(h.count * h.dim * sizeof(float)))) {
    throw Error(fmt::format("gallery file '{}' is truncated in the matrix", path.string()));
  }
  std::vector<BrandId> ids = read_ids(in, h, path, h.count);
  std::string meta(h.meta_bytes, '\0');
  if (!in.read(meta.data(), static_cast<std::streamsize>(meta.size()))) {
    throw Error(fmt::format("gallery file '{}' is truncated in the metadata", path.string()));
  }
  GalleryMeta m;
  try {
    m = GalleryMeta::from_json(json::parse(meta));
  } catch (const json::exception& e) {
    throw Error(fmt::format("gallery file '{}' has malformed metadata: {}", path.string(), e.what()));
  }
  try {
    return Gallery(std::move(ids), std::move(matrix), std::move(m));
  } catch (const Error& e) {
    throw Error(fmt::format("gallery file '{}': {}", path.string(), e.what()));
  }
}

GalleryInfo gallery_info(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("gallery file '{}' not found", path.string()));
  const Header h = read_header(in, path);
  in.seekg(static_cast<std::streamoff>(kGalleryHeaderBytes + h.count * h.dim * sizeof(float)));
  GalleryInfo info;
  info.version = h.version;
  info.count = h.count;
  info.dim = h.dim;
  info.file_bytes = fs::file_size(path);
  info.first_ids = read_ids(in, h, path, 5);
  in.seekg(static_cast<std::streamoff>(kGalleryHeaderBytes + h.count * h.dim * sizeof(float) +
                                       h.id_bytes));
  std::string meta(h.meta_bytes, '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta.size()));
  info.meta = GalleryMeta::from_json(json::parse(meta));
  return info;
}

RankingResult rank_streaming(std::span<const float> query, const fs::path& path, std::size_t k,
                             std::size_t chunk_rows) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("gallery file '{}' not found", path.string()));
  const Header h = read_header(in, path);
  check_query(query, h.dim, k);
  if (chunk_rows < 1) chunk_rows = 1;

  std::vector<double> scores(h.count);
  std::vector<float> chunk(chunk_rows * h.dim);
  for (std::uint64_t start = 0; start < h.count; start += chunk_rows) {
    const std::size_t rows = std::min<std::uint64_t>(chunk_rows, h.count - start);
    if (!in.read(reinterpret_cast<char*>(chunk.data()),
                 static_cast<std::streamsize>(rows * h.dim * sizeof(float)))) {
      throw Error(fmt::format("gallery file '{}' is truncated in the matrix", path.string()));
    }
    score_rows(query.data(), chunk.data(), rows, h.dim, scores.data() + start);
  }
  const std::vector<BrandId> ids = read_ids(in, h, path, h.count);
  RankingResult result;
  for (std::size_t i : top_indices(scores, k)) result.entries.push_back({ids[i], scores[i], i});
  return result;
}

Gallery subset(const Gallery& gallery, std::size_t size, std::uint64_t seed,
               const std::set<BrandId>& must_include) {
  const std::size_t K = gallery.size();
  if (size < 1 || size > K) {
    throw std::invalid_argument(fmt::format("subset: size {} outside [1, {}]", size, K));
  }
  if (must_include.size() > size) {
    throw std::invalid_argument(fmt::format("subset: {} required brands exceed size {}",
                                            must_include.size(), size));
  }
  std::vector<std::size_t> order;
  order.reserve(K);
  std::vector<char> taken(K, 0);
  for (const BrandId& b : must_include) {
    const auto i = gallery.index_of(b);
    if (i < 0) {
      throw std::invalid_argument(fmt::format("subset: brand '{}' is not in the gallery", b.str()));
    }
    taken[static_cast<std::size_t>(i)] = 1;
  }
  // must_include rows first (in gallery order), then one seeded permutation
  // of the rest; any prefix of this sequence is a valid subset.
  for (std::size_t i = 0; i < K; ++i) {
    if (taken[i]) order.push_back(i);
  }
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < K; ++i) {
    if (!taken[i]) rest.push_back(i);
  }
  Rng rng(derive_seed({seed, 0x73756273}));
  rng.shuffle(rest);
  order.insert(order.end(), rest.begin(), rest.end());
  order.resize(size);
  std::sort(order.begin(), order.end());

  std::vector<BrandId> ids;
  ids.reserve(size);
  MatrixF matrix(static_cast<Eigen::Index>(size), gallery.dim());
  for (std::size_t r = 0; r < size; ++r) {
    ids.push_back(gallery.brand_ids()[order[r]]);
    matrix.row(static_cast<Eigen::Index>(r)) =
        gallery.matrix().row(static_cast<Eigen::Index>(order[r]));
  }
  GalleryMeta meta = gallery.meta();
  meta.extra["subset"] = {{"size", size}, {"seed", seed}, {"parent_size", K}};
  return Gallery(std::move(ids), std::move(matrix), std::move(meta));
}

Gallery append(const Gallery& a, const Gallery& b) {
  if (a.dim() != b.dim()) {
    throw Error(fmt::format("gallery append: dimensions {} and {} differ", a.dim(), b.dim()));
  }
  std::vector<BrandId> ids = a.brand_ids();
  ids.insert(ids.end(), b.brand_ids().begin(), b.brand_ids().end());
  MatrixF matrix(static_cast<Eigen::Index>(ids.size()), a.dim());
  matrix.topRows(a.matrix().rows()) = a.matrix();
  matrix.bottomRows(b.matrix().rows()) = b.matrix();
  GalleryMeta meta = a.meta();
  meta.extra["appended"] = {{"rows", b.size()}, {"source", b.meta().source_manifest}};
  return Gallery(std::move(ids), std::move(matrix), std::move(meta));
}

}  // namespace logoid
