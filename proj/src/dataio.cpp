#include "logoid/dataio.hpp"

#include "logoid/common.hpp"
#include "logoid/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <set>
#include <spdlog/spdlog.h>

namespace logoid {

namespace fs = std::filesystem;
using nlohmann::json;

BrandId::BrandId(std::string value) : value_(std::move(value)) {
  const bool blank = std::all_of(value_.begin(), value_.end(),
                                 [](unsigned char c) { return std::isspace(c) != 0; });
  if (blank) throw std::invalid_argument("BrandId must be non-empty and not whitespace-only");
}

std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  throw std::invalid_argument(fmt::format("unknown split '{}'", text));
}

std::vector<BrandId> DatasetManifest::brands() const {
  std::vector<BrandId> out;
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (seen.insert(r.brand.str()).second) out.push_back(r.brand);
  }
  return out;
}

void DatasetManifest::check_open_set() const {
  if (!open_set) return;
  std::set<std::string> train;
  for (const auto& r : records) {
    if (r.split == Split::train) train.insert(r.brand.str());
  }
  for (const auto& r : records) {
    if (r.split == Split::test && train.count(r.brand.str()) != 0) {
      throw Error(fmt::format("open-set manifest has brand '{}' in both splits", r.brand.str()));
    }
  }
}

namespace {

LogoRecord parse_record(const json& j, const fs::path& base_dir, bool check_images) {
  if (!j.is_object()) throw std::invalid_argument("line is not a JSON object");
  for (const char* key : {"image_path", "brand", "split"}) {
    if (!j.contains(key)) throw std::invalid_argument(fmt::format("missing key '{}'", key));
  }
  fs::path path = j.at("image_path").get<std::string>();
  if (path.is_relative()) path = base_dir / path;
  path = path.lexically_normal();

  LogoRecord rec{path, BrandId(j.at("brand").get<std::string>()), std::nullopt, std::nullopt,
                 parse_split(j.at("split").get<std::string>())};

  if (j.contains("bbox") && !j.at("bbox").is_null()) {
    const auto& b = j.at("bbox");
    if (!b.is_array() || b.size() != 4) throw std::invalid_argument("bbox must be [x,y,w,h]");
    BBox box{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
    if (box.x < 0 || box.y < 0 || box.w < 1 || box.h < 1) {
      throw std::invalid_argument(
          fmt::format("bbox ({},{},{},{}) violates x,y >= 0 and w,h >= 1", box.x, box.y, box.w,
                      box.h));
    }
    rec.bbox = box;
  }
  if (j.contains("ocr_text") && !j.at("ocr_text").is_null()) {
    rec.ocr_text = j.at("ocr_text").get<std::string>();
  }

  if (check_images) {
    if (!fs::exists(rec.image_path)) {
      throw std::invalid_argument(fmt::format("image '{}' not found", rec.image_path.string()));
    }
    if (rec.bbox) {
      auto [width, height] = image_size(rec.image_path);
      if (!rec.bbox->valid_within(width, height)) {
        throw std::invalid_argument(fmt::format("bbox out of bounds for {}x{} image", width,
                                                height));
      }
    }
  }
  return rec;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("manifest '{}' not found or unreadable", path.string()));
  const fs::path base_dir = fs::absolute(path).parent_path();

  DatasetManifest manifest;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(),
                    [](unsigned char c) { return std::isspace(c) != 0; })) {
      continue;
    }
    try {
      manifest.records.push_back(parse_record(json::parse(line), base_dir, options.check_images));
    } catch (const std::exception& e) {
      const std::string message = fmt::format("{}:{}: {}", path.string(), line_no, e.what());
      if (options.strict) throw Error(message);
      spdlog::warn("skipping manifest line: {}", message);
      manifest.invalid.push_back({line_no, e.what()});
    }
  }
  manifest.open_set = options.open_set;
  manifest.check_open_set();
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path base_dir = fs::absolute(path).parent_path().lexically_normal();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write manifest '{}'", path.string()));
  for (const auto& r : manifest.records) {
    json j = json::object();
    fs::path p = fs::absolute(r.image_path).lexically_normal();
    const fs::path rel = p.lexically_relative(base_dir);
    const bool inside = !rel.empty() && *rel.begin() != "..";
    j["image_path"] = (inside ? rel : p).generic_string();
    j["brand"] = r.brand.str();
    if (r.bbox) j["bbox"] = {r.bbox->x, r.bbox->y, r.bbox->w, r.bbox->h};
    if (r.ocr_text) j["ocr_text"] = *r.ocr_text;
    j["split"] = std::string(to_string(r.split));
    out << j.dump() << '\n';
  }
  if (!out) throw Error(fmt::format("write failed for manifest '{}'", path.string()));
}

std::pair<DatasetManifest, DatasetManifest> make_open_set_split(const DatasetManifest& manifest,
                                                                double test_fraction,
                                                                std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("test_fraction must lie in (0, 1)");
  }
  std::vector<BrandId> brands = manifest.brands();
  if (brands.size() < 2) {
    throw std::invalid_argument(
        fmt::format("open-set split needs at least 2 brands, manifest has {}", brands.size()));
  }
  std::sort(brands.begin(), brands.end());
  Rng rng(derive_seed({seed, 0x73706c6974ULL}));
  rng.shuffle(brands);

  const auto total = static_cast<long>(brands.size());
  const long n_test =
      std::clamp(std::lround(test_fraction * static_cast<double>(total)), 1L, total - 1);
  std::set<std::string> test_brands;
  for (long i = 0; i < n_test; ++i) test_brands.insert(brands[i].str());

  DatasetManifest train, test;
  train.open_set = test.open_set = true;
  for (const auto& r : manifest.records) {
    LogoRecord copy = r;
    if (test_brands.count(r.brand.str()) != 0) {
      copy.split = Split::test;
      test.records.push_back(std::move(copy));
    } else {
      copy.split = Split::train;
      train.records.push_back(std::move(copy));
    }
  }
  return {std::move(train), std::move(test)};
}

Image load_record_image(const LogoRecord& record) {
  Image image = load_image(record.image_path);
  if (record.bbox) return crop(image, *record.bbox);
  return image;
}

}  // namespace logoid
