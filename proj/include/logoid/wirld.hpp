#pragma once

#include "logoid/common.hpp"
#include "logoid/dataio.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace logoid {

struct WikidataEntity {
  std::string qid;  // Q[0-9]+
  std::string label;
  std::optional<std::string> logo_url;   // absolute http(s) URL
  std::optional<std::string> logo_file;  // media file name of the claim

  friend bool operator==(const WikidataEntity&, const WikidataEntity&) = default;
};

bool is_qid(std::string_view text);

enum class HarvestStatus { pending, downloaded, failed };
std::string_view to_string(HarvestStatus status);
HarvestStatus parse_harvest_status(std::string_view text);

struct HarvestEntry {
  WikidataEntity entity;
  HarvestStatus status = HarvestStatus::pending;
  std::optional<std::string> local_path;  // relative to the harvest directory
  std::optional<std::string> error;       // HTTP status ("404") or a message
  int attempts = 0;

  friend bool operator==(const HarvestEntry&, const HarvestEntry&) = default;
};

struct HarvestManifest {
  std::vector<HarvestEntry> entries;

  std::size_t count(HarvestStatus status) const;
  /// Index of a qid, or -1.
  std::ptrdiff_t find(const std::string& qid) const;
};

void save_harvest_manifest(const HarvestManifest& manifest, const std::filesystem::path& path);
/// Reads the JSONL manifest and replays `<path>.journal` when present.
HarvestManifest load_harvest_manifest(const std::filesystem::path& path);

struct HarvestConfig {
  std::string sparql_endpoint = "https://query.wikidata.org/sparql";
  std::string api_endpoint = "https://www.wikidata.org/w/api.php";
  std::string media_base = "https://commons.wikimedia.org/wiki/Special:FilePath/";
  std::string property = "P154";
  std::string language = "en";
  std::size_t page_size = 5000;
  /// Stop stage 1 once this many qids are collected (0: no limit).
  std::size_t max_entities = 0;
  std::size_t ids_per_request = 50;
  double rate_limit = 2.0;  // requests per second, <= 0 disables
  int parallelism = 4;
  int max_attempts = 4;
  double backoff_initial_s = 1.0;
  double backoff_max_s = 30.0;
  int timeout_s = 60;
  std::string user_agent =
      "logoid-harvester/0.1 (reference-gallery research crawler; polite, rate-limited)";
  /// {input}, {output}, {size}. Rasterizes an SVG to a PNG on white.
  std::string rasterize_command =
      "rsvg-convert --width={size} --height={size} --keep-aspect-ratio "
      "--background-color=white --output={output} {input}";
  int raster_max_dim = 512;
  /// Retry entries already marked failed when resuming.
  bool retry_failed = false;
};

/// LOGOID_SPARQL_ENDPOINT when set, else config.sparql_endpoint.
std::string effective_sparql_endpoint(const HarvestConfig& config);

/// Token bucket shared by all requests of a harvest.
class RateLimiter {
 public:
  explicit RateLimiter(double per_second, double burst = 1.0);
  /// Blocks until a token is available.
  void acquire();
  std::uint64_t acquired() const { return acquired_; }

 private:
  std::mutex mutex_;
  double rate_;
  double burst_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
  std::uint64_t acquired_ = 0;
};

class HarvestError : public Error {
 public:
  using Error::Error;
};

/// The query text for a page (placeholders filled).
std::string sparql_page_query(const HarvestConfig& config, std::size_t offset);

/// Stage 1. Paginated SPARQL for items with the logo property. Each page is
/// appended to `work_dir/stage1_pages.jsonl`; completed pages are reused on
/// a rerun. Returns unique qids in first-seen order. Throws HarvestError
/// after max_attempts on one page.
std::vector<std::string> stage1_query_entities(const HarvestConfig& config,
                                               const std::filesystem::path& work_dir,
                                               RateLimiter* limiter = nullptr);

struct Unresolved {
  std::string qid;
  std::string reason;
};

struct Stage2Result {
  std::vector<WikidataEntity> entities;  // with a logo URL
  std::vector<Unresolved> unresolved;
  std::vector<std::string> notes;  // e.g. multiple claims, first kept
};

/// Stage 2. wbgetentities in batches; the first logo claim becomes the
/// URL. Failures are per qid.
Stage2Result stage2_resolve_urls(const std::vector<std::string>& qids, const HarvestConfig& config,
                                 RateLimiter* limiter = nullptr);

void save_entities(const std::vector<WikidataEntity>& entities, const std::filesystem::path& path);
std::vector<WikidataEntity> load_entities(const std::filesystem::path& path);

struct DownloadStats {
  std::size_t requests = 0;
  std::size_t skipped = 0;
};

/// Stage 3. Downloads into `out_dir/images`, rasterizing SVGs. The manifest
/// lives at `out_dir/harvest.jsonl`; every finished entry is journaled
/// before the next starts, and the journal is compacted at the end. With
/// resume, downloaded entries (and failed ones unless retry_failed) are
/// left alone.
HarvestManifest stage3_download(const std::vector<WikidataEntity>& entities,
                                const std::filesystem::path& out_dir, const HarvestConfig& config,
                                bool resume, DownloadStats* stats = nullptr,
                                RateLimiter* limiter = nullptr);

/// One record per downloaded entry, brand = qid, absolute image paths.
/// Throws logoid::Error when nothing was downloaded.
DatasetManifest export_reference_manifest(const HarvestManifest& harvest,
                                          const std::filesystem::path& harvest_dir);

}  // namespace logoid
