#include "logoid/wirld.hpp"

#include "logoid/http.hpp"
#include "logoid/image.hpp"
#include "logoid/subprocess.hpp"

#include <logoid/sparql_resource.hpp>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <regex>
#include <set>
#include <spdlog/spdlog.h>
#include <thread>

namespace logoid {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

bool is_qid(std::string_view text) {
  if (text.size() < 2 || text[0] != 'Q') return false;
  return std::all_of(text.begin() + 1, text.end(), [](char c) { return c >= '0' && c <= '9'; });
}

std::string_view to_string(HarvestStatus status) {
  switch (status) {
    case HarvestStatus::pending: return "pending";
    case HarvestStatus::downloaded: return "downloaded";
    case HarvestStatus::failed: return "failed";
  }
  return "pending";
}

HarvestStatus parse_harvest_status(std::string_view text) {
  if (text == "pending") return HarvestStatus::pending;
  if (text == "downloaded") return HarvestStatus::downloaded;
  if (text == "failed") return HarvestStatus::failed;
  throw std::invalid_argument(fmt::format("unknown harvest status '{}'", text));
}

std::size_t HarvestManifest::count(HarvestStatus status) const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [&](const HarvestEntry& e) { return e.status == status; }));
}

std::ptrdiff_t HarvestManifest::find(const std::string& qid) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].entity.qid == qid) return static_cast<std::ptrdiff_t>(i);
  }
  return -1;
}

namespace {

ordered_json entity_json(const WikidataEntity& e) {
  ordered_json j;
  j["qid"] = e.qid;
  j["label"] = e.label;
  if (e.logo_url) j["logo_url"] = *e.logo_url;
  if (e.logo_file) j["logo_file"] = *e.logo_file;
  return j;
}

WikidataEntity entity_from(const json& j) {
  WikidataEntity e;
  e.qid = j.at("qid").get<std::string>();
  if (!is_qid(e.qid)) throw Error(fmt::format("invalid qid '{}'", e.qid));
  e.label = j.value("label", std::string());
  if (j.contains("logo_url")) e.logo_url = j.at("logo_url").get<std::string>();
  if (j.contains("logo_file")) e.logo_file = j.at("logo_file").get<std::string>();
  return e;
}

std::string entry_line(const HarvestEntry& e) {
  ordered_json j = entity_json(e.entity);
  j["status"] = to_string(e.status);
  if (e.local_path) j["local_path"] = *e.local_path;
  if (e.error) j["error"] = *e.error;
  j["attempts"] = e.attempts;
  return j.dump();
}

HarvestEntry entry_from(const json& j) {
  HarvestEntry e;
  e.entity = entity_from(j);
  e.status = parse_harvest_status(j.at("status").get<std::string>());
  if (j.contains("local_path")) e.local_path = j.at("local_path").get<std::string>();
  if (j.contains("error")) e.error = j.at("error").get<std::string>();
  e.attempts = j.value("attempts", 0);
  return e;
}

fs::path journal_path(const fs::path& manifest) { return manifest.string() + ".journal"; }

void write_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write '{}'", tmp.string()));
    out << bytes;
    out.flush();
    if (!out) throw HarvestError(fmt::format("write failed for '{}' (disk full?)", tmp.string()));
  }
  fs::rename(tmp, path);
}

}  // namespace

void save_harvest_manifest(const HarvestManifest& manifest, const fs::path& path) {
  std::string bytes;
  for (const HarvestEntry& e : manifest.entries) bytes += entry_line(e) + "\n";
  write_atomic(path, bytes);
}

HarvestManifest load_harvest_manifest(const fs::path& path) {
  HarvestManifest m;
  auto apply = [&](const fs::path& p, bool journal) {
    std::ifstream in(p);
    if (!in) {
      if (journal) return;
      throw Error(fmt::format("harvest manifest '{}' not found", p.string()));
    }
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      HarvestEntry e;
      try {
        e = entry_from(json::parse(line));
      } catch (const std::exception& ex) {
        // A torn last journal line is expected after a crash.
        if (journal) {
          spdlog::warn("ignoring unreadable journal line {} in '{}': {}", n, p.string(), ex.what());
          continue;
        }
        throw Error(fmt::format("'{}' line {}: {}", p.string(), n, ex.what()));
      }
      const auto at = m.find(e.entity.qid);
      if (at >= 0) {
        m.entries[static_cast<std::size_t>(at)] = std::move(e);
      } else {
        m.entries.push_back(std::move(e));
      }
    }
  };
  apply(path, false);
  apply(journal_path(path), true);
  return m;
}

std::string effective_sparql_endpoint(const HarvestConfig& config) {
  if (const char* env = std::getenv("LOGOID_SPARQL_ENDPOINT"); env && *env) return env;
  return config.sparql_endpoint;
}

RateLimiter::RateLimiter(double per_second, double burst)
    : rate_(per_second), burst_(std::max(1.0, burst)), tokens_(std::max(1.0, burst)),
      last_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
  std::unique_lock lock(mutex_);
  ++acquired_;
  if (!(rate_ > 0.0)) return;
  for (;;) {
    const auto now = std::chrono::steady_clock::now();
    tokens_ = std::min(burst_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
    last_ = now;
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    const double wait = (1.0 - tokens_) / rate_;
    lock.unlock();
    std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    lock.lock();
  }
}

namespace {

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t at = s.find(from); at != std::string::npos; at = s.find(from, at + to.size())) {
    s.replace(at, from.size(), to);
  }
  return s;
}

bool retryable(const HttpResponse& r) {
  return r.status == 0 || r.status == 429 || r.status >= 500;
}

/// GET with retries on network errors, 429 and 5xx. Returns the last
/// response; `attempts` receives the number of requests made.
HttpResponse get_with_retry(const std::string& url, const HarvestConfig& config,
                            RateLimiter* limiter, int* attempts, const HttpOptions& base = {}) {
  HttpOptions opts = base;
  opts.user_agent = config.user_agent;
  opts.read_timeout_s = config.timeout_s;
  HttpResponse res;
  double delay = config.backoff_initial_s;
  const int max_attempts = std::max(1, config.max_attempts);
  for (int a = 1; a <= max_attempts; ++a) {
    if (limiter) limiter->acquire();
    res = http_get(url, opts);
    if (attempts) *attempts = a;
    if (!retryable(res) || a == max_attempts) break;
    double wait = delay;
    if (res.status == 429) {
      if (auto it = res.headers.find("Retry-After"); it != res.headers.end()) {
        try {
          wait = std::max(wait, std::stod(it->second));
        } catch (...) {
        }
      }
    }
    wait = std::min(wait, config.backoff_max_s);
    spdlog::debug("retrying {} in {:.2f}s (status {} {})", url, wait, res.status, res.error);
    std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    delay = std::min(delay * 2.0, config.backoff_max_s);
  }
  return res;
}

std::string describe(const HttpResponse& r) {
  return r.status == 0 ? fmt::format("network error: {}", r.error) : std::to_string(r.status);
}

}  // namespace

std::string sparql_page_query(const HarvestConfig& config, std::size_t offset) {
  std::string q = resources::kLogoEntitiesQuery;
  q = replace_all(q, "{property}", config.property);
  q = replace_all(q, "{limit}", std::to_string(config.page_size));
  q = replace_all(q, "{offset}", std::to_string(offset));
  return q;
}

std::vector<std::string> stage1_query_entities(const HarvestConfig& config, const fs::path& work_dir,
                                               RateLimiter* limiter) {
  if (config.page_size < 1) throw std::invalid_argument("harvest: page_size must be >= 1");
  fs::create_directories(work_dir);
  const fs::path log_path = work_dir / "stage1_pages.jsonl";
  const std::string endpoint = effective_sparql_endpoint(config);

  std::vector<std::string> qids;
  std::set<std::string> seen;
  std::size_t next_page = 0;
  bool finished = false;
  auto absorb = [&](const std::vector<std::string>& page) {
    for (const auto& q : page) {
      if (seen.insert(q).second) qids.push_back(q);
    }
  };

  // Completed pages from an earlier run are reused, provided they came from
  // the same query setup.
  if (std::ifstream in(log_path); in) {
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception&) {
        break;
      }
      if (j.value("property", "") != config.property ||
          j.value("page_size", std::size_t{0}) != config.page_size ||
          j.value("page", std::size_t{0}) != next_page) {
        spdlog::warn("stage 1: page log '{}' does not match the current query, starting over",
                     log_path.string());
        qids.clear();
        seen.clear();
        next_page = 0;
        finished = false;
        fs::remove(log_path);
        break;
      }
      absorb(j.at("qids").get<std::vector<std::string>>());
      finished = j.value("last", false);
      ++next_page;
    }
  }

  std::ofstream log(log_path, std::ios::app);
  if (!log) throw HarvestError(fmt::format("cannot write page log '{}'", log_path.string()));
  auto limit_reached = [&] { return config.max_entities > 0 && qids.size() >= config.max_entities; };

  while (!finished && !limit_reached()) {
    const std::size_t offset = next_page * config.page_size;
    const std::string url = fmt::format("{}{}query={}&format=json", endpoint,
                                        endpoint.find('?') == std::string::npos ? "?" : "&",
                                        url_encode(sparql_page_query(config, offset)));
    HttpOptions opts;
    opts.headers["Accept"] = "application/sparql-results+json";
    int attempts = 0;
    const HttpResponse res = get_with_retry(url, config, limiter, &attempts, opts);
    if (!res.ok()) {
      throw HarvestError(fmt::format(
          "stage 1: page {} (offset {}) failed after {} attempts: {}; {} pages recorded in '{}'",
          next_page, offset, attempts, describe(res), next_page, log_path.string()));
    }
    std::vector<std::string> page;
    try {
      const json body = json::parse(res.body);
      for (const auto& b : body.at("results").at("bindings")) {
        const std::string uri = b.at("item").at("value").get<std::string>();
        const auto slash = uri.find_last_of('/');
        const std::string qid = slash == std::string::npos ? uri : uri.substr(slash + 1);
        if (is_qid(qid)) page.push_back(qid);
      }
      finished = body.at("results").at("bindings").size() < config.page_size;
    } catch (const json::exception& e) {
      throw HarvestError(fmt::format("stage 1: page {} returned malformed JSON: {}", next_page,
                                     e.what()));
    }
    ordered_json entry;
    entry["page"] = next_page;
    entry["offset"] = offset;
    entry["page_size"] = config.page_size;
    entry["property"] = config.property;
    entry["query_version"] = resources::kLogoEntitiesQueryVersion;
    entry["count"] = page.size();
    entry["last"] = finished;
    entry["qids"] = page;
    log << entry.dump() << "\n";
    log.flush();
    absorb(page);
    spdlog::info("stage 1: page {} -> {} qids ({} unique so far)", next_page, page.size(),
                 qids.size());
    ++next_page;
  }
  if (config.max_entities > 0 && qids.size() > config.max_entities) qids.resize(config.max_entities);
  return qids;
}

namespace {

std::string media_url(const HarvestConfig& config, const std::string& file) {
  std::string name = file;
  std::replace(name.begin(), name.end(), ' ', '_');
  return config.media_base + url_encode(name);
}

}  // namespace

Stage2Result stage2_resolve_urls(const std::vector<std::string>& qids, const HarvestConfig& config,
                                 RateLimiter* limiter) {
  Stage2Result out;
  const std::size_t batch = std::max<std::size_t>(1, config.ids_per_request);
  for (std::size_t start = 0; start < qids.size(); start += batch) {
    const std::size_t end = std::min(qids.size(), start + batch);
    std::string ids;
    for (std::size_t i = start; i < end; ++i) ids += (i == start ? "" : "|") + qids[i];
    const std::string url = fmt::format(
        "{}?action=wbgetentities&ids={}&props=labels%7Cclaims&languages={}&format=json",
        config.api_endpoint, url_encode(ids), url_encode(config.language));
    int attempts = 0;
    const HttpResponse res = get_with_retry(url, config, limiter, &attempts);
    auto fail_batch = [&](const std::string& reason) {
      for (std::size_t i = start; i < end; ++i) out.unresolved.push_back({qids[i], reason});
    };
    if (!res.ok()) {
      fail_batch(fmt::format("request failed: {}", describe(res)));
      continue;
    }
    json body;
    try {
      body = json::parse(res.body);
    } catch (const json::exception& e) {
      fail_batch(fmt::format("malformed response: {}", e.what()));
      continue;
    }
    const json* entities = body.contains("entities") ? &body.at("entities") : nullptr;
    for (std::size_t i = start; i < end; ++i) {
      const std::string& qid = qids[i];
      if (!entities || !entities->contains(qid) || entities->at(qid).contains("missing")) {
        out.unresolved.push_back({qid, "entity missing"});
        continue;
      }
      const json& ent = entities->at(qid);
      WikidataEntity e;
      e.qid = qid;
      e.label = qid;
      if (ent.contains("labels") && ent.at("labels").contains(config.language)) {
        e.label = ent.at("labels").at(config.language).value("value", qid);
      }
      const json* claims = ent.contains("claims") && ent.at("claims").contains(config.property)
                               ? &ent.at("claims").at(config.property)
                               : nullptr;
      std::vector<std::string> files;
      if (claims) {
        for (const auto& c : *claims) {
          try {
            const json& v = c.at("mainsnak").at("datavalue").at("value");
            if (v.is_string()) files.push_back(v.get<std::string>());
          } catch (const json::exception&) {
            // novalue / somevalue snaks carry no file
          }
        }
      }
      if (files.empty()) {
        out.unresolved.push_back({qid, fmt::format("no {} claim", config.property)});
        continue;
      }
      if (files.size() > 1) {
        const std::string note = fmt::format("{}: {} {} claims, kept the first ('{}')", qid,
                                             files.size(), config.property, files.front());
        spdlog::info("stage 2: {}", note);
        out.notes.push_back(note);
      }
      e.logo_file = files.front();
      e.logo_url = media_url(config, files.front());
      out.entities.push_back(std::move(e));
    }
  }
  return out;
}

void save_entities(const std::vector<WikidataEntity>& entities, const fs::path& path) {
  std::string bytes;
  for (const auto& e : entities) bytes += entity_json(e).dump() + "\n";
  write_atomic(path, bytes);
}

std::vector<WikidataEntity> load_entities(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("entity list '{}' not found", path.string()));
  std::vector<WikidataEntity> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(entity_from(json::parse(line)));
  }
  return out;
}

namespace {

enum class Kind { svg, png, jpeg, gif, webp, unknown };

Kind sniff(const std::string& body, const std::string& url) {
  auto starts = [&](std::string_view p) { return body.compare(0, p.size(), p) == 0; };
  if (starts("\x89PNG")) return Kind::png;
  if (starts("\xFF\xD8\xFF")) return Kind::jpeg;
  if (starts("GIF8")) return Kind::gif;
  if (starts("RIFF") && body.size() > 12 && body.compare(8, 4, "WEBP") == 0) return Kind::webp;
  const std::string head = body.substr(0, 1024);
  if (head.find("<svg") != std::string::npos ||
      (head.find("<?xml") != std::string::npos && url.ends_with(".svg"))) {
    return Kind::svg;
  }
  return Kind::unknown;
}

const char* extension(Kind k) {
  switch (k) {
    case Kind::png: return ".png";
    case Kind::jpeg: return ".jpg";
    case Kind::gif: return ".gif";
    case Kind::webp: return ".webp";
    default: return ".bin";
  }
}

bool disk_full(const std::exception& e) {
  if (auto fe = dynamic_cast<const fs::filesystem_error*>(&e)) {
    return fe->code() == std::errc::no_space_on_device;
  }
  return false;
}

/// Fetches one entry and fills status, local_path, error, attempts.
void download_entry(HarvestEntry& entry, const fs::path& out_dir, const HarvestConfig& config,
                    RateLimiter* limiter, std::atomic<std::size_t>& requests) {
  const std::string& url = *entry.entity.logo_url;
  int attempts = 0;
  const HttpResponse res = get_with_retry(url, config, limiter, &attempts);
  requests += static_cast<std::size_t>(attempts);
  entry.attempts += attempts;
  entry.local_path.reset();
  if (!res.ok()) {
    entry.status = HarvestStatus::failed;
    entry.error = describe(res);
    return;
  }
  if (res.body.empty()) {
    entry.status = HarvestStatus::failed;
    entry.error = "empty body";
    return;
  }
  const fs::path images = out_dir / "images";
  fs::create_directories(images);
  const Kind kind = sniff(res.body, url);
  fs::path target;
  if (kind == Kind::svg) {
    const fs::path svg = images / (entry.entity.qid + ".svg");
    write_atomic(svg, res.body);
    target = images / (entry.entity.qid + ".png");
    const CommandResult r = run_command(expand_command(
        config.rasterize_command, {{"input", svg.string()},
                                   {"output", target.string()},
                                   {"size", std::to_string(config.raster_max_dim)}}));
    if (r.exit_code != 0 || !fs::exists(target) || fs::file_size(target) == 0) {
      entry.status = HarvestStatus::failed;
      entry.error = fmt::format("rasterize failed (exit {})", r.exit_code);
      fs::remove(target);
      return;
    }
  } else {
    target = images / (entry.entity.qid + extension(kind));
    write_atomic(target, res.body);
  }
  try {
    image_size(target);
  } catch (const std::exception& e) {
    entry.status = HarvestStatus::failed;
    entry.error = fmt::format("decode failed: {}", e.what());
    fs::remove(target);
    return;
  }
  entry.status = HarvestStatus::downloaded;
  entry.error.reset();
  entry.local_path = fs::relative(target, out_dir).generic_string();
}

}  // namespace

HarvestManifest stage3_download(const std::vector<WikidataEntity>& entities, const fs::path& out_dir,
                                const HarvestConfig& config, bool resume, DownloadStats* stats,
                                RateLimiter* limiter) {
  fs::create_directories(out_dir);
  const fs::path manifest_path = out_dir / "harvest.jsonl";
  const fs::path journal = journal_path(manifest_path);

  HarvestManifest manifest;
  if (resume && (fs::exists(manifest_path) || fs::exists(journal))) {
    if (fs::exists(manifest_path)) {
      manifest = load_harvest_manifest(manifest_path);
    } else {
      save_harvest_manifest({}, manifest_path);
      manifest = load_harvest_manifest(manifest_path);
    }
  }
  for (const WikidataEntity& e : entities) {
    if (!e.logo_url) continue;
    if (manifest.find(e.qid) < 0) manifest.entries.push_back({e, HarvestStatus::pending, {}, {}, 0});
  }

  std::vector<std::size_t> todo;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    HarvestEntry& e = manifest.entries[i];
    if (e.status == HarvestStatus::downloaded) {
      if (e.local_path && fs::exists(out_dir / *e.local_path) &&
          fs::file_size(out_dir / *e.local_path) > 0) {
        ++skipped;
        continue;
      }
      e.status = HarvestStatus::pending;  // file vanished
      e.local_path.reset();
    }
    if (e.status == HarvestStatus::failed && !config.retry_failed) {
      ++skipped;
      continue;
    }
    todo.push_back(i);
  }
  save_harvest_manifest(manifest, manifest_path);
  fs::remove(journal);

  std::optional<RateLimiter> own_limiter;
  if (!limiter) limiter = &own_limiter.emplace(config.rate_limit);

  std::mutex writer;
  std::ofstream jout(journal, std::ios::app);
  if (!jout) throw HarvestError(fmt::format("cannot open journal '{}'", journal.string()));
  std::atomic<std::size_t> next{0}, requests{0};
  std::atomic<bool> abort{false};
  std::exception_ptr fatal;

  auto worker = [&]() {
    for (;;) {
      if (abort) return;
      const std::size_t slot = next++;
      if (slot >= todo.size()) return;
      HarvestEntry entry;
      {
        std::lock_guard lock(writer);
        entry = manifest.entries[todo[slot]];
      }
      try {
        download_entry(entry, out_dir, config, limiter, requests);
      } catch (const std::exception& e) {
        if (disk_full(e) || dynamic_cast<const HarvestError*>(&e)) {
          std::lock_guard lock(writer);
          if (!fatal) fatal = std::current_exception();
          abort = true;
          return;
        }
        entry.status = HarvestStatus::failed;
        entry.error = e.what();
      }
      std::lock_guard lock(writer);
      manifest.entries[todo[slot]] = entry;
      jout << entry_line(entry) << "\n";
      jout.flush();
      if (!jout) {
        if (!fatal) fatal = std::make_exception_ptr(HarvestError("journal write failed (disk full?)"));
        abort = true;
        return;
      }
      if (entry.status == HarvestStatus::failed) {
        spdlog::warn("stage 3: {} failed: {}", entry.entity.qid, entry.error.value_or("?"));
      }
    }
  };
  const int threads = std::max(1, std::min<int>(config.parallelism, static_cast<int>(todo.size())));
  if (!todo.empty()) {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  jout.close();
  if (fatal) std::rethrow_exception(fatal);

  save_harvest_manifest(manifest, manifest_path);
  fs::remove(journal);
  if (stats) {
    stats->requests = requests;
    stats->skipped = skipped;
  }
  spdlog::info("stage 3: {} downloaded, {} failed, {} pending", manifest.count(HarvestStatus::downloaded),
               manifest.count(HarvestStatus::failed), manifest.count(HarvestStatus::pending));
  return manifest;
}

DatasetManifest export_reference_manifest(const HarvestManifest& harvest, const fs::path& harvest_dir) {
  DatasetManifest out;
  std::set<std::string> seen;
  for (const HarvestEntry& e : harvest.entries) {
    if (e.status != HarvestStatus::downloaded || !e.local_path) continue;
    if (!seen.insert(e.entity.qid).second) {
      throw Error(fmt::format("harvest manifest lists '{}' twice", e.entity.qid));
    }
    LogoRecord r{fs::absolute(harvest_dir / *e.local_path).lexically_normal(), BrandId(e.entity.qid),
                 std::nullopt, std::nullopt, Split::test};
    out.records.push_back(std::move(r));
  }
  if (out.records.empty()) throw Error("harvest has no downloaded entries to export");
  return out;
}

}  // namespace logoid
