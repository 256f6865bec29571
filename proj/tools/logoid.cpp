#include "logoid/checkpoint.hpp"
#include "logoid/config.hpp"
#include "logoid/dataio.hpp"
#include "logoid/detect.hpp"
#include "logoid/eval.hpp"
#include "logoid/gallery.hpp"
#include "logoid/report.hpp"
#include "logoid/synth.hpp"
#include "logoid/train.hpp"
#include "logoid/wirld.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace logoid;

namespace {

constexpr const char* kVersion = "0.1.0";

// Bad or missing arguments detected after parsing; exits 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  bool json_out = false;
  bool quiet = false;
  std::string recognizer;  // overrides the checkpoint's text recognizer
};

RunConfig resolve_config(const Globals& g) {
  RunConfig c = g.config_path.empty() ? parse_run_config("", g.overrides)
                                      : load_run_config(g.config_path, g.overrides);
  c.validate();
  return c;
}

std::string pick(const std::string& flag_value, const std::string& config_value,
                 const std::string& flag, const std::string& key) {
  if (!flag_value.empty()) return flag_value;
  if (!config_value.empty()) return config_value;
  throw UsageError(fmt::format("{} is required (or set {} in the config)", flag, key));
}

DatasetManifest read_manifest(const std::string& path, const RunConfig& c) {
  LoadOptions options;
  options.strict = c.data.strict;
  options.check_images = c.data.check_images;
  auto m = load_manifest(path, options);
  for (const auto& issue : m.invalid) {
    spdlog::warn("{}:{}: {}", path, issue.line, issue.message);
  }
  return m;
}

std::unique_ptr<Encoder> load_encoder(const std::string& path, const Globals& g,
                                      const RunConfig& c) {
  auto ckpt = load_checkpoint(path);
  spdlog::info("checkpoint {} (step {})", path, ckpt.step);
  if (g.recognizer.empty()) return encoder_from_checkpoint(ckpt);
  json rec = {{"kind", g.recognizer}};
  if (g.recognizer == "external") rec["command"] = c.encoder.recognizer_command;
  return encoder_from_checkpoint(ckpt, rec);
}

void check_gallery_matches(const GalleryMeta& meta, const Encoder& encoder, bool use_projection) {
  if (!meta.encoder_config_hash.empty() && meta.encoder_config_hash != encoder.config_hash()) {
    throw Error(fmt::format("gallery was built with encoder config {}, checkpoint has {}",
                            meta.encoder_config_hash, encoder.config_hash()));
  }
  if (meta.use_projection != use_projection) {
    throw Error(fmt::format("gallery use_projection={} but encoder.use_projection={}",
                            meta.use_projection, use_projection));
  }
}

fs::path artifact_dir(const fs::path& file) {
  auto dir = file.parent_path();
  return dir.empty() ? fs::path(".") : dir;
}

void finish_report(EvalReport& report, const RunConfig& c, const Globals& g,
                   const std::string& out_dir, const std::string& checkpoint) {
  report.provenance["config_hash"] = c.hash();
  if (!checkpoint.empty()) report.provenance["checkpoint"] = fs::absolute(checkpoint).string();
  auto files = emit_report(report, out_dir);
  write_resolved_config(c, out_dir);
  if (g.json_out) {
    std::cout << report.to_json().dump(2) << "\n";
    return;
  }
  if (report.auc) std::cout << fmt::format("auc\t{:.6f}\n", *report.auc);
  if (report.topk) {
    for (const auto& [k, v] : *report.topk) std::cout << fmt::format("top{}\t{:.6f}\n", k, v);
  }
  if (report.sweep) {
    for (const auto& p : *report.sweep)
      std::cout << fmt::format("size {}\ttop1\t{:.6f}\n", p.gallery_size, p.top1);
  }
  for (const auto& f : files) std::cout << "wrote\t" << f.string() << "\n";
}

void print_json_or(const Globals& g, const json& j, const std::string& text) {
  if (g.json_out) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << text;
  }
}

std::vector<const LogoRecord*> pointers(const DatasetManifest& m) {
  std::vector<const LogoRecord*> out;
  for (const auto& r : m.records) out.push_back(&r);
  return out;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"logoid: logo identification with fused visual and text embeddings"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("-c,--config", g.config_path, "TOML run config")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Override a config key, section.key=value")
      ->allow_extra_args(false);
  app.add_flag("--json", g.json_out, "Machine-readable output on stdout");
  app.add_flag("-q,--quiet", g.quiet, "Only log warnings and errors");
  app.add_option("--recognizer", g.recognizer,
                 "Replace the checkpoint's text recognizer (none, perfect_ocr, external)")
      ->check(CLI::IsMember({"none", "perfect_ocr", "external"}));

  std::function<int()> action;

  // version
  auto* version = app.add_subcommand("version", "Print the version");
  version->callback([&] {
    action = [&] {
      print_json_or(g, {{"version", kVersion}}, fmt::format("logoid {}\n", kVersion));
      return 0;
    };
  });

  // synth
  SynthConfig synth_config;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Render a synthetic logo corpus");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--brands", synth_config.brands)->capture_default_str();
  synth->add_option("--train-brands", synth_config.train_brands)->capture_default_str();
  synth->add_option("--shared-glyph", synth_config.shared_glyph_brands,
                    "Held-out brands sharing one glyph")
      ->capture_default_str();
  synth->add_option("--samples", synth_config.samples_per_brand)->capture_default_str();
  synth->add_option("--size", synth_config.image_size)->capture_default_str();
  synth->add_option("--seed", synth_config.seed)->capture_default_str();
  synth->add_option("--ocr-noise", synth_config.ocr_noise)->capture_default_str();
  synth->add_option("--scenes", synth_config.scenes)->capture_default_str();
  synth->callback([&] {
    action = [&] {
      auto corpus = write_synth_corpus(synth_config, synth_out);
      json j = {{"dir", corpus.dir.string()},
                {"train", corpus.train.records.size()},
                {"queries", corpus.queries.records.size()},
                {"references", corpus.references.records.size()},
                {"scenes", corpus.scenes.records.size()}};
      print_json_or(g, j,
                    fmt::format("wrote {} train, {} query, {} reference records to {}\n",
                                corpus.train.records.size(), corpus.queries.records.size(),
                                corpus.references.records.size(), corpus.dir.string()));
      return 0;
    };
  });

  // train
  std::string train_manifest, train_out, train_references;
  std::optional<std::int64_t> stop_after;
  bool no_resume = false;
  auto* train = app.add_subcommand("train", "Train the encoder with the two-view loss");
  train->add_option("--train", train_manifest, "Training manifest (data.train_manifest)");
  train->add_option("--out", train_out, "Checkpoint directory (train.checkpoint_dir)");
  train->add_option("--references", train_references,
                    "Reference manifest for train.reference_injection");
  train->add_option("--stop-after", stop_after, "Stop after this many steps");
  train->add_flag("--no-resume", no_resume, "Ignore existing checkpoints");
  train->callback([&] {
    action = [&] {
      auto c = resolve_config(g);
      auto manifest_path =
          pick(train_manifest, c.data.train_manifest, "--train", "data.train_manifest");
      auto out = train_out.empty() ? c.train.checkpoint_dir : train_out;
      auto manifest = read_manifest(manifest_path, c);
      auto tc = c.train_config();
      DatasetManifest references;
      if (c.train.reference_injection) {
        auto ref_path = pick(train_references, c.data.reference_manifest, "--references",
                             "data.reference_manifest");
        references = read_manifest(ref_path, c);
        tc.batch_hook = make_reference_injection_hook(references);
      }
      Encoder encoder(c.encoder.to_encoder_config());
      fs::create_directories(out);
      write_resolved_config(c, out);
      FitOptions options;
      options.resume = !no_resume;
      options.stop_after = stop_after;
      auto ckpt = fit(manifest, encoder, tc, out, options);
      auto latest = latest_checkpoint(out);
      json j = {{"step", ckpt.step},
                {"checkpoint", latest ? latest->string() : std::string()},
                {"config_hash", c.hash()}};
      print_json_or(g, j,
                    fmt::format("step {}\t{}\n", ckpt.step,
                                latest ? latest->string() : std::string("(none)")));
      return 0;
    };
  });

  // embed
  std::string embed_ckpt, embed_manifest, embed_out;
  auto* embed = app.add_subcommand("embed", "Write inference embeddings as JSONL");
  embed->add_option("--checkpoint", embed_ckpt)->required()->check(CLI::ExistingFile);
  embed->add_option("--manifest", embed_manifest)->required()->check(CLI::ExistingFile);
  embed->add_option("--out", embed_out, "Output JSONL")->required();
  embed->callback([&] {
    action = [&] {
      auto c = resolve_config(g);
      auto encoder = load_encoder(embed_ckpt, g, c);
      auto manifest = read_manifest(embed_manifest, c);
      auto ptrs = pointers(manifest);
      MatrixF e = embed_records(ptrs, *encoder, c.encoder.use_projection);
      fs::path out(embed_out);
      fs::create_directories(artifact_dir(out));
      std::ofstream f(out);
      if (!f) throw Error(fmt::format("cannot write '{}'", out.string()));
      for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& r = manifest.records[i];
        json row = {{"image", r.image_path.string()},
                    {"brand", r.brand.str()},
                    {"embedding", std::vector<float>(e.row(static_cast<Eigen::Index>(i)).begin(),
                                                     e.row(static_cast<Eigen::Index>(i)).end())}};
        f << row.dump() << "\n";
      }
      if (!f.flush()) throw Error(fmt::format("write failed for '{}'", out.string()));
      write_resolved_config(c, artifact_dir(out));
      print_json_or(g, {{"rows", e.rows()}, {"dim", e.cols()}, {"out", out.string()}},
                    fmt::format("{} x {}\t{}\n", e.rows(), e.cols(), out.string()));
      return 0;
    };
  });

  // gallery
  auto* gallery = app.add_subcommand("gallery", "Build and inspect reference galleries");
  gallery->require_subcommand(1);

  std::string gb_ckpt, gb_refs, gb_out;
  auto* gbuild = gallery->add_subcommand("build", "Encode one reference per brand");
  gbuild->add_option("--checkpoint", gb_ckpt)->required()->check(CLI::ExistingFile);
  gbuild->add_option("--references", gb_refs, "Reference manifest (data.reference_manifest)");
  gbuild->add_option("--out", gb_out, "Gallery file (gallery.path)");
  gbuild->callback([&] {
    action = [&] {
      auto c = resolve_config(g);
      auto refs_path =
          pick(gb_refs, c.data.reference_manifest, "--references", "data.reference_manifest");
      fs::path out = gb_out.empty() ? c.gallery.path : gb_out;
      auto encoder = load_encoder(gb_ckpt, g, c);
      auto refs = read_manifest(refs_path, c);
      std::vector<BuildIssue> issues;
      auto built = build_gallery(refs, *encoder, c.encoder.use_projection, &issues,
                                 fs::absolute(refs_path).string(),
                                 static_cast<std::size_t>(c.gallery.batch_size));
      for (const auto& issue : issues)
        spdlog::warn("skipped {} ({}): {}", issue.brand.str(), issue.image_path.string(),
                     issue.message);
      fs::create_directories(artifact_dir(out));
      save_gallery(built, out);
      write_resolved_config(c, artifact_dir(out));
      print_json_or(g,
                    {{"brands", built.size()},
                     {"dim", built.dim()},
                     {"skipped", issues.size()},
                     {"out", out.string()}},
                    fmt::format("{} brands x {}\t{}\n", built.size(), built.dim(), out.string()));
      return 0;
    };
  });

  std::string gi_path;
  auto* ginfo = gallery->add_subcommand("info", "Print gallery header and metadata");
  ginfo->add_option("--gallery", gi_path)->required()->check(CLI::ExistingFile);
  ginfo->callback([&] {
    action = [&] {
      auto info = gallery_info(gi_path);
      json ids = json::array();
      for (const auto& id : info.first_ids) ids.push_back(id.str());
      json j = {{"version", info.version},     {"brands", info.count},
                {"dim", info.dim},             {"file_bytes", info.file_bytes},
                {"meta", info.meta.to_json()}, {"first_ids", ids}};
      print_json_or(
          g, j,
          fmt::format("version\t{}\nbrands\t{}\ndim\t{}\nbytes\t{}\nencoder\t{}\ncreated\t{}\n"
                      "projection\t{}\nsource\t{}\n",
                      info.version, info.count, info.dim, info.file_bytes,
                      info.meta.encoder_config_hash, info.meta.created, info.meta.use_projection,
                      info.meta.source_manifest));
      return 0;
    };
  });

  std::string gs_path, gs_out;
  std::size_t gs_size = 0;
  std::uint64_t gs_seed = 0;
  std::vector<std::string> gs_include;
  auto* gsub = gallery->add_subcommand("subset", "Seeded subset of a gallery");
  gsub->add_option("--gallery", gs_path)->required()->check(CLI::ExistingFile);
  gsub->add_option("--size", gs_size)->required();
  gsub->add_option("--seed", gs_seed)->capture_default_str();
  gsub->add_option("--include", gs_include, "Brand that must be kept (repeatable)");
  gsub->add_option("--out", gs_out)->required();
  gsub->callback([&] {
    action = [&] {
      auto c = resolve_config(g);
      auto full = load_gallery(gs_path);
      std::set<BrandId> keep;
      for (const auto& b : gs_include) keep.insert(BrandId(b));
      auto part = subset(full, gs_size, gs_seed, keep);
      fs::path out(gs_out);
      fs::create_directories(artifact_dir(out));
      save_gallery(part, out);
      write_resolved_config(c, artifact_dir(out));
      print_json_or(g, {{"brands", part.size()}, {"out", out.string()}},
                    fmt::format("{} brands\t{}\n", part.size(), out.string()));
      return 0;
    };
  });

  // identify
  std::string id_image, id_gallery, id_ckpt, id_text;
  std::size_t id_top = 5;
  bool id_stream = false;
  auto* identify = app.add_subcommand("identify", "Rank gallery brands for one logo image");
  identify->add_option("--image", id_image)->required()->check(CLI::ExistingFile);
  identify->add_option("--gallery", id_gallery)->required()->check(CLI::ExistingFile);
  identify->add_option("--checkpoint", id_ckpt)->required()->check(CLI::ExistingFile);
  identify->add_option("--top", id_top)->capture_default_str()->check(CLI::PositiveNumber);
  identify->add_option("--text", id_text, "Known logo text for the perfect_ocr recognizer");
  identify->add_flag("--stream", id_stream, "Read the gallery in chunks instead of loading it");
  identify->callback([&] {
    action = [&] {
      auto c = resolve_config(g);
      auto encoder = load_encoder(id_ckpt, g, c);
      LogoRecord record{fs::absolute(id_image), BrandId("query"), std::nullopt, std::nullopt,
                        Split::test};
      if (!id_text.empty()) record.ocr_text = id_text;
      const LogoRecord* ptr = &record;
      MatrixF q = embed_records(std::span<const LogoRecord* const>(&ptr, 1), *encoder,
                                c.encoder.use_projection);
      std::span<const float> query(q.data(), static_cast<std::size_t>(q.cols()));
      RankingResult result;
      if (id_stream) {
        check_gallery_matches(gallery_info(id_gallery).meta, *encoder, c.encoder.use_projection);
        result = rank_streaming(query, id_gallery, id_top);
      } else {
        auto gal = load_gallery(id_gallery);
        check_gallery_matches(gal.meta(), *encoder, c.encoder.use_projection);
        result = rank(query, gal, id_top);
      }
      if (g.json_out) {
        json rows = json::array();
        for (std::size_t i = 0; i < result.entries.size(); ++i) {
          const auto& e = result.entries[i];
          rows.push_back({{"rank", i + 1}, {"brand", e.brand.str()}, {"score", e.score}});
        }
        std::cout << rows.dump(2) << "\n";
      } else {
        for (std::size_t i = 0; i < result.entries.size(); ++i) {
          const auto& e = result.entries[i];
          std::cout << fmt::format("{}\t{}\t{:.6f}\n", i + 1, e.brand.str(), e.score);
        }
      }
      return 0;
    };
  });

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluation protocols");
  eval->require_subcommand(1);
  std::string ev_ckpt, ev_manifest, ev_gallery, ev_out, ev_refs, ev_distractors, ev_label;
  auto common_eval = [&](CLI::App* sub) {
    sub->add_option("--out", ev_out, "Report directory (eval.out_dir)");
    sub->add_option("--label", ev_label, "Curve label in plots");
  };
  auto out_dir = [&](const RunConfig& c) { return ev_out.empty() ? c.eval.out_dir : ev_out; };

  auto* verify = eval->add_subcommand("verify", "Cropped logo verification (ROC, AUC)");
  verify->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
  verify->add_option("--manifest", ev_manifest, "Labelled crops (data.test_manifest)");
  common_eval(verify);
  verify->callback([&] {
    action = [&] {
      auto c = resolve_config(g);
      auto path = pick(ev_manifest, c.data.test_manifest, "--manifest", "data.test_manifest");
      auto encoder = load_encoder(ev_ckpt, g, c);
      auto manifest = read_manifest(path, c);
      auto ptrs = pointers(manifest);
      MatrixF e = embed_records(ptrs, *encoder, c.encoder.use_projection);
      std::vector<BrandId> labels;
      for (const auto& r : manifest.records) labels.push_back(r.brand);
      auto pairs = make_verification_pairs(e, labels,
                                           static_cast<std::size_t>(c.eval.verification_pairs),
                                           c.eval.verification_seed);
      auto report = verification_eval(pairs);
      report.provenance["encoder_config_hash"] = encoder->config_hash();
      report.provenance["manifest"] = fs::absolute(path).string();
      report.provenance["pair_seed"] = c.eval.verification_seed;
      if (!ev_label.empty()) report.provenance["label"] = ev_label;
      finish_report(report, c, g, out_dir(c), ev_ckpt);
      return 0;
    };
  });

  auto* ident = eval->add_subcommand("ident", "One-shot identification (Top-k)");
  ident->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
  ident->add_option("--queries", ev_manifest, "Query crops (data.test_manifest)");
  ident->add_option("--gallery", ev_gallery, "Gallery file (gallery.path)");
  common_eval(ident);
  ident->callback([&] {
    action = [&] {
      auto c = resolve_config(g);
      auto path = pick(ev_manifest, c.data.test_manifest, "--queries", "data.test_manifest");
      auto gal = load_gallery(ev_gallery.empty() ? c.gallery.path : ev_gallery);
      auto encoder = load_encoder(ev_ckpt, g, c);
      check_gallery_matches(gal.meta(), *encoder, c.encoder.use_projection);
      auto manifest = read_manifest(path, c);
      IdentificationOptions options{c.eval.ks, c.encoder.use_projection};
      auto report = identification_eval(manifest.records, gal, *encoder, options);
      report.provenance["manifest"] = fs::absolute(path).string();
      if (!ev_label.empty()) report.provenance["label"] = ev_label;
      finish_report(report, c, g, out_dir(c), ev_ckpt);
      return 0;
    };
  });

  auto* e2e = eval->add_subcommand("e2e", "Detection followed by identification on scenes");
  e2e->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
  e2e->add_option("--scenes", ev_manifest, "Scene records with boxes (data.test_manifest)");
  e2e->add_option("--gallery", ev_gallery, "Gallery file (gallery.path)");
  common_eval(e2e);
  e2e->callback([&] {
    action = [&] {
      auto c = resolve_config(g);
      auto path = pick(ev_manifest, c.data.test_manifest, "--scenes", "data.test_manifest");
      auto gal = load_gallery(ev_gallery.empty() ? c.gallery.path : ev_gallery);
      auto encoder = load_encoder(ev_ckpt, g, c);
      check_gallery_matches(gal.meta(), *encoder, c.encoder.use_projection);
      auto manifest = read_manifest(path, c);
      json dconf = {{"kind", c.eval.detector},
                    {"command", c.eval.detector_command},
                    {"url", c.eval.detector_url},
                    {"confidence_threshold", c.eval.confidence_threshold},
                    {"max_detections", c.eval.max_detections}};
      auto detector = make_detector(dconf);
      IdentificationOptions options{c.eval.ks, c.encoder.use_projection};
      auto report = e2e_eval(manifest.records, *detector, *encoder, gal, options);
      report.provenance["manifest"] = fs::absolute(path).string();
      if (!ev_label.empty()) report.provenance["label"] = ev_label;
      finish_report(report, c, g, out_dir(c), ev_ckpt);
      return 0;
    };
  });

  auto* sweep = eval->add_subcommand("sweep", "Top-1 as the gallery grows");
  sweep->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
  sweep->add_option("--queries", ev_manifest, "Query crops (data.test_manifest)");
  sweep->add_option("--gallery", ev_gallery, "Base gallery (gallery.path)");
  sweep->add_option("--distractors", ev_distractors, "Distractor gallery");
  common_eval(sweep);
  sweep->callback([&] {
    action = [&] {
      auto c = resolve_config(g);
      auto path = pick(ev_manifest, c.data.test_manifest, "--queries", "data.test_manifest");
      auto base = load_gallery(ev_gallery.empty() ? c.gallery.path : ev_gallery);
      auto encoder = load_encoder(ev_ckpt, g, c);
      check_gallery_matches(base.meta(), *encoder, c.encoder.use_projection);
      std::optional<Gallery> distractors;
      if (!ev_distractors.empty()) {
        distractors = load_gallery(ev_distractors);
        check_gallery_matches(distractors->meta(), *encoder, c.encoder.use_projection);
      }
      auto manifest = read_manifest(path, c);
      std::vector<std::size_t> sizes(c.eval.sweep_sizes.begin(), c.eval.sweep_sizes.end());
      auto report = scale_sweep(manifest.records, base, distractors ? &*distractors : nullptr,
                                sizes, c.eval.sweep_seed, *encoder, c.encoder.use_projection);
      report.provenance["manifest"] = fs::absolute(path).string();
      if (!ev_label.empty()) report.provenance["label"] = ev_label;
      finish_report(report, c, g, out_dir(c), ev_ckpt);
      return 0;
    };
  });

  auto* textb = eval->add_subcommand("text-baseline", "Edit-distance ranking on logo text");
  textb->add_option("--queries", ev_manifest, "Query crops (data.test_manifest)");
  textb->add_option("--references", ev_refs, "References (data.reference_manifest)");
  common_eval(textb);
  textb->callback([&] {
    action = [&] {
      auto c = resolve_config(g);
      auto qpath = pick(ev_manifest, c.data.test_manifest, "--queries", "data.test_manifest");
      auto rpath =
          pick(ev_refs, c.data.reference_manifest, "--references", "data.reference_manifest");
      auto queries = read_manifest(qpath, c);
      auto refs = read_manifest(rpath, c);
      auto recognizer = make_text_recognizer(c.encoder.to_encoder_config().recognizer);
      auto report = text_baseline_eval(queries.records, refs.records, *recognizer, c.eval.ks);
      report.provenance["manifest"] = fs::absolute(qpath).string();
      report.provenance["references"] = fs::absolute(rpath).string();
      if (!ev_label.empty()) report.provenance["label"] = ev_label;
      finish_report(report, c, g, out_dir(c), "");
      return 0;
    };
  });

  // harvest
  auto* harvest = app.add_subcommand("harvest", "Build a reference gallery from Wikidata");
  harvest->require_subcommand(1);
  std::string hv_out, hv_manifest;
  std::optional<std::size_t> hv_max;
  bool hv_retry = false;
  auto harvest_out = [&](const RunConfig& c) {
    return fs::path(hv_out.empty() ? c.harvest.out_dir : hv_out);
  };
  auto run_harvest = [&](bool resume) {
    auto c = resolve_config(g);
    auto hc = c.harvest.config;
    if (hv_max) hc.max_entities = *hv_max;
    if (hv_retry) hc.retry_failed = true;
    auto dir = harvest_out(c);
    fs::create_directories(dir);
    write_resolved_config(c, dir);
    RateLimiter limiter(hc.rate_limit);

    auto entities_path = dir / "entities.jsonl";
    std::vector<WikidataEntity> entities;
    if (resume && fs::exists(entities_path)) {
      entities = load_entities(entities_path);
      spdlog::info("reusing {} resolved entities", entities.size());
    } else {
      auto qids = stage1_query_entities(hc, dir, &limiter);
      spdlog::info("stage 1: {} entities", qids.size());
      auto resolved = stage2_resolve_urls(qids, hc, &limiter);
      for (const auto& note : resolved.notes) spdlog::info("{}", note);
      std::ofstream unresolved(dir / "unresolved.jsonl");
      for (const auto& u : resolved.unresolved) {
        unresolved << json{{"qid", u.qid}, {"reason", u.reason}}.dump() << "\n";
      }
      spdlog::info("stage 2: {} with a logo URL, {} unresolved", resolved.entities.size(),
                   resolved.unresolved.size());
      entities = std::move(resolved.entities);
      save_entities(entities, entities_path);
    }
    DownloadStats stats;
    auto manifest = stage3_download(entities, dir, hc, resume, &stats, &limiter);
    json j = {{"downloaded", manifest.count(HarvestStatus::downloaded)},
              {"failed", manifest.count(HarvestStatus::failed)},
              {"pending", manifest.count(HarvestStatus::pending)},
              {"requests", stats.requests},
              {"skipped", stats.skipped}};
    print_json_or(g, j,
                  fmt::format("downloaded\t{}\nfailed\t{}\nrequests\t{}\nskipped\t{}\n",
                              manifest.count(HarvestStatus::downloaded),
                              manifest.count(HarvestStatus::failed), stats.requests,
                              stats.skipped));
    return 0;
  };

  auto* hrun = harvest->add_subcommand("run", "Query, resolve and download");
  auto* hresume = harvest->add_subcommand("resume", "Continue an interrupted harvest");
  for (auto* sub : {hrun, hresume}) {
    sub->add_option("--out", hv_out, "Harvest directory (harvest.out_dir)");
    sub->add_option("--max-entities", hv_max, "Stop after this many entities");
    sub->add_flag("--retry-failed", hv_retry, "Retry entries that failed before");
  }
  hrun->callback([&] { action = [&] { return run_harvest(false); }; });
  hresume->callback([&] { action = [&] { return run_harvest(true); }; });

  auto* hexport = harvest->add_subcommand("export", "Write a reference manifest");
  hexport->add_option("--out", hv_out, "Harvest directory (harvest.out_dir)");
  hexport->add_option("--manifest", hv_manifest, "Output manifest")->required();
  hexport->callback([&] {
    action = [&] {
      auto c = resolve_config(g);
      auto dir = harvest_out(c);
      auto manifest = load_harvest_manifest(dir / "harvest.jsonl");
      auto refs = export_reference_manifest(manifest, dir);
      fs::path out(hv_manifest);
      fs::create_directories(artifact_dir(out));
      save_manifest(refs, out);
      write_resolved_config(c, artifact_dir(out));
      print_json_or(g, {{"records", refs.records.size()}, {"out", out.string()}},
                    fmt::format("{} references\t{}\n", refs.records.size(), out.string()));
      return 0;
    };
  });

  auto* hstatus = harvest->add_subcommand("status", "Summarize a harvest directory");
  hstatus->add_option("--out", hv_out, "Harvest directory (harvest.out_dir)");
  hstatus->callback([&] {
    action = [&] {
      auto c = resolve_config(g);
      auto dir = harvest_out(c);
      auto path = dir / "harvest.jsonl";
      if (!fs::exists(path) && !fs::exists(fs::path(path.string() + ".journal"))) {
        throw Error(fmt::format("no harvest manifest in '{}'", dir.string()));
      }
      auto manifest = load_harvest_manifest(path);
      std::map<std::string, std::size_t> errors;
      for (const auto& e : manifest.entries) {
        if (e.status == HarvestStatus::failed) ++errors[e.error.value_or("unknown")];
      }
      json j = {{"entries", manifest.entries.size()},
                {"downloaded", manifest.count(HarvestStatus::downloaded)},
                {"failed", manifest.count(HarvestStatus::failed)},
                {"pending", manifest.count(HarvestStatus::pending)},
                {"errors", errors}};
      std::string text = fmt::format("entries\t{}\ndownloaded\t{}\nfailed\t{}\npending\t{}\n",
                                     manifest.entries.size(),
                                     manifest.count(HarvestStatus::downloaded),
                                     manifest.count(HarvestStatus::failed),
                                     manifest.count(HarvestStatus::pending));
      for (const auto& [err, n] : errors) text += fmt::format("error {}\t{}\n", err, n);
      print_json_or(g, j, text);
      return 0;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    if (code == 0) return 0;
    // Unknown or missing subcommand: show what exists.
    if (dynamic_cast<const CLI::ExtrasError*>(&e) != nullptr ||
        std::string_view(e.what()).find("subcommand") != std::string_view::npos) {
      std::cerr << app.help();
    }
    return 1;
  }

  auto logger = spdlog::stderr_color_mt("logoid");
  spdlog::set_default_logger(logger);
  spdlog::set_level(g.quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    return action ? action() : 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
}

int main(int argc, char** argv) { return run(argc, argv); }
