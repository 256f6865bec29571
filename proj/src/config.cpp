#include "logoid/config.hpp"

#include <toml.hpp>

#include <fmt/format.h>
#include <fstream>
#include <set>
#include <sstream>

namespace logoid {

namespace fs = std::filesystem;

EncoderConfig EncoderSection::to_encoder_config() const {
  EncoderConfig c;
  if (backbone == "tiny_convnet") {
    c.backbone = {{"kind", "tiny_convnet"},
                  {"input_size", input_size},
                  {"channels", channels},
                  {"output_dim", visual_dim},
                  {"init_seed", init_seed}};
  } else if (backbone == "external") {
    c.backbone = {{"kind", "external"},
                  {"command", backbone_command},
                  {"input_size", input_size},
                  {"output_dim", visual_dim}};
  } else {
    throw ConfigError(fmt::format("encoder.backbone: unknown kind '{}'", backbone));
  }
  if (recognizer == "external") {
    c.recognizer = {{"kind", "external"}, {"command", recognizer_command}};
  } else {
    c.recognizer = {{"kind", recognizer}};
  }
  c.text = text;
  c.head.hidden_dim = head_hidden;
  c.head.output_dim = head_output;
  c.head.init_seed = head_seed;
  return c;
}

namespace {

/// Walks every config field in a fixed order. The writer and the reader
/// below share it, so the two can never disagree on names.
template <typename V>
void visit(RunConfig& c, V& v) {
  v.section("data");
  v.field("train_manifest", c.data.train_manifest);
  v.field("test_manifest", c.data.test_manifest);
  v.field("reference_manifest", c.data.reference_manifest);
  v.field("distractor_manifest", c.data.distractor_manifest);
  v.field("strict", c.data.strict);
  v.field("check_images", c.data.check_images);
  v.field("open_set_test_fraction", c.data.open_set_test_fraction);
  v.field("split_seed", c.data.split_seed);

  for (auto [name, p] : {std::pair{"augment.view_a", &c.augment.view_a},
                         std::pair{"augment.view_b", &c.augment.view_b}}) {
    v.section(name);
    v.field("crop", p->crop.enabled);
    v.field("crop_size", p->crop.size);
    v.field("crop_scale_min", p->crop.scale_min);
    v.field("crop_scale_max", p->crop.scale_max);
    v.field("crop_ratio_min", p->crop.ratio_min);
    v.field("crop_ratio_max", p->crop.ratio_max);
    v.field("flip_p", p->flip_p);
    v.field("jitter_p", p->jitter.p);
    v.field("brightness", p->jitter.brightness);
    v.field("contrast", p->jitter.contrast);
    v.field("saturation", p->jitter.saturation);
    v.field("hue", p->jitter.hue);
    v.field("grayscale_p", p->grayscale_p);
    v.field("blur_p", p->blur_p);
    v.field("blur_sigma_min", p->blur_sigma_min);
    v.field("blur_sigma_max", p->blur_sigma_max);
    v.field("solarize_p", p->solarize_p);
    v.field("solarize_threshold", p->solarize_threshold);
    v.field("min_input_side", p->min_input_side);
  }

  v.section("encoder");
  v.field("backbone", c.encoder.backbone);
  v.field("input_size", c.encoder.input_size);
  v.field("channels", c.encoder.channels);
  v.field("visual_dim", c.encoder.visual_dim);
  v.field("init_seed", c.encoder.init_seed);
  v.field("backbone_command", c.encoder.backbone_command);
  v.field("recognizer", c.encoder.recognizer);
  v.field("recognizer_command", c.encoder.recognizer_command);
  v.field("text_dim", c.encoder.text.dim);
  v.field("text_buckets", c.encoder.text.buckets);
  v.field("text_seed", c.encoder.text.seed);
  v.field("head_hidden", c.encoder.head_hidden);
  v.field("head_output", c.encoder.head_output);
  v.field("head_seed", c.encoder.head_seed);
  v.field("use_projection", c.encoder.use_projection);

  v.section("loss");
  v.field("tau", c.loss.tau);
  v.field("include_self_in_same_view", c.loss.include_self_in_same_view);
  v.field("denominator_includes_positives", c.loss.denominator_includes_positives);
  v.field("mean_over_positives", c.loss.mean_over_positives);

  v.section("train");
  v.field("steps", c.train.steps);
  v.field("learning_rate", c.train.learning_rate);
  v.field("momentum", c.train.momentum);
  v.field("batch_size", c.train.batch_size);
  v.field("brands_per_batch", c.train.brands_per_batch);
  v.field("samples_per_brand", c.train.samples_per_brand);
  v.field("seed", c.train.seed);
  v.field("checkpoint_every", c.train.checkpoint_every);
  v.field("checkpoint_dir", c.train.checkpoint_dir);
  v.field("reference_injection", c.train.reference_injection);

  v.section("gallery");
  v.field("path", c.gallery.path);
  v.field("batch_size", c.gallery.batch_size);

  v.section("eval");
  v.field("ks", c.eval.ks);
  v.field("verification_pairs", c.eval.verification_pairs);
  v.field("verification_seed", c.eval.verification_seed);
  v.field("sweep_sizes", c.eval.sweep_sizes);
  v.field("sweep_seed", c.eval.sweep_seed);
  v.field("detector", c.eval.detector);
  v.field("detector_command", c.eval.detector_command);
  v.field("detector_url", c.eval.detector_url);
  v.field("confidence_threshold", c.eval.confidence_threshold);
  v.field("max_detections", c.eval.max_detections);
  v.field("out_dir", c.eval.out_dir);

  HarvestConfig& h = c.harvest.config;
  v.section("harvest");
  v.field("out_dir", c.harvest.out_dir);
  v.field("sparql_endpoint", h.sparql_endpoint);
  v.field("api_endpoint", h.api_endpoint);
  v.field("media_base", h.media_base);
  v.field("property", h.property);
  v.field("language", h.language);
  v.field("page_size", h.page_size);
  v.field("max_entities", h.max_entities);
  v.field("ids_per_request", h.ids_per_request);
  v.field("rate_limit", h.rate_limit);
  v.field("parallelism", h.parallelism);
  v.field("max_attempts", h.max_attempts);
  v.field("backoff_initial_s", h.backoff_initial_s);
  v.field("backoff_max_s", h.backoff_max_s);
  v.field("timeout_s", h.timeout_s);
  v.field("user_agent", h.user_agent);
  v.field("rasterize_command", h.rasterize_command);
  v.field("raster_max_dim", h.raster_max_dim);
  v.field("retry_failed", h.retry_failed);
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> out;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) out.push_back(part);
  return out;
}

toml::table& table_at(toml::table& root, const std::string& path) {
  toml::table* t = &root;
  for (const std::string& part : split_path(path)) {
    if (!t->contains(part)) t->insert(part, toml::table{});
    toml::table* next = t->get(part)->as_table();
    if (!next) throw ConfigError(fmt::format("'{}' is a value, expected a table", part));
    t = next;
  }
  return *t;
}

struct Writer {
  toml::table root;
  toml::table* cur = nullptr;

  void section(const std::string& name) { cur = &table_at(root, name); }

  template <typename T>
  void field(const char* key, const T& value) {
    if constexpr (std::is_same_v<T, bool> || std::is_same_v<T, std::string> ||
                  std::is_same_v<T, double>) {
      cur->insert_or_assign(key, value);
    } else if constexpr (std::is_integral_v<T>) {
      cur->insert_or_assign(key, static_cast<std::int64_t>(value));
    } else {
      toml::array arr;
      for (const auto& x : value) arr.push_back(static_cast<std::int64_t>(x));
      cur->insert_or_assign(key, std::move(arr));
    }
  }
};

struct Reader {
  const toml::table* root;
  const toml::table* cur = nullptr;
  std::string name;
  std::set<std::string> known_sections;
  std::set<std::string> known_fields;

  void section(const std::string& n) {
    name = n;
    std::string prefix;
    for (const std::string& part : split_path(n)) {
      prefix += (prefix.empty() ? "" : ".") + part;
      known_sections.insert(prefix);
    }
    const toml::node* node = root->at_path(n).node();
    cur = node ? node->as_table() : nullptr;
    if (node && !cur) throw ConfigError(fmt::format("'{}' must be a table", n));
  }

  [[noreturn]] void type_error(const char* key, const char* expected) const {
    throw ConfigError(fmt::format("{}.{}: expected {}", name, key, expected));
  }

  template <typename T>
  void field(const char* key, T& out) {
    known_fields.insert(name + "." + key);
    if (!cur) return;
    const toml::node* node = cur->get(key);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (!node->is_boolean()) type_error(key, "a boolean");
      out = node->as_boolean()->get();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!node->is_string()) type_error(key, "a string");
      out = node->as_string()->get();
    } else if constexpr (std::is_same_v<T, double>) {
      if (node->is_floating_point()) {
        out = node->as_floating_point()->get();
      } else if (node->is_integer()) {
        out = static_cast<double>(node->as_integer()->get());
      } else {
        type_error(key, "a number");
      }
    } else if constexpr (std::is_integral_v<T>) {
      if (!node->is_integer()) type_error(key, "an integer");
      const std::int64_t v = node->as_integer()->get();
      if constexpr (std::is_unsigned_v<T>) {
        if (v < 0) type_error(key, "a non-negative integer");
      }
      out = static_cast<T>(v);
    } else {
      const toml::array* arr = node->as_array();
      if (!arr) type_error(key, "an array of integers");
      T values;
      for (const auto& el : *arr) {
        if (!el.is_integer()) type_error(key, "an array of integers");
        values.push_back(static_cast<typename T::value_type>(el.as_integer()->get()));
      }
      out = std::move(values);
    }
  }

  void check_unknown(const toml::table& t, const std::string& prefix) const {
    for (const auto& [k, node] : t) {
      const std::string path = prefix.empty() ? std::string(k.str()) : prefix + "." + std::string(k.str());
      if (known_fields.contains(path)) continue;
      if (known_sections.contains(path) && node.is_table()) {
        check_unknown(*node.as_table(), path);
        continue;
      }
      throw ConfigError(fmt::format("unknown config key '{}'", path));
    }
  }
};

void apply_override(toml::table& root, const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(fmt::format("override '{}' must look like section.key=value", text));
  }
  const std::string path = text.substr(0, eq);
  const std::string value = text.substr(eq + 1);
  const auto parts = split_path(path);
  if (parts.size() < 2) {
    throw ConfigError(fmt::format("override '{}' needs a section and a key", text));
  }
  std::string section;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) section += (i ? "." : "") + parts[i];
  toml::table& t = table_at(root, section);
  try {
    toml::table parsed = toml::parse("v = " + value);
    t.insert_or_assign(parts.back(), *parsed.get("v"));
  } catch (const toml::parse_error&) {
    t.insert_or_assign(parts.back(), value);
  }
}

RunConfig from_table(toml::table root, const std::vector<std::string>& overrides) {
  for (const std::string& o : overrides) apply_override(root, o);
  RunConfig c;
  Reader reader{&root};
  visit(c, reader);
  reader.check_unknown(root, "");
  c.validate();
  return c;
}

}  // namespace

std::string RunConfig::to_toml() const {
  Writer w;
  visit(const_cast<RunConfig&>(*this), w);
  std::ostringstream out;
  out << toml::toml_formatter(w.root) << "\n";
  return out.str();
}

std::string RunConfig::hash() const { return hex64(fnv1a64(to_toml())); }

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.sampler = {train.batch_size, train.brands_per_batch, train.samples_per_brand, train.seed};
  t.optimizer = {train.learning_rate, train.momentum, train.steps};
  t.loss = loss;
  t.policy_a = augment.view_a;
  t.policy_b = augment.view_b;
  t.checkpoint_every = train.checkpoint_every;
  t.config_hash = hash();
  return t;
}

void RunConfig::validate() const {
  try {
    train_config().sampler.validate();
    train_config().optimizer.validate();
    loss.validate();
    augment.view_a.validate();
    augment.view_b.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (train.checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be >= 1");
  if (encoder.backbone != "tiny_convnet" && encoder.backbone != "external") {
    throw ConfigError(fmt::format("encoder.backbone: unknown kind '{}'", encoder.backbone));
  }
  if (encoder.recognizer != "none" && encoder.recognizer != "perfect_ocr" &&
      encoder.recognizer != "external") {
    throw ConfigError(fmt::format("encoder.recognizer: unknown kind '{}'", encoder.recognizer));
  }
  if (encoder.channels.size() != 3) throw ConfigError("encoder.channels must list 3 widths");
  if (eval.ks.empty()) throw ConfigError("eval.ks must not be empty");
  for (int k : eval.ks) {
    if (k < 1) throw ConfigError("eval.ks entries must be >= 1");
  }
  for (std::size_t i = 1; i < eval.sweep_sizes.size(); ++i) {
    if (eval.sweep_sizes[i] <= eval.sweep_sizes[i - 1]) {
      throw ConfigError("eval.sweep_sizes must be strictly ascending");
    }
  }
  if (eval.detector != "oracle" && eval.detector != "command" && eval.detector != "http") {
    throw ConfigError(fmt::format("eval.detector: unknown kind '{}'", eval.detector));
  }
  if (!(data.open_set_test_fraction > 0.0 && data.open_set_test_fraction < 1.0)) {
    throw ConfigError("data.open_set_test_fraction must be in (0, 1)");
  }
}

RunConfig parse_run_config(std::string_view toml_text, const std::vector<std::string>& overrides) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    throw ConfigError(fmt::format("config parse error: {}", e.description()));
  }
  return from_table(std::move(root), overrides);
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  if (path.empty()) return from_table({}, overrides);
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("config file '{}' not found", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str(), overrides);
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void write_resolved_config(const RunConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "resolved_config.toml", std::ios::trunc);
    out << "# config hash " << config.hash() << "\n" << config.to_toml();
    if (!out) throw Error(fmt::format("cannot write resolved config in '{}'", dir.string()));
  }
  std::ofstream out(dir / "config_hash.txt", std::ios::trunc);
  out << config.hash() << "\n";
}

}  // namespace logoid
