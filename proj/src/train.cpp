#include "logoid/train.hpp"

#include "logoid/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <map>
#include <regex>
#include <spdlog/spdlog.h>

namespace logoid {

namespace fs = std::filesystem;

void SamplerConfig::validate() const {
  if (batch_size < 4) {
    throw std::invalid_argument(fmt::format("sampler: batch_size must be >= 4, got {}", batch_size));
  }
  if (brands_per_batch < 2) {
    throw std::invalid_argument(
        fmt::format("sampler: brands_per_batch must be >= 2, got {}", brands_per_batch));
  }
  if (samples_per_brand < 1) {
    throw std::invalid_argument(
        fmt::format("sampler: samples_per_brand must be >= 1, got {}", samples_per_brand));
  }
  if (brands_per_batch * samples_per_brand != batch_size) {
    throw std::invalid_argument(fmt::format(
        "sampler: brands_per_batch ({}) x samples_per_brand ({}) must equal batch_size ({})",
        brands_per_batch, samples_per_brand, batch_size));
  }
}

void OptimizerConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument(fmt::format("optimizer: bad learning rate {}", learning_rate));
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument(fmt::format("optimizer: momentum must be in [0, 1), got {}", momentum));
  }
  if (steps < 0) throw std::invalid_argument("optimizer: steps must be >= 0");
}

std::vector<std::size_t> sample_batch_indices(const DatasetManifest& manifest,
                                              const SamplerConfig& config, std::int64_t step) {
  config.validate();
  std::map<BrandId, std::vector<std::size_t>> by_brand;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    by_brand[manifest.records[i].brand].push_back(i);
  }
  if (static_cast<int>(by_brand.size()) < config.brands_per_batch) {
    throw Error(fmt::format("sampler: {} brands per batch requested but the manifest has {}",
                            config.brands_per_batch, by_brand.size()));
  }
  std::vector<const std::vector<std::size_t>*> pools;
  pools.reserve(by_brand.size());
  for (const auto& [brand, idx] : by_brand) pools.push_back(&idx);

  Rng rng(derive_seed({config.seed, 0x73616d70, static_cast<std::uint64_t>(step)}));
  std::vector<std::size_t> order(pools.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(config.batch_size));
  for (int b = 0; b < config.brands_per_batch; ++b) {
    std::vector<std::size_t> pool = *pools[order[b]];
    const auto k = static_cast<std::size_t>(config.samples_per_brand);
    if (pool.size() >= k) {
      // partial Fisher-Yates: without replacement
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.index(pool.size() - i);
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
      }
    } else {
      for (std::size_t i = 0; i < k; ++i) out.push_back(pool[rng.index(pool.size())]);
    }
  }
  return out;
}

std::vector<LogoRecord> sample_batch(const DatasetManifest& manifest, const SamplerConfig& config,
                                     std::int64_t step) {
  std::vector<LogoRecord> out;
  for (std::size_t i : sample_batch_indices(manifest, config, step)) {
    out.push_back(manifest.records[i]);
  }
  return out;
}

BatchHook make_reference_injection_hook(const DatasetManifest& references) {
  auto table = std::make_shared<std::map<BrandId, std::pair<LogoRecord, Image>>>();
  for (const LogoRecord& r : references.records) {
    if (table->contains(r.brand)) {
      throw Error(fmt::format("reference injection: brand '{}' has more than one reference",
                              r.brand.str()));
    }
    table->emplace(r.brand, std::make_pair(r, load_record_image(r)));
  }
  return [table](BatchContents& batch) {
    std::vector<BrandId> seen;
    for (std::size_t i = 0; i < batch.records.size(); ++i) {
      const BrandId& brand = batch.records[i]->brand;
      if (std::find(seen.begin(), seen.end(), brand) != seen.end()) continue;
      seen.push_back(brand);
      auto it = table->find(brand);
      if (it == table->end()) continue;
      batch.images[i] = it->second.second;
      batch.records[i] = &it->second.first;
    }
  };
}

namespace {

void sgd_update(ParameterSet& weights, ParameterSet& buffers, const ParameterSet& grads, double lr,
                double momentum) {
  const auto mu = static_cast<float>(momentum);
  const auto rate = static_cast<float>(lr);
  for (std::size_t t = 0; t < weights.size(); ++t) {
    auto& w = weights.tensor(t).data;
    auto& buf = buffers.tensor(t).data;
    const auto& g = grads.tensor(t).data;
    for (std::size_t k = 0; k < w.size(); ++k) {
      buf[k] = mu * buf[k] + g[k];
      w[k] -= rate * buf[k];
    }
  }
}

AugmentationPolicy sized(AugmentationPolicy p, int size) {
  p.crop.size = size;
  p.validate();
  return p;
}

}  // namespace

Trainer::Trainer(Encoder& encoder, const TrainConfig& config)
    : encoder_(encoder),
      config_(config),
      backbone_momentum_(encoder.backbone().parameters().zeros_like()),
      head_momentum_(encoder.head().parameters().zeros_like()),
      textual_hash_(encoder.textual().weights_hash()) {
  config_.sampler.validate();
  config_.optimizer.validate();
  config_.loss.validate();
  const int S = encoder.backbone().input_size();
  config_.policy_a = sized(config_.policy_a, S);
  config_.policy_b = sized(config_.policy_b, S);
}

ParameterSet Trainer::momentum() const {
  ParameterSet out;
  for (const ParameterSet* set : {&backbone_momentum_, &head_momentum_}) {
    for (std::size_t i = 0; i < set->size(); ++i) {
      out.add(set->name(i), set->tensor(i).shape).data = set->tensor(i).data;
    }
  }
  return out;
}

void Trainer::set_momentum(const ParameterSet& momentum) {
  for (ParameterSet* set : {&backbone_momentum_, &head_momentum_}) {
    for (std::size_t i = 0; i < set->size(); ++i) {
      if (!momentum.contains(set->name(i)) ||
          momentum.at(set->name(i)).shape != set->tensor(i).shape) {
        throw Error(fmt::format("momentum buffer '{}' missing or misshaped", set->name(i)));
      }
      set->tensor(i).data = momentum.at(set->name(i)).data;
    }
  }
}

StepResult Trainer::train_step(std::span<const Image> images,
                               std::span<const LogoRecord* const> records,
                               std::uint64_t augment_seed) {
  if (images.size() != records.size()) {
    throw std::invalid_argument("train_step: images and records differ in length");
  }
  const auto n = static_cast<Eigen::Index>(images.size());
  std::vector<BrandId> labels;
  labels.reserve(images.size());
  for (const LogoRecord* r : records) labels.push_back(r->brand);

  ViewBatch views = two_views(images, labels, config_.policy_a, config_.policy_b, augment_seed);

  // Both views go through the backbone as one batch of 2n.
  std::vector<Image> stacked = std::move(views.view_a);
  stacked.insert(stacked.end(), std::make_move_iterator(views.view_b.begin()),
                 std::make_move_iterator(views.view_b.end()));
  std::vector<const LogoRecord*> stacked_records(records.begin(), records.end());
  stacked_records.insert(stacked_records.end(), records.begin(), records.end());

  std::unique_ptr<BackboneTape> backbone_tape;
  const bool train_backbone = encoder_.backbone().trainable();
  const FeatureBatch features =
      encoder_.encode_features(stacked, stacked_records, train_backbone ? &backbone_tape : nullptr);
  auto diverged = [&](const std::string& what) {
    std::string brands;
    for (const BrandId& b : labels) brands += (brands.empty() ? "" : ",") + b.str();
    return TrainingError(
        fmt::format("non-finite training state at step {}: {} batch brands=[{}]", step_, what, brands));
  };
  if (!features.visual.allFinite()) throw diverged("visual features");

  ProjectionHead::Tape head_tape;
  MatrixF y;
  try {
    encoder_.project_and_normalize(features, &head_tape, &y);
  } catch (const Error& e) {
    throw diverged(e.what());
  }

  const MatrixD yd = y.cast<double>();
  const LossResult loss =
      total_loss_unnormalized(yd.topRows(n), yd.bottomRows(n), labels, config_.loss);

  MatrixF grad_y(2 * n, y.cols());
  grad_y.topRows(n) = loss.grad_a.cast<float>();
  grad_y.bottomRows(n) = loss.grad_b.cast<float>();

  ParameterSet head_grads = encoder_.head().parameters().zeros_like();
  ParameterSet backbone_grads = encoder_.backbone().parameters().zeros_like();
  const MatrixF grad_in = encoder_.head().backward(head_tape, grad_y, head_grads);
  if (train_backbone) {
    // T is frozen: its slice of the gradient is dropped.
    const MatrixF grad_v = grad_in.leftCols(encoder_.visual_dim());
    encoder_.backbone().backward(*backbone_tape, grad_v, backbone_grads);
  }

  StepResult result{loss.value, backbone_grads.l2_norm(), head_grads.l2_norm()};
  if (!std::isfinite(result.loss) || !std::isfinite(result.backbone_grad_norm) ||
      !std::isfinite(result.head_grad_norm)) {
    throw diverged(fmt::format("loss={} |grad backbone|={} |grad head|={}", result.loss,
                               result.backbone_grad_norm, result.head_grad_norm));
  }

  const double lr = config_.optimizer.learning_rate;
  const double mu = config_.optimizer.momentum;
  sgd_update(encoder_.head().parameters(), head_momentum_, head_grads, lr, mu);
  if (train_backbone) {
    sgd_update(encoder_.backbone().parameters(), backbone_momentum_, backbone_grads, lr, mu);
  }
  if (encoder_.textual().weights_hash() != textual_hash_) {
    throw TrainingError("textual encoder weights changed during training");
  }
  ++step_;
  return result;
}

std::optional<fs::path> latest_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) return std::nullopt;
  static const std::regex pattern(R"(step_(\d{8})\.lckp)");
  std::optional<fs::path> best;
  long long best_step = -1;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, pattern)) continue;
    const long long s = std::stoll(m[1].str());
    if (s > best_step) {
      best_step = s;
      best = entry.path();
    }
  }
  return best;
}

std::vector<LogRow> read_train_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("training log '{}' not found", path.string()));
  std::vector<LogRow> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LogRow row;
    long long step = 0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf", &step, &row.loss, &row.seconds) != 3) {
      throw Error(fmt::format("malformed training log line '{}'", line));
    }
    row.step = step;
    rows.push_back(row);
  }
  return rows;
}

namespace {

fs::path checkpoint_path(const fs::path& dir, std::int64_t step) {
  return dir / fmt::format("step_{:08d}.lckp", step);
}

void write_log(const fs::path& path, const std::vector<LogRow>& rows) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << "step,loss,seconds\n";
    for (const LogRow& r : rows) out << fmt::format("{},{:.9g},{:.6f}\n", r.step, r.loss, r.seconds);
    if (!out) throw Error(fmt::format("cannot write training log '{}'", tmp.string()));
  }
  fs::rename(tmp, path);
}

}  // namespace

Checkpoint fit(const DatasetManifest& train, Encoder& encoder, const TrainConfig& config,
               const fs::path& checkpoint_dir, const FitOptions& options) {
  if (train.records.empty()) throw Error("fit: training manifest is empty");
  if (config.checkpoint_every < 1) throw std::invalid_argument("fit: checkpoint_every must be >= 1");
  fs::create_directories(checkpoint_dir);
  const fs::path log_path = checkpoint_dir / "train_log.csv";

  Trainer trainer(encoder, config);
  std::vector<LogRow> log;

  auto snapshot = [&]() {
    Checkpoint c;
    c.encoder = encoder.config();
    c.config_hash = config.config_hash;
    c.step = trainer.step();
    c.seed = config.sampler.seed;
    c.weights = collect_weights(encoder);
    c.momentum = trainer.momentum();
    c.textual_weights_hash = hex64(encoder.textual().weights_hash());
    return c;
  };

  if (options.resume) {
    if (auto path = latest_checkpoint(checkpoint_dir)) {
      const Checkpoint ckpt = load_checkpoint(*path);
      if (ckpt.encoder.to_json() != encoder.config().to_json()) {
        throw Error(fmt::format("cannot resume from '{}': encoder config differs", path->string()));
      }
      if (!config.config_hash.empty() && !ckpt.config_hash.empty() &&
          ckpt.config_hash != config.config_hash) {
        spdlog::warn("resuming from '{}' written under config {}, current config is {}",
                     path->string(), ckpt.config_hash, config.config_hash);
      }
      assign_weights(encoder, ckpt.weights);
      trainer.set_momentum(ckpt.momentum);
      trainer.set_step(ckpt.step);
      if (fs::exists(log_path)) {
        for (const LogRow& r : read_train_log(log_path)) {
          if (r.step <= ckpt.step) log.push_back(r);
        }
      }
      spdlog::info("resuming from step {} ({})", ckpt.step, path->string());
    }
  }

  // Decoded images are cached for the whole run.
  std::vector<std::optional<Image>> cache(train.records.size());
  auto image_at = [&](std::size_t i) -> const Image& {
    if (!cache[i]) cache[i] = load_record_image(train.records[i]);
    return *cache[i];
  };

  const std::int64_t total = config.optimizer.steps;
  std::int64_t budget = options.stop_after.value_or(total);
  bool dirty = trainer.step() == 0 && !latest_checkpoint(checkpoint_dir);

  while (trainer.step() < total && budget > 0) {
    const std::int64_t step = trainer.step();
    const auto started = std::chrono::steady_clock::now();
    BatchContents batch;
    for (std::size_t i : sample_batch_indices(train, config.sampler, step)) {
      batch.images.push_back(image_at(i));
      batch.records.push_back(&train.records[i]);
    }
    if (config.batch_hook) config.batch_hook(batch);
    const std::uint64_t aug_seed =
        derive_seed({config.sampler.seed, 0x61756720, static_cast<std::uint64_t>(step)});
    const StepResult r = trainer.train_step(batch.images, batch.records, aug_seed);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    log.push_back({step + 1, r.loss, seconds});
    --budget;
    dirty = true;

    if (trainer.step() % config.checkpoint_every == 0 || trainer.step() == total || budget == 0) {
      save_checkpoint(snapshot(), checkpoint_path(checkpoint_dir, trainer.step()));
      write_log(log_path, log);
      dirty = false;
      spdlog::info("step {}/{} loss {:.4f}", trainer.step(), total, r.loss);
    }
  }
  Checkpoint final = snapshot();
  if (dirty || !fs::exists(checkpoint_path(checkpoint_dir, trainer.step()))) {
    save_checkpoint(final, checkpoint_path(checkpoint_dir, trainer.step()));
    write_log(log_path, log);
  }
  return final;
}

}  // namespace logoid
