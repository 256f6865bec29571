#include "logoid/synth.hpp"
#include "logoid/train.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <set>

using namespace logoid;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.backbone = {{"kind", "tiny_convnet"},
                {"input_size", 16},
                {"channels", {4, 8, 8}},
                {"output_dim", 12},
                {"init_seed", 1}};
  c.recognizer = {{"kind", "none"}};
  c.text.dim = 8;
  c.text.buckets = 32;
  c.head.hidden_dim = 32;
  c.head.output_dim = 8;
  return c;
}

DatasetManifest toy_manifest(int brands, int per_brand, const std::filesystem::path& image) {
  DatasetManifest m;
  for (int b = 0; b < brands; ++b)
    for (int i = 0; i < per_brand; ++i)
      m.records.push_back({image, BrandId("b" + std::to_string(b)), std::nullopt, std::nullopt, Split::train});
  return m;
}

TrainConfig toy_train_config(int brands_per_batch, int per_brand) {
  TrainConfig t;
  t.sampler = {brands_per_batch * per_brand, brands_per_batch, per_brand, 3};
  t.optimizer = {1e-3, 0.9, 10};
  t.policy_a = AugmentationPolicy::default_a(16);
  t.policy_b = AugmentationPolicy::default_b(16);
  t.checkpoint_every = 5;
  return t;
}

struct SynthData {
  testutil::TempDir dir;
  SynthCorpus corpus;
  explicit SynthData(int brands = 6, int samples = 8) {
    SynthConfig c;
    c.brands = brands;
    c.train_brands = brands - 1;
    c.samples_per_brand = samples;
    c.image_size = 24;
    c.seed = 5;
    corpus = write_synth_corpus(c, dir.path());
  }
};

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("sampler gives P brands with K records each") {
    testutil::TempDir dir;
    const auto m = toy_manifest(10, 5, dir / "x.png");
    SamplerConfig s{8, 4, 2, 1};
    const auto batch = sample_batch(m, s, 0);
    REQUIRE(batch.size() == 8);
    std::map<std::string, int> per;
    for (const auto& r : batch) ++per[r.brand.str()];
    CHECK(per.size() == 4);
    for (const auto& [b, n] : per) CHECK(n == 2);
    CHECK(sample_batch(m, s, 0) == batch);
    CHECK(sample_batch_indices(m, s, 1) != sample_batch_indices(m, s, 0));
  }

  TEST_CASE("sampler draws distinct records when a brand has enough") {
    testutil::TempDir dir;
    const auto m = toy_manifest(5, 4, dir / "x.png");
    SamplerConfig s{12, 3, 4, 2};
    for (int step = 0; step < 20; ++step) {
      const auto idx = sample_batch_indices(m, s, step);
      CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == idx.size());
    }
    // Two records per brand, four requested: replacement kicks in.
    const auto small = toy_manifest(3, 2, dir / "x.png");
    CHECK(sample_batch_indices(small, SamplerConfig{8, 2, 4, 0}, 0).size() == 8);
  }

  TEST_CASE("sampler rejects impossible configs") {
    testutil::TempDir dir;
    CHECK_THROWS(sample_batch(toy_manifest(1, 10, dir / "x.png"), SamplerConfig{4, 2, 2, 0}, 0));
    CHECK_THROWS(SamplerConfig{10, 4, 2, 0}.validate());
    CHECK_THROWS(SamplerConfig{4, 1, 4, 0}.validate());
    CHECK_THROWS(OptimizerConfig{-1.0, 0.9, 10}.validate());
  }

  TEST_CASE("lr=0 leaves weights unchanged and the loss finite") {
    SynthData data;
    Encoder enc(tiny_encoder());
    auto cfg = toy_train_config(4, 2);
    cfg.optimizer.learning_rate = 0.0;
    Trainer trainer(enc, cfg);
    const ParameterSet before = collect_weights(enc);
    const auto batch = sample_batch(data.corpus.train, cfg.sampler, 0);
    std::vector<Image> imgs;
    std::vector<const LogoRecord*> recs;
    for (const auto& r : batch) {
      imgs.push_back(load_record_image(r));
      recs.push_back(&r);
    }
    const StepResult r = trainer.train_step(imgs, recs, 1);
    CHECK(std::isfinite(r.loss));
    CHECK(r.backbone_grad_norm > 0.0);
    CHECK(collect_weights(enc) == before);
  }

  TEST_CASE("textual weights stay frozen and the step counter advances") {
    SynthData data;
    EncoderConfig ec = tiny_encoder();
    ec.recognizer = {{"kind", "perfect_ocr"}};
    Encoder enc(ec);
    const auto text_hash = enc.textual().weights_hash();
    auto cfg = toy_train_config(4, 2);
    Trainer trainer(enc, cfg);
    const ParameterSet before = collect_weights(enc);
    for (int step = 0; step < 3; ++step) {
      const auto batch = sample_batch(data.corpus.train, cfg.sampler, step);
      std::vector<Image> imgs;
      std::vector<const LogoRecord*> recs;
      for (const auto& r : batch) {
        imgs.push_back(load_record_image(r));
        recs.push_back(&r);
      }
      trainer.train_step(imgs, recs, static_cast<std::uint64_t>(step));
    }
    CHECK(trainer.step() == 3);
    CHECK(enc.textual().weights_hash() == text_hash);
    CHECK_FALSE(collect_weights(enc) == before);
  }

  TEST_CASE("diverging training raises TrainingError naming the batch") {
    SynthData data;
    Encoder enc(tiny_encoder());
    auto cfg = toy_train_config(4, 2);
    cfg.optimizer.learning_rate = 1e30;
    cfg.optimizer.steps = 6;
    testutil::TempDir ck;
    try {
      fit(data.corpus.train, enc, cfg, ck.path());
      FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
      CHECK(std::string(e.what()).find("brands") != std::string::npos);
    }
  }

  TEST_CASE("steps=0 writes the initialization") {
    SynthData data;
    Encoder enc(tiny_encoder());
    const ParameterSet init = collect_weights(enc);
    auto cfg = toy_train_config(4, 2);
    cfg.optimizer.steps = 0;
    testutil::TempDir ck;
    const Checkpoint c = fit(data.corpus.train, enc, cfg, ck.path());
    CHECK(c.step == 0);
    CHECK(c.weights == init);
    REQUIRE(latest_checkpoint(ck.path()));
    CHECK(load_checkpoint(*latest_checkpoint(ck.path())).weights == init);
  }

  TEST_CASE("interrupted and resumed run equals an uninterrupted one") {
    SynthData data;
    auto cfg = toy_train_config(4, 2);
    cfg.optimizer.steps = 8;
    cfg.checkpoint_every = 3;

    testutil::TempDir straight_dir;
    Encoder straight(tiny_encoder());
    const Checkpoint a = fit(data.corpus.train, straight, cfg, straight_dir.path());

    testutil::TempDir resumed_dir;
    {
      Encoder first(tiny_encoder());
      FitOptions stop;
      stop.stop_after = 5;
      const Checkpoint partial = fit(data.corpus.train, first, cfg, resumed_dir.path(), stop);
      CHECK(partial.step == 5);
    }
    Encoder second(tiny_encoder());
    const Checkpoint b = fit(data.corpus.train, second, cfg, resumed_dir.path());
    CHECK(b.step == 8);
    CHECK(b.weights == a.weights);
    CHECK(b.momentum == a.momentum);
    CHECK(collect_weights(second) == collect_weights(straight));

    const auto log = read_train_log(resumed_dir / "train_log.csv");
    REQUIRE(log.size() == 8);
    for (std::size_t i = 0; i < log.size(); ++i) CHECK(log[i].step == static_cast<std::int64_t>(i + 1));
    const auto straight_log = read_train_log(straight_dir / "train_log.csv");
    for (std::size_t i = 0; i < log.size(); ++i) CHECK(log[i].loss == doctest::Approx(straight_log[i].loss).epsilon(1e-6));
  }

  TEST_CASE("checkpoint round trip then one step equals one step") {
    SynthData data;
    auto cfg = toy_train_config(4, 2);
    Encoder enc(tiny_encoder());
    Trainer t1(enc, cfg);
    const auto batch = sample_batch(data.corpus.train, cfg.sampler, 0);
    std::vector<Image> imgs;
    std::vector<const LogoRecord*> recs;
    for (const auto& r : batch) {
      imgs.push_back(load_record_image(r));
      recs.push_back(&r);
    }
    t1.train_step(imgs, recs, 1);

    testutil::TempDir dir;
    Checkpoint ck;
    ck.encoder = enc.config();
    ck.step = t1.step();
    ck.weights = collect_weights(enc);
    ck.momentum = t1.momentum();
    save_checkpoint(ck, dir / "c.lckp");
    auto restored = encoder_from_checkpoint(load_checkpoint(dir / "c.lckp"));
    Trainer t2(*restored, cfg);
    t2.set_momentum(load_checkpoint(dir / "c.lckp").momentum);
    t2.set_step(1);

    const auto r1 = t1.train_step(imgs, recs, 2);
    const auto r2 = t2.train_step(imgs, recs, 2);
    CHECK(r1.loss == r2.loss);
    CHECK(collect_weights(enc) == collect_weights(*restored));
  }

  TEST_CASE("overfits a 4-brand toy set") {
    SynthData data(5, 8);  // 4 training brands x 8 images
    Encoder enc(tiny_encoder());
    TrainConfig cfg;
    cfg.sampler = {16, 4, 4, 0};
    // The loss is a sum over the batch, so gradient norms run into the
    // thousands; larger rates kill the ReLUs within a few steps.
    cfg.optimizer = {1e-6, 0.9, 200};
    cfg.policy_a = AugmentationPolicy::identity(16);
    cfg.policy_b = AugmentationPolicy::identity(16);
    cfg.policy_b.flip_p = 0.5;
    cfg.checkpoint_every = 1000;
    testutil::TempDir ck;
    fit(data.corpus.train, enc, cfg, ck.path());
    const auto log = read_train_log(ck / "train_log.csv");
    REQUIRE(log.size() == 200);
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) {
      first += log[static_cast<std::size_t>(i)].loss;
      last += log[log.size() - 1 - static_cast<std::size_t>(i)].loss;
    }
    MESSAGE("mean loss over first/last 10 steps: " << first / 10 << " / " << last / 10);
    CHECK(last < 0.5 * first);
  }

  TEST_CASE("reference injection swaps in the clean reference") {
    SynthData data;
    const auto hook = make_reference_injection_hook(data.corpus.all_references);
    const auto batch = sample_batch(data.corpus.train, SamplerConfig{8, 4, 2, 0}, 0);
    BatchContents contents;
    for (const auto& r : batch) {
      contents.images.push_back(load_record_image(r));
      contents.records.push_back(&r);
    }
    const auto original = contents.images;
    hook(contents);
    int replaced = 0;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const bool first = seen.insert(batch[i].brand.str()).second;
      if (contents.images[i] != original[i]) {
        ++replaced;
        CHECK(first);
        CHECK(contents.records[i]->brand == batch[i].brand);
      }
    }
    CHECK(replaced == 4);
  }

  TEST_CASE("fit with a hook and reference records still trains") {
    SynthData data;
    Encoder enc(tiny_encoder());
    auto cfg = toy_train_config(4, 2);
    cfg.optimizer.steps = 2;
    cfg.batch_hook = make_reference_injection_hook(data.corpus.all_references);
    testutil::TempDir ck;
    CHECK(fit(data.corpus.train, enc, cfg, ck.path()).step == 2);
  }
}
