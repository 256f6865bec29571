#include "logoid/config.hpp"
#include "logoid/synth.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <set>

using namespace logoid;

TEST_SUITE("config") {
  TEST_CASE("defaults survive a TOML round trip") {
    const RunConfig d;
    const RunConfig back = parse_run_config(d.to_toml());
    CHECK(back.to_toml() == d.to_toml());
    CHECK(back.hash() == d.hash());
    CHECK(d.hash().size() == 16);
    CHECK(parse_run_config("").hash() == d.hash());
  }

  TEST_CASE("file values override defaults and flags override the file") {
    const std::string text = R"(
[train]
steps = 50
learning_rate = 3e-5

[encoder]
recognizer = "none"
channels = [8, 8, 16]
)";
    const RunConfig c = parse_run_config(text);
    CHECK(c.train.steps == 50);
    CHECK(c.train.learning_rate == doctest::Approx(3e-5));
    CHECK(c.encoder.recognizer == "none");
    CHECK(c.encoder.channels == std::vector<int>{8, 8, 16});
    CHECK(c.train.momentum == 0.9);

    const RunConfig o = parse_run_config(text, {"train.steps=7", "encoder.recognizer=perfect_ocr",
                                                "augment.view_b.solarize_p=0.5"});
    CHECK(o.train.steps == 7);
    CHECK(o.encoder.recognizer == "perfect_ocr");
    CHECK(o.augment.view_b.solarize_p == 0.5);
    CHECK(o.hash() != c.hash());
  }

  TEST_CASE("unknown keys, bad types and bad overrides are rejected") {
    CHECK_THROWS_AS(parse_run_config("[train]\nstepz = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[nonsense]\nx = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[train]\nsteps = \"many\"\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[train\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("", {"steps=3"}), ConfigError);
    CHECK_THROWS_AS(parse_run_config("", {"train.steps"}), ConfigError);
    CHECK_THROWS_AS(parse_run_config("", {"train.bogus=1"}), ConfigError);
    try {
      parse_run_config("[train]\nstepz = 3\n");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("train.stepz") != std::string::npos);
    }
  }

  TEST_CASE("semantic validation") {
    CHECK_THROWS_AS(parse_run_config("", {"train.checkpoint_every=0"}).validate(), ConfigError);
    CHECK_THROWS_AS(parse_run_config("", {"eval.ks=[]"}).validate(), ConfigError);
    CHECK_THROWS_AS(parse_run_config("", {"eval.sweep_sizes=[10, 5]"}).validate(), ConfigError);
    CHECK_THROWS_AS(parse_run_config("", {"encoder.recognizer=psychic"}).validate(), ConfigError);
    CHECK_NOTHROW(RunConfig().validate());
  }

  TEST_CASE("train config follows the sections") {
    const RunConfig c = parse_run_config("", {"train.batch_size=16", "train.brands_per_batch=4",
                                              "train.samples_per_brand=4", "train.seed=9"});
    const TrainConfig t = c.train_config();
    CHECK(t.sampler.batch_size == 16);
    CHECK(t.sampler.brands_per_batch == 4);
    CHECK(t.sampler.seed == 9);
    CHECK(t.optimizer.momentum == 0.9);
  }

  TEST_CASE("encoder section maps to an encoder config") {
    const RunConfig c = parse_run_config("", {"encoder.input_size=32", "encoder.visual_dim=24"});
    const EncoderConfig e = c.encoder.to_encoder_config();
    CHECK(e.backbone.at("input_size") == 32);
    CHECK(e.backbone.at("output_dim") == 24);
    CHECK(e.recognizer.at("kind") == "perfect_ocr");
  }

  TEST_CASE("resolved config files") {
    testutil::TempDir dir;
    const RunConfig c = parse_run_config("", {"train.steps=12"});
    write_resolved_config(c, dir.path());
    const std::string text = testutil::read_file(dir / "resolved_config.toml");
    CHECK(text.ends_with(c.to_toml()));
    CHECK(text.starts_with("# config hash " + c.hash()));
    CHECK(testutil::read_file(dir / "config_hash.txt").find(c.hash()) == 0);
    CHECK(load_run_config(dir / "resolved_config.toml").hash() == c.hash());
    CHECK_THROWS_AS(load_run_config(dir / "missing.toml"), ConfigError);
  }
}

TEST_SUITE("synth") {
  TEST_CASE("corpus is deterministic for a seed") {
    testutil::TempDir a, b;
    SynthConfig c;
    c.brands = 6;
    c.train_brands = 4;
    c.samples_per_brand = 2;
    c.image_size = 24;
    c.seed = 3;
    const auto x = write_synth_corpus(c, a.path());
    const auto y = write_synth_corpus(c, b.path());
    REQUIRE(x.train.records.size() == 8);
    CHECK(x.queries.records.size() == 4);
    CHECK(x.references.records.size() == 2);
    CHECK(x.all_references.records.size() == 6);
    for (std::size_t i = 0; i < x.train.records.size(); ++i) {
      CHECK(x.train.records[i].brand == y.train.records[i].brand);
      CHECK(load_image(x.train.records[i].image_path) == load_image(y.train.records[i].image_path));
    }
    std::set<BrandId> train_brands;
    for (const auto& r : x.train.records) train_brands.insert(r.brand);
    for (const auto& r : x.queries.records) CHECK_FALSE(train_brands.contains(r.brand));
  }

  TEST_CASE("shared-glyph brands share everything but the name") {
    SynthConfig c;
    c.brands = 10;
    c.train_brands = 6;
    c.shared_glyph_brands = 3;
    const auto brands = make_brands(c);
    REQUIRE(brands.size() == 10);
    for (int i = 8; i < 10; ++i) {
      CHECK(brands[static_cast<std::size_t>(i)].name != brands[7].name);
      CHECK(render_logo(brands[static_cast<std::size_t>(i)], 32, true, 0) != render_logo(brands[7], 32, true, 0));
      CHECK(brands[static_cast<std::size_t>(i)].shapes.size() == brands[7].shapes.size());
    }
    std::set<std::string> names;
    for (const auto& b : brands) CHECK(names.insert(b.name).second);
  }
}
