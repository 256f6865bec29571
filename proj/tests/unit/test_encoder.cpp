#include "logoid/checkpoint.hpp"
#include "logoid/encoder.hpp"
#include "logoid/subprocess.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace logoid;
using nlohmann::json;

namespace {

EncoderConfig small_config(const std::string& recognizer = "perfect_ocr") {
  EncoderConfig c;
  c.backbone = {{"kind", "tiny_convnet"},
                {"input_size", 16},
                {"channels", {4, 6, 8}},
                {"output_dim", 10},
                {"init_seed", 3}};
  c.recognizer = {{"kind", recognizer}};
  c.text.dim = 12;
  c.text.buckets = 64;
  c.head.hidden_dim = 20;
  c.head.output_dim = 6;
  return c;
}

Image noise_image(int size, std::uint64_t seed) {
  Rng rng(seed);
  Image img(3, size, size);
  for (float& v : img.data()) v = static_cast<float>(rng.uniform());
  return img;
}

double dot(const ParameterSet& a, const ParameterSet& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a.tensor(i).numel(); ++k)
      s += static_cast<double>(a.tensor(i).data[k]) * b.tensor(i).data[k];
  return s;
}

}  // namespace

TEST_SUITE("encoder") {
  TEST_CASE("textless image gives a zero T row") {
    Encoder enc(small_config());
    std::vector<Image> imgs{noise_image(16, 1)};
    LogoRecord rec{"/x.png", BrandId("A"), std::nullopt, std::nullopt, Split::test};
    std::vector<const LogoRecord*> recs{&rec};
    const FeatureBatch f = enc.encode_features(imgs, recs);
    CHECK(f.textual.rows() == 1);
    CHECK(f.textual.cols() == 12);
    CHECK(f.textual.norm() == 0.0f);
    CHECK(f.visual.cols() == 10);
  }

  TEST_CASE("empty batch is rejected") {
    Encoder enc(small_config());
    CHECK_THROWS(enc.encode_features({}, {}));
  }

  TEST_CASE("encoding is deterministic") {
    Encoder enc(small_config());
    std::vector<Image> imgs{noise_image(16, 1), noise_image(16, 2)};
    const auto a = enc.encode_features(imgs, {});
    const auto b = enc.encode_features(imgs, {});
    CHECK(a.visual == b.visual);
    CHECK(a.textual == b.textual);
    CHECK(enc.project_and_normalize(a) == enc.project_and_normalize(b));
  }

  TEST_CASE("projected rows have unit norm and ignore input scale") {
    Encoder enc(small_config());
    std::vector<Image> imgs{noise_image(16, 4), noise_image(16, 5), noise_image(16, 6)};
    FeatureBatch f = enc.encode_features(imgs, {});
    MatrixF pre;
    const MatrixF z = enc.project_and_normalize(f, nullptr, &pre);
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      CHECK(std::abs(z.row(r).norm() - 1.0f) <= 1e-6f);
    }
    MatrixF scaled = pre;
    scaled.row(1) *= 5.0f;
    normalize_rows(scaled);
    CHECK((scaled.row(1) - z.row(1)).cwiseAbs().maxCoeff() <= 1e-6f);
  }

  TEST_CASE("inference dimension is D_v + D_t, or the head output with projection") {
    Encoder enc(small_config());
    CHECK(enc.inference_dim(false) == 22);
    CHECK(enc.inference_dim(true) == 6);
    std::vector<Image> imgs{noise_image(16, 4)};
    CHECK(enc.encode_inference(imgs, {}, false).cols() == 22);
    CHECK(enc.encode_inference(imgs, {}, true).cols() == 6);

    // 2048-d visual features with the 256-d text embedding give 2304.
    ProjectionHeadConfig head;
    head.input_dim = 2048 + 256;
    ProjectionHead h(head);
    CHECK(h.config().input_dim == 2304);
    CHECK(h.forward(MatrixF::Zero(1, 2304)).cols() == 512);
  }

  TEST_CASE("no detected text gives normalized [V:0]") {
    Encoder enc(small_config("none"));
    std::vector<Image> imgs{noise_image(16, 9)};
    const MatrixF e = enc.encode_inference(imgs, {}, false);
    MatrixF v = enc.encode_features(imgs, {}).visual;
    normalize_rows(v);
    CHECK((e.leftCols(10) - v).cwiseAbs().maxCoeff() <= 1e-6f);
    CHECK(e.rightCols(12).cwiseAbs().maxCoeff() == 0.0f);
  }

  TEST_CASE("perfect OCR reads the record text and the embedder is deterministic") {
    Encoder enc(small_config());
    std::vector<Image> imgs{noise_image(16, 1), noise_image(16, 1)};
    LogoRecord a{"/x.png", BrandId("A"), std::nullopt, "Acme", Split::test};
    LogoRecord b{"/x.png", BrandId("B"), std::nullopt, "Zenith", Split::test};
    std::vector<const LogoRecord*> recs{&a, &b};
    const auto f = enc.encode_features(imgs, recs);
    CHECK(f.texts == std::vector<std::string>{"Acme", "Zenith"});
    CHECK(std::abs(f.textual.row(0).norm() - 1.0f) < 1e-5f);
    CHECK(f.textual.row(0) != f.textual.row(1));
    TrigramTextEmbedder emb(small_config().text);
    CHECK((emb.embed("Acme").transpose() - f.textual.row(0)).cwiseAbs().maxCoeff() == 0.0f);
    CHECK(emb.embed("ACME") == emb.embed("acme"));
    CHECK(emb.embed("").norm() == 0.0f);
  }

  TEST_CASE("cosine of inference embeddings ignores positive rescaling") {
    Encoder enc(small_config());
    std::vector<Image> imgs{noise_image(16, 1), noise_image(16, 2)};
    FeatureBatch f = enc.encode_features(imgs, {});
    MatrixF x(2, 22);
    x << f.visual, f.textual;
    MatrixF y = x;
    y.row(0) *= 3.5f;
    normalize_rows(x);
    normalize_rows(y);
    CHECK(x.row(0).dot(x.row(1)) == doctest::Approx(y.row(0).dot(y.row(1))).epsilon(1e-6));
  }

  TEST_CASE("normalize_rows rejects zero rows") {
    MatrixF m = MatrixF::Zero(2, 3);
    m(0, 0) = 1.0f;
    CHECK_THROWS_AS(normalize_rows(m), Error);
  }

  TEST_CASE("tiny convnet backward matches finite differences") {
    TinyConvNetConfig cfg;
    cfg.input_size = 16;
    cfg.channels = {3, 4, 5};
    cfg.output_dim = 6;
    cfg.init_seed = 1;
    TinyConvNet net(cfg);
    std::vector<Image> imgs{noise_image(16, 11), noise_image(16, 12)};
    Rng rng(5);
    MatrixF upstream(2, 6);
    for (float& v : std::span(upstream.data(), upstream.size())) v = static_cast<float>(rng.normal());

    std::unique_ptr<BackboneTape> tape;
    net.forward(imgs, &tape);
    ParameterSet grads = net.parameters().zeros_like();
    net.backward(*tape, upstream, grads);

    // Per-element central differences. Activations in a net this small sit
    // close to zero, so a few entries straddle a ReLU or max-pool kink even at
    // a small step; those are counted rather than asserted individually.
    const float eps = 1e-4f;
    int total = 0, agree = 0;
    for (std::size_t t = 0; t < grads.size(); ++t) {
      for (std::size_t k = 0; k < grads.tensor(t).numel(); ++k) {
        auto objective = [&](float step) {
          TinyConvNet moved(cfg);
          for (std::size_t i = 0; i < grads.size(); ++i) moved.parameters().tensor(i).data = net.parameters().tensor(i).data;
          moved.parameters().tensor(t).data[k] += step;
          return static_cast<double>((moved.forward(imgs).array() * upstream.array()).sum());
        };
        const double numeric = (objective(eps) - objective(-eps)) / (2.0 * eps);
        const double analytic = grads.tensor(t).data[k];
        ++total;
        if (std::abs(numeric - analytic) <= 2e-2 * std::max(0.1, std::abs(analytic))) ++agree;
      }
    }
    CHECK(total == 657);
    CHECK(agree >= total * 98 / 100);
  }

  TEST_CASE("projection head backward matches finite differences") {
    ProjectionHeadConfig cfg;
    cfg.input_dim = 7;
    cfg.hidden_dim = 9;
    cfg.output_dim = 4;
    ProjectionHead head(cfg);
    Rng rng(8);
    MatrixF x(3, 7), up(3, 4);
    for (float& v : std::span(x.data(), x.size())) v = static_cast<float>(rng.normal());
    for (float& v : std::span(up.data(), up.size())) v = static_cast<float>(rng.normal());
    ProjectionHead::Tape tape;
    head.forward(x, &tape);
    ParameterSet grads = head.parameters().zeros_like();
    const MatrixF gx = head.backward(tape, up, grads);
    auto f = [&](const MatrixF& in) {
      return static_cast<double>((head.forward(in).array() * up.array()).sum());
    };
    for (int trial = 0; trial < 5; ++trial) {
      const auto r = static_cast<Eigen::Index>(rng.index(3)), c = static_cast<Eigen::Index>(rng.index(7));
      MatrixF p = x, m = x;
      p(r, c) += 1e-2f;
      m(r, c) -= 1e-2f;
      CHECK((f(p) - f(m)) / 2e-2 == doctest::Approx(gx(r, c)).epsilon(2e-2));
    }
  }

  TEST_CASE("swapping the backbone changes only D_v") {
    EncoderConfig c = small_config();
    c.backbone["output_dim"] = 14;
    Encoder enc(c);
    CHECK(enc.inference_dim(false) == 14 + 12);
    std::vector<Image> imgs{noise_image(16, 1)};
    CHECK(enc.encode_inference(imgs, {}, true).cols() == 6);
  }

  TEST_CASE("external backbone runs the command and reads its features") {
    testutil::TempDir dir;
    // Writes 2 rows of 4 zero floats, then sets one byte so the rows differ.
    EncoderConfig c = small_config("none");
    c.backbone = {{"kind", "external"},
                  {"command", "head -c 32 /dev/zero > {output} && printf '\\200\\077' | "
                              "dd of={output} bs=1 seek=2 conv=notrunc 2>/dev/null"},
                  {"input_size", 8},
                  {"output_dim", 4}};
    Encoder enc(c);
    std::vector<Image> imgs{noise_image(8, 1), noise_image(8, 2)};
    const FeatureBatch f = enc.encode_features(imgs, {});
    CHECK(f.visual.rows() == 2);
    CHECK(f.visual(0, 0) == 1.0f);
    CHECK(f.visual(1, 0) == 0.0f);
    CHECK_FALSE(enc.backbone().trainable());

    c.backbone["command"] = "exit 3";
    Encoder bad(c);
    CHECK_THROWS_AS(bad.encode_features(imgs, {}), Error);
  }

  TEST_CASE("encoder config round-trips through json and hashes stably") {
    const EncoderConfig c = small_config();
    const EncoderConfig back = EncoderConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(Encoder(c).config_hash() == Encoder(back).config_hash());
    EncoderConfig other = small_config("none");
    CHECK(Encoder(c).config_hash() != Encoder(other).config_hash());
  }

  TEST_CASE("prepare resizes to the backbone input") {
    Encoder enc(small_config());
    const Image out = enc.prepare(noise_image(40, 3));
    CHECK(out.height() == 16);
    CHECK(out.width() == 16);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("save and load round trip") {
    testutil::TempDir dir;
    Encoder enc(small_config());
    Checkpoint ck;
    ck.encoder = enc.config();
    ck.config_hash = "abc";
    ck.step = 17;
    ck.seed = 99;
    ck.weights = collect_weights(enc);
    ck.momentum = ck.weights.zeros_like();
    ck.momentum.tensor(0).data[0] = 0.5f;
    ck.textual_weights_hash = hex64(enc.textual().weights_hash());
    save_checkpoint(ck, dir / "c.lckp");
    const Checkpoint back = load_checkpoint(dir / "c.lckp");
    CHECK(back.step == 17);
    CHECK(back.seed == 99);
    CHECK(back.config_hash == "abc");
    CHECK(back.weights == ck.weights);
    CHECK(back.momentum == ck.momentum);
    CHECK(back.encoder.to_json() == ck.encoder.to_json());
    auto rebuilt = encoder_from_checkpoint(back);
    std::vector<Image> imgs{noise_image(16, 3)};
    CHECK(rebuilt->encode_inference(imgs, {}) == enc.encode_inference(imgs, {}));
  }

  TEST_CASE("corrupt or truncated checkpoint throws") {
    testutil::TempDir dir;
    Encoder enc(small_config());
    Checkpoint ck;
    ck.encoder = enc.config();
    ck.weights = collect_weights(enc);
    ck.momentum = ck.weights.zeros_like();
    save_checkpoint(ck, dir / "c.lckp");
    std::string bytes = testutil::read_file(dir / "c.lckp");
    testutil::write_file(dir / "t.lckp", bytes.substr(0, bytes.size() - 10));
    CHECK_THROWS_AS(load_checkpoint(dir / "t.lckp"), Error);
    bytes[0] = 'X';
    testutil::write_file(dir / "m.lckp", bytes);
    CHECK_THROWS_AS(load_checkpoint(dir / "m.lckp"), Error);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.lckp"), Error);
  }

  TEST_CASE("assign_weights rejects a different layout") {
    Encoder a(small_config());
    EncoderConfig other = small_config();
    other.head.hidden_dim = 21;
    Encoder b(other);
    CHECK_THROWS_AS(assign_weights(a, collect_weights(b)), Error);
  }
}

TEST_SUITE("subprocess") {
  TEST_CASE("expand_command quotes values") {
    CHECK(expand_command("cat {a}", {{"a", "x y'z"}}) == "cat 'x y'\\''z'");
    const auto r = run_command(expand_command("printf %s {a}", {{"a", "it's"}}));
    CHECK(r.exit_code == 0);
    CHECK(r.output == "it's");
    CHECK(run_command("exit 4").exit_code == 4);
  }
}
