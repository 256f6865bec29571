#include "logoid/checkpoint.hpp"
#include "logoid/gallery.hpp"
#include "logoid/subprocess.hpp"
#include "logoid/train.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <sstream>

using namespace logoid;

#ifndef LOGOID_CLI_PATH
#error "LOGOID_CLI_PATH must point at the built CLI"
#endif

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(const std::string& args, const testutil::TempDir& dir) {
  const std::string err_file = (dir / "stderr.txt").string();
  const CommandResult r = run_command(shell_quote(LOGOID_CLI_PATH) + " " + args + " 2>" + shell_quote(err_file));
  return {r.exit_code, r.output, testutil::read_file(err_file)};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) out.push_back(l);
  return out;
}

const char* kSmallModel =
    "--set encoder.input_size=16 --set 'encoder.channels=[4, 4, 4]' --set encoder.visual_dim=8 "
    "--set encoder.text_dim=8 --set encoder.text_buckets=32 --set encoder.head_hidden=16 "
    "--set encoder.head_output=8 --set train.steps=2 --set train.batch_size=8 "
    "--set train.brands_per_batch=4 --set train.samples_per_brand=2 -q";

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help and version exit 0") {
    testutil::TempDir dir;
    const Run h = cli("--help", dir);
    CHECK(h.code == 0);
    CHECK(h.out.find("identify") != std::string::npos);
    const Run v = cli("version --json", dir);
    CHECK(v.code == 0);
    CHECK(v.out.find("\"version\"") != std::string::npos);
  }

  TEST_CASE("unknown subcommand prints usage and exits 1") {
    testutil::TempDir dir;
    const Run r = cli("bogus", dir);
    CHECK(r.code == 1);
    CHECK(r.err.find("Subcommands") != std::string::npos);
    CHECK(cli("", dir).code == 1);
  }

  TEST_CASE("a missing required flag is named") {
    testutil::TempDir dir;
    const Run r = cli("synth", dir);
    CHECK(r.code == 1);
    CHECK(r.err.find("--out") != std::string::npos);
    const Run t = cli("train", dir);
    CHECK(t.code == 1);
    CHECK(t.err.find("--train") != std::string::npos);
  }

  TEST_CASE("bad config keys exit 1 and runtime failures exit 2") {
    testutil::TempDir dir;
    CHECK(cli("--set train.nope=1 train --train x.jsonl", dir).code == 1);
    testutil::write_file(dir / "bad.lckp", "garbage");
    const Run r = cli("gallery build --checkpoint " + (dir / "bad.lckp").string() + " --references x --out " +
                          (dir / "g.lgal").string(),
                      dir);
    CHECK(r.code == 2);
  }

  TEST_CASE("synth, train, gallery, identify and eval end to end") {
    testutil::TempDir dir;
    const std::string d = dir.path().string();
    REQUIRE(cli("synth --out " + d + "/data --brands 8 --train-brands 4 --samples 2 --size 24 --seed 1 -q", dir).code == 0);
    const Run train = cli(std::string(kSmallModel) + " train --train " + d + "/data/train.jsonl --out " + d + "/ck", dir);
    REQUIRE_MESSAGE(train.code == 0, train.err);
    CHECK(std::filesystem::exists(dir / "ck/resolved_config.toml"));
    CHECK(std::filesystem::exists(dir / "ck/config_hash.txt"));
    const auto ckpt = latest_checkpoint(dir / "ck");
    REQUIRE(ckpt);
    CHECK(load_checkpoint(*ckpt).step == 2);

    const Run build = cli(std::string(kSmallModel) + " gallery build --checkpoint " + ckpt->string() +
                              " --references " + d + "/data/all_references.jsonl --out " + d + "/g/gallery.lgal",
                          dir);
    REQUIRE_MESSAGE(build.code == 0, build.err);
    CHECK(std::filesystem::exists(dir / "g/resolved_config.toml"));

    const auto queries = load_manifest(dir / "data/queries.jsonl");
    const LogoRecord& q = queries.records.front();
    const std::string args = " identify --image " + q.image_path.string() + " --gallery " + d +
                             "/g/gallery.lgal --checkpoint " + ckpt->string() + " --text " +
                             shell_quote(*q.ocr_text);
    const Run id = cli(std::string(kSmallModel) + args, dir);
    REQUIRE_MESSAGE(id.code == 0, id.err);
    const auto rows = lines(id.out);
    REQUIRE(rows.size() == 5);
    double prev = 2.0;
    const Gallery g = load_gallery(dir / "g/gallery.lgal");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::istringstream in(rows[i]);
      std::string rank_s, brand, score_s;
      std::getline(in, rank_s, '\t');
      std::getline(in, brand, '\t');
      std::getline(in, score_s, '\t');
      CHECK(rank_s == std::to_string(i + 1));
      CHECK(g.contains(BrandId(brand)));
      CHECK(score_s.size() - score_s.find('.') == 7);
      const double s = std::stod(score_s);
      CHECK(s <= prev);
      prev = s;
    }
    const Run streamed = cli(std::string(kSmallModel) + args + " --stream", dir);
    CHECK(streamed.out == id.out);

    const Run ev = cli(std::string(kSmallModel) + " eval ident --checkpoint " + ckpt->string() + " --queries " + d +
                           "/data/queries.jsonl --gallery " + d + "/g/gallery.lgal --out " + d + "/rep --json",
                       dir);
    REQUIRE_MESSAGE(ev.code == 0, ev.err);
    CHECK(std::filesystem::exists(dir / "rep/report.json"));
    CHECK(std::filesystem::exists(dir / "rep/resolved_config.toml"));
    CHECK(testutil::read_file(dir / "rep/report.json").find("config_hash") != std::string::npos);

    // A gallery built with another encoder is refused.
    const Run mismatch = cli(std::string(kSmallModel) + " --set encoder.use_projection=true" + args, dir);
    CHECK(mismatch.code == 2);
  }
}
