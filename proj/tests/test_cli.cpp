#include <sstream>

#include "cbamnet/cli.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cbamnet;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "cbamnet");
  return cli_main(args);
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string l;
  while (std::getline(in, l)) out.push_back(l);
  return out;
}

// One small corpus for the whole suite.
const fs::path& corpus() {
  static testing::TempDir dir;
  static const bool made = [] {
    return run({"gen-synth", "--classes", "4", "--per-class", "12", "--size", "32", "--out",
                (dir / "c").string()}) == 0;
  }();
  REQUIRE(made);
  static const fs::path root = dir / "c";
  return root;
}

std::vector<std::string> quick(const std::string& out) {
  return {"--set", "data=" + corpus().string(), "--set", "input_size=32", "--set", "epochs=2",
          "--set", "batch_size=8", "--set", "lr=1e-3", "--out", out};
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config parsing") {
  RunConfig cfg;
  cfg.parse("# comment\n\nepochs = 3\nvariant=cbam  # trailing\n");
  CHECK(cfg.get_size("epochs") == 3);
  CHECK(cfg.get("variant") == "cbam");
  CHECK(cfg.get_size("batch_size") == 128);
  CHECK_THROWS_AS(cfg.parse("no_such_key=1\n"), ConfigError);
  CHECK_THROWS_AS(cfg.parse("epochs\n"), ConfigError);
  CHECK_THROWS_AS(cfg.set("epochs", "three"), ConfigError);
  CHECK_THROWS_AS(cfg.set("lr", "fast"), ConfigError);
  CHECK_THROWS_AS(cfg.set_assignment("augment"), ConfigError);
  cfg.set_assignment("augment=false");
  CHECK_FALSE(cfg.get_bool("augment"));

  RunConfig again;
  again.parse(cfg.resolved());
  CHECK(again.resolved() == cfg.resolved());
  const auto resolved = lines(cfg.resolved());
  CHECK(std::is_sorted(resolved.begin(), resolved.end()));
  CHECK(resolved.size() == RunConfig::keys().size());
}

TEST_CASE("configuration errors exit 2 and write nothing") {
  testing::TempDir dir;
  CHECK(run({"train", "--set", "bogus=1", "--out", (dir / "a").string()}) == 2);
  CHECK_FALSE(fs::exists(dir / "a"));
  CHECK(run({"train", "--no-such-flag", "--out", (dir / "b").string()}) == 2);
  CHECK_FALSE(fs::exists(dir / "b"));
  CHECK(run({"train", "--set", "data=" + (dir / "missing").string(), "--out", (dir / "c").string()}) == 2);
  CHECK_FALSE(fs::exists(dir / "c"));
  testing::spit(dir / "bad.cfg", "epochs=2\nlearning_rate=1\n");
  CHECK(run({"train", "--config", (dir / "bad.cfg").string(), "--out", (dir / "d").string()}) == 2);
  CHECK_FALSE(fs::exists(dir / "d"));
  CHECK(run({"train", "--set", "variant=transformer", "--set", "data=" + corpus().string(), "--out",
             (dir / "e").string()}) == 2);
  CHECK_FALSE(fs::exists(dir / "e"));
  CHECK(run({"frobnicate"}) == 2);
  CHECK(run({}) == 2);
}

TEST_CASE("train writes a complete run directory") {
  testing::TempDir dir;
  const fs::path out = dir / "run";
  REQUIRE(run(cat({"train", "--set", "variant=cbam"}, quick(out.string()))) == 0);
  for (const char* f : {"config.resolved", "epochs.tsv", "metadata.txt", "model.txt", "report.txt",
                        "confusion.csv", "metrics.json", "split.tsv", "checkpoints/epoch_001.cbck",
                        "checkpoints/epoch_002.cbck", "checkpoints/best.txt"}) {
    CHECK_MESSAGE(fs::exists(out / f), f);
  }
  const auto log = lines(testing::slurp(out / "epochs.tsv"));
  REQUIRE(log.size() == 3);
  CHECK(log[0].rfind("#", 0) == 0);
  RunConfig echoed;
  echoed.load(out / "config.resolved");
  CHECK(echoed.get("variant") == "cbam");
  CHECK(echoed.get_size("epochs") == 2);
  const auto report = MetricsReport::from_json(testing::slurp(out / "metrics.json"));
  std::size_t test_rows = 0;
  for (const auto& l : lines(testing::slurp(out / "split.tsv"))) test_rows += l.find("\ttest") != std::string::npos;
  CHECK(report.total == test_rows);

  // A non-empty run directory is refused without --force and left alone.
  const std::string before = testing::slurp(out / "epochs.tsv");
  CHECK(run(cat({"train"}, quick(out.string()))) == 2);
  CHECK(testing::slurp(out / "epochs.tsv") == before);
  CHECK(fs::exists(out / "checkpoints" / "epoch_002.cbck"));
  testing::spit(out / "stray.txt", "x");
  CHECK(run(cat({"train", "--force", "--set", "epochs=1"}, quick(out.string()))) == 0);
  CHECK_FALSE(fs::exists(out / "stray.txt"));

  // eval reuses the run's configuration.
  const fs::path ev = dir / "eval";
  CHECK(run({"eval", "--checkpoint", (out / "checkpoints" / "epoch_001.cbck").string(), "--out", ev.string()}) == 0);
  CHECK(fs::exists(ev / "report.txt"));
  CHECK(fs::exists(ev / "metrics.json"));

  // heatmap on one image and on a directory.
  const fs::path img = *fs::directory_iterator(corpus() / "cargo");
  const fs::path ckpt = out / "checkpoints" / "epoch_001.cbck";
  REQUIRE(run({"heatmap", "--checkpoint", ckpt.string(), "--image", img.string(), "--out",
               (dir / "h.ppm").string()}) == 0);
  const Image h = read_ppm(dir / "h.ppm");
  CHECK(h.height == 32);
  CHECK(run({"heatmap", "--checkpoint", ckpt.string(), "--image", img.string(), "--method", "gradcam",
             "--out", (dir / "g.ppm").string()}) == 0);
  CHECK(run({"heatmap", "--checkpoint", ckpt.string(), "--images", (corpus() / "cargo").string(), "--out",
             (dir / "batch").string()}) == 0);
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir / "batch")) n += e.path().extension() == ".ppm";
  CHECK(n == 12);
  CHECK(run({"heatmap", "--checkpoint", ckpt.string(), "--image", img.string(), "--method", "lime",
             "--out", (dir / "x.ppm").string()}) == 2);
}

TEST_CASE("compare writes one row per variant") {
  testing::TempDir dir;
  const fs::path out = dir / "cmp";
  REQUIRE(run(cat({"compare", "--set", "epochs=1"}, quick(out.string()))) == 0);
  const auto rows = lines(testing::slurp(out / "compare.tsv"));
  REQUIRE(rows.size() == 4);
  CHECK(rows[1].rfind("baseline", 0) == 0);
  CHECK(rows[2].rfind("cbam", 0) == 0);
  CHECK(rows[3].rfind("enhanced", 0) == 0);
  for (const char* v : {"baseline", "cbam", "enhanced"}) CHECK(fs::exists(out / v / "report.txt"));
  // Every variant trains and tests on the same split.
  CHECK(testing::slurp(out / "baseline" / "split.tsv") == testing::slurp(out / "enhanced" / "split.tsv"));
}

TEST_CASE("gradcheck command") {
  CHECK(run({"gradcheck"}) == 0);
}

}  // TEST_SUITE
