#include <doctest.h>

#include <fstream>
#include <sstream>

#include "looptrans/cli.hpp"
#include "looptrans/io.hpp"
#include "testing.hpp"

using namespace looptrans;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream o, e;
  Run r;
  r.code = cli::run(args, o, e);
  r.out = o.str();
  r.err = e.str();
  return r;
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t lines(const fs::path& p) {
  const auto s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

const char* kWorld = R"({"image_size": 32, "patch_size": 8, "n_exo": 2, "backbone": {"channels": 8}})";

}  // namespace

TEST_CASE("usage errors") {
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run({"train"}).code == cli::kExitUsage);
  CHECK(run({"train", "--config", "/nonexistent/c.json", "--out", "/tmp/x"}).code == cli::kExitUsage);
  CHECK(run({"--help"}).code == cli::kExitOk);
}

TEST_CASE("synth writes a consistent, reproducible dataset") {
  testing::TempDir dir("cli-synth");
  write(dir / "world.json", kWorld);
  const auto a = dir / "a", b = dir / "b", empty = dir / "empty";
  REQUIRE(run({"synth", "--spec", (dir / "world.json").string(), "--count", "10", "--out", a.string(), "--seed", "4"})
              .code == cli::kExitOk);
  CHECK(lines(a / "manifest.tsv") == 10);
  const auto m = io::read_manifest(a / "manifest.tsv", 4);
  REQUIRE(m.entries.size() == 10);
  CHECK(m.entries[0].exo_paths.size() == 2);
  const auto f = io::read_ltfm(m.entries[0].ego_path);
  CHECK(f.header.height == 4);
  CHECK(f.header.channels == 8);
  CHECK_FALSE(f.header.provenance.empty());
  CHECK(fs::exists(a / "world.json"));
  CHECK(fs::exists(a / "images"));

  REQUIRE(run({"synth", "--spec", (dir / "world.json").string(), "--count", "10", "--out", b.string(), "--seed", "4"})
              .code == cli::kExitOk);
  CHECK(slurp(a / "manifest.tsv") == slurp(b / "manifest.tsv"));
  CHECK(slurp(m.entries[3].exo_paths[1]) == slurp(b / fs::relative(m.entries[3].exo_paths[1], a)));

  CHECK(run({"synth", "--spec", (dir / "world.json").string(), "--count", "0", "--out", empty.string()}).code ==
        cli::kExitOk);
  CHECK(lines(empty / "manifest.tsv") == 0);

  write(dir / "bad.json", R"({"image_size": 32, "colour": 1})");
  CHECK(run({"synth", "--spec", (dir / "bad.json").string(), "--count", "1", "--out", (dir / "c").string()}).code ==
        cli::kExitUsage);
}

TEST_CASE("train, viz and eval end to end") {
  testing::TempDir dir("cli-train");
  write(dir / "config.json", R"({
    "backbone": {"image_size": 32, "patch_size": 8, "channels": 8},
    "n_exo": 2, "M": 3, "epochs": 5, "warmup_epochs": 1, "lr": 0.05, "batch_size": 4,
    "data": {"train_count": 8, "test_count": 4}
  })");
  const auto out = dir / "run";
  const auto r = run({"train", "--config", (dir / "config.json").string(), "--out", out.string(), "--seed", "2"});
  REQUIRE_MESSAGE(r.code == cli::kExitOk, r.err);
  CHECK(lines(out / "history.csv") == 6);
  CHECK(lines(out / "steps.csv") == 11);
  CHECK(fs::exists(out / "best.ltck"));
  CHECK(fs::exists(out / "last.ltck"));
  CHECK(slurp(out / "config.json").find("\"seed\": 2") != std::string::npos);

  write(dir / "unknown.json", R"({"epochs": 1, "learning_rate": 3})");
  CHECK(run({"train", "--config", (dir / "unknown.json").string(), "--out", (dir / "u").string()}).code ==
        cli::kExitUsage);
  write(dir / "mismatch.json", R"({"n_exo": 2, "data": {"world": {"n_exo": 3}}})");
  CHECK(run({"train", "--config", (dir / "mismatch.json").string(), "--out", (dir / "m").string()}).code ==
        cli::kExitUsage);

  // viz on a synthetic dataset with the same geometry.
  write(dir / "world.json", kWorld);
  const auto data = dir / "data";
  REQUIRE(run({"synth", "--spec", (dir / "world.json").string(), "--count", "3", "--out", data.string()}).code == 0);
  const auto viz = dir / "viz";
  const auto v = run({"viz", "--checkpoint", (out / "best.ltck").string(), "--manifest",
                      (data / "manifest.tsv").string(), "--out", viz.string()});
  REQUIRE_MESSAGE(v.code == cli::kExitOk, v.err);
  const auto id = io::read_manifest(data / "manifest.tsv").entries[0].sample_id;
  const auto heat = io::read_pgm(viz / "heatmaps" / (id + ".pgm"));
  CHECK(heat.height == 4);
  CHECK(heat.width == 4);
  const auto overlay = io::read_ppm(viz / (id + ".ppm"));
  CHECK(overlay.height == 32);
  CHECK(overlay.width == 32);

  // eval of the ground truth against itself.
  const auto e = run({"eval", "--pred", (data / "gt").string(), "--gt", (data / "gt").string(), "--report",
                      (dir / "report.csv").string(), "--manifest", (data / "manifest.tsv").string()});
  REQUIRE_MESSAGE(e.code == cli::kExitOk, e.err);
  const auto report = slurp(dir / "report.csv");
  const auto mean_at = report.find("\nmean,,,");
  REQUIRE(mean_at != std::string::npos);
  std::istringstream mean_line(report.substr(mean_at + 8));
  double kld = -1, sim = -1;
  char comma;
  mean_line >> kld >> comma >> sim;
  CHECK(kld == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(sim == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(report.find("class_mean") != std::string::npos);

  // A prediction without a ground-truth partner is a data mismatch.
  fs::create_directories(dir / "pred");
  for (const auto& p : fs::directory_iterator(data / "gt")) fs::copy(p.path(), dir / "pred" / p.path().filename());
  fs::copy(dir / "pred" / (id + ".pgm"), dir / "pred" / "stray.pgm");
  CHECK(run({"eval", "--pred", (dir / "pred").string(), "--gt", (data / "gt").string(), "--report",
             (dir / "r2.csv").string()})
            .code == cli::kExitDataMismatch);
  CHECK(slurp(dir / "r2.csv").find("# exclusions") != std::string::npos);
}
