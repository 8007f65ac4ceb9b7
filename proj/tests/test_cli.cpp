#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "stsmixer/cli/cli.hpp"
#include "stsmixer/data/synthetic.hpp"

using namespace stsmixer;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "stsmixer");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("stsmixer_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  return files;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

// Small architecture so CLI training finishes in seconds.
const std::vector<std::string> kTinyModel{"--channels", "16", "--heads", "2", "--anchors", "16", "--k",
                                          "4",          "--fl", "2",         "--fh", "5",        "--blocks", "1"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

fs::path sphere_file(const fs::path& dir) {
  const fs::path p = dir / "sphere.pcv";
  write_pcv(p, sphere_clip(3, 64, 1));
  return p;
}

}  // namespace

TEST_CASE("binary: --help exits 0 and a missing subcommand exits 2") {
  const int help = std::system((std::string(STSMIXER_CLI_PATH) + " --help > /dev/null 2>&1").c_str());
  REQUIRE(WIFEXITED(help));
  CHECK(WEXITSTATUS(help) == 0);
  const int none = std::system((std::string(STSMIXER_CLI_PATH) + " > /dev/null 2>&1").c_str());
  REQUIRE(WIFEXITED(none));
  CHECK(WEXITSTATUS(none) == 2);
  CHECK(run({"train", "--help"}).code == 0);
  CHECK(run({"frobnicate"}).code == 2);
}

TEST_CASE("gen: clip count, determinism, bad flags") {
  const auto dir = scratch("gen");
  const auto a = run({"gen", "--out", (dir / "a").string(), "--clips", "3", "--T", "4", "--N", "32", "--seed", "9"});
  REQUIRE(a.code == 0);
  CHECK(a.out.find("wrote 12 clips") != std::string::npos);
  const Dataset ds = load_dataset(dir / "a");
  CHECK(ds.clips.size() == 12);
  for (const auto& c : ds.clips) {
    CHECK(c.video.frames == 4);
    CHECK(c.video.points == 32);
  }
  REQUIRE(run({"gen", "--out", (dir / "b").string(), "--clips", "3", "--T", "4", "--N", "32", "--seed", "9"}).code == 0);
  CHECK(tree(dir / "a") == tree(dir / "b"));

  const auto seg = run({"gen", "--task", "segmentation", "--out", (dir / "s").string(), "--clips", "5", "--T", "3",
                        "--N", "64"});
  REQUIRE(seg.code == 0);
  const Dataset sds = load_dataset(dir / "s");
  CHECK(sds.clips.size() == 5);
  CHECK(sds.task() == Task::segmentation);
  for (const auto& c : sds.clips) CHECK(c.video.point_labels->size() == 3u * 64u);

  CHECK(run({"gen", "--out", (dir / "c").string(), "--N", "0"}).code == 2);
  CHECK(run({"gen", "--out", (dir / "c").string(), "--task", "regression"}).code == 2);
  CHECK(run({"gen"}).code == 2);
}

TEST_CASE("spectrum: CSV contract and sphere regression") {
  const auto dir = scratch("spectrum");
  const auto pcv = sphere_file(dir);
  const auto r = run({"spectrum", "--in", pcv.string()});
  REQUIRE(r.code == 0);
  const auto rows = csv_rows(r.out);
  REQUIRE(rows.size() == 65);
  CHECK(rows[0] == std::vector<std::string>{"index", "eigenvalue", "energy", "cumulative_fraction"});
  double prev = -1.0, cum_prev = 0.0, energy_sum = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(std::stoul(rows[i][0]) == i - 1);
    const double ev = std::stod(rows[i][1]), cum = std::stod(rows[i][3]);
    CHECK(ev >= prev - 1e-9);
    CHECK(cum >= cum_prev - 1e-12);
    prev = ev;
    cum_prev = cum;
    energy_sum += std::stod(rows[i][2]);
  }
  CHECK(std::abs(std::stod(rows[1][1])) <= 1e-9);
  CHECK(std::stod(rows[64][3]) == Catch::Approx(1.0).margin(1e-9));

  // Parseval: total energy equals the squared norm of the stored frame.
  const Matrix frame = read_pcv(pcv).frame(0);
  CHECK(energy_sum == Catch::Approx(frobenius_norm(frame) * frobenius_norm(frame)).epsilon(1e-6));
  // Frozen from a verified run on sphere_sample(64, 1) stored as float32.
  CHECK(std::stod(rows[7][3]) == Catch::Approx(0.970888834386).margin(1e-6));

  // Written to a file: identical bytes.
  REQUIRE(run({"spectrum", "--in", pcv.string(), "--out", (dir / "s.csv").string()}).code == 0);
  CHECK(slurp(dir / "s.csv") == r.out);

  CHECK(run({"spectrum", "--in", pcv.string(), "--frame", "3"}).code == 2);
  CHECK(run({"spectrum", "--in", pcv.string(), "--k", "64"}).code == 2);
  CHECK(run({"spectrum", "--in", (dir / "missing.pcv").string()}).code == 4);
}

TEST_CASE("spectrum: constant cloud puts all energy at index 0") {
  const auto dir = scratch("constant");
  PointCloudVideo v(1, 20);
  Matrix pts(20, 3);
  Rng rng(3);
  for (std::size_t i = 0; i < 20; ++i) pts(i, 0) = 0.5, pts(i, 1) = -0.25, pts(i, 2) = 1e-3 * rng.uniform(-1.0, 1.0);
  // nearly coincident points, exactly constant signal up to a tiny z jitter
  v.set_frame(0, pts);
  write_pcv(dir / "c.pcv", v);
  const auto r = run({"spectrum", "--in", (dir / "c.pcv").string(), "--k", "4"});
  REQUIRE(r.code == 0);
  const auto rows = csv_rows(r.out);
  CHECK(std::stod(rows[1][3]) >= 0.999999);
}

TEST_CASE("band-filter: identity, zero, monotone error") {
  const auto dir = scratch("bandfilter");
  const auto pcv = sphere_file(dir);
  const PointCloudVideo input = read_pcv(pcv);
  auto filter = [&](const std::string& drop, const std::string& name) {
    const auto r = run({"band-filter", "--in", pcv.string(), "--out", (dir / name).string(), "--drop", drop});
    REQUIRE(r.code == 0);
    const auto rows = csv_rows(r.out);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0] == std::vector<std::string>{"frame", "rmse"});
    std::vector<double> e;
    for (std::size_t i = 1; i < rows.size(); ++i) e.push_back(std::stod(rows[i][1]));
    return e;
  };
  const auto none = filter("", "none.pcv");
  for (double e : none) CHECK(e <= 1e-9);
  const PointCloudVideo same = read_pcv(dir / "none.pcv");
  for (std::uint32_t t = 0; t < 3; ++t) CHECK(max_abs_diff(same.frame(t), input.frame(t)) <= 1e-6);

  const auto all = filter("low,mid,high", "all.pcv");
  const PointCloudVideo zero = read_pcv(dir / "all.pcv");
  for (std::uint32_t t = 0; t < 3; ++t) {
    CHECK(max_abs(zero.frame(t)) == 0.0);
    // rmse of the all-zero reconstruction is the RMS of the frame itself
    CHECK(all[t] == Catch::Approx(frobenius_norm(input.frame(t)) / std::sqrt(64.0 * 3.0)).epsilon(1e-9));
  }

  const auto high = filter("high", "h.pcv");
  const auto mid_high = filter("mid,high", "mh.pcv");
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(high[t] > 0.0);
    CHECK(high[t] < mid_high[t]);
    CHECK(mid_high[t] < all[t]);
  }

  CHECK(run({"band-filter", "--in", pcv.string(), "--out", (dir / "x.pcv").string(), "--drop", "ultra"}).code == 2);
  CHECK(run({"band-filter", "--in", pcv.string(), "--out", (dir / "x.pcv").string(), "--fl", "9", "--fh", "4"})
            .code == 2);
  const auto threaded = run({"band-filter", "--in", pcv.string(), "--out", (dir / "t.pcv").string(), "--drop",
                             "high", "--threads", "3"});
  CHECK(threaded.code == 0);
  CHECK(slurp(dir / "t.pcv") == slurp(dir / "h.pcv"));
}

TEST_CASE("train and eval: metrics rows, checkpoint, mismatch") {
  const auto dir = scratch("train");
  REQUIRE(run({"gen", "--out", (dir / "cls").string(), "--clips", "2", "--T", "4", "--N", "64"}).code == 0);
  REQUIRE(run({"gen", "--task", "segmentation", "--out", (dir / "seg").string(), "--clips", "4", "--T", "4", "--N",
               "64"})
              .code == 0);
  const auto ckpt = (dir / "m.ckpt").string(), metrics = (dir / "m.csv").string();
  const auto t = run(with({"train", "--data", (dir / "cls").string(), "--epochs", "3", "--ckpt", ckpt, "--metrics",
                           metrics, "--decay-epochs", "2"},
                          kTinyModel));
  REQUIRE(t.code == 0);
  CHECK(t.out.find("steps=3\n") != std::string::npos);  // 4 train clips, batch 4
  CHECK(t.out.find("best_metric=") != std::string::npos);
  const auto rows = csv_rows(slurp(metrics));
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == std::vector<std::string>{"epoch", "lr", "train_loss", "val_metric"});
  CHECK(rows[3][1] == "0.001");
  REQUIRE(fs::exists(ckpt));

  const auto e = run({"eval", "--data", (dir / "cls").string(), "--ckpt", ckpt, "--metrics",
                      (dir / "e.csv").string()});
  REQUIRE(e.code == 0);
  CHECK(e.out.starts_with("metric="));
  CHECK(csv_rows(slurp(dir / "e.csv")).size() == 4);

  CHECK(run({"eval", "--data", (dir / "seg").string(), "--ckpt", ckpt}).code == 3);
  std::ofstream(dir / "other.json") << R"({"model": {"channels": 32}})";
  CHECK(run({"eval", "--data", (dir / "cls").string(), "--ckpt", ckpt, "--config", (dir / "other.json").string()})
            .code == 3);
  std::ofstream(dir / "bad.json") << R"({"learning_rate": 1})";
  CHECK(run({"train", "--data", (dir / "cls").string(), "--config", (dir / "bad.json").string()}).code == 2);
  CHECK(run({"train", "--data", (dir / "cls").string(), "--channels", "15", "--heads", "4"}).code == 2);
  std::ofstream(dir / "junk.ckpt") << "nonsense";
  CHECK(run({"eval", "--data", (dir / "cls").string(), "--ckpt", (dir / "junk.ckpt").string()}).code == 3);
}

TEST_CASE("ablate: axes and row counts") {
  const auto dir = scratch("ablate");
  REQUIRE(run({"gen", "--out", (dir / "d").string(), "--clips", "1", "--T", "4", "--N", "64"}).code == 0);
  const std::vector<std::string> base{"ablate", "--data", (dir / "d").string(), "--epochs", "1"};
  CHECK(run(with(with(base, kTinyModel), {"--axis", "colour"})).code == 2);
  for (const std::string axis : {"bands", "thresholds"}) {
    const auto r = run(with(with(base, kTinyModel), {"--axis", axis, "--out", (dir / (axis + ".csv")).string()}));
    REQUIRE(r.code == 0);
    const auto rows = csv_rows(slurp(dir / (axis + ".csv")));
    REQUIRE(rows.size() == 8);
    CHECK(rows[0] == std::vector<std::string>{"setting", "metric"});
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const double m = std::stod(rows[i][1]);
      CHECK(m >= 0.0);
      CHECK(m <= 1.0);
    }
  }
  RunConfig cfg;
  CHECK(cli::ablation_settings("depth", cfg).size() == 7);
  CHECK(cli::ablation_settings("k", cfg).size() == 6);
  CHECK(cli::ablation_settings("bands", cfg).back().name == "full");
}

TEST_CASE("grad-check: passes, lists every op once, catches a corrupted op") {
  const auto r = run({"grad-check", "--seed", "0", "--scale", "toy"});
  CHECK(r.code == 0);
  const auto rows = csv_rows(r.out);
  REQUIRE(rows.size() == grad_check_ops().size() + 1);
  CHECK(rows[0] == std::vector<std::string>{"op", "worst_rel_error", "tolerance", "status"});
  for (std::size_t i = 0; i < grad_check_ops().size(); ++i) {
    CHECK(rows[i + 1][0] == grad_check_ops()[i]);
    CHECK(rows[i + 1][3] == "pass");
  }
  const auto bad = run({"grad-check", "--corrupt", "layer_norm"});
  CHECK(bad.code == 1);
  CHECK(bad.out.find("layer_norm,") != std::string::npos);
  CHECK(bad.out.find(",FAIL") != std::string::npos);
  CHECK(run({"grad-check", "--scale", "huge"}).code == 2);
}
