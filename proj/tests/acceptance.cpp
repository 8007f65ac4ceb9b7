// Acceptance runner: one PASS/FAIL line per criterion, always exits 0.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "stsmixer/cli/cli.hpp"
#include "stsmixer/data/synthetic.hpp"
#include "stsmixer/train/grad_check.hpp"

using namespace stsmixer;
namespace fs = std::filesystem;
using M = nn::Mat<double>;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

// ctest hides output of passing tests, so lines are also kept in a file.
std::ofstream report_file("acceptance_report.txt", std::ios::trunc);

void report(int id, const std::string& title, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char head[160];
  std::snprintf(head, sizeof head, "%s criterion %d (%s) %.1fs", o.pass ? "PASS" : "FAIL", id, title.c_str(), secs);
  const std::string line = head + (o.detail.empty() ? "" : ": " + o.detail);
  std::cout << line << std::endl;
  report_file << line << std::endl;
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "stsmixer");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Value of `key=` in `key=value` lines.
double field(const std::string& text, const std::string& key) {
  const auto pos = text.find(key + "=");
  if (pos == std::string::npos) throw std::runtime_error("missing " + key + " in output");
  return std::stod(text.substr(pos + key.size() + 1));
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

Matrix random_frame(std::size_t n, Rng& rng) {
  Matrix m(n, 3);
  for (double& v : m.data()) v = rng.uniform(-1.0, 1.0);
  return m;
}

bool connected(const Matrix& adjacency) {
  const std::size_t n = adjacency.rows();
  std::vector<bool> seen(n, false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  std::size_t count = 1;
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    for (std::size_t j = 0; j < n; ++j)
      if (adjacency(i, j) > 0.0 && !seen[j]) seen[j] = true, ++count, stack.push_back(j);
  }
  return count == n;
}

Outcome spectral_exactness() {
  Outcome o;
  Rng rng(2024);
  double worst_round = 0, worst_parseval = 0, worst_bands = 0, worst_lambda = 0, worst_const = 0;
  std::size_t connected_frames = 0;
  for (int f = 0; f < 100; ++f) {
    const std::size_t n = f % 2 == 0 ? 16 : 64;
    const Matrix x = random_frame(n, rng);
    const GraphMatrices g = knn_graph(PointSet(x), 10);
    const GraphSpectrum s = GraphSpectrum::of(g);
    worst_round = std::max(worst_round, max_abs_diff(igft(s, gft(s, x)), x));
    worst_parseval = std::max(worst_parseval, std::abs(frobenius_norm(gft(s, x)) / frobenius_norm(x) - 1.0));
    const auto parts = band_decompose(s, x, {std::min<std::size_t>(6, n), std::min<std::size_t>(10, n), n});
    worst_bands = std::max(worst_bands, max_abs_diff(parts.low + parts.mid + parts.high, x));
    if (connected(g.adjacency)) {
      ++connected_frames;
      worst_lambda = std::max(worst_lambda, std::abs(s.frequencies()[0]));
      const double c = 1.0 / std::sqrt(static_cast<double>(n));
      for (std::size_t i = 0; i < n; ++i) worst_const = std::max(worst_const, std::abs(std::abs(s.basis()(i, 0)) - c));
    }
  }
  o.require(worst_round <= 1e-9, "round trip " + fmt(worst_round));
  o.require(worst_parseval <= 1e-9, "parseval " + fmt(worst_parseval));
  o.require(worst_bands <= 1e-6, "band sum " + fmt(worst_bands));
  o.require(worst_lambda <= 1e-9, "lambda0 " + fmt(worst_lambda));
  o.require(worst_const <= 1e-9, "constant eigenvector " + fmt(worst_const));
  o.require(connected_frames > 0, "no connected frames");
  if (o.pass)
    o.detail = "round trip " + fmt(worst_round) + ", parseval " + fmt(worst_parseval) + ", band sum " +
               fmt(worst_bands) + ", " + std::to_string(connected_frames) + " connected";
  return o;
}

Outcome band_rejection() {
  Outcome o;
  const PointCloudVideo clip = sphere_clip(4, 64, 1);
  const BandSpec bands{6, 10, 64};
  const std::vector<std::set<Band>> drops{
      {}, {Band::high}, {Band::mid, Band::high}, {Band::low, Band::mid, Band::high}};
  std::string trace;
  for (std::uint32_t t = 0; t < clip.frames; ++t) {
    const Matrix x = clip.frame(t);
    const auto s = GraphSpectrum::of(knn_graph(PointSet(x), 10));
    std::vector<double> err;
    for (const auto& d : drops) err.push_back(rmse(band_reject(s, x, d, bands), x));
    for (std::size_t i = 1; i < err.size(); ++i)
      o.require(err[i] > err[i - 1], "frame " + std::to_string(t) + " rmse not increasing at step " + std::to_string(i));
    const auto e = energy_spectrum(s, x);
    const double low = energy_fraction(e, 0, 6), high = energy_fraction(e, 10, 64);
    o.require(low > high, "frame " + std::to_string(t) + " low " + fmt(low) + " <= high " + fmt(high));
    if (t == 0) trace = "rmse " + fmt(err[0]) + " < " + fmt(err[1]) + " < " + fmt(err[2]) + " < " + fmt(err[3]) +
                        ", low " + fmt(low) + " > high " + fmt(high);
  }
  if (o.pass) o.detail = trace;
  return o;
}

Outcome gradients() {
  Outcome o;
  double worst = 0.0;
  for (const auto& row : run_grad_checks()) {
    o.require(row.pass(), row.op + " " + fmt(row.worst) + " > " + fmt(row.tolerance));
    worst = std::max(worst, row.worst / row.tolerance);
  }
  if (o.pass) o.detail = std::to_string(grad_check_ops().size()) + " checks, worst error/tolerance " + fmt(worst);
  return o;
}

M random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  M m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

Outcome structural() {
  Outcome o;
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(1000 + trial);
    ModelConfig cfg = gradcheck::toy_model_config(Task::classification);
    const auto tokens = static_cast<Eigen::Index>(4 + rng.below(12));
    const auto c = static_cast<Eigen::Index>(cfg.channels);
    BandTokens<double> x;
    for (auto& b : x) b = nn::Tensor3<double>(1, static_cast<std::size_t>(tokens), random_mat(tokens, c, rng));
    const std::size_t hit = rng.below(3);

    nn::Parameters<double> fa_params;
    auto fa = FaAttention<double>::create(fa_params, "fa", cfg, rng);
    FaAttentionCache<double> fa_cache;
    const auto y = fa.forward(x, fa_cache);
    auto xp = x;
    xp[hit].mat() += random_mat(tokens, c, rng);
    const auto yp = fa.forward(xp, fa_cache);
    for (std::size_t b = 0; b < 3; ++b) {
      if (b == hit) {
        o.require(yp[b].mat() != y[b].mat(), "case " + std::to_string(trial) + ": perturbed band unchanged");
      } else {
        o.require(yp[b].mat() == y[b].mat(), "case " + std::to_string(trial) + ": FA leaked into band " + std::to_string(b));
      }
    }

    nn::Parameters<double> fm_params;
    auto fm = FmMlp<double>::create(fm_params, "fm", cfg, rng);
    FmMlpCache<double> fm_cache;
    const auto z = fm.forward(x, fm_cache);
    const auto zp = fm.forward(xp, fm_cache);
    for (std::size_t b = 0; b < 3; ++b)
      if (b != hit)
        o.require((zp[b].mat() - z[b].mat()).norm() > 0.0,
                  "case " + std::to_string(trial) + ": FM did not reach band " + std::to_string(b));
  }
  if (o.pass) o.detail = "50 cases";
  return o;
}

std::size_t expected_parameter_count(std::size_t L, std::size_t C, std::size_t r, std::size_t outputs) {
  auto lin = [](std::size_t i, std::size_t o) { return i * o + o; };
  const std::size_t encoder = lin(4, C) + lin(C, C) + 2 * C;
  const std::size_t embed = 3 * lin(4, C);
  const std::size_t fa = 3 * (2 * C + 4 * lin(C, C));
  const std::size_t fm = 2 * 3 * C + lin(3 * C, r * 3 * C) + lin(r * 3 * C, 3 * C);
  const std::size_t head = 2 * 3 * C + lin(3 * C, C) + lin(C, outputs);
  return encoder + embed + L * (fa + fm) + head;
}

Outcome bookkeeping() {
  Outcome o;
  RunConfig cfg;
  const std::map<std::size_t, double> expected{{0, 0.01}, {25, 0.001}, {35, 0.0001}};
  for (const auto& [epoch, lr] : expected)
    o.require(std::abs(lr_at(epoch, cfg) - lr) <= 1e-15, "lr_at(" + std::to_string(epoch) + ") = " + fmt(lr_at(epoch, cfg)));
  std::string counts;
  for (const auto& [L, C] : std::vector<std::pair<std::size_t, std::size_t>>{{2, 64}, {3, 128}, {4, 128}}) {
    ModelConfig m;
    m.blocks = L;
    m.channels = C;
    const std::size_t actual = StsMixer<double>(m, 0).params().total_count();
    const std::size_t want = expected_parameter_count(L, C, m.mlp_ratio, m.num_outputs);
    o.require(actual == want, "(" + std::to_string(L) + "," + std::to_string(C) + ") " + std::to_string(actual) +
                                  " != " + std::to_string(want));
    counts += (counts.empty() ? "" : ", ") + std::to_string(actual);
  }
  if (o.pass) o.detail = "parameter counts " + counts;
  return o;
}

// Desk-scale recipe shared by the learning criteria.
const char* kDeskConfig = R"({"epochs": 30, "decay_epochs": [12, 18], "batch_size": 4, "lr0": 0.01,
  "momentum": 0.9, "seed": 3,
  "model": {"blocks": 3, "channels": 64, "heads": 4, "k": 10, "f_l": 6, "f_h": 10, "anchors": 32,
            "temporal_stride": 2}})";

struct DeskRun {
  double final_metric = 0.0;
  double seconds = 0.0;
};

DeskRun desk_train(const fs::path& data, const fs::path& config, const fs::path& ckpt, const fs::path& csv) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run({"train", "--data", data.string(), "--config", config.string(), "--ckpt", ckpt.string(),
                      "--metrics", csv.string()});
  if (r.code != 0) throw std::runtime_error("train exited " + std::to_string(r.code) + ": " + r.err);
  return {field(r.out, "final_metric"),
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "stsmixer_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  const fs::path config = work / "desk.json";
  std::ofstream(config) << kDeskConfig;

  report(1, "spectral exactness", spectral_exactness);
  report(2, "band rejection monotonicity", band_rejection);
  report(3, "gradient suite", gradients);
  report(4, "band isolation and cross-band flow", structural);

  const fs::path cls = work / "cls";
  DeskRun first;
  report(5, "desk-scale classification and band ablation", [&] {
    Outcome o;
    if (run({"gen", "--out", cls.string(), "--clips", "32", "--T", "8", "--N", "128", "--seed", "11"}).code != 0)
      throw std::runtime_error("gen failed");
    first = desk_train(cls, config, work / "a.ckpt", work / "a.csv");
    o.require(first.final_metric >= 0.90, "test accuracy " + fmt(first.final_metric) + " < 0.90");
    o.require(first.seconds < 900.0, "train took " + fmt(first.seconds) + "s");

    const auto t0 = std::chrono::steady_clock::now();
    const auto ab = run({"ablate", "--data", cls.string(), "--config", config.string(), "--axis", "bands", "--out",
                         (work / "bands.csv").string()});
    const double ablate_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (ab.code != 0) throw std::runtime_error("ablate exited " + std::to_string(ab.code) + ": " + ab.err);
    std::map<std::string, double> rows;
    std::istringstream in(slurp(work / "bands.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) rows[line.substr(0, line.find(','))] = std::stod(line.substr(line.find(',') + 1));
    std::string bands;
    for (const char* single : {"low_only", "mid_only", "high_only"}) {
      o.require(rows.at("full") >= rows.at(single), std::string("full ") + fmt(rows.at("full")) + " < " + single +
                                                         " " + fmt(rows.at(single)));
      bands += std::string(", ") + single + " " + fmt(rows.at(single));
    }
    o.require(ablate_secs < 900.0, "ablate took " + fmt(ablate_secs) + "s");
    if (o.pass)
      o.detail = "accuracy " + fmt(first.final_metric) + " in " + fmt(first.seconds) + "s; ablate " +
                 fmt(ablate_secs) + "s, full " + fmt(rows.at("full")) + bands;
    return o;
  });

  report(6, "desk-scale segmentation", [&] {
    Outcome o;
    const fs::path seg = work / "seg";
    if (run({"gen", "--task", "segmentation", "--out", seg.string(), "--clips", "128", "--T", "8", "--N", "128",
             "--seed", "12"})
            .code != 0)
      throw std::runtime_error("gen failed");
    const DeskRun r = desk_train(seg, config, work / "seg.ckpt", work / "seg.csv");
    o.require(r.final_metric >= 0.80, "test mIoU " + fmt(r.final_metric) + " < 0.80");
    o.require(r.seconds < 900.0, "train took " + fmt(r.seconds) + "s");
    if (o.pass) o.detail = "mIoU " + fmt(r.final_metric) + " in " + fmt(r.seconds) + "s";
    return o;
  });

  report(7, "hyperparameter bookkeeping", bookkeeping);

  report(8, "determinism", [&] {
    Outcome o;
    if (!fs::exists(work / "a.ckpt")) throw std::runtime_error("criterion 5 run missing");
    desk_train(cls, config, work / "b.ckpt", work / "b.csv");
    o.require(slurp(work / "a.csv") == slurp(work / "b.csv"), "metrics CSVs differ");
    o.require(slurp(work / "a.ckpt") == slurp(work / "b.ckpt"), "checkpoints differ");
    if (o.pass) o.detail = "metrics CSV and checkpoint byte-identical";
    return o;
  });
  return 0;
}
