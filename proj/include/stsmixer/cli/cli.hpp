#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "stsmixer/data/dataset.hpp"
#include "stsmixer/spectral.hpp"
#include "stsmixer/train/checkpoint.hpp"
#include "stsmixer/train/grad_check.hpp"
#include "stsmixer/train/loop.hpp"

namespace stsmixer::cli {

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kUsage = 2,
  kMismatch = 3,
  kRuntime = 4,
};

/// Bad flag values detected after parsing.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline std::string fmt(double v) { return format_double(v); }

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config '" + path.string() + "': " + e.what());
  }
}

inline void write_output(const std::optional<std::string>& path, const std::string& text, std::ostream& fallback) {
  if (path) {
    write_text_file(*path, text);
  } else {
    fallback << text;
  }
}

// ---------------------------------------------------------------------------
// Shared run-config flags (train, eval, ablate)

struct RunFlags {
  std::string data;
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::optional<std::size_t> epochs, batch_size, blocks, channels, heads, k, f_l, f_h, anchors;
  std::optional<double> lr, momentum;
  std::optional<std::vector<std::size_t>> decay_epochs;

  void attach(CLI::App& app, bool training_knobs) {
    app.add_option("--data", data, "Dataset directory containing manifest.json")->required();
    app.add_option("--config", config, "RunConfig JSON file");
    app.add_option("--seed", seed, "Seed (overrides the config file)");
    app.add_option("--threads", threads, "Worker threads for per-frame spectral work")
        ->envname("PCV_THREADS")
        ->check(CLI::PositiveNumber);
    if (!training_knobs) return;
    app.add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);
    app.add_option("--batch-size", batch_size, "Clips per optimizer step")->check(CLI::PositiveNumber);
    app.add_option("--lr", lr, "Initial learning rate")->check(CLI::PositiveNumber);
    app.add_option("--momentum", momentum, "SGD momentum")->check(CLI::Range(0.0, 0.999999));
    app.add_option("--decay-epochs", decay_epochs, "Epochs at which the learning rate decays");
    app.add_option("--blocks", blocks, "Number of mixer blocks L")->check(CLI::PositiveNumber);
    app.add_option("--channels", channels, "Channel width C")->check(CLI::PositiveNumber);
    app.add_option("--heads", heads, "Attention heads")->check(CLI::PositiveNumber);
    app.add_option("--k", k, "K-NN neighbours")->check(CLI::PositiveNumber);
    app.add_option("--fl", f_l, "Low-band threshold index");
    app.add_option("--fh", f_h, "High-band threshold index");
    app.add_option("--anchors", anchors, "Anchors per frame N'")->check(CLI::PositiveNumber);
  }

  /// Precedence: defaults < dataset task/classes < config file < flags.
  RunConfig resolve(const Dataset& ds) const {
    RunConfig cfg;
    cfg.model.task = ds.task();
    cfg.model.num_outputs = ds.num_classes();
    if (config) {
      try {
        read_json_file(*config).get_to(cfg);
      } catch (const nlohmann::json::exception& e) {
        throw UsageError("config '" + *config + "': " + e.what());
      }
    }
    if (seed) cfg.seed = *seed;
    if (epochs) cfg.epochs = *epochs;
    if (batch_size) cfg.batch_size = *batch_size;
    if (lr) cfg.lr0 = *lr;
    if (momentum) cfg.momentum = *momentum;
    if (decay_epochs) cfg.decay_epochs = *decay_epochs;
    if (blocks) cfg.model.blocks = *blocks;
    if (channels) cfg.model.channels = *channels;
    if (heads) cfg.model.heads = *heads;
    if (k) cfg.model.k = *k;
    if (f_l) cfg.model.f_l = *f_l;
    if (f_h) cfg.model.f_h = *f_h;
    if (anchors) cfg.model.anchors = *anchors;
    cfg.validate();
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// gen

struct GenFlags {
  std::string task = "classification";
  std::string out;
  std::uint32_t clips = 8;
  std::uint32_t frames = 8;
  std::uint32_t points = 128;
  double noise = 0.0;
  std::uint64_t seed = 0;
};

inline int cmd_gen(const GenFlags& f, Streams io) {
  DatasetSpec spec;
  spec.task = parse_task(f.task);
  spec.clips_per_class = f.clips;
  spec.frames = f.frames;
  spec.points = f.points;
  spec.noise_sigma = f.noise;
  spec.seed = f.seed;
  spec.validate();
  io.err << nlohmann::json(spec).dump() << "\n";
  Dataset ds;
  try {
    ds = write_dataset(f.out, spec);
  } catch (const std::runtime_error& e) {
    throw UsageError(e.what());  // unwritable output path
  }
  io.out << "wrote " << ds.clips.size() << " clips to " << f.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// spectrum

struct SpectrumFlags {
  std::string in;
  std::size_t frame = 0;
  std::size_t k = 10;
  std::optional<std::string> out;
  std::uint64_t seed = 0;
};

/// CSV `index,eigenvalue,energy,cumulative_fraction` for one frame.
inline std::string spectrum_csv(const Matrix& pts, std::size_t k) {
  const auto spectrum = GraphSpectrum::of(knn_graph(PointSet(pts), k));
  const auto energy = energy_spectrum(spectrum, pts);
  double total = 0.0;
  for (double e : energy) total += e;
  std::string csv = "index,eigenvalue,energy,cumulative_fraction\n";
  double running = 0.0;
  for (std::size_t i = 0; i < energy.size(); ++i) {
    running += energy[i];
    const double frac = total > 0.0 ? running / total : 1.0;
    csv += std::to_string(i) + "," + fmt(spectrum.frequencies()[i]) + "," + fmt(energy[i]) + "," + fmt(frac) + "\n";
  }
  return csv;
}

inline int cmd_spectrum(const SpectrumFlags& f, Streams io) {
  io.err << nlohmann::json{{"in", f.in}, {"frame", f.frame}, {"k", f.k}, {"seed", f.seed}}.dump() << "\n";
  const PointCloudVideo v = read_pcv(f.in);
  if (f.frame >= v.frames) {
    throw UsageError("--frame " + std::to_string(f.frame) + " out of range for " + std::to_string(v.frames) +
                     " frames");
  }
  if (f.k >= v.points) throw UsageError("--k must be smaller than the point count " + std::to_string(v.points));
  write_output(f.out, spectrum_csv(v.frame(static_cast<std::uint32_t>(f.frame)), f.k), io.out);
  return kOk;
}

// ---------------------------------------------------------------------------
// band-filter

struct BandFilterFlags {
  std::string in;
  std::string out;
  std::string drop;
  std::size_t f_l = 6;
  std::size_t f_h = 10;
  std::size_t k = 10;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

inline int cmd_band_filter(const BandFilterFlags& f, Streams io) {
  std::set<Band> drop;
  try {
    drop = parse_band_list(f.drop);
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
  io.err << nlohmann::json{{"in", f.in},   {"out", f.out}, {"drop", f.drop}, {"fl", f.f_l},
                           {"fh", f.f_h},  {"k", f.k},     {"seed", f.seed}}
                .dump()
         << "\n";
  PointCloudVideo v = read_pcv(f.in);
  if (f.k >= v.points) throw UsageError("--k must be smaller than the point count " + std::to_string(v.points));
  const BandSpec bands{f.f_l, f.f_h, v.points};
  try {
    bands.validate();
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
  std::vector<double> errors(v.frames, 0.0);
  std::vector<Matrix> filtered(v.frames);
  parallel_for(v.frames, f.threads, [&](std::size_t t) {
    const Matrix pts = v.frame(static_cast<std::uint32_t>(t));
    const auto spectrum = GraphSpectrum::of(knn_graph(PointSet(pts), f.k));
    filtered[t] = band_reject(spectrum, pts, drop, bands);
    errors[t] = rmse(filtered[t], pts);
  });
  for (std::uint32_t t = 0; t < v.frames; ++t) v.set_frame(t, filtered[t]);
  write_pcv(f.out, v);
  io.out << "frame,rmse\n";
  for (std::size_t t = 0; t < errors.size(); ++t) io.out << t << "," << fmt(errors[t]) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train / eval

struct TrainFlags {
  RunFlags run;
  std::optional<std::string> ckpt;
  std::optional<std::string> metrics;
};

inline int cmd_train(const TrainFlags& f, Streams io) {
  const Dataset ds = load_dataset(f.run.data);
  const RunConfig cfg = f.run.resolve(ds);
  io.err << canonical_json(cfg) << "\n";
  TrainOptions opt;
  if (f.ckpt) opt.checkpoint = *f.ckpt;
  if (f.metrics) opt.metrics_csv = *f.metrics;
  opt.threads = f.run.threads;
  opt.log = &io.err;
  const TrainResult r = train_loop(cfg, ds, opt);
  io.out << "steps=" << r.steps << "\n"
         << "best_epoch=" << r.best_epoch << "\n"
         << "best_metric=" << fmt(r.best_metric) << "\n"
         << "final_metric=" << fmt(r.history.empty() ? 0.0 : r.history.back().val_metric) << "\n";
  return kOk;
}

struct EvalFlags {
  RunFlags run;
  std::string ckpt;
  std::string split = "test";
  std::optional<std::string> metrics;
};

inline int cmd_eval(const EvalFlags& f, Streams io) {
  const Checkpoint ck = load_checkpoint(f.ckpt);
  const Dataset ds = load_dataset(f.run.data);
  if (f.run.config) require_compatible(ck.config, f.run.resolve(ds));
  io.err << ck.config_json << "\n";
  require_matching_dataset(ck.config.model, ds);
  const Model model = ck.instantiate<double>();
  const auto clips = prepare_split(ds, f.split, ck.config.model, f.run.threads);
  if (clips.empty()) throw UsageError("split '" + f.split + "' has no clips");
  const Metrics m = evaluate(model, clips);
  io.out << "metric=" << fmt(headline_metric(m, ck.config.task())) << "\n";
  io.err << "accuracy=" << fmt(m.accuracy) << " miou=" << fmt(m.miou) << " loss=" << fmt(m.loss) << "\n";
  if (f.metrics) {
    write_text_file(*f.metrics, "metric,value\naccuracy," + fmt(m.accuracy) + "\nmiou," + fmt(m.miou) +
                                    "\nloss," + fmt(m.loss) + "\n");
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationSetting {
  std::string name;
  RunConfig cfg;
};

/// The sweep for one axis, derived from a base config.
inline std::vector<AblationSetting> ablation_settings(const std::string& axis, const RunConfig& base) {
  std::vector<AblationSetting> out;
  auto add = [&](std::string name, const std::function<void(ModelConfig&)>& edit) {
    RunConfig c = base;
    edit(c.model);
    out.push_back({std::move(name), std::move(c)});
  };
  if (axis == "bands") {
    using B = Band;
    const std::vector<std::pair<std::string, std::set<Band>>> rows{
        {"low_only", {B::mid, B::high}}, {"mid_only", {B::low, B::high}}, {"high_only", {B::low, B::mid}},
        {"no_low", {B::low}},            {"no_mid", {B::mid}},            {"no_high", {B::high}},
        {"full", {}}};
    for (const auto& [name, drop] : rows) add(name, [&](ModelConfig& m) { m.disabled_bands = drop; });
  } else if (axis == "thresholds") {
    const std::vector<std::pair<std::size_t, std::size_t>> grid{{2, 10}, {4, 10}, {6, 10}, {8, 10},
                                                                {6, 8},  {6, 12}, {6, 14}};
    for (const auto& [fl, fh] : grid)
      add("fl" + std::to_string(fl) + "_fh" + std::to_string(fh), [&](ModelConfig& m) {
        m.f_l = fl;
        m.f_h = fh;
      });
  } else if (axis == "depth") {
    const std::size_t l = base.model.blocks, c = base.model.channels;
    std::vector<std::pair<std::size_t, std::size_t>> grid{{l, c / 2}, {l, c}, {l, 2 * c}};
    if (l > 1) grid.push_back({l - 1, c});
    for (std::size_t extra = 1; extra <= 3; ++extra) grid.push_back({l + extra, c});
    for (const auto& [bl, ch] : grid)
      add("L" + std::to_string(bl) + "_C" + std::to_string(ch), [&](ModelConfig& m) {
        m.blocks = bl;
        m.channels = ch;
      });
  } else if (axis == "k") {
    for (std::size_t k : {6, 8, 10, 12, 14, 16})
      add("k" + std::to_string(k), [&](ModelConfig& m) { m.k = k; });
  } else {
    throw UsageError("unknown ablation axis '" + axis + "' (expected bands, thresholds, depth or k)");
  }
  for (const auto& s : out) s.cfg.validate();
  return out;
}

/// Fields that change the parameter-free preprocessing of a clip.
inline std::string preparation_key(const ModelConfig& m) {
  nlohmann::json j(m);
  for (const char* key : {"blocks", "channels", "heads", "mlp_ratio", "num_outputs", "disabled_bands",
                          "disable_fm_mlp", "disable_fa_attention"})
    j.erase(key);
  return j.dump();
}

struct AblateFlags {
  RunFlags run;
  std::string axis;
  std::optional<std::string> out;
};

inline std::string ablation_csv(const std::vector<std::pair<std::string, double>>& rows) {
  std::string csv = "setting,metric\n";
  for (const auto& [name, metric] : rows) csv += name + "," + fmt(metric) + "\n";
  return csv;
}

inline int cmd_ablate(const AblateFlags& f, Streams io) {
  const Dataset ds = load_dataset(f.run.data);
  const RunConfig base = f.run.resolve(ds);
  const auto settings = ablation_settings(f.axis, base);
  io.err << nlohmann::json{{"axis", f.axis}, {"base", nlohmann::json(base)}}.dump() << "\n";
  require_matching_dataset(base.model, ds);
  std::vector<std::pair<std::string, double>> rows;
  std::string cached_key;
  std::vector<LabeledClip> train, val;
  for (const auto& s : settings) {
    const std::string key = preparation_key(s.cfg.model);
    if (key != cached_key) {
      train = prepare_split(ds, "train", s.cfg.model, f.run.threads);
      val = prepare_split(ds, "test", s.cfg.model, f.run.threads);
      cached_key = key;
    }
    Model model(s.cfg.model, s.cfg.seed);
    const TrainResult r = train_prepared(model, s.cfg, train, val);
    const double metric = r.history.back().val_metric;
    io.err << s.name << " metric=" << fmt(metric) << "\n";
    rows.push_back({s.name, metric});
  }
  write_output(f.out, ablation_csv(rows), io.out);
  return kOk;
}

// ---------------------------------------------------------------------------
// grad-check

struct GradCheckFlags {
  std::uint64_t seed = 0;
  std::string scale = "toy";
  std::string corrupt;
};

inline int cmd_grad_check(const GradCheckFlags& f, Streams io) {
  io.err << nlohmann::json{{"seed", f.seed}, {"scale", f.scale}}.dump() << "\n";
  GradCheckOptions opt;
  opt.seed = f.seed;
  opt.corrupt_op = f.corrupt;
  const auto rows = run_grad_checks(opt);
  bool ok = true;
  io.out << "op,worst_rel_error,tolerance,status\n";
  for (const auto& r : rows) {
    io.out << r.op << "," << fmt(r.worst) << "," << fmt(r.tolerance) << "," << (r.pass() ? "pass" : "FAIL") << "\n";
    ok = ok && r.pass();
  }
  return ok ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------------------

/// Parses argv, dispatches, and maps failures onto the exit-code contract:
/// 0 success or --help, 1 failed check, 2 usage, 3 config/checkpoint
/// mismatch, 4 other runtime failure.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spectral point cloud video toolkit", "stsmixer"};
  app.require_subcommand(1);

  GenFlags gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen_cmd->add_option("--task", gen.task, "classification or segmentation")
      ->check(CLI::IsMember({"classification", "segmentation"}));
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--clips", gen.clips, "Clips per class (segmentation: total scenes)")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--T", gen.frames, "Frames per clip")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--N", gen.points, "Points per frame")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--noise", gen.noise, "Per-point Gaussian jitter sigma")->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--seed", gen.seed, "Seed");

  SpectrumFlags spec;
  auto* spec_cmd = app.add_subcommand("spectrum", "Per-index graph spectral energy of one frame");
  spec_cmd->add_option("--in", spec.in, "Input .pcv file")->required();
  spec_cmd->add_option("--frame", spec.frame, "Frame index");
  spec_cmd->add_option("--k", spec.k, "K-NN neighbours")->check(CLI::PositiveNumber);
  spec_cmd->add_option("--out", spec.out, "Output CSV (stdout when omitted)");
  spec_cmd->add_option("--seed", spec.seed, "Seed (accepted for uniformity; the command is deterministic)");

  BandFilterFlags bf;
  auto* bf_cmd = app.add_subcommand("band-filter", "Reject frequency bands from every frame");
  bf_cmd->add_option("--in", bf.in, "Input .pcv file")->required();
  bf_cmd->add_option("--out", bf.out, "Output .pcv file")->required();
  bf_cmd->add_option("--drop", bf.drop, "Comma-separated bands to drop: low,mid,high");
  bf_cmd->add_option("--fl", bf.f_l, "Low-band threshold index");
  bf_cmd->add_option("--fh", bf.f_h, "High-band threshold index");
  bf_cmd->add_option("--k", bf.k, "K-NN neighbours")->check(CLI::PositiveNumber);
  bf_cmd->add_option("--seed", bf.seed, "Seed (accepted for uniformity; the command is deterministic)");
  bf_cmd->add_option("--threads", bf.threads, "Frames processed in parallel")
      ->envname("PCV_THREADS")
      ->check(CLI::PositiveNumber);

  TrainFlags train;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train.run.attach(*train_cmd, true);
  train_cmd->add_option("--ckpt", train.ckpt, "Checkpoint written at each new best validation metric");
  train_cmd->add_option("--metrics", train.metrics, "Per-epoch metrics CSV");

  EvalFlags ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev.run.attach(*eval_cmd, false);
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--split", ev.split, "Dataset split")->check(CLI::IsMember({"train", "test"}));
  eval_cmd->add_option("--metrics", ev.metrics, "Metrics CSV (accuracy, miou, loss)");

  AblateFlags ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run an ablation sweep");
  ab.run.attach(*ablate_cmd, true);
  ablate_cmd->add_option("--axis", ab.axis, "bands, thresholds, depth or k")->required();
  ablate_cmd->add_option("--out", ab.out, "Output CSV (stdout when omitted)");

  GradCheckFlags gc;
  auto* gc_cmd = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  gc_cmd->add_option("--seed", gc.seed, "Seed");
  gc_cmd->add_option("--scale", gc.scale, "Problem scale")->check(CLI::IsMember({"toy"}));
  gc_cmd->add_option("--corrupt", gc.corrupt, "")->group("");

  Streams io{out, err};
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen(gen, io);
    if (*spec_cmd) return cmd_spectrum(spec, io);
    if (*bf_cmd) return cmd_band_filter(bf, io);
    if (*train_cmd) return cmd_train(train, io);
    if (*eval_cmd) return cmd_eval(ev, io);
    if (*ablate_cmd) return cmd_ablate(ab, io);
    if (*gc_cmd) return cmd_grad_check(gc, io);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kMismatch;
  } catch (const ConfigMismatchError& e) {
    err << "error: " << e.what() << "\n";
    return kMismatch;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

}  // namespace stsmixer::cli
