#pragma once

// Command-line front end. `cli_main` never exits the process, so tests can drive it.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fsnet/eval.hpp"
#include "fsnet/feature_select.hpp"
#include "fsnet/gradcheck.hpp"
#include "fsnet/image.hpp"
#include "fsnet/image_io.hpp"
#include "fsnet/mask_io.hpp"
#include "fsnet/network.hpp"
#include "fsnet/roi.hpp"
#include "fsnet/sequence.hpp"
#include "fsnet/synthetic.hpp"
#include "fsnet/tracker.hpp"
#include "fsnet/trainer.hpp"
#include "fsnet/weights_io.hpp"

namespace fsnet::cli {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Tracker configuration as JSON

namespace detail {

template <typename F>
void for_each_tracker_field(TrackerConfig& c, F&& f) {
  f("score_threshold_m", c.score_threshold_m);
  f("loss_threshold_l", c.loss_threshold_l);
  f("max_finetune_iters", c.max_finetune_iters);
  f("candidates_per_frame", c.candidates_per_frame);
  f("t1", c.t1);
  f("t2", c.t2);
  f("first_frame_lr", c.first_frame_lr);
  f("online_lr", c.online_lr);
  f("momentum", c.momentum);
  f("weight_decay", c.weight_decay);
  f("sample_buffer_frames", c.sample_buffer_frames);
  f("rng_seed", c.rng_seed);
  f("init_iters", c.init_iters);
  f("init_shift_copies", c.init_shift_copies);
  f("init_pos", c.init_pos);
  f("init_neg", c.init_neg);
  f("online_pos", c.online_pos);
  f("online_neg", c.online_neg);
  f("batch_pos", c.batch_pos);
  f("batch_neg", c.batch_neg);
  f("hard_neg_pool", c.hard_neg_pool);
  f("head_init_std", c.head_init_std);
  f("bbox_regression", c.bbox_regression);
  f("bbox_samples", c.bbox_samples);
  f("bbox_lambda", c.bbox_lambda);
  f("candidate_trans_sigma", c.candidates.trans_sigma);
  f("candidate_scale_sigma", c.candidates.scale_sigma);
  f("pos_trans_sigma", c.sampling.pos_trans_sigma);
  f("neg_near_fraction", c.sampling.neg_near_fraction);
  f("neg_near_range", c.sampling.neg_near_range);
}

}  // namespace detail

inline json tracker_config_to_json(TrackerConfig c) {
  json j = json::object();
  detail::for_each_tracker_field(c, [&](const char* name, auto& v) { j[name] = v; });
  return j;
}

/// Overrides fields of `base` from a flat JSON object; unknown keys are errors.
inline TrackerConfig tracker_config_from_json(const json& j, TrackerConfig base = {}) {
  if (!j.is_object()) throw FormatError("tracker config: expected a JSON object");
  std::size_t used = 0;
  detail::for_each_tracker_field(base, [&](const char* name, auto& v) {
    if (!j.contains(name)) return;
    try {
      j.at(name).get_to(v);
    } catch (const json::exception&) {
      throw FormatError(std::string("tracker config: bad value for '") + name + "': " +
                        j.at(name).dump());
    }
    ++used;
  });
  if (used != j.size()) {
    const json known = tracker_config_to_json(base);
    for (const auto& [k, v] : j.items())
      if (!known.contains(k)) throw FormatError("tracker config: unknown key '" + k + "'");
  }
  base.validate();
  return base;
}

// ---------------------------------------------------------------------------
// Helpers

namespace detail {

inline Tensor<double> load_frame(const std::string& path) { return to_tensor(read_image(path)); }

inline VideoDomain load_domain(const std::string& dir, std::size_t id) {
  const auto seq = load_sequence(dir);
  VideoDomain v;
  v.id = id;
  v.gt_rects = seq.gt_rects;
  for (const auto& p : seq.frame_paths) v.frames.push_back(load_frame(p));
  return v;
}

/// Manifest: `{"videos": ["dir", ...]}` or a bare list. Relative paths are resolved
/// against the manifest's directory.
inline std::vector<std::string> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
  const json& list = j.is_array() ? j : j.contains("videos") ? j["videos"] : json();
  if (!list.is_array() || list.empty()) {
    throw FormatError(path + ": expected a non-empty list of video directories under \"videos\"");
  }
  const fs::path base = fs::path(path).parent_path();
  std::vector<std::string> out;
  for (const auto& e : list) {
    if (!e.is_string()) throw FormatError(path + ": video entries must be strings");
    const fs::path p(e.get<std::string>());
    out.push_back((p.is_absolute() ? p : base / p).string());
  }
  return out;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

inline void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << j.dump(2) << '\n';
}

inline json curves_summary(const EvalCurves& e, std::size_t frames) {
  return json{{"frames", frames},
              {"auc", e.auc},
              {"precision_at_20", e.precision_at_20},
              {"mean_iou", e.mean_iou}};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands

struct TrainArgs {
  std::string manifest;
  std::string out = "weights.fsnt";
  std::size_t iters = 100;
  std::uint64_t seed = 0;
  std::size_t branches = 0;  // 0: one per video
  double lr = 1e-4;
  std::string arch = "default";
  std::string loss_csv;
};

inline int run_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const auto dirs = detail::read_manifest(a.manifest);
  const std::size_t k = a.branches ? a.branches : dirs.size();
  if (k != dirs.size()) {
    throw Error("--branches " + std::to_string(k) + " but the manifest lists " +
                std::to_string(dirs.size()) + " videos; one branch per video is required");
  }
  std::vector<VideoDomain> videos;
  for (std::size_t i = 0; i < dirs.size(); ++i) videos.push_back(detail::load_domain(dirs[i], i));

  NetworkConfig nc = a.arch == "small" ? gradcheck_config() : NetworkConfig{};
  nc.branches = k;
  std::mt19937_64 init_rng(a.seed);
  auto params = make_network<double>(nc, init_rng);

  TrainConfig tc;
  tc.iterations = a.iters;
  tc.sgd.learning_rate = a.lr;
  tc.rng_seed = a.seed;
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = train_multidomain(videos, params, tc, [&](std::size_t it, std::size_t d, double loss) {
    ++it;
    if (it == 1 || it % 10 == 0 || it == tc.iterations)
      err << "iter " << it << "/" << tc.iterations << " domain " << d << " loss " << detail::fmt(loss)
          << '\n';
  });
  save_weights(a.out, params);
  if (!a.loss_csv.empty()) {
    std::ofstream csv(a.loss_csv);
    if (!csv) throw Error("cannot write " + a.loss_csv);
    csv << "iteration,domain,loss\n";
    for (std::size_t i = 0; i < report.losses.size(); ++i)
      csv << i + 1 << ',' << report.domains[i] << ',' << fsnet::detail::shortest(report.losses[i]) << '\n';
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out << "trained " << a.iters << " iterations on " << videos.size() << " videos in "
      << detail::fmt(secs) << " s; loss " << detail::fmt(report.losses.front()) << " -> "
      << detail::fmt(report.losses.back()) << "; wrote " << a.out << '\n';
  return 0;
}

struct SelectArgs {
  std::string weights;
  std::string image;
  std::string out = "mask.json";
  std::string pruned;
  std::size_t keep = 256;
  std::size_t bins = kDefaultHistogramBins;
  double zero_eps = 0;
};

inline int run_select(const SelectArgs& a, std::ostream& out, std::ostream&) {
  const auto params = load_weights<double>(a.weights);
  SelectionConfig cfg;
  cfg.keep_count = a.keep;
  cfg.bins = a.bins;
  cfg.zero_epsilon = a.zero_eps;
  const auto mask = select_for_sequence(params, detail::load_frame(a.image), cfg);
  save_mask(a.out, mask);
  std::size_t zero = 0;
  for (auto f : mask.provenance) zero += f == ChannelFate::zero_map;
  out << "kept " << mask.kept_count << " of " << mask.keep.size() << " channels (" << zero
      << " all-zero maps); wrote " << a.out << '\n';
  if (!a.pruned.empty()) {
    const auto pruned = prune_network(params, mask);
    save_weights(a.pruned, pruned);
    out << "fc1 input width " << params.roi_feature_width() << " -> "
        << pruned.roi_feature_width() << "; wrote " << a.pruned << '\n';
  }
  return 0;
}

struct TrackArgs {
  std::string weights;
  std::string mask;
  std::string sequence;
  std::string config;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
};

inline int run_track(const TrackArgs& a, std::ostream& out, std::ostream& err) {
  const auto params = load_weights<double>(a.weights);
  const ChannelMask mask =
      a.mask.empty() ? ChannelMask::all(params.feature_channels()) : load_mask(a.mask);
  TrackerConfig cfg;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw Error("cannot open config " + a.config);
    try {
      cfg = tracker_config_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
      throw FormatError(a.config + ": " + e.what());
    }
  }
  cfg.rng_seed = a.seed;
  const auto seq = load_sequence(a.sequence);
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = track_sequence(
      params, mask, seq.size(), [&](std::size_t i) { return detail::load_frame(seq.frame_paths[i]); },
      seq.gt_rects.front(), cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  fs::create_directories(a.out_dir);
  const std::string results = (fs::path(a.out_dir) / "results.txt").string();
  write_rects(results, res.rects);
  const std::string log = (fs::path(a.out_dir) / "finetune_log.csv").string();
  {
    std::ofstream csv(log);
    if (!csv) throw Error("cannot write " + log);
    csv << "frame,best_score,loss,iterations\n";
    for (const auto& r : res.finetune_log)
      csv << r.frame << ',' << fsnet::detail::shortest(r.best_score) << ','
          << fsnet::detail::shortest(r.final_loss) << ',' << r.iterations << '\n';
  }
  std::size_t iters = 0;
  for (const auto& r : res.finetune_log) iters += r.iterations;
  const auto e = evaluate(res.rects, seq.gt_rects);
  json summary = detail::curves_summary(e, seq.size());
  summary["sequence"] = seq.name;
  summary["kept_channels"] = mask.kept_count;
  summary["updates"] = res.finetune_log.size();
  summary["finetune_iterations"] = iters;
  summary["seconds"] = std::round(secs * 100) / 100;
  err << "tracked " << seq.size() << " frames in " << detail::fmt(secs) << " s; wrote " << results
      << " and " << log << '\n';
  out << summary.dump() << '\n';
  return 0;
}

struct EvalArgs {
  std::string results;
  std::string groundtruth;
  std::string sequence;
  std::string out_dir;
};

inline int run_eval(const EvalArgs& a, std::ostream& out, std::ostream&) {
  if (a.groundtruth.empty() == a.sequence.empty()) {
    throw Error("eval needs exactly one of --groundtruth or --sequence");
  }
  const auto pred = read_rects(a.results);
  const auto gt = a.sequence.empty() ? read_rects(a.groundtruth) : load_sequence(a.sequence).gt_rects;
  const auto e = evaluate(pred, gt);
  const json summary = detail::curves_summary(e, gt.size());
  if (!a.out_dir.empty()) {
    fs::create_directories(a.out_dir);
    std::ofstream p(fs::path(a.out_dir) / "precision.csv"), s(fs::path(a.out_dir) / "success.csv");
    if (!p || !s) throw Error("cannot write curves into " + a.out_dir);
    write_curve_csv(p, e.precision, false);
    write_curve_csv(s, e.success, true);
    detail::write_json((fs::path(a.out_dir) / "summary.json").string(), summary);
  }
  out << summary.dump() << '\n';
  return 0;
}

struct BenchArgs {
  std::size_t map_size = 16;
  std::size_t channels = 8;
  std::uint64_t seed = 1;
  double step = 0.05;
  std::size_t timing_rois = 256;
  std::size_t timing_channels = 512;
  std::size_t timing_size = 32;
  std::size_t repeats = 5;
  std::string csv;
};

inline int run_benchmark(const BenchArgs& a, std::ostream& out, std::ostream&) {
  if (a.map_size < 4) throw Error("--map-size must be >= 4");
  if (!(a.step > 0 && a.step < 1)) throw Error("--step must lie in (0, 1)");
  std::mt19937_64 rng(a.seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor<double> map(Shape{1, a.channels, a.map_size, a.map_size});
  for (double& v : map.values()) v = u(rng);
  const double side = static_cast<double>(a.map_size);
  const Rect base{0.25 * side, 0.25 * side, 0.4 * side + 0.13, 0.4 * side};
  const auto steps = static_cast<std::size_t>(std::ceil(1.0 / a.step - 1e-9));
  const auto rows = continuity_sweep(map, base, a.step, steps);

  std::ostringstream csv;
  csv << "offset,align_delta,pool_delta,pool_boundary\n";
  std::size_t align_changes = 0, pool_changes = 0, crossings = 0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = rows[k];
    csv << fsnet::detail::shortest(r.offset) << ',' << fsnet::detail::shortest(r.align_delta) << ','
        << fsnet::detail::shortest(r.pool_delta) << ',' << (r.pool_boundary ? 1 : 0) << '\n';
    if (k == 0) continue;
    align_changes += r.align_delta > 0;
    pool_changes += r.pool_delta > 0;
    crossings += r.pool_boundary;
  }
  if (a.csv.empty()) {
    out << csv.str();
  } else {
    std::ofstream f(a.csv);
    if (!f) throw Error("cannot write " + a.csv);
    f << csv.str();
  }

  // Timing on a tracker-sized feature map.
  Tensor<double> big(Shape{1, a.timing_channels, a.timing_size, a.timing_size});
  for (double& v : big.values()) v = u(rng);
  std::vector<Rect> rois;
  const double ts = static_cast<double>(a.timing_size);
  std::uniform_real_distribution<double> pos(0, 0.6 * ts), ext(0.2 * ts, 0.4 * ts);
  for (std::size_t i = 0; i < a.timing_rois; ++i) rois.push_back({pos(rng), pos(rng), ext(rng), ext(rng)});
  auto time_it = [&](auto&& fn) {
    double best = 1e300;
    for (std::size_t r = 0; r < std::max<std::size_t>(a.repeats, 1); ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      fn();
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };
  double sink = 0;
  const double ta = time_it([&] { sink += roi_align_forward(big, std::span<const Rect>(rois)).features.data()[0]; });
  const double tp = time_it([&] { sink += roi_pool_forward(big, std::span<const Rect>(rois)).features.data()[0]; });
  const json summary{{"sweep_steps", rows.size() - 1},
                     {"align_changes", align_changes},
                     {"pool_changes", pool_changes},
                     {"pool_boundary_crossings", crossings},
                     {"align_ms", ta * 1e3},
                     {"pool_ms", tp * 1e3},
                     {"timing_rois", a.timing_rois},
                     {"checksum", std::isfinite(sink)}};
  (a.csv.empty() ? std::cerr : out) << summary.dump() << '\n';
  return 0;
}

struct GradcheckArgs {
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
};

inline int run_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream&) {
  const auto r = full_chain_audit(a.seed);
  for (const auto& [name, worst] : r.per_tensor) out << name << " max_rel_error " << worst << '\n';
  out << "checked " << r.checked << " elements (" << r.kinks
      << " skipped: probe crossed a ReLU/max switch); max relative error " << r.max_rel_error << " at "
      << r.worst.tensor << "[" << r.worst.index << "] (analytic " << r.worst.analytic
      << ", numeric " << r.worst.numeric << ")\n";
  const bool ok = r.max_rel_error < a.tolerance;
  out << (ok ? "ok" : "FAILED") << ": tolerance " << a.tolerance << '\n';
  return ok ? 0 : 1;
}

struct SynthArgs {
  std::string out;
  std::string kind = "textured_square";
  SyntheticConfig cfg = [] {
    SyntheticConfig c;
    c.width = c.height = 256;
    c.object_size = 64;
    return c;
  }();
};

/// Writes `<out>/img/0001.png ...` and `<out>/groundtruth_rect.txt`.
inline void write_synthetic(const std::string& dir, const SyntheticSequence& seq) {
  fs::create_directories(fs::path(dir) / "img");
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    std::ostringstream name;
    name << std::setw(4) << std::setfill('0') << i + 1 << ".png";
    write_png((fs::path(dir) / "img" / name.str()).string(), seq.frames[i]);
  }
  write_rects((fs::path(dir) / "groundtruth_rect.txt").string(), seq.gt);
}

inline int run_synth(SynthArgs a, std::ostream& out, std::ostream&) {
  a.cfg.kind = parse_synthetic_kind(a.kind);
  const auto seq = make_synthetic(a.cfg);
  write_synthetic(a.out, seq);
  out << "wrote " << seq.frames.size() << " frames of " << a.kind << " to " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"fsnet: RoIAlign tracking-by-detection with feature-map selection", "fsnet"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Multi-domain offline training; writes a weights file");
  train->add_option("manifest", ta.manifest, "JSON manifest listing video directories")->required();
  train->add_option("-o,--out", ta.out, "Output weights file")->capture_default_str();
  train->add_option("--iters", ta.iters, "SGD iterations")->capture_default_str()->check(CLI::PositiveNumber);
  train->add_option("--seed", ta.seed, "Seed for initialization and sampling")->capture_default_str();
  train->add_option("--branches", ta.branches, "Domain branches (must equal the video count)");
  train->add_option("--lr", ta.lr, "SGD learning rate")->capture_default_str();
  train->add_option("--arch", ta.arch, "Network size")->check(CLI::IsMember({"default", "small"}))->capture_default_str();
  train->add_option("--loss-csv", ta.loss_csv, "Write per-iteration losses here");

  SelectArgs sa;
  auto* select = app.add_subcommand("select-features", "Pick conv3 channels by mutual information");
  select->add_option("--weights", sa.weights, "Weights file")->required();
  select->add_option("--image", sa.image, "First frame (PNG or JPEG)")->required();
  select->add_option("-o,--out", sa.out, "Mask JSON output")->capture_default_str();
  select->add_option("--pruned", sa.pruned, "Also write pruned weights here");
  select->add_option("--keep", sa.keep, "Channels to keep")->capture_default_str()->check(CLI::PositiveNumber);
  select->add_option("--bins", sa.bins, "Histogram bins for MI")->capture_default_str()->check(CLI::PositiveNumber);
  select->add_option("--zero-eps", sa.zero_eps, "Maps with max |activation| <= eps count as zero")->capture_default_str();

  TrackArgs tr;
  auto* track = app.add_subcommand("track", "Track the first-frame box through a sequence");
  track->add_option("--weights", tr.weights, "Weights file")->required();
  track->add_option("--mask", tr.mask, "Channel mask JSON (default: keep all)");
  track->add_option("--sequence", tr.sequence, "Sequence directory (img/ + groundtruth_rect.txt)")->required();
  track->add_option("--config", tr.config, "Tracker config JSON overrides");
  track->add_option("--seed", tr.seed, "Tracker seed")->capture_default_str();
  track->add_option("-o,--out-dir", tr.out_dir, "Where results.txt and finetune_log.csv go")->capture_default_str();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Precision/success curves of a results file");
  eval->add_option("--results", ea.results, "Tracker output (x,y,w,h per line)")->required();
  eval->add_option("--groundtruth", ea.groundtruth, "Ground-truth file");
  eval->add_option("--sequence", ea.sequence, "Sequence directory to take ground truth from");
  eval->add_option("-o,--out-dir", ea.out_dir, "Write precision.csv, success.csv, summary.json here");

  BenchArgs ba;
  auto* bench = app.add_subcommand("benchmark-roi", "RoIAlign vs RoIPool: continuity sweep and timing");
  bench->add_option("--map-size", ba.map_size, "Sweep map side")->capture_default_str();
  bench->add_option("--channels", ba.channels, "Sweep map channels")->capture_default_str();
  bench->add_option("--step", ba.step, "Sweep x-offset step")->capture_default_str();
  bench->add_option("--seed", ba.seed, "Map seed")->capture_default_str();
  bench->add_option("--timing-rois", ba.timing_rois, "RoIs per timed call")->capture_default_str();
  bench->add_option("--timing-channels", ba.timing_channels, "Timed map channels")->capture_default_str();
  bench->add_option("--timing-size", ba.timing_size, "Timed map side")->capture_default_str();
  bench->add_option("--repeats", ba.repeats, "Timing repeats (best kept)")->capture_default_str();
  bench->add_option("--csv", ba.csv, "Sweep CSV path (default: stdout)");

  GradcheckArgs ga;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference audit of every gradient");
  grad->add_option("--seed", ga.seed, "Network and input seed")->capture_default_str();
  grad->add_option("--tolerance", ga.tolerance, "Pass if max relative error is below this")->capture_default_str();

  SynthArgs ya;
  auto* synth = app.add_subcommand("synth", "Write a synthetic sequence to disk");
  synth->add_option("-o,--out", ya.out, "Output sequence directory")->required();
  synth->add_option("--kind", ya.kind, "bright_square, dark_disc or textured_square")->capture_default_str();
  synth->add_option("--frames", ya.cfg.frames, "Frame count")->capture_default_str();
  synth->add_option("--size", ya.cfg.width, "Frame side in pixels")->capture_default_str();
  synth->add_option("--object", ya.cfg.object_size, "Object side in pixels")->capture_default_str();
  synth->add_option("--speed", ya.cfg.speed, "Pixels per frame")->capture_default_str();
  synth->add_option("--noise", ya.cfg.noise_sigma, "Gaussian noise sigma")->capture_default_str();
  synth->add_option("--seed", ya.cfg.seed, "Scene seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return 0;  // --help
    err << app.help();
    return 2;
  }

  try {
    if (train->parsed()) return run_train(ta, out, err);
    if (select->parsed()) return run_select(sa, out, err);
    if (track->parsed()) return run_track(tr, out, err);
    if (eval->parsed()) return run_eval(ea, out, err);
    if (bench->parsed()) return run_benchmark(ba, out, err);
    if (grad->parsed()) return run_gradcheck(ga, out, err);
    if (synth->parsed()) {
      ya.cfg.height = ya.cfg.width;
      return run_synth(ya, out, err);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace fsnet::cli
