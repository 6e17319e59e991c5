// utilgate: command-line front end for the utility-control pipeline.
//
// Exit codes: 0 success, 2 flag/argument errors, 3 IO/format/fit errors,
// 4 shape mismatches, 1 anything else. Summary lines go to stdout,
// diagnostics to stderr.

#include "utilgate/calibration.hpp"
#include "utilgate/curvefit.hpp"
#include "utilgate/error.hpp"
#include "utilgate/importance.hpp"
#include "utilgate/metrics.hpp"
#include "utilgate/noise.hpp"
#include "utilgate/synth.hpp"
#include "utilgate/tensor.hpp"
#include "utilgate/tier.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

namespace ug = utilgate;

namespace {

constexpr int kExitFlags = 2;
constexpr int kExitFormat = 3;
constexpr int kExitShape = 4;

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ug::LogitsBatch load_logits(const std::string& path) { return ug::LogitsBatch::infer(ug::load_tensor(path)); }

ug::LabelBatch load_labels(const std::string& path) { return ug::LabelBatch(ug::load_tensor(path)); }

std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> grid;
  std::istringstream in(csv);
  std::string field;
  while (std::getline(in, field, ',')) {
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(field, &used));
      if (used != field.size()) throw std::invalid_argument(field);
    } catch (const std::exception&) {
      throw ug::InvalidArgument("--grid entry '" + field + "' is not a number");
    }
  }
  if (grid.empty()) throw ug::InvalidArgument("--grid is empty");
  return grid;
}

std::size_t worker_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("UTILGATE_THREADS")) {
    try {
      std::size_t used = 0;
      const auto count = std::stoul(env, &used);
      if (count < 1 || env[used] != '\0') throw std::invalid_argument(env);
      // An explicit count may exceed the core count; the table is identical either way.
      n = count;
    } catch (const std::exception&) {
      throw ug::InvalidArgument(std::string("UTILGATE_THREADS='") + env + "' is not a positive integer");
    }
  }
  return n;
}

struct MaskFlags {
  std::string path;
  std::optional<double> tau;
  bool invert = false;
};

void add_mask_flags(CLI::App* cmd, MaskFlags& m) {
  cmd->add_option("--mask", m.path, "UTCT float32/uint8 [H,W] mask or importance map");
  cmd->add_option("--tau", m.tau, "threshold the mask file as an importance map: 1 where score > tau");
  cmd->add_flag("--invert-mask", m.invert, "flip the mask before use");
}

// With --tau the file is an importance map, thresholded; otherwise its values
// are used verbatim as fractional noise weights.
ug::Tensor resolve_mask(const MaskFlags& m) {
  auto raw = ug::load_tensor(m.path);
  if (m.tau) return ug::make_mask(ug::ImportanceMap::from_raw(raw), {*m.tau, m.invert});
  if (!m.invert) return raw;
  std::vector<float> flipped(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) flipped[i] = static_cast<float>(1.0 - raw.value(i));
  return ug::Tensor(raw.shape(), std::move(flipped));
}

// ---- synth -----------------------------------------------------------------

struct SynthBlobsArgs {
  ug::BlobsSpec spec;
  std::string logits_out, labels_out;
};

int cmd_synth_blobs(const SynthBlobsArgs& a) {
  const auto blobs = ug::gen_blobs_logits(a.spec);
  ug::save_tensor(blobs.logits.tensor(), a.logits_out);
  ug::save_tensor(blobs.labels.tensor(), a.labels_out);
  const auto clean = ug::accuracy(ug::argmax_classes(blobs.logits), blobs.labels);
  std::cout << "samples=" << blobs.labels.size() << " classes=" << a.spec.class_count
            << " clean_accuracy=" << ug::format_metric(clean.value) << '\n';
  return 0;
}

struct SynthSceneArgs {
  ug::SceneSpec spec;
  std::string logits_out, labels_out, importance_out;
};

int cmd_synth_scene(const SynthSceneArgs& a) {
  const auto scene = ug::gen_scene(a.spec);
  ug::save_tensor(scene.logits.tensor(), a.logits_out);
  ug::save_tensor(scene.labels.tensor(), a.labels_out);
  if (!a.importance_out.empty()) ug::save_tensor(scene.importance.scores(), a.importance_out);
  const auto clean = ug::miou(ug::argmax_classes(scene.logits), scene.labels, a.spec.class_count);
  std::cout << "height=" << a.spec.height << " width=" << a.spec.width << " classes=" << a.spec.class_count
            << " clean_miou=" << ug::format_metric(clean.value) << '\n';
  return 0;
}

// ---- perturb ---------------------------------------------------------------

struct PerturbArgs {
  std::string logits, labels, out;
  std::string mode;
  double sigma = 0.0;
  double delta = 1.0;
  std::uint64_t seed = 0;
  MaskFlags mask;
};

int cmd_perturb(const PerturbArgs& a) {
  ug::PerturbationSpec spec;
  spec.sigma = a.sigma;
  spec.delta = a.delta;
  spec.seed = a.seed;
  spec.mode = a.mode.empty() ? (a.mask.path.empty() ? ug::PerturbMode::global : ug::PerturbMode::region)
                             : ug::parse_mode(a.mode);
  spec.validate();
  if (spec.mode == ug::PerturbMode::region && a.mask.path.empty()) {
    throw ug::InvalidArgument("--mode region requires --mask");
  }
  if (spec.mode != ug::PerturbMode::region && !a.mask.path.empty()) {
    throw ug::InvalidArgument("--mask is only valid with --mode region");
  }
  const bool targeted = spec.mode == ug::PerturbMode::targeted_noise || spec.mode == ug::PerturbMode::targeted_flip;
  if (targeted && a.labels.empty()) throw ug::InvalidArgument("targeted modes require --labels");

  const auto logits = load_logits(a.logits);
  std::optional<ug::Tensor> mask;
  if (!a.mask.path.empty()) mask = resolve_mask(a.mask);
  std::optional<ug::LabelBatch> labels;
  if (!a.labels.empty()) labels = load_labels(a.labels);

  const auto result = ug::perturb(logits, spec, mask ? &*mask : nullptr, labels ? &*labels : nullptr);
  ug::save_tensor(result.logits.tensor(), a.out);
  std::cout << "mode=" << ug::mode_name(spec.mode) << " sigma_eff=" << fmt17(spec.effective_sigma())
            << " touched=" << result.touched << '\n';
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string pred, truth, metric;
  std::optional<std::size_t> classes;
};

int cmd_eval(const EvalArgs& a) {
  const auto kind = ug::parse_metric(a.metric);
  auto pred_tensor = ug::load_tensor(a.pred);
  const auto truth = load_labels(a.truth);
  std::optional<std::size_t> classes = a.classes;
  // Logits are accepted in place of labels and reduced by argmax.
  std::optional<ug::LabelBatch> pred;
  if (pred_tensor.dtype() == ug::DType::float32) {
    const auto logits = ug::LogitsBatch::infer(std::move(pred_tensor));
    if (!classes) classes = logits.class_count();
    pred = ug::argmax_classes(logits);
  } else {
    pred = ug::LabelBatch(std::move(pred_tensor));
  }
  if (!classes) {
    std::int32_t top = 0;
    for (const auto& labels : {pred->values(), truth.values()}) {
      for (auto y : labels) {
        if (y != ug::kIgnoreLabel) top = std::max(top, y);
      }
    }
    classes = static_cast<std::size_t>(top) + 1;
  }
  std::cout << ug::evaluate(kind, *pred, truth, *classes).to_text();
  return 0;
}

// ---- calibrate -------------------------------------------------------------

struct CalibrateArgs {
  std::string logits, labels, metric, grid, out, summary_out, mode;
  std::size_t trials = 20;
  std::uint64_t seed = 0;
  double delta = 1.0;
  MaskFlags mask;
};

int cmd_calibrate(const CalibrateArgs& a) {
  ug::SweepPlan plan;
  plan.metric = ug::parse_metric(a.metric);
  if (!a.grid.empty()) plan.sigma_grid = parse_grid(a.grid);
  plan.trials = a.trials;
  plan.base_seed = a.seed;
  plan.delta = a.delta;
  plan.mode = a.mode.empty() ? (a.mask.path.empty() ? ug::PerturbMode::global : ug::PerturbMode::region)
                             : ug::parse_mode(a.mode);
  if (plan.mode == ug::PerturbMode::region && a.mask.path.empty()) {
    throw ug::InvalidArgument("--mode region requires --mask");
  }
  if (!a.mask.path.empty()) {
    if (!a.mask.tau) throw ug::InvalidArgument("--mask requires --tau for calibrate");
    plan.importance = ug::load_importance(a.mask.path);
    plan.mask_config = ug::MaskConfig{*a.mask.tau, a.mask.invert};
  }
  plan.validate();

  const auto logits = load_logits(a.logits);
  const auto labels = load_labels(a.labels);
  const auto table = ug::run_sweep(logits, labels, plan, worker_count());

  std::ofstream out(a.out, std::ios::trunc);
  if (!out) throw ug::FormatError("cannot open " + a.out + " for writing");
  table.write_text(out);
  if (!a.summary_out.empty()) {
    std::ofstream summary(a.summary_out, std::ios::trunc);
    if (!summary) throw ug::FormatError("cannot open " + a.summary_out + " for writing");
    table.write_summary(summary);
  }
  std::cout << "cells=" << table.rows.size() << " clean_metric=" << ug::format_metric(table.clean_metric) << '\n';
  return 0;
}

// ---- fit / solve -----------------------------------------------------------

struct FitArgs {
  std::string table, family = "auto", out;
};

int cmd_fit(const FitArgs& a) {
  std::ifstream in(a.table);
  if (!in) throw ug::FormatError("cannot open " + a.table);
  const auto table = ug::CalibrationTable::read_text(in);
  ug::DecayFit fit;
  if (a.family == "exp") fit = ug::fit_decay(table);
  else if (a.family == "auto") fit = ug::fit_auto(table);
  else if (a.family == "isotonic") fit = ug::fit_interpolant(table);
  else throw ug::InvalidArgument("--family must be exp, auto or isotonic");
  ug::save_fit(fit, a.out);
  std::cout << "family=" << ug::family_name(fit.family) << " rmse=" << fmt17(fit.rmse)
            << " metric_at_zero=" << fmt17(fit.metric_at_zero) << '\n';
  return 0;
}

struct SolveArgs {
  std::string fit;
  double target = 0.0;
};

int cmd_solve(const SolveArgs& a) {
  const auto fit = ug::load_fit(a.fit);
  const auto s = ug::solve_sigma(fit, a.target);
  std::cout << "sigma=" << fmt17(s.sigma) << " clamp=" << ug::clamp_name(s.clamp) << '\n';
  return 0;
}

// ---- tier ------------------------------------------------------------------

struct TierArgs {
  std::string policy, tier, logits, out, fit, metric = "accuracy", tiers;
  std::uint64_t request_id = 0;
  std::uint64_t seed = 0;
};

int cmd_tier_make(const TierArgs& a) {
  std::vector<ug::Tier> tiers;
  std::istringstream in(a.tiers);
  for (std::string pair; std::getline(in, pair, ',');) {
    const auto eq = pair.find('=');
    if (eq == std::string::npos) throw ug::InvalidArgument("--tiers entries must be name=target");
    try {
      tiers.push_back({pair.substr(0, eq), std::stod(pair.substr(eq + 1))});
    } catch (const std::exception&) {
      throw ug::InvalidArgument("bad tier target in '" + pair + "'");
    }
  }
  const ug::TierPolicy policy(ug::parse_metric(a.metric), a.seed, ug::load_fit(a.fit), std::move(tiers));
  std::ofstream out(a.out, std::ios::trunc);
  if (!out) throw ug::FormatError("cannot open " + a.out + " for writing");
  out << policy.to_text();
  std::cout << "tiers=" << policy.tiers().size() << '\n';
  return 0;
}

int cmd_tier_resolve(const TierArgs& a) {
  const auto policy = ug::TierPolicy::load(a.policy);
  const auto r = ug::resolve_tier(policy, a.tier);
  std::cout << "tier=" << a.tier << " sigma=" << fmt17(r.spec.sigma) << " clamp=" << ug::clamp_name(r.clamp)
            << " achieved=" << ug::format_metric(r.achieved) << '\n';
  return 0;
}

int cmd_tier_apply(const TierArgs& a) {
  const auto policy = ug::TierPolicy::load(a.policy);
  const auto r = ug::resolve_tier(policy, a.tier);
  const auto logits = load_logits(a.logits);
  const auto out = ug::apply_tier(policy, a.tier, logits, a.request_id);
  ug::save_tensor(out.tensor(), a.out);
  std::cout << "tier=" << a.tier << " sigma=" << fmt17(r.spec.sigma) << " clamp=" << ug::clamp_name(r.clamp)
            << " request_id=" << a.request_id << '\n';
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"utilgate: calibrated utility degradation of prediction logits"};
  app.require_subcommand(1);

  SynthBlobsArgs blobs;
  SynthSceneArgs scene;
  auto* synth = app.add_subcommand("synth", "generate synthetic logits and labels");
  synth->require_subcommand(1);
  auto* synth_blobs = synth->add_subcommand("blobs", "nearest-centroid classification logits");
  synth_blobs->add_option("--classes", blobs.spec.class_count)->capture_default_str();
  synth_blobs->add_option("--per-class", blobs.spec.samples_per_class)->capture_default_str();
  synth_blobs->add_option("--separation", blobs.spec.separation)->capture_default_str();
  synth_blobs->add_option("--dim", blobs.spec.feature_dim)->capture_default_str();
  synth_blobs->add_option("--seed", blobs.spec.seed)->capture_default_str();
  synth_blobs->add_option("--logits-out", blobs.logits_out)->required();
  synth_blobs->add_option("--labels-out", blobs.labels_out)->required();
  auto* synth_scene = synth->add_subcommand("scene", "segmentation scene with importance map");
  synth_scene->add_option("--height", scene.spec.height)->capture_default_str();
  synth_scene->add_option("--width", scene.spec.width)->capture_default_str();
  synth_scene->add_option("--classes", scene.spec.class_count)->capture_default_str();
  synth_scene->add_option("--shapes", scene.spec.shape_count)->capture_default_str();
  synth_scene->add_option("--seed", scene.spec.seed)->capture_default_str();
  synth_scene->add_option("--logits-out", scene.logits_out)->required();
  synth_scene->add_option("--labels-out", scene.labels_out)->required();
  synth_scene->add_option("--importance-out", scene.importance_out);

  PerturbArgs perturb;
  auto* perturb_cmd = app.add_subcommand("perturb", "add Gaussian noise to logits");
  perturb_cmd->add_option("--logits", perturb.logits)->required();
  perturb_cmd->add_option("--sigma", perturb.sigma)->required();
  perturb_cmd->add_option("--delta", perturb.delta)->capture_default_str();
  perturb_cmd->add_option("--seed", perturb.seed)->required();
  perturb_cmd->add_option("--mode", perturb.mode, "global|region|targeted-noise|targeted-flip");
  perturb_cmd->add_option("--labels", perturb.labels);
  perturb_cmd->add_option("--out", perturb.out)->required();
  add_mask_flags(perturb_cmd, perturb.mask);

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
  eval_cmd->add_option("--pred", eval.pred, "int32 labels or float32 logits")->required();
  eval_cmd->add_option("--truth", eval.truth)->required();
  eval_cmd->add_option("--metric", eval.metric, "acc|miou|dice")->required();
  eval_cmd->add_option("--classes", eval.classes);

  CalibrateArgs cal;
  auto* cal_cmd = app.add_subcommand("calibrate", "sweep sigma and record the metric");
  cal_cmd->add_option("--logits", cal.logits)->required();
  cal_cmd->add_option("--labels", cal.labels)->required();
  cal_cmd->add_option("--metric", cal.metric, "acc|miou|dice")->required();
  cal_cmd->add_option("--grid", cal.grid, "comma-separated ascending sigma values");
  cal_cmd->add_option("--trials", cal.trials)->capture_default_str();
  cal_cmd->add_option("--seed", cal.seed)->required();
  cal_cmd->add_option("--mode", cal.mode);
  cal_cmd->add_option("--delta", cal.delta)->capture_default_str();
  cal_cmd->add_option("--out", cal.out)->required();
  cal_cmd->add_option("--summary-out", cal.summary_out, "sigma,mean,stddev file for plotting");
  add_mask_flags(cal_cmd, cal.mask);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "fit the decay curve to a calibration table");
  fit_cmd->add_option("--table", fit.table)->required();
  fit_cmd->add_option("--family", fit.family, "exp|auto|isotonic")->capture_default_str();
  fit_cmd->add_option("--out", fit.out)->required();

  SolveArgs solve;
  auto* solve_cmd = app.add_subcommand("solve", "noise level for a target metric");
  solve_cmd->add_option("--fit", solve.fit)->required();
  solve_cmd->add_option("--target", solve.target)->required();

  TierArgs tier;
  auto* tier_cmd = app.add_subcommand("tier", "tiered access");
  tier_cmd->require_subcommand(1);
  auto* tier_apply = tier_cmd->add_subcommand("apply", "perturb logits for a tier");
  tier_apply->add_option("--policy", tier.policy)->required();
  tier_apply->add_option("--tier", tier.tier)->required();
  tier_apply->add_option("--logits", tier.logits)->required();
  tier_apply->add_option("--request-id", tier.request_id)->required();
  tier_apply->add_option("--out", tier.out)->required();
  auto* tier_resolve = tier_cmd->add_subcommand("resolve", "print a tier's noise level");
  tier_resolve->add_option("--policy", tier.policy)->required();
  tier_resolve->add_option("--tier", tier.tier)->required();
  auto* tier_make = tier_cmd->add_subcommand("make", "write a policy file from a fit");
  tier_make->add_option("--fit", tier.fit)->required();
  tier_make->add_option("--metric", tier.metric)->capture_default_str();
  tier_make->add_option("--seed", tier.seed)->capture_default_str();
  tier_make->add_option("--tiers", tier.tiers, "name=target,... lowest tier first")->required();
  tier_make->add_option("--out", tier.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitFlags;
  }

  if (synth_blobs->parsed()) return cmd_synth_blobs(blobs);
  if (synth_scene->parsed()) return cmd_synth_scene(scene);
  if (perturb_cmd->parsed()) return cmd_perturb(perturb);
  if (eval_cmd->parsed()) return cmd_eval(eval);
  if (cal_cmd->parsed()) return cmd_calibrate(cal);
  if (fit_cmd->parsed()) return cmd_fit(fit);
  if (solve_cmd->parsed()) return cmd_solve(solve);
  if (tier_apply->parsed()) return cmd_tier_apply(tier);
  if (tier_resolve->parsed()) return cmd_tier_resolve(tier);
  if (tier_make->parsed()) return cmd_tier_make(tier);
  return kExitFlags;
}

} // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ug::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFlags;
  } catch (const ug::ShapeError& e) {
    std::cerr << "shape error: " << e.what() << '\n';
    return kExitShape;
  } catch (const ug::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitFormat;
  } catch (const ug::FitError& e) {
    std::cerr << "fit error: " << e.what() << '\n';
    return kExitFormat;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
