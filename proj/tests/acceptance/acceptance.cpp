// Runs every acceptance criterion at its stated tolerance and prints one
// PASS/FAIL line per criterion. Exit status is non-zero if any criterion fails.

#include "oracles.hpp"
#include "process.hpp"

#include "utilgate/calibration.hpp"
#include "utilgate/curvefit.hpp"
#include "utilgate/error.hpp"
#include "utilgate/importance.hpp"
#include "utilgate/metrics.hpp"
#include "utilgate/noise.hpp"
#include "utilgate/synth.hpp"
#include "utilgate/tier.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace utilgate;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

double acc(const LogitsBatch& l, const LabelBatch& y) { return accuracy(argmax_classes(l), y).value; }
double miou_of(const LogitsBatch& l, const LabelBatch& y) { return miou(argmax_classes(l), y, l.class_count()).value; }

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- 1 -------------------------------------------------------------------

Outcome zero_noise_identity() {
  std::mt19937_64 gen(1);
  std::uniform_int_distribution<int> small(2, 6), mode_d(0, 3);
  std::normal_distribution<float> g(0.0f, 3.0f);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int failures = 0;
  for (int c = 0; c < 200; ++c) {
    const auto mode = static_cast<PerturbMode>(mode_d(gen));
    const std::size_t K = small(gen);
    const bool seg = mode == PerturbMode::region || u(gen) < 0.5;
    Shape shape = seg ? Shape{K, static_cast<std::size_t>(small(gen)), static_cast<std::size_t>(small(gen))}
                      : Shape{static_cast<std::size_t>(small(gen) * 5), K};
    std::vector<float> v(element_count(shape));
    for (auto& x : v) x = g(gen);
    LogitsBatch logits(Tensor(shape, v), seg ? Layout::segmentation : Layout::classification);
    // Labels equal to the argmax make every position a target.
    LabelBatch labels(argmax_classes(logits).tensor());
    std::vector<float> m(logits.positions());
    for (auto& x : m) x = static_cast<float>(u(gen));
    const Tensor mask(logits.label_shape(), m);
    PerturbationSpec spec{c % 2 ? 0.0 : 1.0 + 9.0 * u(gen), c % 2 ? 1.0 + u(gen) : 0.0, mode, gen()};
    const auto out = perturb(logits, spec, seg ? &mask : nullptr, &labels);
    failures += !(out.logits == logits);
  }
  return {failures == 0, std::to_string(200 - failures) + "/200 cases bit-identical"};
}

// ---- 2 -------------------------------------------------------------------

Outcome targeted_invariance() {
  const auto blobs = gen_blobs_logits({10, 100, 0.75, 16, 2});
  const double clean = acc(blobs.logits, blobs.labels);
  const auto pred = argmax_classes(blobs.logits);
  std::vector<std::size_t> wrong, right;
  for (std::size_t n = 0; n < blobs.labels.size(); ++n) {
    (pred.values()[n] == blobs.labels.values()[n] ? right : wrong).push_back(n);
  }
  std::size_t changed_wrong = 0, surviving_right = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (auto mode : {PerturbMode::targeted_noise, PerturbMode::targeted_flip}) {
      const auto out = perturb_targeted(blobs.logits, blobs.labels, {1.0, 1.0, mode, seed}).logits;
      for (auto n : wrong) {
        for (std::size_t k = 0; k < 10; ++k) changed_wrong += out.logit(n, k) != blobs.logits.logit(n, k);
      }
      if (mode == PerturbMode::targeted_flip) {
        for (auto n : right) surviving_right += static_cast<std::int32_t>(argmax_at(out, n)) == blobs.labels.values()[n];
      }
    }
  }
  const bool near_70 = std::abs(clean - 0.70) <= 0.05;
  return {near_70 && changed_wrong == 0 && surviving_right == 0,
          "clean accuracy " + fmt("%.3f", clean) + ", changed logits of incorrect samples " +
              std::to_string(changed_wrong) + ", flip accuracy on correct samples " +
              fmt("%.3f", static_cast<double>(surviving_right) / (100.0 * right.size()))};
}

// ---- 3 -------------------------------------------------------------------

Outcome chance_asymptote() {
  const auto blobs = gen_blobs_logits({10, 100, 1.25, 16, 3});
  double total = 0.0;
  for (std::uint64_t t = 0; t < 100; ++t) {
    total += acc(perturb_global(blobs.logits, {5000.0, 1.0, PerturbMode::global, seed_for(3, 0, t)}).logits, blobs.labels);
  }
  const double mean = total / 100;
  return {std::abs(mean - 0.10) <= 0.02, "mean accuracy at sigma 5000 = " + fmt("%.4f", mean)};
}

// ---- 4 -------------------------------------------------------------------

Outcome mask_equivalences() {
  int failures = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto scene = gen_scene({32 + 8 * (s % 5), 32 + 8 * (s % 3), 2 + s % 4, 1 + s % 3, s});
    const auto H = scene.labels.tensor().dim(0), W = scene.labels.tensor().dim(1);
    const PerturbationSpec region{0.5 + 0.1 * static_cast<double>(s % 7), 1.0, PerturbMode::region, s * 7919};
    PerturbationSpec global = region;
    global.mode = PerturbMode::global;
    failures += !(perturb_region(scene.logits, Tensor({H, W}, std::vector<float>(H * W, 0.0f)), region).logits == scene.logits);
    failures += !(perturb_region(scene.logits, Tensor({H, W}, std::vector<float>(H * W, 1.0f)), region).logits ==
                  perturb_global(scene.logits, global).logits);
  }
  return {failures == 0, std::to_string(200 - failures) + "/200 mask comparisons bit-exact"};
}

// ---- 5 -------------------------------------------------------------------

Outcome metric_oracles() {
  std::mt19937_64 gen(5);
  std::uniform_int_distribution<int> side(1, 16), kd(2, 5), pct(0, 99);
  double worst = 0.0, worst_identity = 0.0;
  int nan_mismatch = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const int k = kd(gen);
    const Shape shape{static_cast<std::size_t>(side(gen)), static_cast<std::size_t>(side(gen))};
    std::uniform_int_distribution<int> cls(0, k - 1);
    std::vector<int> pred, truth;
    for (std::size_t i = 0; i < shape[0] * shape[1]; ++i) {
      truth.push_back(i > 0 && pct(gen) < 5 ? 255 : cls(gen));
      pred.push_back(truth.back() != 255 && pct(gen) < 50 ? truth.back() : cls(gen));
    }
    const LabelBatch p(Tensor(shape, std::vector<std::int32_t>(pred.begin(), pred.end())));
    const LabelBatch t(Tensor(shape, std::vector<std::int32_t>(truth.begin(), truth.end())));
    const auto [mi, mi_per] = oracle::miou(pred, truth, k);
    const auto [di, di_per] = oracle::dice(pred, truth, k);
    const auto m = miou(p, t, k);
    const auto d = dice(p, t, k);
    worst = std::max({worst, std::abs(accuracy(p, t).value - oracle::accuracy(pred, truth)),
                      std::abs(m.value - mi), std::abs(d.value - di)});
    for (int c = 0; c < k; ++c) {
      if (std::isnan(mi_per[c]) || std::isnan(m.per_class[c])) {
        nan_mismatch += std::isnan(mi_per[c]) != std::isnan(m.per_class[c]);
        continue;
      }
      worst = std::max({worst, std::abs(m.per_class[c] - mi_per[c]), std::abs(d.per_class[c] - di_per[c])});
      worst_identity = std::max(worst_identity, std::abs(d.per_class[c] - 2 * m.per_class[c] / (1 + m.per_class[c])));
    }
  }
  return {worst <= 1e-12 && worst_identity <= 1e-12 && nan_mismatch == 0,
          "max oracle deviation " + fmt("%.3g", worst) + ", max Dice-IoU deviation " + fmt("%.3g", worst_identity)};
}

// ---- 6 -------------------------------------------------------------------

struct TrueCurve {
  double a, b, c;
};

std::vector<CurvePoint> curve_samples(const TrueCurve& t, double sd, int trials, std::mt19937_64& gen) {
  std::normal_distribution<double> noise(0.0, sd);
  std::vector<CurvePoint> pts;
  for (double s : default_sigma_grid()) {
    if (sd == 0.0) {
      pts.push_back({s, oracle::decay(t.a, t.b, t.c, s), 0.0});
      continue;
    }
    std::vector<double> obs(trials);
    double mean = 0.0;
    for (auto& y : obs) {
      y = oracle::decay(t.a, t.b, t.c, s) + noise(gen);
      mean += y / trials;
    }
    double ss = 0.0;
    for (double y : obs) ss += (y - mean) * (y - mean);
    pts.push_back({s, mean, std::sqrt(ss / (trials - 1))});
  }
  return pts;
}

std::vector<DecayFit> g_exp_fits; // reused by criterion 7

Outcome fit_recovery() {
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> ad(0.3, 0.9), bd(0.2, 3.0), cd(0.0, 0.3);
  double worst_exact = 0.0;
  int exact_fail = 0, noisy_fail = 0, errors = 0;
  int over[3] = {0, 0, 0}; // noisy replicates over 5% in a, b, c
  double worst_noisy = 0.0;
  std::string worst_case;
  for (int noisy = 0; noisy < 2; ++noisy) {
    for (int rep = 0; rep < 100; ++rep) {
      const TrueCurve t{ad(gen), bd(gen), cd(gen)};
      const auto pts = curve_samples(t, noisy ? 0.01 : 0.0, 50, gen);
      try {
        const auto f = fit_decay(pts);
        g_exp_fits.push_back(f);
        const double err = std::max({oracle::relative_error(f.a, t.a), oracle::relative_error(f.b, t.b),
                                     oracle::relative_error(f.c, t.c)});
        if (!noisy) {
          worst_exact = std::max(worst_exact, err);
          exact_fail += err > 1e-6;
        } else {
          noisy_fail += err > 0.05;
          over[0] += oracle::relative_error(f.a, t.a) > 0.05;
          over[1] += oracle::relative_error(f.b, t.b) > 0.05;
          over[2] += oracle::relative_error(f.c, t.c) > 0.05;
          if (err > worst_noisy) {
            worst_noisy = err;
            worst_case = "a=" + fmt("%.3f", t.a) + " b=" + fmt("%.3f", t.b) + " c=" + fmt("%.4f", t.c) +
                         " fitted c=" + fmt("%.4f", f.c);
          }
        }
      } catch (const FitError&) {
        ++errors;
      }
    }
  }
  return {exact_fail == 0 && noisy_fail == 0 && errors == 0,
          "noiseless worst rel err " + fmt("%.2g", worst_exact) + " (" + std::to_string(exact_fail) +
 " over 1e-6); noisy " + std::to_string(noisy_fail) + "/100 over 5% (a " + std::to_string(over[0]) +
              ", b " + std::to_string(over[1]) + ", c " + std::to_string(over[2]) + "), worst " + fmt("%.3f", worst_noisy) +
              " at " + worst_case + "; fit errors " + std::to_string(errors)};
}

// ---- 7 -------------------------------------------------------------------

std::vector<DecayFit> g_iso_fits; // filled from calibration tables

Outcome inverse_round_trip() {
  if (g_iso_fits.empty()) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto blobs = gen_blobs_logits({10, 100, 1.25, 16, 70 + s});
      SweepPlan plan;
      plan.sigma_grid = {0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0};
      plan.trials = 10;
      plan.base_seed = s;
      g_iso_fits.push_back(fit_interpolant(run_sweep(blobs.logits, blobs.labels, plan)));
    }
  }
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  std::size_t curves = 0, clamped = 0;
  auto check = [&](const DecayFit& f, double lo, double hi) {
    ++curves;
    for (int i = 0; i < 1000; ++i) {
      double m = lo + (hi - lo) * u(gen);
      if (m <= lo || m >= hi) m = 0.5 * (lo + hi);
      const auto s = solve_sigma(f, m);
      if (s.clamp != Clamp::none) {
        ++clamped;
        continue;
      }
      worst = std::max(worst, std::abs(predict(f, s.sigma) - m));
    }
  };
  for (const auto& f : g_exp_fits) check(f, f.c, std::min(f.metric_at_zero, 1.0));
  for (const auto& f : g_iso_fits) check(f, f.knots.back().value, f.metric_at_zero);
  return {worst < 1e-9 && clamped == 0 && curves > 0,
          std::to_string(curves) + " curves x 1000 targets, max |predict(solve(m)) - m| = " + fmt("%.3g", worst)};
}

// ---- 8 -------------------------------------------------------------------

Outcome clamp_behavior() {
  testproc::ScratchDir dir("utilgate_acceptance_clamp");
  auto cli = [&](const std::string& args) { return testproc::run(UTILGATE_CLI, args, dir.path); };
  std::vector<std::string> problems;

  if (cli("synth blobs --seed 8 --logits-out " + dir / "l.utct" + " --labels-out " + dir / "y.utct").code != 0) {
    return {false, "synth blobs failed"};
  }
  const auto blobs = gen_blobs_logits({10, 100, 1.25, 16, 8});
  SweepPlan plan;
  plan.trials = 10;
  const auto fit = fit_auto(run_sweep(blobs.logits, blobs.labels, plan));

  const double at_max = fit.metric_at_zero;
  const double above = std::min(1.0, at_max + 0.02);
  std::ofstream(dir / "policy.txt")
      << TierPolicy(MetricKind::accuracy, 17, fit, {{"basic", 0.5}, {"top", at_max}, {"beyond", above}}).to_text();
  for (const char* tier : {"top", "beyond"}) {
    const auto resolved = cli("tier resolve --policy " + dir / "policy.txt" + " --tier " + tier);
    if (resolved.out.find("sigma=0 clamp=above_max") == std::string::npos) {
      problems.push_back(std::string(tier) + " resolved to '" + resolved.out + "'");
    }
    for (int id : {0, 1, 99}) {
      const auto r = cli("tier apply --policy " + dir / "policy.txt" + " --tier " + tier + " --logits " + dir / "l.utct" +
                         " --request-id " + std::to_string(id) + " --out " + dir / "o.utct");
      if (r.code != 0 || testproc::slurp(dir / "o.utct") != testproc::slurp(dir / "l.utct")) {
        problems.push_back(std::string(tier) + " request " + std::to_string(id) + " modified the logits");
      }
    }
  }
  const auto basic = cli("tier apply --policy " + dir / "policy.txt" + " --tier basic --logits " + dir / "l.utct" +
                         " --request-id 0 --out " + dir / "o.utct");
  if (basic.code != 0 || testproc::slurp(dir / "o.utct") == testproc::slurp(dir / "l.utct")) {
    problems.push_back("basic tier left the logits unchanged");
  }
  std::string detail = problems.empty() ? "targets " + fmt("%.6f", at_max) + " and " + fmt("%.6f", above) +
                                              " gave sigma=0 and byte-identical tier apply output"
                                        : problems.front();
  return {problems.empty(), detail};
}

// ---- 9 -------------------------------------------------------------------

Outcome target_attainment() {
  const auto calib = gen_blobs_logits({10, 200, 1.25, 16, 9});
  SweepPlan plan;
  plan.sigma_grid = {0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0};
  plan.trials = 50;
  plan.base_seed = 9;
  const auto fit = fit_auto(run_sweep(calib.logits, calib.labels, plan, 2));

  const auto held_out = gen_blobs_logits({10, 200, 1.25, 16, 909});
  bool pass = true;
  std::string detail = std::string("family=") + std::string(family_name(fit.family));
  for (double target : {0.3, 0.5, 0.7}) {
    const auto s = solve_sigma(fit, target);
    double total = 0.0;
    for (std::uint64_t t = 0; t < 50; ++t) {
      total += acc(perturb_global(held_out.logits, {s.sigma, 1.0, PerturbMode::global, seed_for(90909, 0, t)}).logits,
                   held_out.labels);
    }
    const double achieved = total / 50;
    pass &= s.clamp == Clamp::none && std::abs(achieved - target) <= 0.03;
    detail += "; target " + fmt("%.1f", target) + " sigma " + fmt("%.4f", s.sigma) + " achieved " + fmt("%.4f", achieved);
  }
  return {pass, detail};
}

// ---- 10 ------------------------------------------------------------------

Outcome region_vs_global() {
  constexpr double sigma = 2.0;
  constexpr int trials = 10;
  double region_sum = 0.0, global_sum = 0.0;
  int scenes = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto scene = gen_scene({64, 64, 4, 3, 1000 + s});
    const auto mask = make_mask(scene.importance, {0.5, false});
    double fraction = 0.0;
    for (float m : mask.floats()) fraction += m;
    fraction /= static_cast<double>(mask.size());
    if (fraction == 0.0) continue;
    const double clean = miou_of(scene.logits, scene.labels);
    double region = 0.0, global = 0.0;
    for (std::uint64_t t = 0; t < trials; ++t) {
      region += miou_of(perturb_region(scene.logits, mask, {sigma, 1.0, PerturbMode::region, t}).logits, scene.labels);
      global += miou_of(perturb_global(scene.logits, {sigma, 1.0, PerturbMode::global, t}).logits, scene.labels);
    }
    region_sum += (clean - region / trials) / fraction;
    global_sum += (clean - global / trials) / 1.0;
    ++scenes;
  }
  const double r = region_sum / scenes, g = global_sum / scenes;
  return {scenes == 50 && r >= g, "mIoU drop per perturbed-pixel fraction: region " + fmt("%.4f", r) + ", global " +
                                      fmt("%.4f", g) + " over " + std::to_string(scenes) + " scenes"};
}

// ---- 11 ------------------------------------------------------------------

Outcome parallel_determinism() {
  testproc::ScratchDir dir("utilgate_acceptance_workers");
  auto run = [&](const std::string& args) { return testproc::run(UTILGATE_CLI, args, dir.path); };
  if (run("synth blobs --per-class 100 --seed 11 --logits-out " + dir / "l.utct" + " --labels-out " + dir / "y.utct").code ||
      run("synth scene --seed 11 --logits-out " + dir / "sl.utct" + " --labels-out " + dir / "sy.utct" +
          " --importance-out " + dir / "si.utct").code) {
    return {false, "synth failed"};
  }
  const std::vector<std::string> jobs{
      "calibrate --logits " + dir / "l.utct" + " --labels " + dir / "y.utct" + " --metric acc --trials 20 --seed 5",
      "calibrate --logits " + dir / "sl.utct" + " --labels " + dir / "sy.utct" +
          " --metric miou --trials 8 --seed 6 --mask " + dir / "si.utct" + " --tau 0.5"};
  std::size_t identical = 0, total = 0;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    std::string reference;
    for (const char* workers : {"1", "2", "8"}) {
      const auto out = dir / ("t" + std::to_string(j) + "_" + workers + ".csv");
      const auto r = testproc::run("/usr/bin/env", std::string("UTILGATE_THREADS=") + workers + " '" + UTILGATE_CLI +
                                                       "' " + jobs[j] + " --out " + out,
                                   dir.path);
      if (r.code != 0) return {false, "calibrate failed: " + r.err};
      const auto bytes = testproc::slurp(out);
      if (reference.empty()) reference = bytes;
      ++total;
      identical += bytes == reference && !bytes.empty();
    }
  }
  return {identical == total, std::to_string(identical) + "/" + std::to_string(total) +
                                  " tables byte-identical across 1, 2 and 8 workers"};
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds; // 0 when no runtime bound is stated
  std::function<Outcome()> run;
};

} // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "zero-noise identity", 5, zero_noise_identity},
      {2, "targeted invariance", 30, targeted_invariance},
      {3, "chance-level asymptote", 60, chance_asymptote},
      {4, "mask equivalences", 30, mask_equivalences},
      {5, "metric oracles", 30, metric_oracles},
      {6, "fit recovery", 60, fit_recovery},
      {7, "inverse round-trip", 0, inverse_round_trip},
      {8, "clamp behavior", 0, clamp_behavior},
      {9, "end-to-end target attainment", 180, target_attainment},
      {10, "region vs global ordering", 0, region_vs_global},
      {11, "determinism across workers", 0, parallel_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.limit_seconds > 0 && seconds > c.limit_seconds) {
      o.pass = false;
      o.detail += "; exceeded " + fmt("%.0f", c.limit_seconds) + " s";
    }
    failed += !o.pass;
    std::printf("criterion %2d %-30s %s  (%s; %.2f s)\n", c.id, c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str(), seconds);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
