#include "utilgate/curvefit.hpp"

#include "utilgate/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>

namespace utilgate {

namespace {

constexpr double kMinStddev = 0.005;
constexpr double kLogEpsilon = 1e-9;
constexpr double kInitMargin = 0.02;
constexpr double kDampingStart = 1e-3;
constexpr double kDampingFactor = 10.0;
constexpr double kDampingCeiling = 1e12;
constexpr double kSigmaMaxFactor = 4.0;
constexpr double kPeakSlack = 0.05;

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<Vec3, 3>;

double logistic(double w) { return 1.0 / (1.0 + std::exp(-w)); }
double logit(double c) { return std::log(c / (1.0 - c)); }

// Gaussian elimination with partial pivoting; false when singular.
bool solve3(Mat3 m, Vec3 rhs, Vec3& x) {
  for (int col = 0; col < 3; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 3; ++r) {
      if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
    }
    if (!(std::abs(m[pivot][col]) > 0.0)) return false;
    std::swap(m[col], m[pivot]);
    std::swap(rhs[col], rhs[pivot]);
    for (int r = col + 1; r < 3; ++r) {
      const double f = m[r][col] / m[col][col];
      for (int k = col; k < 3; ++k) m[r][k] -= f * m[col][k];
      rhs[r] -= f * rhs[col];
    }
  }
  for (int r = 2; r >= 0; --r) {
    double s = rhs[r];
    for (int k = r + 1; k < 3; ++k) s -= m[r][k] * x[k];
    x[r] = s / m[r][r];
  }
  return std::isfinite(x[0]) && std::isfinite(x[1]) && std::isfinite(x[2]);
}

struct Params {
  double a, b, c;
};

Params decode(const Vec3& theta) { return {std::exp(theta[0]), std::exp(theta[1]), logistic(theta[2])}; }

double weight_of(const CurvePoint& p) { return 1.0 / std::max(p.stddev, kMinStddev); }

double weighted_cost(std::span<const CurvePoint> pts, const Vec3& theta) {
  const auto [a, b, c] = decode(theta);
  double cost = 0.0;
  for (const auto& p : pts) {
    const double r = weight_of(p) * (p.mean - (a * std::exp(-b * p.sigma) + c));
    cost += r * r;
  }
  return cost;
}

std::vector<CurvePoint> sorted_points(std::span<const CurvePoint> points) {
  std::vector<CurvePoint> pts(points.begin(), points.end());
  std::stable_sort(pts.begin(), pts.end(), [](const auto& l, const auto& r) { return l.sigma < r.sigma; });
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (pts[i].sigma == pts[i - 1].sigma) throw FitError("duplicate sigma value in curve points");
  }
  for (const auto& p : pts) {
    if (!(p.sigma >= 0.0) || !std::isfinite(p.mean) || !std::isfinite(p.stddev)) {
      throw FitError("curve points must have finite values and sigma >= 0");
    }
  }
  return pts;
}

Vec3 initial_guess(const std::vector<CurvePoint>& pts) {
  double c0 = pts.front().mean;
  for (const auto& p : pts) c0 = std::min(c0, p.mean);
  const double a0 = std::max(pts.front().mean - c0, 1e-6);

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = 0;
  for (const auto& p : pts) {
    if (p.mean - c0 <= kInitMargin) continue;
    const double y = std::log(p.mean - c0 + kLogEpsilon);
    sx += p.sigma;
    sy += y;
    sxx += p.sigma * p.sigma;
    sxy += p.sigma * y;
    ++n;
  }
  double b0 = 0.0;
  if (n >= 2) {
    const double denom = static_cast<double>(n) * sxx - sx * sx;
    if (denom > 0.0) b0 = -(static_cast<double>(n) * sxy - sx * sy) / denom;
  }
  if (!(b0 > 0.0) || !std::isfinite(b0)) {
    double mean_sigma = 0.0;
    for (const auto& p : pts) mean_sigma += p.sigma;
    mean_sigma /= static_cast<double>(pts.size());
    b0 = 1.0 / std::max(mean_sigma, 1e-6);
  }
  const double c_start = std::clamp(c0, 1e-6, 1.0 - 1e-6);
  return {std::log(a0), std::log(b0), logit(c_start)};
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_number(const std::string& text, const std::string& key) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw FormatError("bad value for " + key + ": '" + text + "'");
  }
}

void validate_fit(const DecayFit& fit, bool check_peak) {
  if (fit.family == CurveFamily::exponential) {
    if (!(fit.a > 0.0) || !(fit.b > 0.0)) throw FitError("decay fit needs a > 0 and b > 0");
    if (!(fit.c >= 0.0 && fit.c < 1.0)) throw FitError("decay fit floor c must lie in [0,1)");
    if (check_peak && !(fit.a + fit.c <= 1.0 + kPeakSlack)) throw FitError("decay fit peak a + c exceeds 1.05");
  } else {
    if (fit.knots.empty()) throw FitError("isotonic fit has no knots");
    for (std::size_t i = 1; i < fit.knots.size(); ++i) {
      if (!(fit.knots[i].sigma > fit.knots[i - 1].sigma)) throw FitError("isotonic knots must ascend in sigma");
      if (fit.knots[i].value > fit.knots[i - 1].value) throw FitError("isotonic knots must be non-increasing");
    }
  }
  if (!(fit.sigma_max >= 0.0)) throw FitError("sigma_max must be >= 0");
}

} // namespace

std::string_view family_name(CurveFamily family) {
  return family == CurveFamily::exponential ? "exp" : "isotonic";
}

std::string_view clamp_name(Clamp clamp) {
  switch (clamp) {
  case Clamp::none: return "none";
  case Clamp::above_max: return "above_max";
  case Clamp::below_floor: return "below_floor";
  }
  return "none";
}

std::vector<CurvePoint> curve_points(const CalibrationTable& table) {
  std::vector<CurvePoint> pts;
  const bool has_zero =
      std::any_of(table.summary.begin(), table.summary.end(), [](const auto& s) { return s.sigma == 0.0; });
  if (!has_zero) pts.push_back({0.0, table.clean_metric, 0.0});
  for (const auto& s : table.summary) pts.push_back({s.sigma, s.mean, s.stddev});
  return pts;
}

DecayFit fit_decay(std::span<const CurvePoint> points) {
  const auto pts = sorted_points(points);
  if (pts.size() < 4) throw FitError("exponential fit needs at least 4 distinct sigma values");
  const auto [lo, hi] = std::minmax_element(pts.begin(), pts.end(), [](auto& l, auto& r) { return l.mean < r.mean; });
  if (hi->mean - lo->mean < 1e-12) throw FitError("degenerate data: all per-sigma means are equal");

  Vec3 theta = initial_guess(pts);
  double cost = weighted_cost(pts, theta);
  double damping = kDampingStart;
  bool converged = false;
  int iter = 0;
  for (; iter < kFitMaxIterations && !converged; ++iter) {
    const auto [a, b, c] = decode(theta);
    Mat3 jtj{};
    Vec3 jtr{};
    for (const auto& p : pts) {
      const double w = weight_of(p);
      const double e = std::exp(-b * p.sigma);
      const double r = w * (p.mean - (a * e + c));
      // Jacobian of the residual with respect to (log a, log b, logit c).
      const Vec3 j{-w * a * e, w * a * b * p.sigma * e, -w * c * (1.0 - c)};
      for (int m = 0; m < 3; ++m) {
        jtr[m] += j[m] * r;
        for (int n = 0; n < 3; ++n) jtj[m][n] += j[m] * j[n];
      }
    }
    if (cost == 0.0) {
      converged = true;
      break;
    }

    Mat3 lhs = jtj;
    for (int m = 0; m < 3; ++m) lhs[m][m] += damping * std::max(jtj[m][m], 1e-12);
    Vec3 step{};
    const Vec3 rhs{-jtr[0], -jtr[1], -jtr[2]};
    if (!solve3(lhs, rhs, step)) {
      damping *= kDampingFactor;
      converged = damping > kDampingCeiling;
      continue;
    }
    const Vec3 trial{theta[0] + step[0], theta[1] + step[1], theta[2] + step[2]};
    const double trial_cost = weighted_cost(pts, trial);
    const double step_size = std::max({std::abs(step[0]), std::abs(step[1]), std::abs(step[2])});
    if (std::isfinite(trial_cost) && trial_cost <= cost) {
      theta = trial;
      cost = trial_cost;
      damping = std::max(damping / kDampingFactor, 1e-15);
      converged = step_size < kFitStepTolerance;
    } else {
      damping *= kDampingFactor;
      // No downhill step at any damping: stationary to working precision.
      converged = damping > kDampingCeiling || step_size < kFitStepTolerance;
    }
  }
  if (!converged) throw FitError("exponential fit did not converge in 200 iterations");

  const auto [a, b, c] = decode(theta);
  DecayFit fit;
  fit.family = CurveFamily::exponential;
  fit.a = a;
  fit.b = b;
  fit.c = c;
  fit.metric_at_zero = a + c;
  fit.sigma_max = kSigmaMaxFactor * pts.back().sigma;
  fit.iterations = iter;
  double ss = 0.0;
  double max_abs = 0.0;
  for (const auto& p : pts) {
    const double r = p.mean - (a * std::exp(-b * p.sigma) + c);
    ss += r * r;
    max_abs = std::max(max_abs, std::abs(r));
  }
  fit.rmse = std::sqrt(ss / static_cast<double>(pts.size()));
  fit.max_residual = max_abs;
  validate_fit(fit, false);
  return fit;
}

DecayFit fit_decay(const CalibrationTable& table) {
  const auto pts = curve_points(table);
  auto fit = fit_decay(pts);
  validate_fit(fit, true);
  return fit;
}

std::vector<double> pool_adjacent_violators(std::span<const double> values) {
  struct Block {
    double sum;
    std::size_t count;
    double mean() const { return sum / static_cast<double>(count); }
  };
  std::vector<Block> blocks;
  for (double v : values) {
    blocks.push_back({v, 1});
    while (blocks.size() > 1 && blocks[blocks.size() - 2].mean() < blocks.back().mean()) {
      blocks[blocks.size() - 2].sum += blocks.back().sum;
      blocks[blocks.size() - 2].count += blocks.back().count;
      blocks.pop_back();
    }
  }
  std::vector<double> out;
  out.reserve(values.size());
  for (const auto& b : blocks) out.insert(out.end(), b.count, b.mean());
  return out;
}

DecayFit fit_interpolant(std::span<const CurvePoint> points) {
  const auto pts = sorted_points(points);
  if (pts.size() < 2) throw FitError("interpolant needs at least 2 distinct sigma values");
  std::vector<double> means;
  for (const auto& p : pts) means.push_back(p.mean);
  const auto pooled = pool_adjacent_violators(means);

  DecayFit fit;
  fit.family = CurveFamily::isotonic;
  double ss = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    fit.knots.push_back({pts[i].sigma, pooled[i]});
    ss += (pooled[i] - means[i]) * (pooled[i] - means[i]);
    fit.max_residual = std::max(fit.max_residual, std::abs(pooled[i] - means[i]));
  }
  fit.rmse = std::sqrt(ss / static_cast<double>(pts.size()));
  fit.metric_at_zero = pooled.front();
  fit.sigma_max = kSigmaMaxFactor * pts.back().sigma;
  validate_fit(fit, true);
  return fit;
}

DecayFit fit_interpolant(const CalibrationTable& table) {
  const auto pts = curve_points(table);
  return fit_interpolant(pts);
}

DecayFit fit_auto(const CalibrationTable& table) {
  try {
    auto fit = fit_decay(table);
    if (fit.rmse <= kExpRmseFallback && fit.max_residual <= kExpResidualFallback) return fit;
  } catch (const FitError&) {
  }
  return fit_interpolant(table);
}

double predict(const DecayFit& fit, double sigma) {
  if (!(sigma >= 0.0)) throw InvalidArgument("sigma must be >= 0");
  double v = 0.0;
  if (fit.family == CurveFamily::exponential) {
    v = fit.a * std::exp(-fit.b * sigma) + fit.c;
  } else {
    const auto& k = fit.knots;
    if (sigma <= k.front().sigma) {
      v = k.front().value;
    } else if (sigma >= k.back().sigma) {
      v = k.back().value;
    } else {
      const auto hi = std::upper_bound(k.begin(), k.end(), sigma, [](double s, const Knot& n) { return s < n.sigma; });
      const auto lo = hi - 1;
      const double t = (sigma - lo->sigma) / (hi->sigma - lo->sigma);
      v = lo->value + t * (hi->value - lo->value);
    }
  }
  return std::clamp(v, 0.0, 1.0);
}

SigmaSolution solve_sigma(const DecayFit& fit, double target) {
  if (!(target >= 0.0 && target <= 1.0)) throw InvalidArgument("target metric must lie in [0,1]");
  if (target >= fit.metric_at_zero) return {0.0, Clamp::above_max};

  if (fit.family == CurveFamily::exponential) {
    if (target <= fit.c) return {fit.sigma_max, Clamp::below_floor};
    return {-std::log((target - fit.c) / fit.a) / fit.b, Clamp::none};
  }

  const auto& k = fit.knots;
  if (target < k.back().value) return {fit.sigma_max, Clamp::below_floor};
  for (std::size_t j = 0; j + 1 < k.size(); ++j) {
    if (k[j].value == target) return {k[j].sigma, Clamp::none};
    if (k[j + 1].value == target) return {k[j + 1].sigma, Clamp::none};
    if (k[j + 1].value < target) {
      const double t = (k[j].value - target) / (k[j].value - k[j + 1].value);
      return {k[j].sigma + t * (k[j + 1].sigma - k[j].sigma), Clamp::none};
    }
  }
  return {k.back().sigma, Clamp::none};
}

std::string DecayFit::to_text() const {
  std::ostringstream out;
  out << "family=" << family_name(family) << '\n';
  if (family == CurveFamily::exponential) {
    out << "a=" << fmt17(a) << '\n' << "b=" << fmt17(b) << '\n' << "c=" << fmt17(c) << '\n';
  } else {
    out << "knots=";
    for (std::size_t i = 0; i < knots.size(); ++i) {
      out << (i ? ";" : "") << fmt17(knots[i].sigma) << ':' << fmt17(knots[i].value);
    }
    out << '\n';
  }
  out << "rmse=" << fmt17(rmse) << '\n'
      << "sigma_domain=0," << fmt17(sigma_max) << '\n'
      << "metric_at_zero=" << fmt17(metric_at_zero) << '\n'
      << "max_residual=" << fmt17(max_residual) << '\n'
      << "iterations=" << iterations << '\n';
  return out.str();
}

DecayFit DecayFit::parse(std::istream& in) {
  std::map<std::string, std::string> fields;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("fit record line lacks '=': '" + line + "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const auto key = trim(line.substr(0, eq));
    if (!fields.emplace(key, trim(line.substr(eq + 1))).second) throw FormatError("duplicate fit field " + key);
  }

  auto take = [&](const std::string& key) {
    const auto it = fields.find(key);
    if (it == fields.end()) throw FormatError("fit record lacks field " + key);
    auto v = it->second;
    fields.erase(it);
    return v;
  };

  DecayFit fit;
  const auto family = take("family");
  if (family == "exp") {
    fit.family = CurveFamily::exponential;
    fit.a = parse_number(take("a"), "a");
    fit.b = parse_number(take("b"), "b");
    fit.c = parse_number(take("c"), "c");
  } else if (family == "isotonic") {
    fit.family = CurveFamily::isotonic;
    std::istringstream knots(take("knots"));
    std::string pair;
    while (std::getline(knots, pair, ';')) {
      const auto colon = pair.find(':');
      if (colon == std::string::npos) throw FormatError("knot must be sigma:value, got '" + pair + "'");
      fit.knots.push_back({parse_number(pair.substr(0, colon), "knot sigma"),
                           parse_number(pair.substr(colon + 1), "knot value")});
    }
  } else {
    throw FormatError("unknown fit family '" + family + "'");
  }
  fit.rmse = parse_number(take("rmse"), "rmse");
  const auto domain = take("sigma_domain");
  const auto comma = domain.find(',');
  if (comma == std::string::npos || parse_number(domain.substr(0, comma), "sigma_domain") != 0.0) {
    throw FormatError("sigma_domain must read 0,<sigma_max>");
  }
  fit.sigma_max = parse_number(domain.substr(comma + 1), "sigma_domain");
  fit.metric_at_zero = parse_number(take("metric_at_zero"), "metric_at_zero");
  if (fields.contains("max_residual")) fit.max_residual = parse_number(take("max_residual"), "max_residual");
  if (fields.contains("iterations")) fit.iterations = static_cast<int>(parse_number(take("iterations"), "iterations"));
  if (!fields.empty()) throw FormatError("unknown fit field " + fields.begin()->first);
  try {
    validate_fit(fit, true);
  } catch (const FitError& e) {
    throw FormatError(std::string("invalid fit record: ") + e.what());
  }
  return fit;
}

void save_fit(const DecayFit& fit, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << fit.to_text();
  if (!out) throw FormatError("failed writing " + path.string());
}

DecayFit load_fit(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return DecayFit::parse(in);
}

} // namespace utilgate
