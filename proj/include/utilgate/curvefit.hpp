#pragma once

#include "utilgate/calibration.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace utilgate {

enum class CurveFamily { exponential, isotonic };

std::string_view family_name(CurveFamily family); // "exp" | "isotonic"

enum class Clamp { none, above_max, below_floor };

std::string_view clamp_name(Clamp clamp);

struct CurvePoint {
  double sigma = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
};

struct Knot {
  double sigma = 0.0;
  double value = 0.0;

  bool operator==(const Knot&) const = default;
};

/// A fitted, monotone non-increasing utility curve metric(sigma).
///
/// For the exponential family the curve is a * exp(-b * sigma) + c. The
/// isotonic family is a piecewise-linear interpolant through pooled per-sigma
/// means, flat outside its knots.
struct DecayFit {
  CurveFamily family = CurveFamily::exponential;
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  std::vector<Knot> knots;
  double rmse = 0.0;
  double max_residual = 0.0; // largest |mean - curve| over the fitted points
  double sigma_max = 0.0; // sigma_domain is [0, sigma_max]
  double metric_at_zero = 0.0;
  int iterations = 0;

  // family, parameters at 17 significant digits, rmse, sigma_domain, metric_at_zero
  std::string to_text() const;
  static DecayFit parse(std::istream& in);

  bool operator==(const DecayFit&) const = default;
};

struct SigmaSolution {
  double sigma = 0.0;
  Clamp clamp = Clamp::none;
};

inline constexpr double kFitStepTolerance = 1e-10;
inline constexpr int kFitMaxIterations = 200;
// fit_auto keeps the exponential only while both diagnostics stay within bounds.
inline constexpr double kExpRmseFallback = 0.05;
inline constexpr double kExpResidualFallback = 0.03;

/// Per-sigma means of a table. The clean reference is prepended as a
/// zero-variance sigma = 0 point when the grid itself lacks sigma = 0.
std::vector<CurvePoint> curve_points(const CalibrationTable& table);

/// Weighted damped Gauss-Newton fit of a * exp(-b * sigma) + c.
///
/// Optimizes (log a, log b, logit c) so a > 0, b > 0 and 0 < c < 1 hold at
/// every iterate; each residual is weighted by 1 / max(stddev, 0.005).
/// sigma_max is 4x the largest sigma. Throws FitError on fewer than 4
/// distinct sigmas, flat means or non-convergence.
DecayFit fit_decay(std::span<const CurvePoint> points);
/// As above, additionally requiring a + c <= 1.05 since table values are metrics.
DecayFit fit_decay(const CalibrationTable& table);

/// Pool-adjacent-violators on the means, then linear interpolation.
DecayFit fit_interpolant(std::span<const CurvePoint> points);
DecayFit fit_interpolant(const CalibrationTable& table);

/// Exponential fit, falling back to the interpolant when its rmse exceeds
/// kExpRmseFallback, any residual exceeds kExpResidualFallback, or the fit fails.
DecayFit fit_auto(const CalibrationTable& table);

/// Equal-weight non-increasing isotonic regression.
std::vector<double> pool_adjacent_violators(std::span<const double> values);

/// Curve value at sigma >= 0, clamped to [0,1].
double predict(const DecayFit& fit, double sigma);

/// Noise level that brings the curve to `target`.
///
/// target >= metric_at_zero gives sigma 0 (above_max); a target at or below
/// the floor gives sigma_max (below_floor). Throws for targets outside [0,1].
SigmaSolution solve_sigma(const DecayFit& fit, double target);

void save_fit(const DecayFit& fit, const std::filesystem::path& path);
DecayFit load_fit(const std::filesystem::path& path);

} // namespace utilgate
