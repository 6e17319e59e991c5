#pragma once

#include "utilgate/importance.hpp"
#include "utilgate/metrics.hpp"
#include "utilgate/noise.hpp"
#include "utilgate/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace utilgate {

/// Seed for grid cell (sigma_index, trial):
///   mix64(base + mix64((sigma_index << 32) | trial))
/// mix64 is the splitmix64 finalizer, so the map is injective in the cell for
/// indices below 2^32.
std::uint64_t seed_for(std::uint64_t base, std::uint64_t sigma_index, std::uint64_t trial) noexcept;

/// 0 followed by 9 geometric points from 0.25 to 16.
std::vector<double> default_sigma_grid();

struct SweepPlan {
  std::vector<double> sigma_grid = default_sigma_grid();
  std::size_t trials = 20;
  std::uint64_t base_seed = 0;
  PerturbMode mode = PerturbMode::global;
  double delta = 1.0;
  MetricKind metric = MetricKind::accuracy;
  // Region mode: importance map, thresholded by mask_config when present,
  // otherwise used directly as a fractional mask.
  std::optional<ImportanceMap> importance;
  std::optional<MaskConfig> mask_config;

  void validate() const;
  // Mask consumed by perturb_region, if any.
  std::optional<Tensor> resolve_mask() const;
};

struct CalibrationRow {
  double sigma = 0.0;
  std::size_t trial = 0;
  double value = 0.0;

  bool operator==(const CalibrationRow&) const = default;
};

struct CalibrationSummary {
  double sigma = 0.0;
  double mean = 0.0;
  double stddev = 0.0; // sample standard deviation; 0 for a single trial

  bool operator==(const CalibrationSummary&) const = default;
};

struct CalibrationTable {
  std::vector<CalibrationRow> rows; // sigma-major, then trial
  std::vector<CalibrationSummary> summary;
  double clean_metric = 0.0; // the unperturbed sigma = 0 reference

  // Plan echo.
  PerturbMode mode = PerturbMode::global;
  double delta = 1.0;
  MetricKind metric = MetricKind::accuracy;
  std::size_t trials = 0;
  std::uint64_t base_seed = 0;
  std::string mask_description = "none";

  void write_text(std::ostream& out) const;
  // sigma,mean,stddev rows only, for plotting.
  void write_summary(std::ostream& out) const;
  static CalibrationTable read_text(std::istream& in);

  bool operator==(const CalibrationTable&) const = default;
};

/// Evaluates every (sigma, trial) cell. Cells are independent and may run on
/// `workers` threads; the table does not depend on the worker count.
CalibrationTable run_sweep(const LogitsBatch& logits, const LabelBatch& labels, const SweepPlan& plan,
                           std::size_t workers = 1);

/// Metric of one cell, recomputed in isolation.
double run_cell(const LogitsBatch& logits, const LabelBatch& labels, const SweepPlan& plan,
                std::size_t sigma_index, std::size_t trial);

} // namespace utilgate
