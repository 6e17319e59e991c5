#pragma once

#include "utilgate/tensor.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace utilgate {

enum class MetricKind { accuracy, miou, dice };

std::string_view metric_name(MetricKind kind);
// Accepts "accuracy"/"acc", "miou", "dice".
MetricKind parse_metric(std::string_view text);

struct MetricReport {
  MetricKind kind = MetricKind::accuracy;
  double value = 0.0;
  // One entry per class for miou/dice; NaN marks classes absent from both sides.
  std::vector<double> per_class;
  // Evaluable positions (or images, for per-image aggregation).
  std::size_t sample_count = 0;

  // key=value lines: metric_kind, value, sample_count and optionally per_class.
  std::string to_text() const;
};

/// Per-class overlap counts over positions where neither side is the ignore label.
struct Confusion {
  std::vector<std::size_t> intersection;
  std::vector<std::size_t> predicted;
  std::vector<std::size_t> actual;
  std::size_t evaluated = 0;
  std::size_t agreed = 0;
};

Confusion count_overlap(const LabelBatch& pred, const LabelBatch& truth, std::size_t class_count);

MetricReport accuracy(const LabelBatch& pred, const LabelBatch& truth);
MetricReport miou(const LabelBatch& pred, const LabelBatch& truth, std::size_t class_count);
MetricReport dice(const LabelBatch& pred, const LabelBatch& truth, std::size_t class_count);

MetricReport evaluate(MetricKind kind, const LabelBatch& pred, const LabelBatch& truth, std::size_t class_count);

/// Mean of per-image metric values; sample_count is the number of images.
MetricReport evaluate_per_image(MetricKind kind, std::span<const LabelBatch> preds,
                                std::span<const LabelBatch> truths, std::size_t class_count);

// Fixed 9-decimal rendering used by every text record holding a metric value.
std::string format_metric(double value);

} // namespace utilgate
