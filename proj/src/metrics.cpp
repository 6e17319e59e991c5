#include "utilgate/metrics.hpp"

#include "utilgate/error.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace utilgate {

namespace {

void require_same_shape(const LabelBatch& pred, const LabelBatch& truth) {
  if (pred.tensor().shape() != truth.tensor().shape()) throw ShapeError("prediction and truth shapes differ");
}

enum class Overlap { iou, dice };

MetricReport class_mean(MetricKind kind, const Confusion& c, Overlap overlap) {
  MetricReport report;
  report.kind = kind;
  report.sample_count = c.evaluated;
  report.per_class.assign(c.intersection.size(), std::numeric_limits<double>::quiet_NaN());
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < c.intersection.size(); ++k) {
    const auto both = c.predicted[k] + c.actual[k];
    if (both == 0) continue;
    const auto inter = static_cast<double>(c.intersection[k]);
    const double v = overlap == Overlap::iou ? inter / static_cast<double>(both - c.intersection[k])
                                             : 2.0 * inter / static_cast<double>(both);
    report.per_class[k] = v;
    total += v;
    ++present;
  }
  if (present == 0) throw InvalidArgument("no evaluable positions");
  report.value = total / static_cast<double>(present);
  return report;
}

} // namespace

std::string_view metric_name(MetricKind kind) {
  switch (kind) {
  case MetricKind::accuracy: return "accuracy";
  case MetricKind::miou: return "miou";
  case MetricKind::dice: return "dice";
  }
  return "unknown";
}

MetricKind parse_metric(std::string_view text) {
  if (text == "accuracy" || text == "acc") return MetricKind::accuracy;
  if (text == "miou") return MetricKind::miou;
  if (text == "dice") return MetricKind::dice;
  throw InvalidArgument("unknown metric '" + std::string(text) + "'");
}

std::string format_metric(double value) {
  if (std::isnan(value)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", value);
  return buf;
}

std::string MetricReport::to_text() const {
  std::ostringstream out;
  out << "metric_kind=" << metric_name(kind) << '\n'
      << "value=" << format_metric(value) << '\n'
      << "sample_count=" << sample_count << '\n';
  if (!per_class.empty()) {
    out << "per_class=";
    for (std::size_t k = 0; k < per_class.size(); ++k) out << (k ? "," : "") << format_metric(per_class[k]);
    out << '\n';
  }
  return out.str();
}

Confusion count_overlap(const LabelBatch& pred, const LabelBatch& truth, std::size_t class_count) {
  require_same_shape(pred, truth);
  Confusion c;
  c.intersection.assign(class_count, 0);
  c.predicted.assign(class_count, 0);
  c.actual.assign(class_count, 0);
  auto p = pred.values();
  auto t = truth.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == kIgnoreLabel || t[i] == kIgnoreLabel) continue;
    if (p[i] < 0 || t[i] < 0 || static_cast<std::size_t>(p[i]) >= class_count ||
        static_cast<std::size_t>(t[i]) >= class_count) {
      throw InvalidArgument("label outside [0," + std::to_string(class_count) + ") at flat index " +
                            std::to_string(i));
    }
    ++c.evaluated;
    ++c.predicted[static_cast<std::size_t>(p[i])];
    ++c.actual[static_cast<std::size_t>(t[i])];
    if (p[i] == t[i]) {
      ++c.agreed;
      ++c.intersection[static_cast<std::size_t>(p[i])];
    }
  }
  return c;
}

MetricReport accuracy(const LabelBatch& pred, const LabelBatch& truth) {
  require_same_shape(pred, truth);
  auto p = pred.values();
  auto t = truth.values();
  std::size_t evaluated = 0;
  std::size_t agreed = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == kIgnoreLabel || t[i] == kIgnoreLabel) continue;
    ++evaluated;
    agreed += p[i] == t[i];
  }
  if (evaluated == 0) throw InvalidArgument("no evaluable positions");
  MetricReport report;
  report.kind = MetricKind::accuracy;
  report.value = static_cast<double>(agreed) / static_cast<double>(evaluated);
  report.sample_count = evaluated;
  return report;
}

MetricReport miou(const LabelBatch& pred, const LabelBatch& truth, std::size_t class_count) {
  return class_mean(MetricKind::miou, count_overlap(pred, truth, class_count), Overlap::iou);
}

MetricReport dice(const LabelBatch& pred, const LabelBatch& truth, std::size_t class_count) {
  return class_mean(MetricKind::dice, count_overlap(pred, truth, class_count), Overlap::dice);
}

MetricReport evaluate(MetricKind kind, const LabelBatch& pred, const LabelBatch& truth, std::size_t class_count) {
  switch (kind) {
  case MetricKind::accuracy: return accuracy(pred, truth);
  case MetricKind::miou: return miou(pred, truth, class_count);
  case MetricKind::dice: return dice(pred, truth, class_count);
  }
  throw InvalidArgument("unknown metric");
}

MetricReport evaluate_per_image(MetricKind kind, std::span<const LabelBatch> preds,
                                std::span<const LabelBatch> truths, std::size_t class_count) {
  if (preds.size() != truths.size()) throw ShapeError("prediction and truth image counts differ");
  if (preds.empty()) throw InvalidArgument("no images to evaluate");
  MetricReport report;
  report.kind = kind;
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += evaluate(kind, preds[i], truths[i], class_count).value;
  report.value = total / static_cast<double>(preds.size());
  report.sample_count = preds.size();
  return report;
}

} // namespace utilgate
