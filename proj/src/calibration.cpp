#include "utilgate/calibration.hpp"

#include "utilgate/error.hpp"
#include "utilgate/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <istream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace utilgate {

namespace {

std::string format_sigma(double sigma) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", sigma);
  return buf;
}

double parse_double(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw FormatError("bad " + what + " value '" + text + "'");
  }
}

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw FormatError("bad " + what + " value '" + text + "'");
  }
}

template <typename Parse>
auto parse_enum(Parse parse, const std::string& text, const std::string& what) {
  try {
    return parse(text);
  } catch (const InvalidArgument&) {
    throw FormatError("bad " + what + " value '" + text + "'");
  }
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  return out;
}

std::string describe_mask(const SweepPlan& plan) {
  if (!plan.importance) return "none";
  if (!plan.mask_config) return "raw";
  std::string d = "tau=" + format_sigma(plan.mask_config->tau);
  if (plan.mask_config->invert) d += ",invert";
  return d;
}

std::vector<CalibrationSummary> summarize(const std::vector<double>& grid, const std::vector<CalibrationRow>& rows,
                                          std::size_t trials) {
  std::vector<CalibrationSummary> out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    // Accumulating offsets from the first trial keeps constant columns exact.
    const double first = rows[i * trials].value;
    double offset = 0.0;
    for (std::size_t t = 0; t < trials; ++t) offset += rows[i * trials + t].value - first;
    const double mean = first + offset / static_cast<double>(trials);
    double ss = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      const double d = rows[i * trials + t].value - mean;
      ss += d * d;
    }
    const double sd = trials > 1 ? std::sqrt(ss / static_cast<double>(trials - 1)) : 0.0;
    out.push_back({grid[i], mean, sd});
  }
  return out;
}

double metric_of(const LogitsBatch& logits, const LabelBatch& labels, MetricKind kind) {
  return evaluate(kind, argmax_classes(logits), labels, logits.class_count()).value;
}

} // namespace

std::uint64_t seed_for(std::uint64_t base, std::uint64_t sigma_index, std::uint64_t trial) noexcept {
  return mix64(base + mix64((sigma_index << 32) | (trial & 0xFFFFFFFFull)));
}

std::vector<double> default_sigma_grid() {
  std::vector<double> grid{0.0};
  for (int i = 0; i < 9; ++i) grid.push_back(0.25 * std::pow(2.0, 0.75 * i));
  return grid;
}

void SweepPlan::validate() const {
  if (sigma_grid.empty()) throw InvalidArgument("sigma grid is empty");
  for (std::size_t i = 0; i < sigma_grid.size(); ++i) {
    if (!(sigma_grid[i] >= 0.0) || !std::isfinite(sigma_grid[i])) throw InvalidArgument("sigma values must be >= 0");
    if (i > 0 && !(sigma_grid[i] > sigma_grid[i - 1])) throw InvalidArgument("sigma grid must be strictly ascending");
  }
  if (trials < 1) throw InvalidArgument("trials must be >= 1");
  if (!(delta >= 0.0)) throw InvalidArgument("delta must be >= 0");
  if ((mode == PerturbMode::region) != importance.has_value()) {
    throw InvalidArgument("an importance mask is required exactly when mode is region");
  }
  if (mask_config) mask_config->validate();
}

std::optional<Tensor> SweepPlan::resolve_mask() const {
  if (!importance) return std::nullopt;
  if (mask_config) return make_mask(*importance, *mask_config);
  return importance->scores();
}

double run_cell(const LogitsBatch& logits, const LabelBatch& labels, const SweepPlan& plan, std::size_t sigma_index,
                std::size_t trial) {
  const auto mask = plan.resolve_mask();
  PerturbationSpec spec{plan.sigma_grid.at(sigma_index), plan.delta, plan.mode, seed_for(plan.base_seed, sigma_index, trial)};
  const auto perturbed = perturb(logits, spec, mask ? &*mask : nullptr, &labels);
  return metric_of(perturbed.logits, labels, plan.metric);
}

CalibrationTable run_sweep(const LogitsBatch& logits, const LabelBatch& labels, const SweepPlan& plan,
                           std::size_t workers) {
  plan.validate();
  require_compatible(logits, labels);
  const auto mask = plan.resolve_mask();
  const Tensor* mask_ptr = mask ? &*mask : nullptr;

  const auto cells = plan.sigma_grid.size() * plan.trials;
  std::vector<CalibrationRow> rows(cells);
  auto run = [&](std::size_t cell) {
    const auto i = cell / plan.trials;
    const auto t = cell % plan.trials;
    PerturbationSpec spec{plan.sigma_grid[i], plan.delta, plan.mode, seed_for(plan.base_seed, i, t)};
    const auto perturbed = perturb(logits, spec, mask_ptr, &labels);
    rows[cell] = {plan.sigma_grid[i], t, metric_of(perturbed.logits, labels, plan.metric)};
  };

  workers = std::clamp<std::size_t>(workers, 1, cells);
  if (workers == 1) {
    for (std::size_t c = 0; c < cells; ++c) run(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (auto c = next.fetch_add(1); c < cells; c = next.fetch_add(1)) {
          try {
            run(c);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next = cells;
          }
        }
      });
    }
    pool.clear();
    if (failure) std::rethrow_exception(failure);
  }

  CalibrationTable table;
  table.rows = std::move(rows);
  table.summary = summarize(plan.sigma_grid, table.rows, plan.trials);
  table.clean_metric = metric_of(logits, labels, plan.metric);
  table.mode = plan.mode;
  table.delta = plan.delta;
  table.metric = plan.metric;
  table.trials = plan.trials;
  table.base_seed = plan.base_seed;
  table.mask_description = describe_mask(plan);
  return table;
}

void CalibrationTable::write_text(std::ostream& out) const {
  out << "# utilgate calibration\n"
      << "# mode=" << mode_name(mode) << " delta=" << format_sigma(delta) << " metric=" << metric_name(metric)
      << " trials=" << trials << " base_seed=" << base_seed << " mask=" << mask_description
      << " aggregation=global\n"
      << "# clean_metric=" << format_metric(clean_metric) << '\n'
      << "sigma,trial,metric_value\n";
  for (const auto& r : rows) out << format_sigma(r.sigma) << ',' << r.trial << ',' << format_metric(r.value) << '\n';
  out << "# summary\n";
  write_summary(out);
}

void CalibrationTable::write_summary(std::ostream& out) const {
  out << "sigma,mean,stddev\n";
  for (const auto& s : summary) {
    out << format_sigma(s.sigma) << ',' << format_metric(s.mean) << ',' << format_metric(s.stddev) << '\n';
  }
}

CalibrationTable CalibrationTable::read_text(std::istream& in) {
  CalibrationTable table;
  bool in_summary = false;
  bool saw_clean = false;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream fields(line.substr(1));
      std::string token;
      while (fields >> token) {
        if (token == "summary") in_summary = true;
        const auto eq = token.find('=');
        if (eq == std::string::npos) continue;
        const auto key = token.substr(0, eq);
        const auto value = token.substr(eq + 1);
        if (key == "mode") table.mode = parse_enum(parse_mode, value, key);
        else if (key == "delta") table.delta = parse_double(value, key);
        else if (key == "metric") table.metric = parse_enum(parse_metric, value, key);
        else if (key == "trials") table.trials = parse_u64(value, key);
        else if (key == "base_seed") table.base_seed = parse_u64(value, key);
        else if (key == "mask") table.mask_description = value;
        else if (key == "clean_metric") {
          table.clean_metric = parse_double(value, key);
          saw_clean = true;
        }
      }
      continue;
    }
    if (line.starts_with("sigma,")) continue;
    const auto f = split(line, ',');
    if (f.size() != 3) throw FormatError("calibration row must have 3 fields: '" + line + "'");
    if (in_summary) {
      table.summary.push_back({parse_double(f[0], "sigma"), parse_double(f[1], "mean"), parse_double(f[2], "stddev")});
    } else {
      table.rows.push_back({parse_double(f[0], "sigma"), parse_u64(f[1], "trial"), parse_double(f[2], "metric_value")});
    }
  }
  if (!saw_clean) throw FormatError("calibration table lacks a clean_metric line");
  if (table.summary.empty()) throw FormatError("calibration table lacks a summary block");
  return table;
}

} // namespace utilgate
