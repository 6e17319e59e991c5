#include "utilgate/noise.hpp"

#include "utilgate/error.hpp"
#include "utilgate/rng.hpp"

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

namespace utilgate {

namespace {

float add_noise(float z, double scale, double draw) {
  return static_cast<float>(static_cast<double>(z) + scale * draw);
}

std::vector<float> copy_floats(const LogitsBatch& logits) {
  auto v = logits.tensor().floats();
  return {v.begin(), v.end()};
}

LogitsBatch rebuild(const LogitsBatch& like, std::vector<float> data) {
  return LogitsBatch(Tensor(like.tensor().shape(), std::move(data)), like.layout());
}

double mask_value(const Tensor& mask, std::size_t i) {
  return mask.dtype() == DType::uint8 ? static_cast<double>(mask.bytes()[i]) : static_cast<double>(mask.floats()[i]);
}

void check_mask(const LogitsBatch& logits, const Tensor& mask) {
  if (logits.layout() != Layout::segmentation) throw ShapeError("region perturbation needs segmentation logits [K,H,W]");
  if (mask.shape() != logits.label_shape()) throw ShapeError("mask shape must match logits spatial shape [H,W]");
  if (mask.dtype() == DType::int32) throw ShapeError("mask must be float32 or uint8");
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double m = mask_value(mask, i);
    if (!(m >= 0.0 && m <= 1.0)) throw InvalidArgument("mask values must lie in [0,1]");
  }
}

std::size_t argmax_of(std::span<const float> values) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    if (values[k] > values[best]) best = k;
  }
  return best;
}

} // namespace

std::string_view mode_name(PerturbMode mode) {
  switch (mode) {
  case PerturbMode::global: return "global";
  case PerturbMode::region: return "region";
  case PerturbMode::targeted_noise: return "targeted_noise";
  case PerturbMode::targeted_flip: return "targeted_flip";
  }
  return "unknown";
}

PerturbMode parse_mode(std::string_view text) {
  if (text == "global") return PerturbMode::global;
  if (text == "region") return PerturbMode::region;
  if (text == "targeted_noise" || text == "targeted-noise") return PerturbMode::targeted_noise;
  if (text == "targeted_flip" || text == "targeted-flip") return PerturbMode::targeted_flip;
  throw InvalidArgument("unknown perturbation mode '" + std::string(text) + "'");
}

void PerturbationSpec::validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InvalidArgument("sigma must be finite and >= 0");
  if (!(delta >= 0.0) || !std::isfinite(delta)) throw InvalidArgument("delta must be finite and >= 0");
}

PerturbResult perturb_global(const LogitsBatch& logits, const PerturbationSpec& spec) {
  spec.validate();
  const double scale = spec.effective_sigma();
  if (scale == 0.0) return {logits, 0};
  auto out = copy_floats(logits);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = add_noise(out[i], scale, gaussian_at(spec.seed, i));
  return {rebuild(logits, std::move(out)), logits.tensor().size()};
}

PerturbResult perturb_region(const LogitsBatch& logits, const Tensor& mask, const PerturbationSpec& spec) {
  spec.validate();
  check_mask(logits, mask);
  const double sigma_eff = spec.effective_sigma();
  if (sigma_eff == 0.0) return {logits, 0};

  auto out = copy_floats(logits);
  std::size_t touched = 0;
  for (std::size_t k = 0; k < logits.class_count(); ++k) {
    for (std::size_t p = 0; p < logits.positions(); ++p) {
      const double scale = sigma_eff * mask_value(mask, p);
      if (scale == 0.0) continue;
      const auto i = logits.index(p, k);
      out[i] = add_noise(out[i], scale, gaussian_at(spec.seed, i));
      ++touched;
    }
  }
  return {rebuild(logits, std::move(out)), touched};
}

PerturbResult perturb_targeted(const LogitsBatch& logits, const LabelBatch& labels, const PerturbationSpec& spec) {
  spec.validate();
  require_compatible(logits, labels);
  if (spec.mode != PerturbMode::targeted_noise && spec.mode != PerturbMode::targeted_flip) {
    throw InvalidArgument("perturb_targeted needs a targeted mode");
  }
  const double scale = spec.effective_sigma();
  if (scale == 0.0) return {logits, 0};

  const auto K = logits.class_count();
  const auto numel = static_cast<std::uint64_t>(logits.tensor().size());
  const auto truth = labels.values();
  auto out = copy_floats(logits);
  std::vector<float> candidate(K);
  std::size_t touched = 0;

  for (std::size_t p = 0; p < logits.positions(); ++p) {
    const auto label = truth[p];
    if (label == kIgnoreLabel || static_cast<std::int32_t>(argmax_at(logits, p)) != label) continue;
    touched += K;

    if (spec.mode == PerturbMode::targeted_noise) {
      for (std::size_t k = 0; k < K; ++k) {
        const auto i = logits.index(p, k);
        out[i] = add_noise(out[i], scale, gaussian_at(spec.seed, i));
      }
      continue;
    }

    bool flipped = false;
    for (int r = 0; r < kFlipRetries && !flipped; ++r) {
      for (std::size_t k = 0; k < K; ++k) {
        const auto i = logits.index(p, k);
        candidate[k] = add_noise(logits.logit(p, k), scale, gaussian_at(spec.seed, r * numel + i));
      }
      flipped = static_cast<std::int32_t>(argmax_of(candidate)) != label;
    }
    if (!flipped) {
      for (std::size_t k = 0; k < K; ++k) candidate[k] = logits.logit(p, k);
      std::size_t runner_up = label == 0 ? 1 : 0;
      for (std::size_t k = 0; k < K; ++k) {
        if (static_cast<std::int32_t>(k) != label && candidate[k] > candidate[runner_up]) runner_up = k;
      }
      std::swap(candidate[static_cast<std::size_t>(label)], candidate[runner_up]);
      if (static_cast<std::int32_t>(argmax_of(candidate)) == label) {
        auto& v = candidate[static_cast<std::size_t>(label)];
        v = std::nextafter(v, -std::numeric_limits<float>::infinity());
      }
    }
    for (std::size_t k = 0; k < K; ++k) out[logits.index(p, k)] = candidate[k];
  }
  return {rebuild(logits, std::move(out)), touched};
}

PerturbResult perturb(const LogitsBatch& logits, const PerturbationSpec& spec, const Tensor* mask,
                      const LabelBatch* labels) {
  switch (spec.mode) {
  case PerturbMode::global: return perturb_global(logits, spec);
  case PerturbMode::region:
    if (mask == nullptr) throw InvalidArgument("region mode requires a mask");
    return perturb_region(logits, *mask, spec);
  case PerturbMode::targeted_noise:
  case PerturbMode::targeted_flip:
    if (labels == nullptr) throw InvalidArgument("targeted modes require labels");
    return perturb_targeted(logits, *labels, spec);
  }
  throw InvalidArgument("unknown perturbation mode");
}

} // namespace utilgate
