#pragma once

#include "utilgate/tensor.hpp"

#include <cstdint>
#include <string>
#include <string_view>

namespace utilgate {

enum class PerturbMode { global, region, targeted_noise, targeted_flip };

std::string_view mode_name(PerturbMode mode);
// Accepts both "targeted_noise" and the CLI spelling "targeted-noise".
PerturbMode parse_mode(std::string_view text);

struct PerturbationSpec {
  double sigma = 0.0;
  double delta = 1.0;
  PerturbMode mode = PerturbMode::global;
  std::uint64_t seed = 0;

  // All modes scale their draws by delta * sigma and nothing else.
  double effective_sigma() const noexcept { return delta * sigma; }
  void validate() const;
};

// Number of fresh resamples targeted_flip tries before swapping the top two logits.
inline constexpr int kFlipRetries = 16;

struct PerturbResult {
  LogitsBatch logits;
  // Logit elements that received a non-zero noise scale or were rewritten.
  std::size_t touched = 0;
};

/// Adds sigma_eff * N(0,1) to every logit. Draw k goes to flat element k.
PerturbResult perturb_global(const LogitsBatch& logits, const PerturbationSpec& spec);

/// Segmentation only: element (k, y, x) gets sigma_eff * mask(y, x) * draw(flat index).
/// The mask is float32 or uint8 [H,W] with values in [0,1]; zero-mask pixels are untouched.
PerturbResult perturb_region(const LogitsBatch& logits, const Tensor& mask, const PerturbationSpec& spec);

/// Perturbs only positions whose clean argmax equals the label.
///
/// targeted_noise adds the same draws perturb_global would. targeted_flip
/// resamples (retry r uses draw index r * numel + flat index) until the argmax
/// leaves the label, and after kFlipRetries failures swaps the top-1 and
/// runner-up logits of the clean input; exact ties are broken by nudging the
/// label's logit one ulp down. With sigma_eff == 0 both modes are the identity.
PerturbResult perturb_targeted(const LogitsBatch& logits, const LabelBatch& labels, const PerturbationSpec& spec);

/// Dispatch on spec.mode. `mask` is required for region mode, `labels` for targeted modes.
PerturbResult perturb(const LogitsBatch& logits, const PerturbationSpec& spec, const Tensor* mask,
                      const LabelBatch* labels);

} // namespace utilgate
