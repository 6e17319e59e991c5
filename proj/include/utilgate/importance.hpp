#pragma once

#include "utilgate/tensor.hpp"

#include <filesystem>

namespace utilgate {

/// Per-pixel importance scores, min-max normalized to [0,1] on construction.
/// A constant map normalizes to all zeros.
class ImportanceMap {
public:
  // Any finite float32 [H,W] tensor; values are unrestricted before normalization.
  static ImportanceMap from_raw(const Tensor& raw);

  const Tensor& scores() const noexcept { return scores_; }
  std::size_t height() const { return scores_.dim(0); }
  std::size_t width() const { return scores_.dim(1); }

private:
  explicit ImportanceMap(Tensor scores) : scores_(std::move(scores)) {}
  Tensor scores_;
};

struct MaskConfig {
  double tau = 0.5;
  bool invert = false;

  void validate() const;
};

/// Binary float32 mask: 1 where score > tau (strictly), then optionally inverted.
Tensor make_mask(const ImportanceMap& map, const MaskConfig& cfg);

/// Gradient-free saliency: top-1 minus top-2 logit per pixel, normalized.
ImportanceMap margin_saliency(const LogitsBatch& logits);

ImportanceMap load_importance(const std::filesystem::path& path);

} // namespace utilgate
