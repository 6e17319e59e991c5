#include "utilgate/importance.hpp"

#include "utilgate/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace utilgate {

ImportanceMap ImportanceMap::from_raw(const Tensor& raw) {
  if (raw.dtype() != DType::float32 || raw.rank() != 2) {
    throw ShapeError("importance map must be a float32 [H,W] tensor");
  }
  auto v = raw.floats();
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double range = static_cast<double>(*hi_it) - lo;
  std::vector<float> out(v.size(), 0.0f);
  if (range > 0.0) {
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>((v[i] - lo) / range);
  }
  return ImportanceMap(Tensor(raw.shape(), std::move(out)));
}

void MaskConfig::validate() const {
  if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidArgument("tau must lie in [0,1]");
}

Tensor make_mask(const ImportanceMap& map, const MaskConfig& cfg) {
  cfg.validate();
  auto scores = map.scores().floats();
  std::vector<float> mask(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool on = static_cast<double>(scores[i]) > cfg.tau;
    mask[i] = (on != cfg.invert) ? 1.0f : 0.0f;
  }
  return Tensor(map.scores().shape(), std::move(mask));
}

ImportanceMap margin_saliency(const LogitsBatch& logits) {
  if (logits.layout() != Layout::segmentation) throw ShapeError("margin saliency needs segmentation logits [K,H,W]");
  std::vector<float> margin(logits.positions());
  for (std::size_t p = 0; p < margin.size(); ++p) {
    double top1 = -std::numeric_limits<double>::infinity();
    double top2 = top1;
    for (std::size_t k = 0; k < logits.class_count(); ++k) {
      const double z = logits.logit(p, k);
      if (z > top1) {
        top2 = top1;
        top1 = z;
      } else if (z > top2) {
        top2 = z;
      }
    }
    margin[p] = static_cast<float>(top1 - top2);
  }
  return ImportanceMap::from_raw(Tensor(logits.label_shape(), std::move(margin)));
}

ImportanceMap load_importance(const std::filesystem::path& path) {
  return ImportanceMap::from_raw(load_tensor(path));
}

} // namespace utilgate
