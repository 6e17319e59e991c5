#include "utilgate/synth.hpp"

#include "utilgate/error.hpp"
#include "utilgate/rng.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace utilgate {

namespace {

constexpr std::uint64_t kCenterStream = 0x43454e54ull;
constexpr std::uint64_t kFeatureStream = 0x46454154ull;
constexpr std::uint64_t kShapeStream = 0x53484150ull;
constexpr std::uint64_t kJitterStream = 0x4a495454ull;
constexpr int kShapeAttempts = 100;
constexpr int kImportanceRadius = 12;

class Uniforms {
public:
  explicit Uniforms(std::uint64_t seed) : seed_(seed) {}
  double next() { return counter_uniform(seed_, counter_++); }
  // Integer in [lo, hi].
  long between(long lo, long hi) {
    return lo + static_cast<long>(std::floor(next() * static_cast<double>(hi - lo + 1)));
  }

private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

} // namespace

void BlobsSpec::validate() const {
  if (class_count < 2) throw InvalidArgument("blobs need at least 2 classes");
  if (samples_per_class < 1) throw InvalidArgument("blobs need at least 1 sample per class");
  if (!(separation >= 0.0) || !std::isfinite(separation)) throw InvalidArgument("separation must be >= 0");
  if (feature_dim < 2) throw InvalidArgument("feature_dim must be >= 2");
}

Blobs gen_blobs_logits(const BlobsSpec& spec) {
  spec.validate();
  const auto K = spec.class_count;
  const auto d = spec.feature_dim;
  const auto N = K * spec.samples_per_class;
  const double radius = spec.separation / std::sqrt(2.0);
  const double spread = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<double> centers(K * d, 0.0);
  if (d >= K) {
    for (std::size_t k = 0; k < K; ++k) centers[k * d + k] = radius;
  } else {
    NoiseStream stream(mix64(spec.seed ^ kCenterStream));
    for (std::size_t k = 0; k < K; ++k) {
      double norm = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        centers[k * d + j] = stream.at(k * d + j);
        norm += centers[k * d + j] * centers[k * d + j];
      }
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < d; ++j) centers[k * d + j] *= radius / norm;
    }
  }

  const auto feature_seed = mix64(spec.seed ^ kFeatureStream);
  std::vector<float> logits(N * K);
  std::vector<std::int32_t> labels(N);
  std::vector<double> x(d);
  for (std::size_t i = 0; i < N; ++i) {
    const auto y = i % K;
    labels[i] = static_cast<std::int32_t>(y);
    for (std::size_t j = 0; j < d; ++j) x[j] = centers[y * d + j] + spread * gaussian_at(feature_seed, i * d + j);
    for (std::size_t k = 0; k < K; ++k) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = x[j] - centers[k * d + j];
        dist += diff * diff;
      }
      logits[i * K + k] = static_cast<float>(-dist);
    }
  }
  return {LogitsBatch(Tensor({N, K}, std::move(logits)), Layout::classification),
          LabelBatch(Tensor({N}, std::move(labels)))};
}

void SceneSpec::validate() const {
  if (height < 16 || width < 16) throw InvalidArgument("scene height and width must be >= 16");
  if (class_count < 2) throw InvalidArgument("scene needs at least 2 classes");
}

Scene gen_scene(const SceneSpec& spec) {
  spec.validate();
  const long H = static_cast<long>(spec.height);
  const long W = static_cast<long>(spec.width);
  const auto K = spec.class_count;
  std::vector<std::int32_t> truth(static_cast<std::size_t>(H * W), 0);
  Uniforms rng(mix64(spec.seed ^ kShapeStream));

  for (std::size_t s = 0; s < spec.shape_count; ++s) {
    const auto cls = static_cast<std::int32_t>(rng.between(1, static_cast<long>(K) - 1));
    const bool disc = rng.next() < 0.5;
    bool placed = false;
    for (int attempt = 0; attempt < kShapeAttempts && !placed; ++attempt) {
      const long h = rng.between(std::max(2L, H / 8), std::max(2L, H / 3));
      const long w = disc ? h : rng.between(std::max(2L, W / 8), std::max(2L, W / 3));
      const long top = rng.between(-H / 4, H - 1);
      const long left = rng.between(-W / 4, W - 1);
      if (top < 0 || left < 0 || top + h > H || left + w > W) continue;
      placed = true;
      const double cy = top + (h - 1) / 2.0;
      const double cx = left + (w - 1) / 2.0;
      const double r = h / 2.0;
      for (long y = top; y < top + h; ++y) {
        for (long x = left; x < left + w; ++x) {
          if (disc && (y - cy) * (y - cy) + (x - cx) * (x - cx) > r * r) continue;
          truth[static_cast<std::size_t>(y * W + x)] = cls;
        }
      }
    }
    if (!placed) throw InvalidArgument("could not place a shape inside the canvas in 100 attempts");
  }

  const auto HW = static_cast<std::size_t>(H * W);
  const auto jitter_seed = mix64(spec.seed ^ kJitterStream);
  std::vector<float> logits(K * HW);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t p = 0; p < HW; ++p) {
      const double base = truth[p] == static_cast<std::int32_t>(k) ? kSceneMargin : 0.0;
      logits[k * HW + p] = static_cast<float>(base + kSceneJitter * gaussian_at(jitter_seed, k * HW + p));
    }
  }

  std::vector<float> importance(HW, 0.0f);
  for (long y = 0; y < H; ++y) {
    for (long x = 0; x < W; ++x) {
      if (truth[static_cast<std::size_t>(y * W + x)] != 0) {
        importance[static_cast<std::size_t>(y * W + x)] = 1.0f;
        continue;
      }
      double best = kImportanceRadius + 1.0;
      for (long yy = std::max(0L, y - kImportanceRadius); yy <= std::min(H - 1, y + kImportanceRadius); ++yy) {
        for (long xx = std::max(0L, x - kImportanceRadius); xx <= std::min(W - 1, x + kImportanceRadius); ++xx) {
          if (truth[static_cast<std::size_t>(yy * W + xx)] == 0) continue;
          best = std::min(best, std::hypot(static_cast<double>(yy - y), static_cast<double>(xx - x)));
        }
      }
      if (best <= kImportanceRadius) importance[static_cast<std::size_t>(y * W + x)] = static_cast<float>(std::exp(-best / 2.0));
    }
  }

  const Shape spatial{spec.height, spec.width};
  return {LogitsBatch(Tensor({K, spec.height, spec.width}, std::move(logits)), Layout::segmentation),
          LabelBatch(Tensor(spatial, std::move(truth))),
          ImportanceMap::from_raw(Tensor(spatial, std::move(importance)))};
}

} // namespace utilgate
