#pragma once

#include "utilgate/importance.hpp"
#include "utilgate/tensor.hpp"

#include <cstdint>

namespace utilgate {

struct BlobsSpec {
  std::size_t class_count = 10;
  std::size_t samples_per_class = 100;
  double separation = 1.25;
  std::size_t feature_dim = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Blobs {
  LogitsBatch logits; // [N,K], N = K * samples_per_class
  LabelBatch labels;  // [N], sample i has class i % K
};

/// K Gaussian clusters scored by a nearest-centroid classifier.
///
/// Each cluster has per-dimension standard deviation 1/sqrt(feature_dim), so
/// the within-cluster noise has unit expected squared norm. With
/// feature_dim >= K the centers sit on scaled coordinate axes, pairwise
/// exactly `separation` apart; otherwise they are random directions of norm
/// separation / sqrt(2). Logit k is the negative squared distance to center k.
Blobs gen_blobs_logits(const BlobsSpec& spec);

struct SceneSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t class_count = 4;
  std::size_t shape_count = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr double kSceneMargin = 6.0;
inline constexpr double kSceneJitter = 0.5;

struct Scene {
  LogitsBatch logits; // [K,H,W]
  LabelBatch labels;  // [H,W]
  ImportanceMap importance;
};

/// Rectangles and discs of random foreground classes on background class 0.
///
/// Logits are the one-hot truth times kSceneMargin plus N(0, kSceneJitter^2).
/// Importance decays as exp(-d / 2) with the distance d (pixels) to the
/// nearest object pixel, cut to 0 beyond 12 pixels.
Scene gen_scene(const SceneSpec& spec);

} // namespace utilgate
