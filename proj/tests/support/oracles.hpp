#pragma once

// Reference implementations written without the library's helpers, used as
// test oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <utility>
#include <vector>

namespace oracle {

// Textbook stateful splitmix64.
struct SplitMix64 {
  std::uint64_t state;
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
};

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  int hit = 0, total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 255 || truth[i] == 255) continue;
    ++total;
    if (pred[i] == truth[i]) ++hit;
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / total;
}

// Per-class (intersection, union, |pred|, |truth|) using explicit index sets.
struct ClassSets {
  std::set<std::size_t> pred, truth;
};

inline std::map<int, ClassSets> class_sets(const std::vector<int>& pred, const std::vector<int>& truth, int k) {
  std::map<int, ClassSets> out;
  for (int c = 0; c < k; ++c) out[c];
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 255 || truth[i] == 255) continue;
    out[pred[i]].pred.insert(i);
    out[truth[i]].truth.insert(i);
  }
  return out;
}

inline std::size_t intersection_size(const std::set<std::size_t>& a, const std::set<std::size_t>& b) {
  std::vector<std::size_t> r;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(r));
  return r.size();
}

inline std::size_t union_size(const std::set<std::size_t>& a, const std::set<std::size_t>& b) {
  std::vector<std::size_t> r;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(r));
  return r.size();
}

// Returns (mean, per-class values with NaN for absent classes).
inline std::pair<double, std::vector<double>> miou(const std::vector<int>& pred, const std::vector<int>& truth, int k) {
  std::vector<double> per(k, std::nan(""));
  double sum = 0.0;
  int n = 0;
  for (auto& [c, s] : class_sets(pred, truth, k)) {
    const auto u = union_size(s.pred, s.truth);
    if (u == 0) continue;
    per[c] = static_cast<double>(intersection_size(s.pred, s.truth)) / static_cast<double>(u);
    sum += per[c];
    ++n;
  }
  return {n == 0 ? 0.0 : sum / n, per};
}

inline std::pair<double, std::vector<double>> dice(const std::vector<int>& pred, const std::vector<int>& truth, int k) {
  std::vector<double> per(k, std::nan(""));
  double sum = 0.0;
  int n = 0;
  for (auto& [c, s] : class_sets(pred, truth, k)) {
    const auto denom = s.pred.size() + s.truth.size();
    if (denom == 0) continue;
    per[c] = 2.0 * static_cast<double>(intersection_size(s.pred, s.truth)) / static_cast<double>(denom);
    sum += per[c];
    ++n;
  }
  return {n == 0 ? 0.0 : sum / n, per};
}

inline double decay(double a, double b, double c, double sigma) { return a * std::exp(-b * sigma) + c; }

inline double relative_error(double got, double want) {
  return want == 0.0 ? std::abs(got) : std::abs(got - want) / std::abs(want);
}

} // namespace oracle
