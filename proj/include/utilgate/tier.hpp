#pragma once

#include "utilgate/curvefit.hpp"
#include "utilgate/metrics.hpp"
#include "utilgate/noise.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace utilgate {

struct Tier {
  std::string name;
  double target = 0.0;

  bool operator==(const Tier&) const = default;
};

/// Named service levels, each bound to a target utility and resolved to a
/// noise level through a fitted curve. Tiers are ordered lowest to highest,
/// with strictly increasing targets.
///
/// Text form (blank lines and '#' comments ignored, unknown keys rejected):
///
///     metric_kind = accuracy
///     base_seed = 42
///     [fit]
///     family = exp
///     a = ...            (any DecayFit record field)
///     [tiers]
///     free = 0.40
///     premium = 0.90
class TierPolicy {
public:
  TierPolicy(MetricKind metric, std::uint64_t base_seed, DecayFit fit, std::vector<Tier> tiers);

  MetricKind metric() const noexcept { return metric_; }
  std::uint64_t base_seed() const noexcept { return base_seed_; }
  const DecayFit& fit() const noexcept { return fit_; }
  const std::vector<Tier>& tiers() const noexcept { return tiers_; }

  const Tier& find(std::string_view name) const;

  std::string to_text() const;
  static TierPolicy parse(std::istream& in);
  static TierPolicy load(const std::filesystem::path& path);

private:
  MetricKind metric_;
  std::uint64_t base_seed_;
  DecayFit fit_;
  std::vector<Tier> tiers_;
};

struct TierResolution {
  PerturbationSpec spec;
  double achieved = 0.0; // fitted curve value at spec.sigma
  Clamp clamp = Clamp::none;
};

TierResolution resolve_tier(const TierPolicy& policy, std::string_view tier_name);

/// Per-request noise seed: mix64(base + mix64(request_id ^ 0xa0761d6478bd642f)).
std::uint64_t request_seed(std::uint64_t base_seed, std::uint64_t request_id) noexcept;

/// Global perturbation at the tier's resolved sigma, seeded per request.
LogitsBatch apply_tier(const TierPolicy& policy, std::string_view tier_name, const LogitsBatch& logits,
                       std::uint64_t request_id);

} // namespace utilgate
