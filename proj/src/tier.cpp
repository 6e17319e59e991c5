#include "utilgate/tier.hpp"

#include "utilgate/error.hpp"
#include "utilgate/rng.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <set>
#include <sstream>

namespace utilgate {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

bool valid_name(const std::string& name) {
  return !name.empty() && std::all_of(name.begin(), name.end(), [](unsigned char ch) {
    return std::isalnum(ch) || ch == '_' || ch == '-';
  });
}

double parse_target(const std::string& text, const std::string& tier) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw FormatError("bad target for tier " + tier + ": '" + text + "'");
}

} // namespace

TierPolicy::TierPolicy(MetricKind metric, std::uint64_t base_seed, DecayFit fit, std::vector<Tier> tiers)
    : metric_(metric), base_seed_(base_seed), fit_(std::move(fit)), tiers_(std::move(tiers)) {
  if (tiers_.empty()) throw InvalidArgument("tier policy needs at least one tier");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < tiers_.size(); ++i) {
    const auto& t = tiers_[i];
    if (!valid_name(t.name)) throw InvalidArgument("invalid tier name '" + t.name + "'");
    if (!seen.insert(t.name).second) throw InvalidArgument("duplicate tier name '" + t.name + "'");
    if (!(t.target >= 0.0 && t.target <= 1.0)) throw InvalidArgument("tier " + t.name + " target outside [0,1]");
    if (i > 0 && !(t.target > tiers_[i - 1].target)) {
      throw InvalidArgument("tier targets must strictly increase, violated at " + t.name);
    }
  }
}

const Tier& TierPolicy::find(std::string_view name) const {
  for (const auto& t : tiers_) {
    if (t.name == name) return t;
  }
  throw InvalidArgument("unknown tier '" + std::string(name) + "'");
}

std::string TierPolicy::to_text() const {
  std::ostringstream out;
  out << "metric_kind = " << metric_name(metric_) << '\n' << "base_seed = " << base_seed_ << '\n' << "[fit]\n";
  std::istringstream fit_lines(fit_.to_text());
  for (std::string line; std::getline(fit_lines, line);) {
    const auto eq = line.find('=');
    out << line.substr(0, eq) << " = " << line.substr(eq + 1) << '\n';
  }
  out << "[tiers]\n";
  for (const auto& t : tiers_) {
    // Shortest text that parses back to the same double.
    char buf[64];
    const auto end = std::to_chars(buf, buf + sizeof buf, t.target).ptr;
    out << t.name << " = " << std::string_view(buf, static_cast<std::size_t>(end - buf)) << '\n';
  }
  return out.str();
}

TierPolicy TierPolicy::parse(std::istream& in) {
  enum class Section { top, fit, tiers } section = Section::top;
  std::optional<MetricKind> metric;
  std::optional<std::uint64_t> seed;
  std::ostringstream fit_text;
  bool saw_fit = false;
  std::vector<Tier> tiers;

  std::string raw;
  for (int line_no = 1; std::getline(in, raw); ++line_no) {
    const auto line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line == "[fit]") {
      section = Section::fit;
      saw_fit = true;
      continue;
    }
    if (line == "[tiers]") {
      section = Section::tiers;
      continue;
    }
    if (line.front() == '[') throw FormatError("unknown policy section " + line);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("policy line " + std::to_string(line_no) + " lacks '='");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    switch (section) {
    case Section::top:
      if (key == "metric_kind") {
        try {
          metric = parse_metric(value);
        } catch (const InvalidArgument& e) {
          throw FormatError(e.what());
        }
      } else if (key == "base_seed") {
        try {
          std::size_t used = 0;
          seed = std::stoull(value, &used);
          if (used != value.size()) throw std::invalid_argument(value);
        } catch (const std::exception&) {
          throw FormatError("bad base_seed '" + value + "'");
        }
      } else {
        throw FormatError("unknown policy field '" + key + "'");
      }
      break;
    case Section::fit: fit_text << key << '=' << value << '\n'; break;
    case Section::tiers: tiers.push_back({key, parse_target(value, key)}); break;
    }
  }
  if (!metric) throw FormatError("policy lacks metric_kind");
  if (!seed) throw FormatError("policy lacks base_seed");
  if (!saw_fit) throw FormatError("policy lacks a [fit] section");
  std::istringstream fit_in(fit_text.str());
  auto fit = DecayFit::parse(fit_in);
  try {
    return TierPolicy(*metric, *seed, std::move(fit), std::move(tiers));
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid policy: ") + e.what());
  }
}

TierPolicy TierPolicy::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return parse(in);
}

TierResolution resolve_tier(const TierPolicy& policy, std::string_view tier_name) {
  const auto& tier = policy.find(tier_name);
  const auto solution = solve_sigma(policy.fit(), tier.target);
  TierResolution r;
  r.spec.sigma = solution.sigma;
  r.spec.delta = 1.0;
  r.spec.mode = PerturbMode::global;
  r.spec.seed = policy.base_seed();
  r.achieved = predict(policy.fit(), solution.sigma);
  r.clamp = solution.clamp;
  return r;
}

std::uint64_t request_seed(std::uint64_t base_seed, std::uint64_t request_id) noexcept {
  return mix64(base_seed + mix64(request_id ^ 0xa0761d6478bd642full));
}

LogitsBatch apply_tier(const TierPolicy& policy, std::string_view tier_name, const LogitsBatch& logits,
                       std::uint64_t request_id) {
  auto resolution = resolve_tier(policy, tier_name);
  resolution.spec.seed = request_seed(policy.base_seed(), request_id);
  return perturb_global(logits, resolution.spec).logits;
}

} // namespace utilgate
