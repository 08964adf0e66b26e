#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "deltaflux/error.hpp"
#include "deltaflux/model.hpp"

namespace deltaflux {

enum class ThresholdPolicy { fixed, bst, ibst };

inline std::string_view policy_name(ThresholdPolicy p) {
  switch (p) {
    case ThresholdPolicy::fixed: return "fixed";
    case ThresholdPolicy::bst: return "bst";
    case ThresholdPolicy::ibst: return "ibst";
  }
  return "?";
}

struct ControllerConfig {
  ThresholdPolicy policy = ThresholdPolicy::ibst;
  double target = 0.9;      // T, target sparsity
  double band = 0.05;       // epsilon; accepted band is [T - eps, T + eps]
  double theta_max = 1.0;   // upper search bound
  double theta_res = 1e-3;  // bracket width that ends a search
  std::size_t cycle = 16;   // observations between IBST restarts
  double fixed_theta = 0.0; // threshold for the fixed policy

  void validate() const {
    if (!(target > 0.0 && target < 1.0)) throw ConfigError("trunc: T must lie in (0,1)");
    if (!(band > 0.0)) throw ConfigError("trunc: eps must be positive");
    if (target - band < 0.0 || target + band > 1.0) throw ConfigError("trunc: [T-eps, T+eps] must lie in [0,1]");
    if (!(theta_max > 0.0)) throw ConfigError("trunc: theta_max must be positive");
    if (!(theta_res > 0.0) || !(theta_res < theta_max)) throw ConfigError("trunc: need 0 < theta_res < theta_max");
    if (cycle == 0) throw ConfigError("trunc: cycle must be positive");
    if (!(fixed_theta >= 0.0) || !std::isfinite(fixed_theta)) throw ConfigError("trunc: fixed threshold must be >= 0");
  }

  // Observations a single bisection needs before its bracket reaches theta_res.
  std::size_t search_length() const {
    return static_cast<std::size_t>(std::ceil(std::log2(theta_max / theta_res)));
  }
};

struct SiteControllerState {
  double theta = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool frozen = false;
  std::size_t frames_in_cycle = 0;
  double last_sparsity = 0.0;
};

inline SiteControllerState initial_site_state(const ControllerConfig& cfg) {
  SiteControllerState s;
  if (cfg.policy == ThresholdPolicy::fixed) {
    s.theta = s.lo = s.hi = cfg.fixed_theta;
    s.frozen = true;
  } else {
    s.lo = 0.0;
    s.hi = cfg.theta_max;
    s.theta = cfg.theta_max / 2.0;
  }
  return s;
}

// One diff-frame observation of post-truncation sparsity at a site.
// Too sparse means the threshold is too high, so the upper bound drops to theta, and vice versa.
inline SiteControllerState observe(SiteControllerState s, double sparsity, const ControllerConfig& cfg) {
  if (!(sparsity >= 0.0 && sparsity <= 1.0)) {
    throw ContractError("observe: sparsity " + std::to_string(sparsity) + " outside [0,1]");
  }
  s.last_sparsity = sparsity;
  if (cfg.policy == ThresholdPolicy::fixed) return s;
  if (!s.frozen) {
    const bool above = sparsity > cfg.target + cfg.band;
    const bool below = sparsity < cfg.target - cfg.band;
    if (above) s.hi = s.theta;
    if (below) s.lo = s.theta;
    if ((!above && !below) || s.hi - s.lo <= cfg.theta_res) {
      s.frozen = true;
    } else {
      s.theta = 0.5 * (s.lo + s.hi);
    }
  }
  if (cfg.policy == ThresholdPolicy::ibst && ++s.frames_in_cycle >= cfg.cycle) {
    s.frames_in_cycle = 0;
    s.lo = 0.0;
    s.hi = cfg.theta_max;
    s.frozen = false;
  }
  return s;
}

// Per-site controllers for one video stream. Sites are the layers flagged as truncation sites.
class ThresholdController {
 public:
  ThresholdController() = default;

  ThresholdController(const ModelGraph& g, ControllerConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g.layer(i).truncation_site) sites_.emplace(i, initial_site_state(cfg_));
    }
  }

  const ControllerConfig& config() const { return cfg_; }
  bool is_site(std::size_t layer) const { return sites_.count(layer) != 0; }

  // Threshold in effect at `layer`; layers without a site never truncate.
  float theta(std::size_t layer) const {
    auto it = sites_.find(layer);
    return it == sites_.end() ? 0.0f : static_cast<float>(it->second.theta);
  }

  void observe(std::size_t layer, double sparsity) {
    auto it = sites_.find(layer);
    if (it == sites_.end()) return;
    it->second = deltaflux::observe(it->second, sparsity, cfg_);
  }

  const SiteControllerState& state(std::size_t layer) const { return sites_.at(layer); }
  const std::map<std::size_t, SiteControllerState>& sites() const { return sites_; }

 private:
  ControllerConfig cfg_;
  std::map<std::size_t, SiteControllerState> sites_;
};

using ThresholdSnapshot = std::vector<std::pair<std::size_t, double>>;

inline ThresholdSnapshot thresholds_snapshot(const ThresholdController& ctl) {
  ThresholdSnapshot out;
  for (const auto& [layer, s] : ctl.sites()) out.emplace_back(layer, s.theta);
  return out;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline double parse_double(std::string_view s, const std::string& what) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) {
    throw ConfigError("bad number for " + what + ": '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace detail

// CSV: schema_version,video,layer,theta. Values use shortest round-trip formatting.
inline std::string thresholds_csv(const std::vector<ThresholdSnapshot>& per_video) {
  std::string out = "schema_version,video,layer,theta\n";
  for (std::size_t v = 0; v < per_video.size(); ++v) {
    for (const auto& [layer, theta] : per_video[v]) {
      out += "1," + std::to_string(v) + "," + std::to_string(layer) + "," + detail::format_double(theta) + "\n";
    }
  }
  return out;
}

inline std::vector<ThresholdSnapshot> parse_thresholds_csv(std::string_view text) {
  std::vector<ThresholdSnapshot> out;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line != "schema_version,video,layer,theta") throw ConfigError("thresholds csv: unexpected header");
      continue;
    }
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 4 || f[0] != "1") throw ConfigError("thresholds csv: bad row '" + line + "'");
    const auto video = static_cast<std::size_t>(detail::parse_double(f[1], "video"));
    const auto layer = static_cast<std::size_t>(detail::parse_double(f[2], "layer"));
    if (out.size() <= video) out.resize(video + 1);
    out[video].emplace_back(layer, detail::parse_double(f[3], "theta"));
  }
  return out;
}

// Accepts "fixed:THETA", "bst", "ibst", or "bst:T=0.9,eps=0.05,theta_max=1,theta_res=0.001,cycle=16".
// Keys not given keep the values already in `base`.
inline ControllerConfig parse_trunc_spec(std::string_view spec, ControllerConfig base = {}) {
  const auto colon = spec.find(':');
  const std::string head(spec.substr(0, colon));
  std::string_view rest = colon == std::string_view::npos ? std::string_view{} : spec.substr(colon + 1);
  if (head == "fixed") {
    base.policy = ThresholdPolicy::fixed;
    if (!rest.empty() && rest.find('=') == std::string_view::npos) {
      base.fixed_theta = detail::parse_double(rest, "fixed threshold");
      rest = {};
    }
  } else if (head == "bst") {
    base.policy = ThresholdPolicy::bst;
  } else if (head == "ibst") {
    base.policy = ThresholdPolicy::ibst;
  } else {
    throw ConfigError("trunc: unknown policy '" + head + "' (expected fixed, bst or ibst)");
  }
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const std::string_view kv = rest.substr(0, comma);
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) throw ConfigError("trunc: expected key=value, got '" + std::string(kv) + "'");
    const std::string key(kv.substr(0, eq));
    const double v = detail::parse_double(kv.substr(eq + 1), key);
    if (key == "T") base.target = v;
    else if (key == "eps") base.band = v;
    else if (key == "theta_max") base.theta_max = v;
    else if (key == "theta_res") base.theta_res = v;
    else if (key == "cycle") {
      if (!(v >= 1.0) || v != std::floor(v) || v > 1e9) throw ConfigError("trunc: cycle must be a positive integer");
      base.cycle = static_cast<std::size_t>(v);
    }
    else if (key == "theta") base.fixed_theta = v;
    else throw ConfigError("trunc: unknown key '" + key + "'");
  }
  base.validate();
  return base;
}

// Run-config form: "trunc policy=ibst T=0.9 eps=0.05 theta_max=1.0 theta_res=0.001 cycle=16".
inline ControllerConfig parse_trunc_line(std::string_view line, ControllerConfig base = {}) {
  std::istringstream in{std::string(line)};
  std::string word;
  in >> word;
  if (word != "trunc") throw ConfigError("expected 'trunc' block, got '" + word + "'");
  std::string policy = "ibst";
  std::string params;
  for (std::string tok; in >> tok;) {
    if (tok.rfind("policy=", 0) == 0) {
      policy = tok.substr(7);
    } else {
      params += (params.empty() ? "" : ",") + tok;
    }
  }
  return parse_trunc_spec(params.empty() ? policy : policy + ":" + params, base);
}

}  // namespace deltaflux
