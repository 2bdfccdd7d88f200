#include "drift/interventions.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "drift/errors.hpp"

namespace drift {

void SplitSoftmaxConfig::validate() const {
  if (!(k >= 0.0 && k <= 1.0)) throw DomainError("split-softmax k must lie in [0, 1]");
}

std::vector<double> split_softmax_reweight(std::span<const double> row, const SplitSoftmaxConfig& config) {
  config.validate();
  if (row.empty()) throw InvalidDistributionError("empty attention row");
  if (config.system_len > row.size()) {
    throw DomainError("system prefix of " + std::to_string(config.system_len) + " exceeds row length " +
                      std::to_string(row.size()));
  }
  double pi = 0.0, sigma = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (!std::isfinite(row[i]) || row[i] < 0.0) throw InvalidDistributionError("attention row has a negative or non-finite entry");
    (i < config.system_len ? pi : sigma) += row[i];
  }
  if (std::abs(pi + sigma - 1.0) > 1e-6) throw InvalidDistributionError("attention row does not sum to 1");

  std::vector<double> out(row.begin(), row.end());
  if (pi == 0.0) {
    if (config.k == 0.0) throw DomainError("split-softmax with k = 0 is undefined when the system mass is 0");
    return out;
  }
  if (config.k == 1.0 || sigma == 0.0) return out;

  const double target = std::pow(pi, config.k);
  const double prefix_scale = target / pi;
  const double suffix_scale = (1.0 - target) / sigma;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= i < config.system_len ? prefix_scale : suffix_scale;
  return out;
}

bool HookFilter::matches(std::size_t layer, std::size_t head) const {
  auto has = [](const std::vector<std::size_t>& v, std::size_t x) { return v.empty() || std::find(v.begin(), v.end(), x) != v.end(); };
  return has(layers, layer) && has(heads, head);
}

AttentionHook split_softmax_hook(double k, HookFilter filter) {
  SplitSoftmaxConfig{k, 0}.validate();
  return [k, filter = std::move(filter)](std::span<const double> row, const HookSite& site) {
    if (!filter.matches(site.layer, site.head) || site.system_len == 0 || site.system_len >= row.size()) {
      return std::vector<double>(row.begin(), row.end());
    }
    return split_softmax_reweight(row, {k, site.system_len});
  };
}

std::vector<double> cfg_combine(std::span<const double> cond, std::span<const double> uncond, double alpha) {
  if (cond.size() != uncond.size()) {
    throw ShapeError("CFG inputs differ in length (" + std::to_string(cond.size()) + " vs " + std::to_string(uncond.size()) + ")");
  }
  if (!std::isfinite(alpha)) throw DomainError("CFG alpha must be finite");
  for (std::size_t i = 0; i < cond.size(); ++i) {
    if (!std::isfinite(cond[i]) || !std::isfinite(uncond[i])) throw NonFiniteError("CFG input is not finite");
  }
  if (alpha == 1.0) return softmax(cond);
  if (alpha == 0.0) return softmax(uncond);
  std::vector<double> mixed(cond.size());
  for (std::size_t i = 0; i < cond.size(); ++i) mixed[i] = uncond[i] + alpha * (cond[i] - uncond[i]);
  return softmax(mixed);
}

void SprConfig::validate() const {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("SPR probability must lie in [0, 1]");
}

bool spr_inject(const SprConfig& config, std::size_t user_turn) {
  config.validate();
  if (config.p == 0.0) return false;
  if (config.p == 1.0) return true;
  Rng rng = make_rng(derive_seed(config.seed, {hash_tag("spr"), user_turn}));
  return uniform01(rng) < config.p;
}

History spr_expand_history(const History& history, std::string_view system_prompt, const SprConfig& config) {
  config.validate();
  History out;
  out.reserve(history.size());
  std::size_t user_turn = 0;
  for (const auto& m : history) {
    if (m.role == Role::user && !m.hidden) {
      if (spr_inject(config, user_turn)) out.push_back(Message{Role::user, std::string(system_prompt), true});
      ++user_turn;
    }
    out.push_back(m);
  }
  return out;
}

History visible_history(const History& history) {
  History out;
  for (const auto& m : history)
    if (!m.hidden) out.push_back(m);
  return out;
}

std::string_view intervention_name(InterventionKind k) {
  switch (k) {
    case InterventionKind::none: return "none";
    case InterventionKind::split_softmax: return "ss";
    case InterventionKind::cfg: return "cfg";
    case InterventionKind::spr: return "spr";
  }
  return "none";
}

InterventionKind parse_intervention(std::string_view s) {
  if (s == "none") return InterventionKind::none;
  if (s == "ss" || s == "split_softmax" || s == "split-softmax") return InterventionKind::split_softmax;
  if (s == "cfg") return InterventionKind::cfg;
  if (s == "spr") return InterventionKind::spr;
  throw ConfigError("unknown intervention '" + std::string(s) + "' (expected none, ss, cfg or spr)");
}

void InterventionConfig::validate() const {
  SplitSoftmaxConfig{k, 0}.validate();
  SprConfig{p, 0}.validate();
  if (!std::isfinite(alpha)) throw DomainError("CFG alpha must be finite");
}

double InterventionConfig::value() const {
  switch (kind) {
    case InterventionKind::none: return 0.0;
    case InterventionKind::split_softmax: return k;
    case InterventionKind::cfg: return alpha;
    case InterventionKind::spr: return p;
  }
  return 0.0;
}

std::string InterventionConfig::label() const {
  if (kind == InterventionKind::none) return "none";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s=%g", std::string(intervention_name(kind)).c_str(), value());
  return buf;
}

}  // namespace drift
