#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drift/chat.hpp"
#include "drift/model.hpp"

namespace drift {

struct SplitSoftmaxConfig {
  double k = 1.0;
  std::size_t system_len = 0;

  void validate() const;
};

// Rescales the first system_len entries to total pi^k and the rest to
// 1 - pi^k, keeping ratios within each side.
std::vector<double> split_softmax_reweight(std::span<const double> row, const SplitSoftmaxConfig& config);

// Restricts a hook to some layers/heads. Empty means all.
struct HookFilter {
  std::vector<std::size_t> layers;
  std::vector<std::size_t> heads;

  bool matches(std::size_t layer, std::size_t head) const;
};

// Hook applying split_softmax_reweight with the system length supplied by the
// forward pass. Rows of the system prompt itself (t <= system_len) are left
// alone.
AttentionHook split_softmax_hook(double k, HookFilter filter = {});

// softmax(uncond + alpha * (cond - uncond)). Inputs may be logits or
// log-probabilities.
std::vector<double> cfg_combine(std::span<const double> cond, std::span<const double> uncond, double alpha);

struct SprConfig {
  double p = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Whether the system prompt is repeated before the user utterance with the
// given 0-based user-turn index. Depends only on (seed, index) so that a
// history can be expanded incrementally.
bool spr_inject(const SprConfig& config, std::size_t user_turn);

// Inserts hidden user-role copies of the system prompt before user turns.
History spr_expand_history(const History& history, std::string_view system_prompt, const SprConfig& config);

// Removes hidden messages.
History visible_history(const History& history);

enum class InterventionKind { none, split_softmax, cfg, spr };

std::string_view intervention_name(InterventionKind k);
InterventionKind parse_intervention(std::string_view s);

struct InterventionConfig {
  InterventionKind kind = InterventionKind::none;
  double k = 1.0;
  double alpha = 1.0;
  double p = 0.0;

  void validate() const;
  // The swept hyperparameter for this kind (k, alpha, or p; 0 for none).
  double value() const;
  std::string label() const;
};

}  // namespace drift
