#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "drift/chat.hpp"
#include "drift/interventions.hpp"
#include "drift/model.hpp"
#include "drift/tokenizer.hpp"

namespace drift {

struct BackendCapabilities {
  bool attention_hooks = false;
  bool cfg_double_pass = false;
  bool deterministic = false;
};

// History is from the generating side's point of view: Role::agent messages
// are its own earlier turns, Role::user messages come from the other side.
// Hidden messages are rendered like any other.
struct GenerationRequest {
  std::string system;
  History history;
  SamplerConfig sampler;
  InterventionConfig intervention;
  std::size_t max_new_tokens = 128;
  bool record_attention = false;
};

struct GenerationResult {
  std::string text;
  std::size_t tokens = 0;
  std::size_t context_tokens = 0;
  std::size_t system_len = 0;
  std::vector<AttentionRow> rows;  // generated steps only; empty unless recorded
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string name() const = 0;
  virtual BackendCapabilities capabilities() const = 0;
  virtual GenerationResult generate(const GenerationRequest& request) const = 0;

  // One request per entry of `finals`, each being `base.history` followed by
  // that message. Backends that can share the common prefix override this.
  virtual std::vector<GenerationResult> generate_many(const GenerationRequest& base, const std::vector<Message>& finals) const;

  // ConfigError when the intervention needs something this backend lacks.
  void check_supports(const InterventionConfig& intervention) const;
};

// Decoder-only toy transformer behind the chat interface.
class ToyBackend : public ChatBackend {
 public:
  ToyBackend(std::shared_ptr<const ModelWeights> weights);

  std::string name() const override { return "toy"; }
  BackendCapabilities capabilities() const override { return {true, true, true}; }
  GenerationResult generate(const GenerationRequest& request) const override;
  std::vector<GenerationResult> generate_many(const GenerationRequest& base, const std::vector<Message>& finals) const override;

  const Tokenizer& tokenizer() const { return tokenizer_; }
  const ModelWeights& weights() const { return *weights_; }

 private:
  std::shared_ptr<const ModelWeights> weights_;
  Tokenizer tokenizer_;
};

// Replies computed by a function of the request. Deterministic by
// construction; no attention, no CFG.
class ScriptedBackend : public ChatBackend {
 public:
  using Script = std::function<std::string(const GenerationRequest&)>;

  explicit ScriptedBackend(Script script, std::string label = "scripted");

  std::string name() const override { return label_; }
  BackendCapabilities capabilities() const override { return {false, false, true}; }
  GenerationResult generate(const GenerationRequest& request) const override;

  static std::shared_ptr<ScriptedBackend> constant(std::string text);
  // Echoes the text of the last message in the history.
  static std::shared_ptr<ScriptedBackend> echo();
  // Reply for round r (= number of visible user messages in the history) is
  // replies[min(r, size) - 1].
  static std::shared_ptr<ScriptedBackend> by_round(std::vector<std::string> replies);
  // `compliant` for rounds 1..comply_rounds, `violating` afterwards.
  static std::shared_ptr<ScriptedBackend> comply_then_violate(std::string compliant, std::string violating,
                                                              std::size_t comply_rounds);
  // Answers multiple-choice items: looks the final user message up in
  // `answer_key` and returns the keyed letter with probability `accuracy`
  // (decided per question by hashing), else the next letter. Anything else
  // gets `chatter`.
  static std::shared_ptr<ScriptedBackend> semi_capable(std::unordered_map<std::string, std::string> answer_key,
                                                       double accuracy, std::uint64_t seed, std::string chatter = "ok");

 private:
  Script script_;
  std::string label_;
};

// Number of visible user messages in a history.
std::size_t visible_user_turns(const History& h);

}  // namespace drift
