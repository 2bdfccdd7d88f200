#include "drift/backends.hpp"

#include <optional>

#include "drift/errors.hpp"

namespace drift {

std::size_t visible_user_turns(const History& h) {
  std::size_t n = 0;
  for (const auto& m : h) n += (m.role == Role::user && !m.hidden) ? 1 : 0;
  return n;
}

void ChatBackend::check_supports(const InterventionConfig& intervention) const {
  intervention.validate();
  const auto caps = capabilities();
  if (intervention.kind == InterventionKind::split_softmax && !caps.attention_hooks) {
    throw ConfigError("backend '" + name() + "' cannot apply split-softmax: no attention hooks");
  }
  if (intervention.kind == InterventionKind::cfg && !caps.cfg_double_pass) {
    throw ConfigError("backend '" + name() + "' cannot run CFG: no double pass");
  }
}

std::vector<GenerationResult> ChatBackend::generate_many(const GenerationRequest& base, const std::vector<Message>& finals) const {
  std::vector<GenerationResult> out;
  out.reserve(finals.size());
  for (std::size_t i = 0; i < finals.size(); ++i) {
    GenerationRequest r = base;
    r.history.push_back(finals[i]);
    r.sampler.seed = derive_seed(base.sampler.seed, {i});
    out.push_back(generate(r));
  }
  return out;
}

// ---------------------------------------------------------------------------

ToyBackend::ToyBackend(std::shared_ptr<const ModelWeights> weights)
    : weights_(std::move(weights)), tokenizer_(weights_ ? weights_->vocab : std::vector<std::string>{}) {
  if (!weights_) throw ConfigError("toy backend needs weights");
}

namespace {

struct ToyPlan {
  std::optional<AttentionHook> hook;
  GenerateOptions opts;
};

ToyPlan plan_for(const GenerationRequest& r, const Tokenizer& tok, std::size_t system_len) {
  ToyPlan p;
  if (r.intervention.kind == InterventionKind::split_softmax) p.hook = split_softmax_hook(r.intervention.k);
  p.opts.system_len = system_len;
  p.opts.stop = StopCondition{r.max_new_tokens, tok.eot()};
  p.opts.record = r.record_attention ? RecordMode::generated : RecordMode::none;
  return p;
}

GenerationResult to_result(const Generation& g, const Tokenizer& tok, std::size_t context, std::size_t system_len) {
  GenerationResult res;
  res.text = tok.decode(g.tokens);
  res.tokens = g.tokens.size();
  res.context_tokens = context;
  res.system_len = system_len;
  res.rows = g.attention.rows;
  return res;
}

void append_message(std::vector<TokenId>& out, const Tokenizer& tok, const Message& m) {
  out.push_back(m.role == Role::user ? tok.user() : tok.agent());
  auto ids = tok.encode(m.text);
  out.insert(out.end(), ids.begin(), ids.end());
  out.push_back(tok.eot());
}

}  // namespace

GenerationResult ToyBackend::generate(const GenerationRequest& r) const {
  check_supports(r.intervention);
  const auto ctx = render_chat(tokenizer_, r.system, r.history);
  ToyPlan plan = plan_for(r, tokenizer_, ctx.system_len);
  if (plan.hook) plan.opts.hook = &*plan.hook;
  if (r.intervention.kind == InterventionKind::cfg) {
    plan.opts.cfg = CfgPass{render_chat(tokenizer_, "", r.history).tokens, r.intervention.alpha};
  }
  const Generation g = generate_utterance(ctx.tokens, *weights_, r.sampler, plan.opts);
  return to_result(g, tokenizer_, ctx.tokens.size(), ctx.system_len);
}

std::vector<GenerationResult> ToyBackend::generate_many(const GenerationRequest& base, const std::vector<Message>& finals) const {
  check_supports(base.intervention);
  auto ctx = render_chat(tokenizer_, base.system, base.history);
  ctx.tokens.pop_back();  // trailing <agent>; re-added after each final message
  ToyPlan plan = plan_for(base, tokenizer_, ctx.system_len);
  if (plan.hook) plan.opts.hook = &*plan.hook;
  const bool cfg = base.intervention.kind == InterventionKind::cfg;
  if (cfg) plan.opts.cfg = CfgPass{{}, base.intervention.alpha};

  DecoderState cond(*weights_, {plan.opts.hook, ctx.system_len, plan.opts.record, false});
  cond.push_tokens(ctx.tokens);
  std::optional<DecoderState> uncond;
  std::vector<TokenId> uctx;
  if (cfg) {
    uctx = render_chat(tokenizer_, "", base.history).tokens;
    uctx.pop_back();
    uncond.emplace(*weights_, DecoderState::Options{nullptr, 0, RecordMode::none, false});
    uncond->push_tokens(uctx);
  }

  std::vector<GenerationResult> out;
  out.reserve(finals.size());
  for (std::size_t i = 0; i < finals.size(); ++i) {
    std::vector<TokenId> tail;
    append_message(tail, tokenizer_, finals[i]);
    tail.push_back(tokenizer_.agent());
    const std::size_t total = ctx.tokens.size() + tail.size();
    if (total + base.max_new_tokens > weights_->dims.max_context ||
        (cfg && uctx.size() + tail.size() + base.max_new_tokens > weights_->dims.max_context)) {
      throw ContextOverflowError("context of " + std::to_string(total) + " tokens plus budget exceeds max_context");
    }
    DecoderState c = cond;
    c.push_tokens(std::span<const TokenId>(tail).first(tail.size() - 1));
    c.begin_generation();
    c.push_token(tail.back());
    std::optional<DecoderState> u;
    if (cfg) {
      u = *uncond;
      u->push_tokens(tail);
    }
    SamplerConfig s = base.sampler;
    s.seed = derive_seed(base.sampler.seed, {i});
    Rng rng = make_rng(s.seed);
    const Generation g = continue_generation(c, u ? &*u : nullptr, *weights_, s, plan.opts, rng);
    out.push_back(to_result(g, tokenizer_, total, ctx.system_len));
  }
  return out;
}

// ---------------------------------------------------------------------------

ScriptedBackend::ScriptedBackend(Script script, std::string label) : script_(std::move(script)), label_(std::move(label)) {
  if (!script_) throw ConfigError("scripted backend needs a script");
}

GenerationResult ScriptedBackend::generate(const GenerationRequest& request) const {
  check_supports(request.intervention);
  GenerationResult r;
  r.text = script_(request);
  r.tokens = Tokenizer::split(r.text).size();
  return r;
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::constant(std::string text) {
  return std::make_shared<ScriptedBackend>([text = std::move(text)](const GenerationRequest&) { return text; }, "scripted-constant");
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::echo() {
  return std::make_shared<ScriptedBackend>(
      [](const GenerationRequest& r) { return r.history.empty() ? std::string() : r.history.back().text; }, "scripted-echo");
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::by_round(std::vector<std::string> replies) {
  if (replies.empty()) throw ConfigError("scripted backend needs at least one reply");
  return std::make_shared<ScriptedBackend>(
      [replies = std::move(replies)](const GenerationRequest& r) {
        const std::size_t round = std::max<std::size_t>(1, visible_user_turns(r.history));
        return replies[std::min(round, replies.size()) - 1];
      },
      "scripted-rounds");
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::comply_then_violate(std::string compliant, std::string violating,
                                                                      std::size_t comply_rounds) {
  return std::make_shared<ScriptedBackend>(
      [=](const GenerationRequest& r) { return visible_user_turns(r.history) <= comply_rounds ? compliant : violating; },
      "scripted-comply-then-violate");
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::semi_capable(std::unordered_map<std::string, std::string> answer_key,
                                                               double accuracy, std::uint64_t seed, std::string chatter) {
  return std::make_shared<ScriptedBackend>(
      [key = std::move(answer_key), accuracy, seed, chatter = std::move(chatter)](const GenerationRequest& r) {
        if (r.history.empty()) return chatter;
        auto it = key.find(r.history.back().text);
        if (it == key.end()) return chatter;
        Rng rng = make_rng(derive_seed(seed, {hash_tag(it->first)}));
        if (uniform01(rng) < accuracy) return it->second;
        const char wrong = static_cast<char>('A' + ((it->second.empty() ? 0 : it->second[0] - 'A') + 1) % 4);
        return std::string(1, wrong);
      },
      "scripted-semi-capable");
}

}  // namespace drift
