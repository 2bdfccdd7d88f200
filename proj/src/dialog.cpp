#include "drift/dialog.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "drift/errors.hpp"
#include "drift/random.hpp"

namespace drift {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

void DialogConfig::validate() const {
  if (rounds < 1) throw ConfigError("dialog needs at least one round");
  if (max_new_tokens < 1) throw ConfigError("dialog needs a positive token budget");
  intervention.validate();
}

std::string_view probe_kind_name(ProbeKind k) { return k == ProbeKind::stability ? "stability" : "adoption"; }

namespace {

ProbeKind parse_probe_kind(std::string_view s, std::size_t line) {
  if (s == "stability") return ProbeKind::stability;
  if (s == "adoption") return ProbeKind::adoption;
  throw SchemaError(line, "unknown probe_kind '" + std::string(s) + "'");
}

const Utterance* find_visible(const std::vector<Utterance>& us, std::size_t round, Role speaker) {
  for (const auto& u : us)
    if (u.round == round && u.speaker == speaker && !u.hidden) return &u;
  return nullptr;
}

SprConfig spr_for(const InterventionConfig& iv, std::uint64_t seed) {
  return SprConfig{iv.kind == InterventionKind::spr ? iv.p : 0.0, derive_seed(seed, {hash_tag("spr")})};
}

History agent_view(const History& visible, const std::string& system_b, const InterventionConfig& iv, std::uint64_t seed) {
  if (iv.kind != InterventionKind::spr) return visible;
  return spr_expand_history(visible, system_b, spr_for(iv, seed));
}

template <class F>
GenerationResult with_round_context(std::size_t round, const char* side, F&& f) {
  const std::string where = "round " + std::to_string(round) + " (" + side + "): ";
  try {
    return f();
  } catch (const ContextOverflowError& e) {
    throw ContextOverflowError(where + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw BackendError(where + e.what());
  }
}

void add_rows(MassTrace& trace, const GenerationResult& r, std::size_t round, Role speaker) {
  if (r.rows.empty()) return;
  trace.system_len = r.system_len;
  std::size_t lo = r.rows.front().step, hi = lo;
  for (const auto& row : r.rows) {
    lo = std::min(lo, row.step);
    hi = std::max(hi, row.step);
  }
  append_trace(trace, r.rows, TurnAnnotation{lo, hi, round, speaker});
}

}  // namespace

std::size_t DialogTranscript::rounds() const {
  std::size_t n = 0;
  for (const auto& u : utterances)
    if (!u.hidden && u.speaker == Role::agent) n = std::max(n, u.round);
  return n;
}

const std::string& DialogTranscript::user_text(std::size_t round) const {
  const auto* u = find_visible(utterances, round, Role::user);
  if (u == nullptr) throw DomainError("no user utterance in round " + std::to_string(round));
  return u->text;
}

const std::string& DialogTranscript::agent_text(std::size_t round) const {
  const auto* u = find_visible(utterances, round, Role::agent);
  if (u == nullptr) throw DomainError("no agent utterance in round " + std::to_string(round));
  return u->text;
}

History DialogTranscript::agent_history(std::size_t upto) const {
  History h;
  for (const auto& u : utterances) {
    if (u.hidden || u.round > upto) continue;
    h.push_back(Message{u.speaker, u.text, false});
  }
  return h;
}

void DialogTranscript::validate() const {
  std::size_t expect_round = 1;
  Role expect = Role::user;
  bool pending_hidden = false;
  for (const auto& u : utterances) {
    if (u.hidden) {
      if (u.speaker != Role::user || u.round != expect_round || expect != Role::user) {
        throw DomainError("hidden utterance out of place in round " + std::to_string(u.round));
      }
      pending_hidden = true;
      continue;
    }
    if (u.speaker != expect || u.round != expect_round) {
      throw DomainError("alternation broken at round " + std::to_string(u.round) + " (" + std::string(role_name(u.speaker)) +
                        ")");
    }
    pending_hidden = false;
    if (expect == Role::user) {
      expect = Role::agent;
    } else {
      expect = Role::user;
      ++expect_round;
    }
  }
  if (expect == Role::agent || pending_hidden) throw DomainError("transcript ends inside a round");
  const std::size_t n = expect_round - 1;
  for (const auto& p : probes) {
    if (p.round < 1 || p.round > n) throw DomainError("probe references missing round " + std::to_string(p.round));
  }
}

DialogTranscript run_self_chat(const DialogConfig& config, const ChatBackend& user, const ChatBackend& agent) {
  config.validate();
  agent.check_supports(config.intervention);
  DialogTranscript t;
  t.conversation_id = config.conversation_id;
  t.agent_trace.conversation_id = config.conversation_id;
  t.user_trace.conversation_id = config.conversation_id;
  const bool agent_rows = config.record_attention && agent.capabilities().attention_hooks;
  const bool user_rows = config.record_attention && user.capabilities().attention_hooks;
  const SprConfig spr = spr_for(config.intervention, config.seed);

  History visible;
  std::string a = config.starter;
  std::size_t a_tokens = Tokenizer::split(a).size();
  for (std::size_t i = 1; i <= config.rounds; ++i) {
    if (config.intervention.kind == InterventionKind::spr && spr_inject(spr, i - 1)) {
      t.utterances.push_back(Utterance{i, Role::user, config.system_b, true, Tokenizer::split(config.system_b).size()});
    }
    t.utterances.push_back(Utterance{i, Role::user, a, false, a_tokens});
    visible.push_back(Message{Role::user, a, false});

    GenerationRequest req;
    req.system = config.system_b;
    req.history = agent_view(visible, config.system_b, config.intervention, config.seed);
    req.sampler = config.sampler;
    req.sampler.seed = derive_seed(config.seed, {hash_tag("agent"), i});
    req.intervention = config.intervention;
    req.max_new_tokens = config.max_new_tokens;
    req.record_attention = agent_rows;
    const GenerationResult b = with_round_context(i, "agent", [&] { return agent.generate(req); });
    t.utterances.push_back(Utterance{i, Role::agent, b.text, false, b.tokens});
    visible.push_back(Message{Role::agent, b.text, false});
    add_rows(t.agent_trace, b, i, Role::agent);

    if (i == config.rounds) break;
    GenerationRequest ureq;
    ureq.system = config.system_a;
    ureq.history = mirror_roles(visible);
    ureq.sampler = config.sampler;
    ureq.sampler.seed = derive_seed(config.seed, {hash_tag("user"), i});
    ureq.max_new_tokens = config.max_new_tokens;
    ureq.record_attention = user_rows;
    const GenerationResult next = with_round_context(i + 1, "user", [&] { return user.generate(ureq); });
    add_rows(t.user_trace, next, i + 1, Role::user);
    a = next.text;
    a_tokens = next.tokens;
  }
  return t;
}

ProbeSettings ProbeSettings::from(const DialogConfig& config) {
  ProbeSettings s;
  s.system = config.system_b;
  s.sampler = config.sampler;
  s.seed = config.seed;
  s.intervention = config.intervention;
  s.max_new_tokens = config.max_new_tokens;
  return s;
}

std::uint64_t probe_seed(std::uint64_t base, std::size_t round, ProbeKind kind) {
  return base ^ derive_seed(round, {hash_tag(kind == ProbeKind::stability ? "probe" : "adoption")});
}

GenerationResult probe_round(const DialogTranscript& transcript, std::size_t round, const std::string& question,
                             const ChatBackend& backend, const ProbeSettings& settings, ProbeKind kind) {
  const std::size_t n = transcript.rounds();
  if (round < 1 || round > n) {
    throw DomainError("probe round " + std::to_string(round) + " outside 1.." + std::to_string(n));
  }
  History visible = transcript.agent_history(round - 1);
  visible.push_back(Message{Role::user, question, false});
  GenerationRequest req;
  req.system = settings.system;
  req.history = agent_view(visible, settings.system, settings.intervention, settings.seed);
  req.sampler = settings.sampler;
  req.sampler.seed = probe_seed(settings.seed, round, kind);
  req.intervention = settings.intervention;
  req.max_new_tokens = settings.max_new_tokens;
  return with_round_context(round, "probe", [&] { return backend.generate(req); });
}

std::string conversation_probe(const BenchmarkEntry& entry, const ProbePool& pool, std::uint64_t seed, ProbeKind kind) {
  return probe_for(entry, pool, derive_seed(seed, {hash_tag("probe-question"), static_cast<std::uint64_t>(kind)}));
}

StabilityCurve stability_curve(const DialogTranscript& transcript, const BenchmarkEntry& entry_b,
                               const BenchmarkEntry* entry_a, const ProbePool& pool, const ChatBackend& backend,
                               const ProbeSettings& settings) {
  const std::size_t n = transcript.rounds();
  StabilityCurve curve;
  const std::string q_b = conversation_probe(entry_b, pool, settings.seed, ProbeKind::stability);
  for (std::size_t i = 1; i <= n; ++i) {
    const auto r = probe_round(transcript, i, q_b, backend, settings, ProbeKind::stability);
    const double s = evaluate_measure(entry_b.measure, r.text);
    curve.stability.push_back(s);
    curve.probes.push_back(ProbeRecord{i, ProbeKind::stability, q_b, r.text, s});
  }
  if (entry_a != nullptr) {
    curve.adoption.emplace();
    const std::string q_a = conversation_probe(*entry_a, pool, settings.seed, ProbeKind::adoption);
    for (std::size_t i = 1; i <= n; ++i) {
      const auto r = probe_round(transcript, i, q_a, backend, settings, ProbeKind::adoption);
      const double s = evaluate_measure(entry_a->measure, r.text);
      curve.adoption->push_back(s);
      curve.probes.push_back(ProbeRecord{i, ProbeKind::adoption, q_a, r.text, s});
    }
  }
  return curve;
}

// ---------------------------------------------------------------------------

void write_transcript_jsonl(std::ostream& out, const DialogTranscript& t) {
  for (const auto& u : t.utterances) {
    ojson j;
    j["conversation_id"] = t.conversation_id;
    j["round"] = u.round;
    j["speaker"] = role_name(u.speaker);
    j["text"] = u.text;
    j["hidden"] = u.hidden;
    j["tokens"] = u.tokens;
    out << j.dump() << '\n';
  }
  for (const auto& p : t.probes) {
    ojson j;
    j["conversation_id"] = t.conversation_id;
    j["round"] = p.round;
    j["probe_kind"] = probe_kind_name(p.kind);
    j["question"] = p.question;
    j["answer"] = p.answer;
    j["score"] = p.score;
    out << j.dump() << '\n';
  }
}

std::string transcript_to_jsonl(const DialogTranscript& t) {
  std::ostringstream os;
  write_transcript_jsonl(os, t);
  return os.str();
}

std::vector<DialogTranscript> read_transcripts_jsonl(std::istream& in) {
  std::vector<DialogTranscript> out;
  std::unordered_map<std::string, std::size_t> index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw SchemaError(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw SchemaError(line_no, "expected an object");
    try {
      const std::string id = j.at("conversation_id").get<std::string>();
      auto [it, fresh] = index.emplace(id, out.size());
      if (fresh) {
        out.emplace_back();
        out.back().conversation_id = id;
        out.back().agent_trace.conversation_id = id;
        out.back().user_trace.conversation_id = id;
      }
      DialogTranscript& t = out[it->second];
      const std::size_t round = j.at("round").get<std::size_t>();
      if (j.contains("probe_kind")) {
        ProbeRecord p;
        p.round = round;
        p.kind = parse_probe_kind(j.at("probe_kind").get<std::string>(), line_no);
        p.question = j.at("question").get<std::string>();
        p.answer = j.at("answer").get<std::string>();
        p.score = j.at("score").get<double>();
        t.probes.push_back(std::move(p));
      } else {
        Utterance u;
        u.round = round;
        const std::string sp = j.at("speaker").get<std::string>();
        if (sp != "user" && sp != "agent") throw SchemaError(line_no, "speaker must be user or agent");
        u.speaker = parse_role(sp);
        u.text = j.at("text").get<std::string>();
        u.hidden = j.value("hidden", false);
        u.tokens = j.value("tokens", std::size_t{0});
        t.utterances.push_back(std::move(u));
      }
    } catch (const json::exception& e) {
      throw SchemaError(line_no, std::string("bad transcript record: ") + e.what());
    }
  }
  return out;
}

std::vector<DialogTranscript> read_transcripts_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open transcript " + path.string());
  return read_transcripts_jsonl(in);
}

}  // namespace drift
