#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "drift/backends.hpp"
#include "drift/benchmark.hpp"
#include "drift/telemetry.hpp"

namespace drift {

struct DialogConfig {
  std::string conversation_id = "c0";
  std::string system_a;  // user side; may be empty
  std::string system_b;  // agent side
  std::string starter;   // a_1
  std::size_t rounds = 8;
  std::uint64_t seed = 0;
  SamplerConfig sampler;             // seed field is ignored; derived per turn
  InterventionConfig intervention;   // agent side only
  std::size_t max_new_tokens = 128;  // per utterance
  bool record_attention = true;      // honoured only by backends with hooks

  void validate() const;
};

struct Utterance {
  std::size_t round = 0;
  Role speaker = Role::user;
  std::string text;
  bool hidden = false;  // repeated system prompt, never scored
  std::size_t tokens = 0;

  bool operator==(const Utterance&) const = default;
};

enum class ProbeKind { stability, adoption };
std::string_view probe_kind_name(ProbeKind k);

struct ProbeRecord {
  std::size_t round = 0;
  ProbeKind kind = ProbeKind::stability;
  std::string question;
  std::string answer;
  double score = 0.0;

  bool operator==(const ProbeRecord&) const = default;
};

struct DialogTranscript {
  std::string conversation_id;
  std::vector<Utterance> utterances;
  std::vector<ProbeRecord> probes;
  // Attention mass, filled when the backend exposes attention. Not part of
  // the JSONL form.
  MassTrace agent_trace;
  MassTrace user_trace;

  std::size_t rounds() const;
  const std::string& user_text(std::size_t round) const;
  const std::string& agent_text(std::size_t round) const;
  // Visible messages of rounds [1, upto] from the agent's point of view.
  History agent_history(std::size_t upto) const;

  // Visible utterances alternate user, agent, user, ... one pair per round;
  // hidden ones sit right before a user turn; probes reference existing
  // rounds. Throws DomainError otherwise.
  void validate() const;

  bool operator==(const DialogTranscript& o) const {
    return conversation_id == o.conversation_id && utterances == o.utterances && probes == o.probes;
  }
};

DialogTranscript run_self_chat(const DialogConfig& config, const ChatBackend& user, const ChatBackend& agent);

struct ProbeSettings {
  std::string system;  // s_B
  SamplerConfig sampler;
  std::uint64_t seed = 0;  // the conversation seed
  InterventionConfig intervention;
  std::size_t max_new_tokens = 128;

  static ProbeSettings from(const DialogConfig& config);
};

// Seed for the probe of `round`: base xor a round-and-kind hash.
std::uint64_t probe_seed(std::uint64_t base, std::size_t round, ProbeKind kind = ProbeKind::stability);

// Counterfactual answer b_i' from [s_B, a_1, b_1, ..., a_{i-1}, b_{i-1}, question].
// The transcript is not touched.
GenerationResult probe_round(const DialogTranscript& transcript, std::size_t round, const std::string& question,
                             const ChatBackend& backend, const ProbeSettings& settings,
                             ProbeKind kind = ProbeKind::stability);

struct StabilityCurve {
  std::vector<double> stability;              // index i-1 holds round i
  std::optional<std::vector<double>> adoption;
  std::vector<ProbeRecord> probes;
};

// Probes every round with the agent's probe question (and optionally the
// user-side entry's, scored with its measure).
StabilityCurve stability_curve(const DialogTranscript& transcript, const BenchmarkEntry& entry_b,
                               const BenchmarkEntry* entry_a, const ProbePool& pool, const ChatBackend& backend,
                               const ProbeSettings& settings);

// Probe question used for an entry in a given conversation. Pool questions
// are drawn once per conversation.
std::string conversation_probe(const BenchmarkEntry& entry, const ProbePool& pool, std::uint64_t seed, ProbeKind kind);

// JSONL: one object per utterance, then one per probe.
void write_transcript_jsonl(std::ostream& out, const DialogTranscript& t);
std::string transcript_to_jsonl(const DialogTranscript& t);
// Groups records by conversation_id in first-seen order. Throws SchemaError.
std::vector<DialogTranscript> read_transcripts_jsonl(std::istream& in);
std::vector<DialogTranscript> read_transcripts_jsonl(const std::filesystem::path& path);

}  // namespace drift
