#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "drift/backends.hpp"
#include "drift/benchmark.hpp"
#include "drift/dialog.hpp"
#include "drift/interventions.hpp"

namespace drift {

// ---------------------------------------------------------------------------
// Capability probes (multiple choice, four options, letter answers).

struct CapabilityItem {
  std::string question;
  std::vector<std::string> choices;
  char answer = 'A';

  std::string render() const;  // "What is 2 + 3? A) 4 B) 5 C) 6 D) 7"
  void validate() const;
};

struct CapabilityProbeSet {
  std::vector<CapabilityItem> items;
};

CapabilityProbeSet parse_capability_probes(std::string_view json, std::size_t min_items = 50);
CapabilityProbeSet load_capability_probes(const std::filesystem::path& path, std::size_t min_items = 50);

// First standalone A-D in the text, if any.
std::optional<char> parse_choice_letter(std::string_view text);

struct CapabilityRequest {
  std::string system;
  History context;  // visible history before the insertion turn
  InterventionConfig intervention;
  SamplerConfig sampler;
  std::uint64_t seed = 0;  // conversation seed, for SPR draws
  std::size_t max_new_tokens = 16;
};

// Each item asked as a user turn after the fixed context. Unparseable
// answers count as wrong.
double capability_score(const ChatBackend& backend, const CapabilityRequest& request, const CapabilityProbeSet& probes);

// ---------------------------------------------------------------------------
// Experiment configuration.

struct BackendSpec {
  std::string kind = "toy";  // toy | scripted | http
  std::optional<std::filesystem::path> weights;
  // scripted
  std::string mode = "constant";  // constant | echo | rounds | comply_then_violate
  std::string text;
  std::vector<std::string> replies;
  std::string violating;
  std::size_t comply_rounds = 0;
  // http
  std::string base_url;
  std::string model;
  std::optional<std::filesystem::path> fixture;
  std::size_t max_in_flight = 4;
};

std::shared_ptr<ChatBackend> make_backend(const BackendSpec& spec);

struct CapabilitySettings {
  bool enabled = true;
  std::size_t turn = 4;
  std::size_t items = 0;  // 0: all
  std::size_t max_new_tokens = 16;
};

struct ExperimentConfig {
  std::filesystem::path dataset;
  std::filesystem::path probe_pool;
  std::filesystem::path starters;
  std::filesystem::path capability_probes;
  BackendSpec user_backend;
  BackendSpec agent_backend;
  std::vector<std::pair<std::string, std::string>> pairs;  // (user entry id, agent entry id)
  std::vector<InterventionConfig> cells;                    // cells[0] is always the baseline
  std::size_t rounds = 8;
  std::size_t conversations_per_cell = 2;
  CapabilitySettings capability;
  bool adoption = true;
  bool empty_user_system = false;
  std::uint64_t seed = 1;
  SamplerConfig sampler;
  std::size_t max_new_tokens = 128;
  std::filesystem::path out = "out";
  std::size_t jobs = 1;

  void validate() const;
};

// Default grids: k in {1, .9, .7, .5, .3}, alpha in {1, 1.5, 2, 3}, p in {0, .25, .5, 1}.
std::vector<InterventionConfig> default_cells();
// Baseline first, then the given cells in order, duplicates removed.
std::vector<InterventionConfig> with_baseline(const std::vector<InterventionConfig>& cells);

// Every ordered pair of distinct categories, first entry of each.
std::vector<std::pair<std::string, std::string>> cross_category_pairs(const std::vector<BenchmarkEntry>& dataset);

// Relative paths are resolved against the config file's directory.
ExperimentConfig parse_experiment_config(std::string_view json, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig default_experiment_config();

// ---------------------------------------------------------------------------
// Results.

struct ConversationRecord {
  std::size_t pair = 0;
  std::size_t cell = 0;
  std::size_t conversation = 0;
  std::uint64_t seed = 0;
  std::vector<double> stability;  // per round
  std::vector<double> adoption;   // per round; empty when not probed
  std::vector<double> pi;         // mean agent attention mass per round; empty without telemetry
  std::optional<double> capability;
  std::string error;

  bool ok() const { return error.empty(); }
};

struct TraceStep {
  std::size_t step = 0;
  std::size_t turn = 0;
  double pi = 0.0;
};

struct ResultBundle {
  std::uint64_t seed = 0;
  std::size_t rounds = 0;
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<InterventionConfig> cells;
  std::vector<ConversationRecord> records;  // ordered by (pair, cell, conversation)
  std::vector<TraceStep> example_trace;     // baseline, first pair, first conversation
};

struct ExperimentInputs {
  std::vector<BenchmarkEntry> dataset;
  ProbePool pool;
  std::vector<std::string> starters;
  CapabilityProbeSet capability;
  std::shared_ptr<ChatBackend> user;
  std::shared_ptr<ChatBackend> agent;
};

ExperimentInputs load_inputs(const ExperimentConfig& config);

struct ExperimentOutput {
  ResultBundle bundle;
  std::vector<DialogTranscript> transcripts;  // same order as records
};

// Failures are recorded per conversation and do not stop other cells.
ExperimentOutput run_experiment(const ExperimentConfig& config, const ExperimentInputs& inputs);
ExperimentOutput run_experiment(const ExperimentConfig& config);

std::vector<std::string> load_starters(const std::filesystem::path& path);

}  // namespace drift
