#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "drift/runner.hpp"

namespace drift {

struct TradeoffPoint {
  std::string method;  // ss | cfg | spr
  double value = 0.0;  // k, alpha or p
  double stability = 0.0;
  double stability_std = 0.0;
  double capability = 0.0;
  double capability_std = 0.0;
  double drop = 0.0;  // baseline capability - capability
};

struct DominanceRow {
  double level = 0.0;
  // Nearest point of each method within the gap, by method name.
  std::vector<TradeoffPoint> matched;
  std::optional<std::string> winner;  // empty: incomparable; "tie" on equal stability
};

struct TradeoffReport {
  std::vector<TradeoffPoint> curve;  // by method (first-seen order), then drop
  std::vector<DominanceRow> levels;
};

// Needs at least two points per method. Levels are the distinct drops of all
// points; a level is comparable when two or more methods have a point within
// `gap` of it.
TradeoffReport tradeoff_curve(const std::vector<TradeoffPoint>& points, double gap = 0.05);

// Mean and sample standard deviation (0 for fewer than two values).
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};
MeanStd mean_std(const std::vector<double>& xs);

struct CellSummary {
  std::string pair;  // "user>agent", or "*" across pairs
  InterventionConfig cell;
  std::size_t conversations = 0;
  std::size_t failed = 0;
  MeanStd stability;  // over per-conversation means
  MeanStd adoption;
  MeanStd capability;
  std::optional<double> capability_drop;
  std::optional<double> pi_first;
  std::optional<double> pi_last;
};

std::vector<CellSummary> summarize(const ResultBundle& bundle);

struct RoundRow {
  InterventionConfig cell;
  std::size_t round = 0;
  std::string metric;  // stability | adoption | pi
  MeanStd stats;
};

std::vector<RoundRow> by_round(const ResultBundle& bundle);

// One point per non-baseline cell with a capability score, across pairs.
std::vector<TradeoffPoint> tradeoff_points(const ResultBundle& bundle);

struct ReportOptions {
  bool summary = true;
  bool rounds = true;
  bool attention = true;
  bool tradeoff = true;
  bool per_round = true;
  bool bundle = true;
};

// Writes summary.csv, stability_by_round.csv, attention_mass.json,
// tradeoff.csv, dominance.csv, per_round.jsonl and bundle.json. Returns the
// paths written. Throws ConfigError when the directory is not writable.
std::vector<std::filesystem::path> emit_report(const ResultBundle& bundle, const std::filesystem::path& dir,
                                               const ReportOptions& options = {});

std::string bundle_to_json(const ResultBundle& bundle);
ResultBundle bundle_from_json(std::string_view text);
ResultBundle load_bundle(const std::filesystem::path& path);

void write_transcripts(const std::vector<DialogTranscript>& transcripts, const std::filesystem::path& path);

}  // namespace drift
