#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "drift/chat.hpp"
#include "drift/model.hpp"

namespace drift {

// Sum of the first system_len entries of an attention row.
double system_mass(std::span<const double> row, std::size_t system_len);

// Steps [first_step, last_step] (1-based, inclusive) belong to one utterance.
struct TurnAnnotation {
  std::size_t first_step = 0;
  std::size_t last_step = 0;
  std::size_t turn = 0;  // 1-based round
  Role speaker = Role::agent;
};

struct MassEntry {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t step = 0;
  std::size_t turn = 0;
  Role speaker = Role::agent;
  double pi = 0.0;
};

struct MassTrace {
  std::string conversation_id;
  std::size_t system_len = 0;
  std::vector<MassEntry> entries;  // ordered by (turn, step, layer, head)

  // Entries for agent turns only, in recorded order.
  std::vector<MassEntry> agent_entries() const;
  // Mean pi over every head, layer and step of each agent turn, keyed by turn.
  std::vector<std::pair<std::size_t, double>> agent_turn_means() const;
};

// Builds a trace from recorded rows. Uses the applied (post-hook) row, which
// is what the model actually attended with.
MassTrace record_trace(std::span<const AttentionRow> rows, std::span<const TurnAnnotation> annotations, std::size_t system_len,
                       std::string conversation_id = {});

// Appends rows of one utterance to an existing trace.
void append_trace(MassTrace& trace, std::span<const AttentionRow> rows, const TurnAnnotation& annotation);

struct HeadDecay {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::vector<double> slopes;  // per agent turn, least squares d(pi)/d(step)
  std::vector<double> drops;   // per consecutive agent-turn pair
};

struct DecayStats {
  std::vector<std::size_t> agent_turns;
  std::vector<HeadDecay> heads;
  std::size_t boundary_window = 5;

  double mean_slope() const;
  double mean_drop() const;
  double max_abs_slope() const;
};

// Within-turn slopes and cross-turn drops per head. Drops compare the mean of
// the last `window` steps of one agent turn with the first `window` steps of
// the next; shorter turns use all their steps.
DecayStats decay_stats(const MassTrace& trace, std::size_t window = 5);

// Least-squares slope of y against x. Zero when x is constant.
double ls_slope(std::span<const double> x, std::span<const double> y);

void write_trace_csv_header(std::ostream& out);
void write_trace_csv(std::ostream& out, const MassTrace& trace);

}  // namespace drift
