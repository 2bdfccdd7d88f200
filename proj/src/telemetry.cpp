#include "drift/telemetry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>

#include "drift/errors.hpp"

namespace drift {

double system_mass(std::span<const double> row, std::size_t system_len) {
  if (system_len > row.size()) {
    throw DomainError("system prefix of " + std::to_string(system_len) + " exceeds row length " + std::to_string(row.size()));
  }
  double pi = 0.0;
  for (std::size_t i = 0; i < system_len; ++i) pi += row[i];
  return std::clamp(pi, 0.0, 1.0);
}

std::vector<MassEntry> MassTrace::agent_entries() const {
  std::vector<MassEntry> out;
  for (const auto& e : entries)
    if (e.speaker == Role::agent) out.push_back(e);
  return out;
}

std::vector<std::pair<std::size_t, double>> MassTrace::agent_turn_means() const {
  std::map<std::size_t, std::pair<double, std::size_t>> acc;
  for (const auto& e : entries) {
    if (e.speaker != Role::agent) continue;
    auto& a = acc[e.turn];
    a.first += e.pi;
    ++a.second;
  }
  std::vector<std::pair<std::size_t, double>> out;
  for (const auto& [turn, a] : acc) out.emplace_back(turn, a.first / static_cast<double>(a.second));
  return out;
}

void append_trace(MassTrace& trace, std::span<const AttentionRow> rows, const TurnAnnotation& annotation) {
  for (const auto& r : rows) {
    if (r.step < annotation.first_step || r.step > annotation.last_step) {
      throw DomainError("unannotated step " + std::to_string(r.step));
    }
    const std::size_t len = std::min(trace.system_len, r.used().size());
    trace.entries.push_back(MassEntry{r.layer, r.head, r.step, annotation.turn, annotation.speaker, system_mass(r.used(), len)});
  }
}

MassTrace record_trace(std::span<const AttentionRow> rows, std::span<const TurnAnnotation> annotations, std::size_t system_len,
                       std::string conversation_id) {
  MassTrace trace;
  trace.conversation_id = std::move(conversation_id);
  trace.system_len = system_len;
  for (const auto& r : rows) {
    auto it = std::find_if(annotations.begin(), annotations.end(),
                           [&](const TurnAnnotation& a) { return r.step >= a.first_step && r.step <= a.last_step; });
    if (it == annotations.end()) throw DomainError("unannotated step " + std::to_string(r.step));
    append_trace(trace, std::span<const AttentionRow>(&r, 1), *it);
  }
  return trace;
}

double ls_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("slope inputs differ in length");
  const std::size_t n = x.size();
  if (n < 2) return 0.0;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

double DecayStats::mean_slope() const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& h : heads)
    for (double v : h.slopes) s += v, ++n;
  return n ? s / static_cast<double>(n) : 0.0;
}

double DecayStats::mean_drop() const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& h : heads)
    for (double v : h.drops) s += v, ++n;
  return n ? s / static_cast<double>(n) : 0.0;
}

double DecayStats::max_abs_slope() const {
  double m = 0.0;
  for (const auto& h : heads)
    for (double v : h.slopes) m = std::max(m, std::abs(v));
  return m;
}

DecayStats decay_stats(const MassTrace& trace, std::size_t window) {
  if (window == 0) throw DomainError("boundary window must be positive");
  // (layer, head) -> turn -> [(step, pi)]
  std::map<std::pair<std::size_t, std::size_t>, std::map<std::size_t, std::vector<std::pair<double, double>>>> series;
  std::vector<std::size_t> turns;
  for (const auto& e : trace.entries) {
    if (e.speaker != Role::agent) continue;
    series[{e.layer, e.head}][e.turn].emplace_back(static_cast<double>(e.step), e.pi);
    if (std::find(turns.begin(), turns.end(), e.turn) == turns.end()) turns.push_back(e.turn);
  }
  if (turns.empty()) throw DomainError("trace has no agent turns");
  std::sort(turns.begin(), turns.end());

  DecayStats stats;
  stats.agent_turns = turns;
  stats.boundary_window = window;
  for (auto& [key, by_turn] : series) {
    HeadDecay hd{key.first, key.second, {}, {}};
    const std::vector<std::pair<double, double>>* prev = nullptr;
    for (std::size_t turn : turns) {
      auto it = by_turn.find(turn);
      if (it == by_turn.end()) continue;
      auto& pts = it->second;
      std::sort(pts.begin(), pts.end());
      std::vector<double> xs, ys;
      for (const auto& [x, y] : pts) xs.push_back(x), ys.push_back(y);
      hd.slopes.push_back(ls_slope(xs, ys));
      if (prev != nullptr) {
        const std::size_t a = std::min(window, prev->size()), b = std::min(window, pts.size());
        double tail = 0.0, head = 0.0;
        for (std::size_t i = prev->size() - a; i < prev->size(); ++i) tail += (*prev)[i].second;
        for (std::size_t i = 0; i < b; ++i) head += pts[i].second;
        hd.drops.push_back(tail / static_cast<double>(a) - head / static_cast<double>(b));
      }
      prev = &pts;
    }
    stats.heads.push_back(std::move(hd));
  }
  return stats;
}

void write_trace_csv_header(std::ostream& out) { out << "conversation_id,layer,head,step,turn,speaker,pi\n"; }

void write_trace_csv(std::ostream& out, const MassTrace& trace) {
  char buf[64];
  for (const auto& e : trace.entries) {
    std::snprintf(buf, sizeof buf, "%.6f", e.pi);
    out << trace.conversation_id << ',' << e.layer << ',' << e.head << ',' << e.step << ',' << e.turn << ','
        << role_name(e.speaker) << ',' << buf << '\n';
  }
}

}  // namespace drift
