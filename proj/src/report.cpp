#include "drift/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "drift/errors.hpp"

namespace drift {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

TradeoffReport tradeoff_curve(const std::vector<TradeoffPoint>& points, double gap) {
  if (!(gap >= 0.0)) throw DomainError("matching gap must be non-negative");
  std::vector<std::string> methods;
  std::map<std::string, std::size_t> counts;
  for (const auto& p : points) {
    if (!(p.stability >= 0.0 && p.stability <= 1.0)) throw DomainError("trade-off stability outside [0,1]");
    if (counts[p.method]++ == 0) methods.push_back(p.method);
  }
  if (methods.empty()) throw DomainError("trade-off curve needs points");
  for (const auto& m : methods) {
    if (counts[m] < 2) throw DomainError("trade-off curve needs at least two points for method " + m);
  }

  TradeoffReport report;
  for (const auto& m : methods) {
    std::vector<TradeoffPoint> mine;
    for (const auto& p : points)
      if (p.method == m) mine.push_back(p);
    std::stable_sort(mine.begin(), mine.end(), [](const auto& a, const auto& b) { return a.drop < b.drop; });
    report.curve.insert(report.curve.end(), mine.begin(), mine.end());
  }

  std::vector<double> levels;
  for (const auto& p : report.curve) levels.push_back(p.drop);
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end(), [](double a, double b) { return std::abs(a - b) <= 1e-12; }),
               levels.end());

  for (double level : levels) {
    DominanceRow row;
    row.level = level;
    for (const auto& m : methods) {
      const TradeoffPoint* best = nullptr;
      double best_d = 0.0;
      for (const auto& p : report.curve) {
        if (p.method != m) continue;
        const double d = std::abs(p.drop - level);
        if (d > gap + 1e-12) continue;
        if (best == nullptr || d < best_d) {
          best = &p;
          best_d = d;
        }
      }
      if (best != nullptr) row.matched.push_back(*best);
    }
    if (row.matched.size() >= 2) {
      auto top = std::max_element(row.matched.begin(), row.matched.end(),
                                  [](const auto& a, const auto& b) { return a.stability < b.stability; });
      const bool tie = std::any_of(row.matched.begin(), row.matched.end(), [&](const TradeoffPoint& p) {
        return &p != &*top && std::abs(p.stability - top->stability) <= 1e-12;
      });
      row.winner = tie ? std::string("tie") : top->method;
    }
    report.levels.push_back(std::move(row));
  }
  return report;
}

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  r.n = xs.size();
  if (xs.empty()) return r;
  double s = 0.0;
  for (double x : xs) s += x;
  r.mean = s / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string pair_label(const ResultBundle& b, std::size_t p) { return b.pairs[p].first + ">" + b.pairs[p].second; }

// pair == npos: all pairs.
CellSummary summarize_cell(const ResultBundle& b, std::size_t pair, std::size_t cell) {
  CellSummary s;
  s.pair = pair == std::string::npos ? "*" : pair_label(b, pair);
  s.cell = b.cells[cell];
  std::vector<double> st, ad, cap, pf, pl;
  for (const auto& r : b.records) {
    if (r.cell != cell || (pair != std::string::npos && r.pair != pair)) continue;
    ++s.conversations;
    if (!r.ok()) {
      ++s.failed;
      continue;
    }
    st.push_back(mean_of(r.stability));
    if (!r.adoption.empty()) ad.push_back(mean_of(r.adoption));
    if (r.capability) cap.push_back(*r.capability);
    if (!r.pi.empty()) {
      pf.push_back(r.pi.front());
      pl.push_back(r.pi.back());
    }
  }
  s.stability = mean_std(st);
  s.adoption = mean_std(ad);
  s.capability = mean_std(cap);
  if (!pf.empty()) {
    s.pi_first = mean_of(pf);
    s.pi_last = mean_of(pl);
  }
  return s;
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  // Avoid "-0.000000".
  if (std::string_view(buf) == "-0.000000") return "0.000000";
  return buf;
}

std::string fmt_opt(const std::optional<double>& x) { return x ? fmt(*x) : std::string(); }

std::string fmt_value(const InterventionConfig& c) { return c.kind == InterventionKind::none ? std::string() : fmt(c.value()); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

double round6(double x) { return std::round(x * 1e6) / 1e6; }

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << content;
  if (!out) throw ConfigError("write failed for " + path.string());
}

std::string summary_csv(const ResultBundle& b) {
  std::ostringstream os;
  os << "pair,method,value,conversations,failed,stability_mean,stability_std,adoption_mean,adoption_std,"
        "capability_mean,capability_std,capability_drop,pi_first,pi_last\n";
  for (const auto& s : summarize(b)) {
    os << csv_field(s.pair) << ',' << intervention_name(s.cell.kind) << ',' << fmt_value(s.cell) << ',' << s.conversations
       << ',' << s.failed << ',';
    auto ms = [&](const MeanStd& m) {
      if (m.n == 0) {
        os << ",,";
      } else {
        os << fmt(m.mean) << ',' << fmt(m.std) << ',';
      }
    };
    ms(s.stability);
    ms(s.adoption);
    ms(s.capability);
    os << fmt_opt(s.capability_drop) << ',' << fmt_opt(s.pi_first) << ',' << fmt_opt(s.pi_last) << '\n';
  }
  return os.str();
}

std::string rounds_csv(const ResultBundle& b) {
  std::ostringstream os;
  os << "method,value,round,metric,mean,std,n\n";
  for (const auto& r : by_round(b)) {
    os << intervention_name(r.cell.kind) << ',' << fmt_value(r.cell) << ',' << r.round << ',' << r.metric << ','
       << fmt(r.stats.mean) << ',' << fmt(r.stats.std) << ',' << r.stats.n << '\n';
  }
  return os.str();
}

std::string attention_json(const ResultBundle& b) {
  ojson j;
  j["rounds"] = ojson::array();
  for (const auto& r : by_round(b)) {
    if (r.metric != "pi") continue;
    ojson e;
    e["method"] = intervention_name(r.cell.kind);
    e["value"] = round6(r.cell.value());
    e["round"] = r.round;
    e["pi_mean"] = round6(r.stats.mean);
    e["pi_std"] = round6(r.stats.std);
    e["n"] = r.stats.n;
    j["rounds"].push_back(e);
  }
  j["example"] = ojson::array();
  for (const auto& s : b.example_trace) {
    ojson e;
    e["step"] = s.step;
    e["turn"] = s.turn;
    e["pi"] = round6(s.pi);
    j["example"].push_back(e);
  }
  return j.dump(1) + "\n";
}

std::string point_row(const TradeoffPoint& p) {
  return p.method + ',' + fmt(p.value) + ',' + fmt(p.stability) + ',' + fmt(p.stability_std) + ',' + fmt(p.capability) +
         ',' + fmt(p.capability_std) + ',' + fmt(p.drop);
}

std::pair<std::string, std::string> tradeoff_csvs(const ResultBundle& b) {
  std::string curve = "method,value,stability_mean,stability_std,capability_mean,capability_std,capability_drop\n";
  std::string dom = "level,method,value,capability_drop,stability,winner\n";
  const auto points = tradeoff_points(b);
  TradeoffReport report;
  try {
    report = tradeoff_curve(points);
  } catch (const DomainError&) {
    // Not enough points for a comparison; list what there is.
    report.curve = points;
    std::stable_sort(report.curve.begin(), report.curve.end(),
                     [](const auto& x, const auto& y) { return x.method < y.method; });
  }
  for (const auto& p : report.curve) curve += point_row(p) + '\n';
  for (const auto& row : report.levels) {
    const std::string winner = row.winner ? *row.winner : std::string("incomparable");
    for (const auto& p : row.matched) {
      dom += fmt(row.level) + ',' + p.method + ',' + fmt(p.value) + ',' + fmt(p.drop) + ',' + fmt(p.stability) + ',' +
             winner + '\n';
    }
  }
  return {curve, dom};
}

std::string per_round_jsonl(const ResultBundle& b) {
  std::ostringstream os;
  for (const auto& r : b.records) {
    if (!r.ok()) continue;
    for (std::size_t i = 0; i < r.stability.size(); ++i) {
      ojson j;
      j["pair"] = pair_label(b, r.pair);
      j["method"] = intervention_name(b.cells[r.cell].kind);
      j["value"] = b.cells[r.cell].value();
      j["conversation"] = r.conversation;
      j["round"] = i + 1;
      j["stability"] = r.stability[i];
      j["adoption"] = i < r.adoption.size() ? ojson(r.adoption[i]) : ojson(nullptr);
      j["pi"] = i < r.pi.size() ? ojson(r.pi[i]) : ojson(nullptr);
      j["capability"] = r.capability ? ojson(*r.capability) : ojson(nullptr);
      os << j.dump() << '\n';
    }
  }
  return os.str();
}

}  // namespace

std::vector<CellSummary> summarize(const ResultBundle& b) {
  std::vector<CellSummary> out;
  if (b.records.empty()) return out;
  auto with_drop = [&](std::size_t pair) {
    std::vector<CellSummary> rows;
    for (std::size_t c = 0; c < b.cells.size(); ++c) rows.push_back(summarize_cell(b, pair, c));
    const auto base = std::find_if(rows.begin(), rows.end(),
                                   [](const CellSummary& s) { return s.cell.kind == InterventionKind::none; });
    if (base != rows.end() && base->capability.n > 0) {
      for (auto& s : rows)
        if (s.capability.n > 0) s.capability_drop = base->capability.mean - s.capability.mean;
    }
    out.insert(out.end(), rows.begin(), rows.end());
  };
  for (std::size_t p = 0; p < b.pairs.size(); ++p) with_drop(p);
  with_drop(std::string::npos);
  return out;
}

std::vector<RoundRow> by_round(const ResultBundle& b) {
  std::vector<RoundRow> out;
  for (std::size_t c = 0; c < b.cells.size(); ++c) {
    for (std::size_t i = 0; i < b.rounds; ++i) {
      std::vector<double> st, ad, pi;
      for (const auto& r : b.records) {
        if (r.cell != c || !r.ok()) continue;
        if (i < r.stability.size()) st.push_back(r.stability[i]);
        if (i < r.adoption.size()) ad.push_back(r.adoption[i]);
        if (i < r.pi.size()) pi.push_back(r.pi[i]);
      }
      if (st.empty() && ad.empty() && pi.empty()) continue;
      out.push_back(RoundRow{b.cells[c], i + 1, "stability", mean_std(st)});
      if (!ad.empty()) out.push_back(RoundRow{b.cells[c], i + 1, "adoption", mean_std(ad)});
      if (!pi.empty()) out.push_back(RoundRow{b.cells[c], i + 1, "pi", mean_std(pi)});
    }
  }
  return out;
}

std::vector<TradeoffPoint> tradeoff_points(const ResultBundle& b) {
  std::vector<TradeoffPoint> out;
  for (const auto& s : summarize(b)) {
    if (s.pair != "*" || s.cell.kind == InterventionKind::none || !s.capability_drop || s.stability.n == 0) continue;
    TradeoffPoint p;
    p.method = std::string(intervention_name(s.cell.kind));
    p.value = s.cell.value();
    p.stability = s.stability.mean;
    p.stability_std = s.stability.std;
    p.capability = s.capability.mean;
    p.capability_std = s.capability.std;
    p.drop = *s.capability_drop;
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string bundle_to_json(const ResultBundle& b) {
  ojson j;
  j["seed"] = b.seed;
  j["rounds"] = b.rounds;
  j["pairs"] = ojson::array();
  for (const auto& [a, c] : b.pairs) j["pairs"].push_back(ojson::array({a, c}));
  j["cells"] = ojson::array();
  for (const auto& c : b.cells) {
    ojson e;
    e["method"] = intervention_name(c.kind);
    e["k"] = c.k;
    e["alpha"] = c.alpha;
    e["p"] = c.p;
    j["cells"].push_back(e);
  }
  j["records"] = ojson::array();
  for (const auto& r : b.records) {
    ojson e;
    e["pair"] = r.pair;
    e["cell"] = r.cell;
    e["conversation"] = r.conversation;
    e["seed"] = r.seed;
    e["stability"] = r.stability;
    e["adoption"] = r.adoption;
    e["pi"] = r.pi;
    e["capability"] = r.capability ? ojson(*r.capability) : ojson(nullptr);
    e["error"] = r.error;
    j["records"].push_back(e);
  }
  j["example_trace"] = ojson::array();
  for (const auto& s : b.example_trace) j["example_trace"].push_back(ojson::array({s.step, s.turn, s.pi}));
  return j.dump() + "\n";
}

ResultBundle bundle_from_json(std::string_view text) {
  ResultBundle b;
  try {
    const json j = json::parse(text);
    b.seed = j.at("seed").get<std::uint64_t>();
    b.rounds = j.at("rounds").get<std::size_t>();
    for (const auto& p : j.at("pairs")) b.pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
    for (const auto& c : j.at("cells")) {
      InterventionConfig iv;
      iv.kind = parse_intervention(c.at("method").get<std::string>());
      iv.k = c.at("k").get<double>();
      iv.alpha = c.at("alpha").get<double>();
      iv.p = c.at("p").get<double>();
      b.cells.push_back(iv);
    }
    for (const auto& e : j.at("records")) {
      ConversationRecord r;
      r.pair = e.at("pair").get<std::size_t>();
      r.cell = e.at("cell").get<std::size_t>();
      r.conversation = e.at("conversation").get<std::size_t>();
      r.seed = e.at("seed").get<std::uint64_t>();
      r.stability = e.at("stability").get<std::vector<double>>();
      r.adoption = e.at("adoption").get<std::vector<double>>();
      r.pi = e.at("pi").get<std::vector<double>>();
      if (!e.at("capability").is_null()) r.capability = e.at("capability").get<double>();
      r.error = e.at("error").get<std::string>();
      if (r.pair >= b.pairs.size() || r.cell >= b.cells.size()) throw ConfigError("bundle record out of range");
      b.records.push_back(std::move(r));
    }
    for (const auto& s : j.at("example_trace")) {
      b.example_trace.push_back(TraceStep{s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>(), s.at(2).get<double>()});
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad result bundle: ") + e.what());
  }
  return b;
}

ResultBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open bundle " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return bundle_from_json(os.str());
}

std::vector<std::filesystem::path> emit_report(const ResultBundle& bundle, const std::filesystem::path& dir,
                                               const ReportOptions& options) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw ConfigError("cannot create output directory " + dir.string());
  std::vector<std::filesystem::path> written;
  auto put = [&](const char* name, const std::string& content) {
    const auto path = dir / name;
    write_file(path, content);
    written.push_back(path);
  };
  if (options.summary) put("summary.csv", summary_csv(bundle));
  if (options.rounds) put("stability_by_round.csv", rounds_csv(bundle));
  if (options.attention) put("attention_mass.json", attention_json(bundle));
  if (options.tradeoff) {
    const auto [curve, dom] = tradeoff_csvs(bundle);
    put("tradeoff.csv", curve);
    put("dominance.csv", dom);
  }
  if (options.per_round) put("per_round.jsonl", per_round_jsonl(bundle));
  if (options.bundle) put("bundle.json", bundle_to_json(bundle));
  return written;
}

void write_transcripts(const std::vector<DialogTranscript>& transcripts, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const auto& t : transcripts) write_transcript_jsonl(out, t);
}

}  // namespace drift
