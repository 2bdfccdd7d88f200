// drift: command-line front end for simulations, probing, sweeps, the
// geometry experiments and report re-emission.

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>

#include "drift/dialog.hpp"
#include "drift/errors.hpp"
#include "drift/geometry.hpp"
#include "drift/report.hpp"
#include "drift/runner.hpp"

namespace fs = std::filesystem;
using namespace drift;

namespace {

struct Globals {
  std::optional<std::string> config;
  std::optional<std::string> dataset;
  std::optional<std::size_t> rounds;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend;
  std::optional<std::string> intervention;
  std::optional<double> k, alpha, p_repeat;
  std::optional<std::string> out;
  std::optional<std::size_t> jobs;
  // backend details
  std::optional<std::string> weights;
  std::optional<std::string> base_url;
  std::optional<std::string> model;
  std::optional<std::string> fixture;
};

ExperimentConfig base_config(const Globals& g) {
  ExperimentConfig c = g.config ? parse_experiment_config(
                                      [&] {
                                        std::ifstream in(*g.config);
                                        if (!in) throw ConfigError("cannot open config " + *g.config);
                                        std::ostringstream os;
                                        os << in.rdbuf();
                                        return os.str();
                                      }(),
                                      fs::path(*g.config).parent_path())
                                : default_experiment_config();
  if (g.dataset) c.dataset = *g.dataset;
  if (g.rounds) c.rounds = *g.rounds;
  if (g.seed) c.seed = *g.seed;
  if (g.out) c.out = *g.out;
  if (g.jobs) c.jobs = *g.jobs;
  for (BackendSpec* b : {&c.user_backend, &c.agent_backend}) {
    if (g.backend) *b = BackendSpec{.kind = *g.backend};
    if (g.weights) b->weights = *g.weights;
    if (g.base_url) b->base_url = *g.base_url;
    if (g.model) b->model = *g.model;
    if (g.fixture) b->fixture = *g.fixture;
  }
  if (c.capability.turn > c.rounds) c.capability.turn = c.rounds;
  if (c.pairs.empty()) c.pairs = cross_category_pairs(load_dataset(c.dataset));
  return c;
}

// The single intervention named on the command line, if any.
std::optional<InterventionConfig> flag_intervention(const Globals& g) {
  if (!g.intervention) {
    if (g.k || g.alpha || g.p_repeat) throw ConfigError("--k/--alpha/--p-repeat need --intervention");
    return std::nullopt;
  }
  InterventionConfig iv;
  iv.kind = parse_intervention(*g.intervention);
  if (g.k) iv.k = *g.k;
  if (g.alpha) iv.alpha = *g.alpha;
  if (g.p_repeat) iv.p = *g.p_repeat;
  iv.validate();
  return iv;
}

const BenchmarkEntry& entry_by_id(const std::vector<BenchmarkEntry>& ds, const std::string& id) {
  for (const auto& e : ds)
    if (e.id == id) return e;
  throw ConfigError("unknown benchmark entry '" + id + "'");
}

void print_curve(const StabilityCurve& curve) {
  std::printf("round,stability%s\n", curve.adoption ? ",adoption" : "");
  for (std::size_t i = 0; i < curve.stability.size(); ++i) {
    if (curve.adoption) {
      std::printf("%zu,%.6f,%.6f\n", i + 1, curve.stability[i], (*curve.adoption)[i]);
    } else {
      std::printf("%zu,%.6f\n", i + 1, curve.stability[i]);
    }
  }
}

int cmd_simulate(const Globals& g, const std::string& user_id, const std::string& agent_id,
                 const std::optional<std::string>& starter, std::size_t max_tokens) {
  ExperimentConfig c = base_config(g);
  c.capability.enabled = false;
  c.validate();
  const ExperimentInputs in = load_inputs(c);
  const auto& a = entry_by_id(in.dataset, user_id);
  const auto& b = entry_by_id(in.dataset, agent_id);

  DialogConfig dc;
  dc.conversation_id = user_id + ">" + agent_id;
  dc.system_a = c.empty_user_system ? std::string() : a.system_prompt;
  dc.system_b = b.system_prompt;
  dc.starter = starter ? *starter : in.starters[derive_seed(c.seed, {hash_tag("starter")}) % in.starters.size()];
  dc.rounds = c.rounds;
  dc.seed = c.seed;
  dc.sampler = c.sampler;
  dc.max_new_tokens = max_tokens;
  if (auto iv = flag_intervention(g)) dc.intervention = *iv;

  DialogTranscript t = run_self_chat(dc, *in.user, *in.agent);
  const StabilityCurve curve = stability_curve(t, b, &a, in.pool, *in.agent, ProbeSettings::from(dc));
  t.probes = curve.probes;

  fs::create_directories(c.out);
  {
    std::ofstream out(c.out / "transcript.jsonl");
    if (!out) throw ConfigError("cannot write " + (c.out / "transcript.jsonl").string());
    write_transcript_jsonl(out, t);
  }
  if (!t.agent_trace.entries.empty()) {
    std::ofstream out(c.out / "attention.csv");
    write_trace_csv_header(out);
    write_trace_csv(out, t.agent_trace);
  }
  for (const auto& u : t.utterances) {
    if (u.hidden) continue;
    std::fprintf(stderr, "[%zu] %s: %s\n", u.round, std::string(role_name(u.speaker)).c_str(), u.text.c_str());
  }
  print_curve(curve);
  return 0;
}

int cmd_probe(const Globals& g, const std::string& transcript_path, const std::string& agent_id,
              const std::optional<std::string>& user_id, std::size_t max_tokens) {
  ExperimentConfig c = base_config(g);
  c.capability.enabled = false;
  c.validate();
  const ExperimentInputs in = load_inputs(c);
  const auto& b = entry_by_id(in.dataset, agent_id);
  const BenchmarkEntry* a = user_id ? &entry_by_id(in.dataset, *user_id) : nullptr;
  auto transcripts = read_transcripts_jsonl(fs::path(transcript_path));
  if (transcripts.empty()) throw ConfigError("no conversations in " + transcript_path);

  ProbeSettings s;
  s.system = b.system_prompt;
  s.sampler = c.sampler;
  s.seed = c.seed;
  s.max_new_tokens = max_tokens;
  if (auto iv = flag_intervention(g)) s.intervention = *iv;

  fs::create_directories(c.out);
  std::ofstream out(c.out / "probed.jsonl");
  if (!out) throw ConfigError("cannot write " + (c.out / "probed.jsonl").string());
  for (auto& t : transcripts) {
    t.validate();
    const StabilityCurve curve = stability_curve(t, b, a, in.pool, *in.agent, s);
    t.probes = curve.probes;
    write_transcript_jsonl(out, t);
    std::printf("# %s\n", t.conversation_id.c_str());
    print_curve(curve);
  }
  return 0;
}

int cmd_sweep(const Globals& g, std::optional<std::size_t> conversations) {
  ExperimentConfig c = base_config(g);
  if (auto iv = flag_intervention(g)) c.cells = with_baseline({*iv});
  if (conversations) c.conversations_per_cell = *conversations;
  c.validate();
  const ExperimentOutput result = run_experiment(c);
  emit_report(result.bundle, c.out);
  write_transcripts(result.transcripts, c.out / "transcripts.jsonl");

  std::size_t failed = 0;
  for (const auto& r : result.bundle.records) {
    if (r.ok()) continue;
    if (failed++ < 5) std::fprintf(stderr, "cell failed: %s\n", r.error.c_str());
  }
  if (failed > 0) std::fprintf(stderr, "%zu conversation(s) failed\n", failed);
  for (const auto& s : summarize(result.bundle)) {
    if (s.pair != "*") continue;
    std::printf("%-10s stability %.3f +- %.3f", s.cell.label().c_str(), s.stability.mean, s.stability.std);
    if (s.capability.n > 0) std::printf("  capability %.3f", s.capability.mean);
    std::printf("\n");
  }
  std::printf("wrote %s\n", c.out.string().c_str());
  return 0;
}

int cmd_geometry(const Globals& g, const std::string& experiment, std::size_t trials) {
  const std::uint64_t seed = g.seed.value_or(1);
  const std::size_t jobs = g.jobs.value_or(1);
  std::vector<GeometryRecord> records;
  char params[128];
  const bool all = experiment == "all";
  if (all || experiment == "wendel") {
    for (auto [m, n] : {std::pair<std::size_t, std::size_t>{1, 3}, {2, 4}}) {
      const auto est = hemisphere_monte_carlo(m, n, trials, derive_seed(seed, {m, n}), jobs);
      const double exact = wendel_probability(m, n);
      std::snprintf(params, sizeof params, "m=%zu N=%zu", m, n);
      records.push_back({"wendel", params, est.rate(), est.stderr_(), exact,
                         std::abs(est.rate() - exact) <= 3.0 * std::sqrt(exact * (1 - exact) / trials)});
    }
  }
  if (all || experiment == "expansion") {
    for (auto [D, eta] : {std::pair<std::size_t, double>{3, 0.1}, {4, 0.05}}) {
      const auto r = expansion_experiment(D, eta, trials / 10, derive_seed(seed, {D}), std::nullopt, jobs);
      std::snprintf(params, sizeof params, "D=%zu eta=%g n=%zu", D, eta, r.n);
      records.push_back({"expansion", params, r.failures.rate(), r.failures.stderr_(), eta, r.within_bound()});
    }
  }
  if (all || experiment == "closure") {
    for (bool control : {false, true}) {
      ClosureConfig cc;
      cc.seed = seed;
      if (control) cc.inject = 5;
      const auto setup = make_closure_setup(cc);
      const auto r = cone_closure_experiment(setup, cc);
      std::snprintf(params, sizeof params, "D=%zu d=%zu eps=%g steps=%zu%s", cc.D, cc.d, cc.eps, cc.steps,
                    control ? " inject=5" : "");
      records.push_back({control ? "closure-control" : "closure", params, static_cast<double>(r.violations), 0.0,
                         r.eps_tilde, control ? r.violations > 0 : r.violations == 0});
    }
  }
  if (all || experiment == "volume") {
    VolumeRatioConfig vc;
    vc.seed = seed;
    vc.jobs = jobs;
    vc.samples = std::max<std::size_t>(trials * 10, 100000);
    const auto r = volume_ratio_experiment(vc);
    std::snprintf(params, sizeof params, "D=%zu d1=%zu d2=%zu", vc.D, vc.d1, vc.d2);
    records.push_back({"volume-slope", params, r.slope, 0.0, static_cast<double>(vc.d2 - vc.d1),
                       r.slope >= 1.5 && r.slope <= 2.5});
  }
  if (records.empty()) throw ConfigError("unknown geometry experiment '" + experiment + "'");
  write_geometry_csv(std::cout, records);
  if (g.out) {
    fs::create_directories(*g.out);
    std::ofstream out(fs::path(*g.out) / "geometry.csv");
    write_geometry_csv(out, records);
  }
  return 0;
}

int cmd_report(const Globals& g, const std::string& bundle_path, const std::vector<std::string>& only) {
  const ResultBundle b = load_bundle(bundle_path);
  ReportOptions opts;
  if (!only.empty()) {
    opts = ReportOptions{false, false, false, false, false, false};
    for (const auto& o : only) {
      if (o == "summary") opts.summary = true;
      else if (o == "rounds") opts.rounds = true;
      else if (o == "attention") opts.attention = true;
      else if (o == "tradeoff") opts.tradeoff = true;
      else if (o == "per-round") opts.per_round = true;
      else if (o == "bundle") opts.bundle = true;
      else throw ConfigError("unknown report part '" + o + "'");
    }
  }
  const fs::path out = g.out.value_or("report");
  for (const auto& p : emit_report(b, out, opts)) std::printf("%s\n", p.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instruction drift experiments on a toy chat model"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--dataset", g.dataset, "Benchmark JSONL");
  app.add_option("--rounds", g.rounds, "Conversation rounds")->check(CLI::PositiveNumber);
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--backend", g.backend, "toy, scripted or http")->check(CLI::IsMember({"toy", "scripted", "http"}));
  app.add_option("--intervention", g.intervention, "none, ss, cfg or spr");
  app.add_option("--k", g.k, "Split-softmax exponent");
  app.add_option("--alpha", g.alpha, "CFG strength");
  app.add_option("--p-repeat", g.p_repeat, "System prompt repetition probability");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--weights", g.weights, "Toy model weights file (default: built-in desk model)");
  app.add_option("--base-url", g.base_url, "Chat completions endpoint (http backend)");
  app.add_option("--model", g.model, "Model name (http backend)");
  app.add_option("--fixture", g.fixture, "Replay fixture instead of the network (http backend)");

  std::string user_id = "char-pirate", agent_id = "lang-fr-1";
  std::optional<std::string> starter;
  std::size_t max_tokens = 128;
  auto* sim = app.add_subcommand("simulate", "Run one self-chat and probe every round");
  sim->add_option("--user-entry", user_id, "Benchmark entry for the user side")->capture_default_str();
  sim->add_option("--agent-entry", agent_id, "Benchmark entry for the agent side")->capture_default_str();
  sim->add_option("--starter", starter, "First user message");
  sim->add_option("--max-tokens", max_tokens, "Token budget per utterance")->capture_default_str();

  std::string transcript;
  std::optional<std::string> probe_user;
  auto* probe = app.add_subcommand("probe", "Score an existing transcript");
  probe->add_option("--transcript", transcript, "Transcript JSONL")->required();
  probe->add_option("--agent-entry", agent_id, "Entry whose instruction is measured")->capture_default_str();
  probe->add_option("--user-entry", probe_user, "Entry for adoption scoring");
  probe->add_option("--max-tokens", max_tokens, "Token budget per answer")->capture_default_str();

  std::optional<std::size_t> conversations;
  auto* sweep = app.add_subcommand("sweep", "Run the full experiment grid");
  sweep->add_option("--conversations", conversations, "Conversations per cell")->check(CLI::PositiveNumber);

  std::string experiment = "all";
  std::size_t trials = 100000;
  auto* geo = app.add_subcommand("geometry", "Monte Carlo checks of the cone and hemisphere results");
  geo->add_option("--experiment", experiment, "wendel, expansion, closure, volume or all")->capture_default_str();
  geo->add_option("--trials", trials, "Monte Carlo trials")->capture_default_str();

  std::string bundle;
  std::vector<std::string> only;
  auto* rep = app.add_subcommand("report", "Re-emit report files from a saved bundle");
  rep->add_option("--bundle", bundle, "bundle.json from a sweep")->required();
  rep->add_option("--only", only, "summary, rounds, attention, tradeoff, per-round, bundle")->delimiter(',');

  CLI11_PARSE(app, argc, argv);
  try {
    if (*sim) return cmd_simulate(g, user_id, agent_id, starter, max_tokens);
    if (*probe) return cmd_probe(g, transcript, agent_id, probe_user, max_tokens);
    if (*sweep) return cmd_sweep(g, conversations);
    if (*geo) return cmd_geometry(g, experiment, trials);
    if (*rep) return cmd_report(g, bundle, only);
  } catch (const drift::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
