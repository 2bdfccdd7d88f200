#include "drift/runner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <regex>
#include <set>
#include <sstream>

#include "drift/desk_model.hpp"
#include "drift/errors.hpp"
#include "drift/http_backend.hpp"
#include "drift/parallel.hpp"
#include "drift/random.hpp"

namespace drift {

using json = nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(std::string("cannot open ") + what + " " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json parse_json(std::string_view text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------

std::string CapabilityItem::render() const {
  std::string s = question;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    s += ' ';
    s += static_cast<char>('A' + i);
    s += ") ";
    s += choices[i];
  }
  return s;
}

void CapabilityItem::validate() const {
  if (question.empty()) throw ConfigError("capability item with an empty question");
  if (choices.size() < 2 || choices.size() > 4) throw ConfigError("capability item needs 2 to 4 choices: " + question);
  const std::set<std::string> unique(choices.begin(), choices.end());
  if (unique.size() != choices.size()) throw ConfigError("capability item has duplicate choices: " + question);
  if (answer < 'A' || answer >= static_cast<char>('A' + choices.size())) {
    throw ConfigError("capability answer outside the choices: " + question);
  }
}

CapabilityProbeSet parse_capability_probes(std::string_view text, std::size_t min_items) {
  const json j = parse_json(text, "capability probes");
  if (!j.is_array()) throw ConfigError("capability probes must be a JSON array");
  CapabilityProbeSet set;
  for (const auto& e : j) {
    CapabilityItem item;
    try {
      item.question = e.at("question").get<std::string>();
      item.choices = e.at("choices").get<std::vector<std::string>>();
      const auto key = e.at("answer").get<std::string>();
      if (key.size() != 1) throw ConfigError("capability answer must be one letter");
      item.answer = key[0];
    } catch (const json::exception& ex) {
      throw ConfigError(std::string("bad capability item: ") + ex.what());
    }
    item.validate();
    set.items.push_back(std::move(item));
  }
  if (set.items.size() < min_items) {
    throw ConfigError("capability probe set has " + std::to_string(set.items.size()) + " items, need " +
                      std::to_string(min_items));
  }
  return set;
}

CapabilityProbeSet load_capability_probes(const std::filesystem::path& path, std::size_t min_items) {
  return parse_capability_probes(read_file(path, "capability probes"), min_items);
}

std::optional<char> parse_choice_letter(std::string_view text) {
  static const std::regex re(R"(\b([A-D])\b)");
  std::match_results<std::string_view::const_iterator> m;
  if (std::regex_search(text.begin(), text.end(), m, re)) return m.str(1)[0];
  return std::nullopt;
}

double capability_score(const ChatBackend& backend, const CapabilityRequest& request, const CapabilityProbeSet& probes) {
  if (probes.items.empty()) throw DomainError("capability probe set is empty");
  backend.check_supports(request.intervention);
  GenerationRequest base;
  base.system = request.system;
  base.sampler = request.sampler;
  base.intervention = request.intervention;
  base.max_new_tokens = request.max_new_tokens;
  base.history = visible_history(request.context);
  if (request.intervention.kind == InterventionKind::spr) {
    const SprConfig spr{request.intervention.p, derive_seed(request.seed, {hash_tag("spr")})};
    const std::size_t turn = visible_user_turns(base.history);
    base.history = spr_expand_history(base.history, request.system, spr);
    if (spr_inject(spr, turn)) base.history.push_back(Message{Role::user, request.system, true});
  }
  base.sampler.seed = derive_seed(request.seed, {hash_tag("capability")});

  std::vector<Message> finals;
  finals.reserve(probes.items.size());
  for (const auto& item : probes.items) finals.push_back(Message{Role::user, item.render(), false});

  std::vector<GenerationResult> answers;
  try {
    answers = backend.generate_many(base, finals);
  } catch (const ConfigError&) {
    throw;
  } catch (const ContextOverflowError&) {
    throw;
  } catch (const std::exception&) {
    // A failed request is an unanswered item; retry one by one.
    answers.clear();
    for (const auto& f : finals) {
      GenerationRequest req = base;
      req.history.push_back(f);
      try {
        answers.push_back(backend.generate(req));
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception&) {
        answers.push_back(GenerationResult{});
      }
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probes.items.size(); ++i) {
    const auto letter = parse_choice_letter(answers[i].text);
    if (letter && *letter == probes.items[i].answer) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(probes.items.size());
}

// ---------------------------------------------------------------------------

std::shared_ptr<ChatBackend> make_backend(const BackendSpec& spec) {
  if (spec.kind == "toy") {
    if (spec.weights) return std::make_shared<ToyBackend>(std::make_shared<const ModelWeights>(load_weights(*spec.weights)));
    return std::make_shared<ToyBackend>(desk_model());
  }
  if (spec.kind == "scripted") {
    if (spec.mode == "constant") return ScriptedBackend::constant(spec.text);
    if (spec.mode == "echo") return ScriptedBackend::echo();
    if (spec.mode == "rounds") {
      if (spec.replies.empty()) throw ConfigError("scripted 'rounds' backend needs replies");
      return ScriptedBackend::by_round(spec.replies);
    }
    if (spec.mode == "comply_then_violate") {
      return ScriptedBackend::comply_then_violate(spec.text, spec.violating, spec.comply_rounds);
    }
    throw ConfigError("unknown scripted mode '" + spec.mode + "'");
  }
  if (spec.kind == "http") {
    EndpointConfig ep;
    ep.base_url = spec.base_url;
    ep.model = spec.model;
    ep.max_in_flight = spec.max_in_flight;
    std::shared_ptr<HttpTransport> transport;
    if (spec.fixture) transport = ReplayTransport::from_fixture(spec.fixture->string());
    return std::make_shared<HttpBackend>(ep, transport);
  }
  throw ConfigError("unknown backend kind '" + spec.kind + "'");
}

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (pairs.empty()) throw ConfigError("experiment has no prompt pairs");
  if (cells.empty()) throw ConfigError("experiment has an empty intervention grid");
  if (cells.front().kind != InterventionKind::none) throw ConfigError("the first cell must be the baseline");
  for (const auto& c : cells) c.validate();
  if (rounds < 1) throw ConfigError("rounds must be positive");
  if (conversations_per_cell < 1) throw ConfigError("conversations_per_cell must be positive");
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be positive");
  if (jobs < 1) throw ConfigError("jobs must be positive");
  sampler.validate();
  if (capability.enabled) {
    if (capability.turn < 1 || capability.turn > rounds) {
      throw ConfigError("capability turn " + std::to_string(capability.turn) + " outside 1.." + std::to_string(rounds));
    }
    if (capability.max_new_tokens < 1) throw ConfigError("capability max_new_tokens must be positive");
  }
  auto must_exist = [](const std::filesystem::path& p, const char* what) {
    if (!std::filesystem::exists(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
  };
  must_exist(dataset, "dataset");
  must_exist(probe_pool, "probe pool");
  must_exist(starters, "starters");
  if (capability.enabled) must_exist(capability_probes, "capability probes");
  for (const auto* b : {&user_backend, &agent_backend}) {
    if (b->weights) must_exist(*b->weights, "weights");
    if (b->fixture) must_exist(*b->fixture, "fixture");
  }
}

std::vector<InterventionConfig> default_cells() {
  std::vector<InterventionConfig> cells{InterventionConfig{}};
  for (double k : {1.0, 0.9, 0.7, 0.5, 0.3}) cells.push_back({InterventionKind::split_softmax, k, 1.0, 0.0});
  for (double a : {1.0, 1.5, 2.0, 3.0}) cells.push_back({InterventionKind::cfg, 1.0, a, 0.0});
  for (double p : {0.0, 0.25, 0.5, 1.0}) cells.push_back({InterventionKind::spr, 1.0, 1.0, p});
  return cells;
}

std::vector<InterventionConfig> with_baseline(const std::vector<InterventionConfig>& cells) {
  std::vector<InterventionConfig> out{InterventionConfig{}};
  for (const auto& c : cells) {
    if (c.kind == InterventionKind::none) continue;
    const bool dup = std::any_of(out.begin(), out.end(),
                                 [&](const InterventionConfig& o) { return o.kind == c.kind && o.value() == c.value(); });
    if (!dup) out.push_back(c);
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> cross_category_pairs(const std::vector<BenchmarkEntry>& dataset) {
  std::vector<const BenchmarkEntry*> first;
  for (Category c : kAllCategories) {
    auto it = std::find_if(dataset.begin(), dataset.end(), [&](const BenchmarkEntry& e) { return e.category == c; });
    if (it != dataset.end()) first.push_back(&*it);
  }
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto* a : first)
    for (const auto* b : first)
      if (a != b) pairs.emplace_back(a->id, b->id);
  return pairs;
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path.lexically_normal();
}

std::filesystem::path data_file(const char* name) { return std::filesystem::path(DRIFT_DATA_DIR) / name; }

BackendSpec parse_backend(const json& j, const std::filesystem::path& base) {
  BackendSpec b;
  if (j.is_string()) {
    b.kind = j.get<std::string>();
    return b;
  }
  if (!j.is_object()) throw ConfigError("backend spec must be a string or an object");
  b.kind = j.value("kind", b.kind);
  if (j.contains("weights") && !j["weights"].is_null()) b.weights = resolve(base, j["weights"].get<std::string>());
  b.mode = j.value("mode", b.mode);
  b.text = j.value("text", b.text);
  if (j.contains("replies")) b.replies = j["replies"].get<std::vector<std::string>>();
  b.violating = j.value("violating", b.violating);
  b.comply_rounds = j.value("comply_rounds", b.comply_rounds);
  b.base_url = j.value("base_url", b.base_url);
  b.model = j.value("model", b.model);
  if (j.contains("fixture") && !j["fixture"].is_null()) b.fixture = resolve(base, j["fixture"].get<std::string>());
  b.max_in_flight = j.value("max_in_flight", b.max_in_flight);
  return b;
}

std::vector<InterventionConfig> parse_grid(const json& j) {
  if (!j.is_object()) throw ConfigError("interventions must be an object of grids");
  std::vector<InterventionConfig> cells;
  for (const auto& [key, values] : j.items()) {
    const InterventionKind kind = parse_intervention(key);
    if (kind == InterventionKind::none) continue;
    if (!values.is_array() || values.empty()) throw ConfigError("grid for " + key + " must be a nonempty array");
    for (const auto& v : values) {
      InterventionConfig c;
      c.kind = kind;
      const double x = v.get<double>();
      if (kind == InterventionKind::split_softmax) c.k = x;
      if (kind == InterventionKind::cfg) c.alpha = x;
      if (kind == InterventionKind::spr) c.p = x;
      cells.push_back(c);
    }
  }
  // Keep a stable method order regardless of JSON key order.
  std::stable_sort(cells.begin(), cells.end(),
                   [](const InterventionConfig& a, const InterventionConfig& b) { return a.kind < b.kind; });
  return cells;
}

}  // namespace

ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  c.dataset = data_file("benchmark.jsonl");
  c.probe_pool = data_file("probe_pool.json");
  c.starters = data_file("starters.json");
  c.capability_probes = data_file("capability_probes.json");
  c.cells = default_cells();
  return c;
}

ExperimentConfig parse_experiment_config(std::string_view text, const std::filesystem::path& base_dir) {
  const json j = parse_json(text, "experiment config");
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  ExperimentConfig c = default_experiment_config();
  try {
    if (j.contains("dataset")) c.dataset = resolve(base_dir, j["dataset"].get<std::string>());
    if (j.contains("probe_pool")) c.probe_pool = resolve(base_dir, j["probe_pool"].get<std::string>());
    if (j.contains("starters")) c.starters = resolve(base_dir, j["starters"].get<std::string>());
    if (j.contains("capability_probes")) c.capability_probes = resolve(base_dir, j["capability_probes"].get<std::string>());
    if (j.contains("backend")) {
      const auto& b = j["backend"];
      if (b.is_object() && (b.contains("user") || b.contains("agent"))) {
        if (b.contains("user")) c.user_backend = parse_backend(b["user"], base_dir);
        if (b.contains("agent")) c.agent_backend = parse_backend(b["agent"], base_dir);
      } else {
        c.user_backend = c.agent_backend = parse_backend(b, base_dir);
      }
    }
    if (j.contains("pairs")) {
      const auto& p = j["pairs"];
      if (p.is_string()) {
        if (p.get<std::string>() != "cross_category") throw ConfigError("unknown pair template " + p.dump());
        c.pairs = cross_category_pairs(load_dataset(c.dataset));
      } else {
        for (const auto& e : p) {
          if (!e.is_array() || e.size() != 2) throw ConfigError("each pair must be [user_entry, agent_entry]");
          c.pairs.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
        }
      }
    }
    if (j.contains("interventions")) c.cells = with_baseline(parse_grid(j["interventions"]));
    c.rounds = j.value("rounds", c.rounds);
    c.conversations_per_cell = j.value("conversations_per_cell", c.conversations_per_cell);
    if (j.contains("capability")) {
      const auto& k = j["capability"];
      c.capability.enabled = k.value("enabled", c.capability.enabled);
      c.capability.turn = k.value("turn", c.capability.turn);
      c.capability.items = k.value("items", c.capability.items);
      c.capability.max_new_tokens = k.value("max_new_tokens", c.capability.max_new_tokens);
    }
    c.adoption = j.value("adoption", c.adoption);
    c.empty_user_system = j.value("empty_user_system", c.empty_user_system);
    c.seed = j.value("seed", c.seed);
    if (j.contains("sampler")) {
      c.sampler.temperature = j["sampler"].value("temperature", c.sampler.temperature);
      c.sampler.nucleus_p = j["sampler"].value("top_p", c.sampler.nucleus_p);
    }
    c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
    if (j.contains("out")) c.out = resolve(base_dir, j["out"].get<std::string>());
    c.jobs = j.value("jobs", c.jobs);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  if (c.pairs.empty()) c.pairs = cross_category_pairs(load_dataset(c.dataset));
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  ExperimentConfig c = parse_experiment_config(read_file(path, "config"), path.parent_path());
  c.validate();
  return c;
}

std::vector<std::string> load_starters(const std::filesystem::path& path) {
  const json j = parse_json(read_file(path, "starters"), "starters");
  if (!j.is_array() || j.empty()) throw ConfigError("starters must be a nonempty JSON array");
  std::vector<std::string> out;
  for (const auto& s : j) out.push_back(s.get<std::string>());
  return out;
}

ExperimentInputs load_inputs(const ExperimentConfig& config) {
  config.validate();
  ExperimentInputs in;
  in.dataset = load_dataset(config.dataset);
  in.pool = load_probe_pool(config.probe_pool);
  in.starters = load_starters(config.starters);
  if (config.capability.enabled) {
    in.capability = load_capability_probes(config.capability_probes);
    if (config.capability.items > 0 && config.capability.items < in.capability.items.size()) {
      in.capability.items.resize(config.capability.items);
    }
  }
  in.user = make_backend(config.user_backend);
  in.agent = make_backend(config.agent_backend);
  return in;
}

// ---------------------------------------------------------------------------

namespace {

const BenchmarkEntry& find_entry(const std::vector<BenchmarkEntry>& dataset, const std::string& id) {
  for (const auto& e : dataset)
    if (e.id == id) return e;
  throw ConfigError("unknown benchmark entry '" + id + "'");
}

std::vector<double> per_round_pi(const MassTrace& trace, std::size_t rounds) {
  if (trace.entries.empty()) return {};
  std::vector<double> pi(rounds, 0.0);
  for (const auto& [turn, mean] : trace.agent_turn_means())
    if (turn >= 1 && turn <= rounds) pi[turn - 1] = mean;
  return pi;
}

std::vector<TraceStep> step_means(const MassTrace& trace) {
  std::vector<TraceStep> out;
  std::size_t count = 0;
  for (const auto& e : trace.agent_entries()) {
    if (out.empty() || out.back().step != e.step || out.back().turn != e.turn) {
      if (!out.empty()) out.back().pi /= static_cast<double>(count);
      out.push_back(TraceStep{e.step, e.turn, 0.0});
      count = 0;
    }
    out.back().pi += e.pi;
    ++count;
  }
  if (!out.empty()) out.back().pi /= static_cast<double>(count);
  return out;
}

std::string conversation_id(std::size_t pair, const InterventionConfig& cell, std::size_t c) {
  return "p" + std::to_string(pair) + "-" + cell.label() + "-c" + std::to_string(c);
}

}  // namespace

ExperimentOutput run_experiment(const ExperimentConfig& config, const ExperimentInputs& inputs) {
  if (!inputs.user || !inputs.agent) throw ConfigError("experiment inputs lack backends");
  if (inputs.starters.empty()) throw ConfigError("no conversation starters");
  if (config.pairs.empty() || config.cells.empty()) throw ConfigError("experiment has no pairs or cells");
  if (config.cells.front().kind != InterventionKind::none) throw ConfigError("the first cell must be the baseline");

  std::vector<std::pair<const BenchmarkEntry*, const BenchmarkEntry*>> entries;
  for (const auto& [a, b] : config.pairs) entries.emplace_back(&find_entry(inputs.dataset, a), &find_entry(inputs.dataset, b));

  const std::size_t n_pairs = config.pairs.size();
  const std::size_t n_cells = config.cells.size();
  const std::size_t n_conv = config.conversations_per_cell;
  const std::size_t units = n_pairs * n_cells * n_conv;

  ExperimentOutput out;
  out.bundle.seed = config.seed;
  out.bundle.rounds = config.rounds;
  out.bundle.pairs = config.pairs;
  out.bundle.cells = config.cells;
  out.bundle.records.resize(units);
  out.transcripts.resize(units);

  parallel_for(units, config.jobs, [&](std::size_t u) {
    const std::size_t p = u / (n_cells * n_conv);
    const std::size_t cell = (u / n_conv) % n_cells;
    const std::size_t c = u % n_conv;
    const auto& [entry_a, entry_b] = entries[p];
    const InterventionConfig& iv = config.cells[cell];

    ConversationRecord& rec = out.bundle.records[u];
    rec.pair = p;
    rec.cell = cell;
    rec.conversation = c;
    // Same seed in every cell so interventions are compared on the same draws.
    rec.seed = derive_seed(config.seed, {p, c});

    DialogConfig dc;
    dc.conversation_id = conversation_id(p, iv, c);
    dc.system_a = config.empty_user_system ? std::string() : entry_a->system_prompt;
    dc.system_b = entry_b->system_prompt;
    dc.starter = inputs.starters[derive_seed(rec.seed, {hash_tag("starter")}) % inputs.starters.size()];
    dc.rounds = config.rounds;
    dc.seed = rec.seed;
    dc.sampler = config.sampler;
    dc.intervention = iv;
    dc.max_new_tokens = config.max_new_tokens;
    try {
      DialogTranscript t = run_self_chat(dc, *inputs.user, *inputs.agent);
      const StabilityCurve curve = stability_curve(t, *entry_b, config.adoption ? entry_a : nullptr, inputs.pool,
                                                   *inputs.agent, ProbeSettings::from(dc));
      rec.stability = curve.stability;
      if (curve.adoption) rec.adoption = *curve.adoption;
      t.probes = curve.probes;
      rec.pi = per_round_pi(t.agent_trace, config.rounds);
      if (config.capability.enabled && !inputs.capability.items.empty()) {
        CapabilityRequest cr;
        cr.system = dc.system_b;
        cr.context = t.agent_history(config.capability.turn - 1);
        cr.intervention = iv;
        cr.sampler = config.sampler;
        cr.seed = rec.seed;
        cr.max_new_tokens = config.capability.max_new_tokens;
        rec.capability = capability_score(*inputs.agent, cr, inputs.capability);
      }
      out.transcripts[u] = std::move(t);
    } catch (const std::exception& e) {
      rec = ConversationRecord{p, cell, c, rec.seed, {}, {}, {}, std::nullopt, e.what()};
      out.transcripts[u] = DialogTranscript{};
      out.transcripts[u].conversation_id = dc.conversation_id;
    }
  });

  // Baseline cell of the first pair, first conversation.
  if (out.bundle.records.front().ok()) out.bundle.example_trace = step_means(out.transcripts.front().agent_trace);
  return out;
}

ExperimentOutput run_experiment(const ExperimentConfig& config) {
  const ExperimentInputs inputs = load_inputs(config);
  return run_experiment(config, inputs);
}

}  // namespace drift
