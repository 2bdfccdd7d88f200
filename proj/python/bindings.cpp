#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "drift/benchmark.hpp"
#include "drift/desk_model.hpp"
#include "drift/dialog.hpp"
#include "drift/errors.hpp"
#include "drift/geometry.hpp"
#include "drift/interventions.hpp"
#include "drift/report.hpp"
#include "drift/runner.hpp"
#include "drift/telemetry.hpp"

namespace py = pybind11;
using namespace drift;

namespace {

const std::filesystem::path kData(DRIFT_DATA_DIR);

InterventionConfig make_intervention(const std::string& kind, double k, double alpha, double p) {
  InterventionConfig iv;
  iv.kind = parse_intervention(kind);
  iv.k = k;
  iv.alpha = alpha;
  iv.p = p;
  iv.validate();
  return iv;
}

const BenchmarkEntry& find(const std::vector<BenchmarkEntry>& ds, const std::string& id) {
  for (const auto& e : ds)
    if (e.id == id) return e;
  throw ConfigError("unknown benchmark entry '" + id + "'");
}

py::list dataset_entries(const std::filesystem::path& path) {
  py::list out;
  for (const auto& e : load_dataset(path)) {
    py::dict d;
    d["id"] = e.id;
    d["category"] = std::string(category_name(e.category));
    d["system_prompt"] = e.system_prompt;
    d["probe_question"] = e.probe_question ? py::object(py::str(*e.probe_question)) : py::none();
    out.append(d);
  }
  return out;
}

double score(const std::string& entry_id, const std::string& text, const std::filesystem::path& path) {
  return evaluate_measure(find(load_dataset(path), entry_id).measure, text);
}

// One toy-model self-chat with every round probed.
py::dict simulate(const std::string& user_entry, const std::string& agent_entry, std::size_t rounds,
                  std::uint64_t seed, const std::string& intervention, double k, double alpha, double p,
                  std::size_t max_new_tokens) {
  const auto ds = load_dataset(kData / "benchmark.jsonl");
  const auto pool = load_probe_pool(kData / "probe_pool.json");
  const auto starters = load_starters(kData / "starters.json");
  const auto& a = find(ds, user_entry);
  const auto& b = find(ds, agent_entry);

  DialogConfig dc;
  dc.conversation_id = user_entry + ">" + agent_entry;
  dc.system_a = a.system_prompt;
  dc.system_b = b.system_prompt;
  dc.starter = starters[derive_seed(seed, {hash_tag("starter")}) % starters.size()];
  dc.rounds = rounds;
  dc.seed = seed;
  dc.max_new_tokens = max_new_tokens;
  dc.intervention = make_intervention(intervention, k, alpha, p);

  StabilityCurve curve;
  DialogTranscript t;
  {
    py::gil_scoped_release release;
    const ToyBackend toy(desk_model());
    t = run_self_chat(dc, toy, toy);
    curve = stability_curve(t, b, &a, pool, toy, ProbeSettings::from(dc));
  }
  py::list utterances;
  for (const auto& u : t.utterances) {
    if (u.hidden) continue;
    py::dict d;
    d["round"] = u.round;
    d["speaker"] = std::string(role_name(u.speaker));
    d["text"] = u.text;
    utterances.append(d);
  }
  py::dict out;
  out["utterances"] = utterances;
  out["stability"] = curve.stability;
  out["adoption"] = curve.adoption ? py::object(py::cast(*curve.adoption)) : py::none();
  std::vector<double> pi;
  for (const auto& [turn, mean] : t.agent_trace.agent_turn_means()) pi.push_back(mean);
  out["pi"] = pi;
  return out;
}

std::vector<std::filesystem::path> sweep(const std::filesystem::path& config, const std::filesystem::path& out,
                                         std::optional<std::uint64_t> seed, std::optional<std::size_t> rounds) {
  ExperimentConfig c = load_experiment_config(config);
  if (seed) c.seed = *seed;
  if (rounds) {
    c.rounds = *rounds;
    if (c.capability.turn > c.rounds) c.capability.turn = c.rounds;
  }
  py::gil_scoped_release release;
  const ExperimentOutput r = run_experiment(c);
  auto written = emit_report(r.bundle, out);
  write_transcripts(r.transcripts, out / "transcripts.jsonl");
  written.push_back(out / "transcripts.jsonl");
  return written;
}

}  // namespace

PYBIND11_MODULE(_driftlab, m) {
  m.doc() = "Instruction drift experiments on a toy chat model.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);

  m.attr("DATA_DIR") = kData;

  m.def(
      "split_softmax",
      [](const std::vector<double>& row, double k, std::size_t system_len) {
        return split_softmax_reweight(row, {k, system_len});
      },
      py::arg("row"), py::arg("k"), py::arg("system_len"));
  m.def(
      "cfg_combine",
      [](const std::vector<double>& cond, const std::vector<double>& uncond, double alpha) {
        return cfg_combine(cond, uncond, alpha);
      },
      py::arg("cond_logprobs"), py::arg("uncond_logprobs"), py::arg("alpha"),
      "Guided next-token probabilities from two log-probability vectors.");
  m.def(
      "system_mass", [](const std::vector<double>& row, std::size_t n) { return system_mass(row, n); }, py::arg("row"),
      py::arg("system_len"));

  m.def("epsilon_tilde", &epsilon_tilde, py::arg("eps"), py::arg("theta"));
  m.def("wendel_probability", &wendel_probability, py::arg("m"), py::arg("n"));
  m.def(
      "hemisphere_rate",
      [](std::size_t m, std::size_t n, std::size_t trials, std::uint64_t seed) {
        return hemisphere_monte_carlo(m, n, trials, seed).rate();
      },
      py::arg("m"), py::arg("n"), py::arg("trials"), py::arg("seed") = 0);

  m.def("load_dataset", &dataset_entries, py::arg("path") = kData / "benchmark.jsonl");
  m.def("score", &score, py::arg("entry_id"), py::arg("text"), py::arg("dataset") = kData / "benchmark.jsonl");

  m.def("simulate", &simulate, py::arg("user_entry") = "char-pirate", py::arg("agent_entry") = "lang-fr-1",
        py::arg("rounds") = 8, py::arg("seed") = 1, py::arg("intervention") = "none", py::arg("k") = 1.0,
        py::arg("alpha") = 1.0, py::arg("p") = 0.0, py::arg("max_new_tokens") = 64);
  m.def("sweep", &sweep, py::arg("config"), py::arg("out"), py::arg("seed") = py::none(),
        py::arg("rounds") = py::none());
}
