#include <doctest.h>

#include <cmath>
#include <sstream>

#include "drift/desk_model.hpp"
#include "drift/dialog.hpp"
#include "drift/errors.hpp"
#include "drift/geometry.hpp"
#include "drift/interventions.hpp"
#include "drift/telemetry.hpp"
#include "helpers.hpp"

using namespace drift;

namespace {

// Generated-step rows for one utterance of `n` new tokens.
Generation run(const ModelWeights& w, const std::vector<TokenId>& ctx, std::size_t sys, std::size_t n,
               const AttentionHook* hook, std::uint64_t seed) {
  GenerateOptions opts;
  opts.hook = hook;
  opts.system_len = sys;
  opts.stop.max_new_tokens = n;
  opts.record = RecordMode::generated;
  return generate_utterance(ctx, w, SamplerConfig{1.0, 1.0, seed}, opts);
}

// Rows from pushing a fixed token sequence, so paired runs see the same inputs.
std::vector<AttentionRow> forced(const ModelWeights& w, const std::vector<TokenId>& ids, std::size_t sys,
                                 const AttentionHook* hook) {
  DecoderState st(w, {hook, sys, RecordMode::all, false});
  st.push_tokens(ids);
  return st.attention().rows;
}

MassTrace synthetic(const std::vector<std::vector<double>>& turns) {
  MassTrace t;
  t.system_len = 1;
  std::size_t step = 1;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    for (double pi : turns[i]) t.entries.push_back({0, 0, step++, i + 1, Role::agent, pi});
    for (int u = 0; u < 3; ++u) t.entries.push_back({0, 0, step++, i + 1, Role::user, 0.9});
  }
  return t;
}

}  // namespace

TEST_SUITE("system mass") {
  TEST_CASE("prefix sums") {
    const std::vector<double> row{0.4, 0.1, 0.3, 0.2};
    CHECK(system_mass(row, 2) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(system_mass(row, 0) == 0.0);
    CHECK(system_mass(row, 4) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(system_mass(row, 5), DomainError);
  }
}

TEST_SUITE("trace recording") {
  const ModelWeights w = testing::random_model(12, 6, 3, 2, 2, 21, true);
  const std::vector<TokenId> ctx{1, 5, 6, 7, 2, 8, 9, 4, 3};

  TEST_CASE("one agent turn of 10 tokens on 2 layers x 2 heads") {
    const Generation g = run(w, ctx, 4, 10, nullptr, 1);
    REQUIRE(g.tokens.size() == 10);
    const TurnAnnotation ann{g.first_generated_step, g.first_generated_step + 9, 1, Role::agent};
    const MassTrace t = record_trace(g.attention.rows, std::span(&ann, 1), 4, "c");
    CHECK(t.entries.size() == 40);
    for (std::size_t i = 0; i < t.entries.size(); ++i) {
      const auto& e = t.entries[i];
      CHECK(e.pi == system_mass(g.attention.rows[i].used(), 4));
      CHECK(e.pi >= 0.0);
      CHECK(e.pi <= 1.0);
    }
    CHECK(t.agent_turn_means().size() == 1);
  }

  TEST_CASE("identity hook reproduces the hook-free trace") {
    const AttentionHook id = [](std::span<const double> r, const HookSite&) { return std::vector<double>(r.begin(), r.end()); };
    const Generation a = run(w, ctx, 4, 12, nullptr, 9);
    const Generation b = run(w, ctx, 4, 12, &id, 9);
    const TurnAnnotation ann{a.first_generated_step, a.first_generated_step + 11, 1, Role::agent};
    const MassTrace ta = record_trace(a.attention.rows, std::span(&ann, 1), 4);
    const MassTrace tb = record_trace(b.attention.rows, std::span(&ann, 1), 4);
    REQUIRE(ta.entries.size() == tb.entries.size());
    for (std::size_t i = 0; i < ta.entries.size(); ++i) CHECK(ta.entries[i].pi == tb.entries[i].pi);
  }

  TEST_CASE("split-softmax never lowers a single-layer trace") {
    const ModelWeights one = testing::random_model(12, 6, 3, 2, 1, 22, false);
    std::vector<TokenId> ids = ctx;
    for (TokenId t : {5, 9, 11, 6, 7, 10}) ids.push_back(t);
    for (double k : {0.0, 0.3, 0.7, 0.99}) {
      const AttentionHook ss = split_softmax_hook(k);
      const auto plain = forced(one, ids, 4, nullptr);
      const auto hooked = forced(one, ids, 4, &ss);
      REQUIRE(plain.size() == hooked.size());
      for (std::size_t i = 0; i < plain.size(); ++i) {
        if (plain[i].step <= 4) continue;
        CHECK(system_mass(hooked[i].used(), 4) >= system_mass(plain[i].used(), 4) - 1e-15);
      }
    }
  }

  TEST_CASE("post-hook mass is the pre-hook mass to the power k on every layer") {
    const AttentionHook ss = split_softmax_hook(0.4);
    std::vector<TokenId> ids = ctx;
    for (TokenId t : {5, 9, 11, 6}) ids.push_back(t);
    const auto rows = forced(w, ids, 4, &ss);
    std::size_t checked = 0;
    for (const auto& r : rows) {
      if (r.step <= 4) continue;
      const double pre = system_mass(r.raw, 4);
      CHECK(std::abs(system_mass(r.used(), 4) - std::pow(pre, 0.4)) <= 1e-9);
      ++checked;
    }
    CHECK(checked == (ids.size() - 4) * 4);
  }

  TEST_CASE("unannotated steps are rejected") {
    const Generation g = run(w, ctx, 4, 5, nullptr, 2);
    const TurnAnnotation ann{g.first_generated_step, g.first_generated_step + 2, 1, Role::agent};
    CHECK_THROWS_AS(record_trace(g.attention.rows, std::span(&ann, 1), 4), DomainError);
  }

  TEST_CASE("CSV export rounds to six places") {
    MassTrace t;
    t.conversation_id = "x";
    t.entries.push_back({1, 0, 7, 2, Role::agent, 0.1234567});
    std::ostringstream out;
    write_trace_csv_header(out);
    write_trace_csv(out, t);
    CHECK(out.str() == "conversation_id,layer,head,step,turn,speaker,pi\nx,1,0,7,2,agent,0.123457\n");
  }
}

TEST_SUITE("decay statistics") {
  TEST_CASE("constant trace") {
    const DecayStats s = decay_stats(synthetic({{0.4, 0.4, 0.4, 0.4, 0.4, 0.4}, {0.4, 0.4, 0.4}, {0.4, 0.4, 0.4, 0.4}}));
    CHECK(s.agent_turns == std::vector<std::size_t>{1, 2, 3});
    REQUIRE(s.heads.size() == 1);
    for (double v : s.heads[0].slopes) CHECK(std::abs(v) <= 1e-15);
    for (double v : s.heads[0].drops) CHECK(std::abs(v) <= 1e-15);
  }

  TEST_CASE("step from 0.5 to 0.3") {
    const DecayStats s = decay_stats(synthetic({std::vector<double>(8, 0.5), std::vector<double>(8, 0.3)}));
    REQUIRE(s.heads[0].drops.size() == 1);
    CHECK(s.heads[0].drops[0] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(s.mean_slope() == 0.0);
  }

  TEST_CASE("window uses the boundary steps only") {
    // last 5 of turn 1 average 0.6; first 5 of turn 2 average 0.2
    const DecayStats s = decay_stats(synthetic({{0.0, 0.0, 0.6, 0.6, 0.6, 0.6, 0.6}, {0.2, 0.2, 0.2, 0.2, 0.2, 0.9}}));
    CHECK(s.heads[0].drops[0] == doctest::Approx(0.4).epsilon(1e-12));
    const DecayStats s2 = decay_stats(synthetic({{0.4, 0.6}, {0.1}}));
    CHECK(s2.heads[0].drops[0] == doctest::Approx(0.4).epsilon(1e-12));
  }

  TEST_CASE("linear within-turn slope") {
    std::vector<double> ramp;
    for (int i = 0; i < 6; ++i) ramp.push_back(0.5 - 0.01 * i);
    const DecayStats s = decay_stats(synthetic({ramp}));
    CHECK(s.heads[0].slopes[0] == doctest::Approx(-0.01).epsilon(1e-9));
  }

  TEST_CASE("errors") {
    MassTrace user_only;
    user_only.entries.push_back({0, 0, 1, 1, Role::user, 0.5});
    CHECK_THROWS_AS(decay_stats(user_only), DomainError);
    CHECK_THROWS_AS(decay_stats(MassTrace{}), DomainError);
    CHECK_THROWS_AS(decay_stats(synthetic({{0.5}}), 0), DomainError);
  }

  TEST_CASE("theory-mode self generation is flat within a turn") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      ClosureConfig cfg;
      cfg.seed = seed;
      cfg.steps = 100;
      cfg.attention = ClosureAttention::marker;
      const ClosureSetup setup = make_closure_setup(cfg);
      const ClosureResult r = cone_closure_experiment(setup, cfg, true);
      REQUIRE(!r.rows.empty());
      std::size_t first = r.rows.front().step, last = first;
      for (const auto& row : r.rows) last = std::max(last, row.step);
      const TurnAnnotation ann{first, last, 1, Role::agent};
      const MassTrace t = record_trace(r.rows, std::span(&ann, 1), cfg.prompt_len);
      CHECK(decay_stats(t).max_abs_slope() < 1e-3);
      // Content-keyed random heads dilute the prompt share as 1/t instead.
      cfg.attention = ClosureAttention::random;
      const ClosureResult diluted = cone_closure_experiment(make_closure_setup(cfg), cfg, true);
      const MassTrace td = record_trace(diluted.rows, std::span(&ann, 1), cfg.prompt_len);
      CHECK(decay_stats(td).mean_slope() < 0.0);
    }
  }
}

TEST_SUITE("out-of-distribution injection") {
  TEST_CASE("random user tokens between agent turns do not raise attention on average") {
    auto model = desk_model();
    const auto& vocab = desk_vocabulary();
    const ToyBackend agent(model);
    // Block of random non-special vocabulary words, seeded by the round.
    const ScriptedBackend noise([&](const GenerationRequest& req) {
      Rng rng = make_rng(derive_seed(req.sampler.seed, {hash_tag("ood"), req.history.size()}));
      std::string out;
      for (int i = 0; i < 24; ++i) {
        const std::size_t id = 5 + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(vocab.size() - 5));
        out += (i ? " " : "") + vocab[std::min(id, vocab.size() - 1)];
      }
      return out;
    });
    double total = 0.0;
    std::size_t n = 0;
    for (std::uint64_t c = 0; c < 12; ++c) {
      DialogConfig cfg;
      cfg.conversation_id = "ood" + std::to_string(c);
      cfg.system_b = "Always answer in french.";
      cfg.starter = "Tell me about your day.";
      cfg.rounds = 3;
      cfg.seed = derive_seed(99, {c});
      cfg.max_new_tokens = 24;
      const DialogTranscript t = run_self_chat(cfg, noise, agent);
      const DecayStats s = decay_stats(t.agent_trace);
      CHECK(s.agent_turns.size() == 3);
      total += s.mean_drop();
      ++n;
    }
    CHECK(total / static_cast<double>(n) >= 0.0);
  }
}
