#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <sstream>

#include "drift/desk_model.hpp"
#include "drift/errors.hpp"
#include "drift/interventions.hpp"
#include "drift/model.hpp"
#include "drift/tokenizer.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace drift;

namespace {

// Hand-rolled writer for the weight file, independent of save_weights.
struct Bytes {
  std::string data;
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) data.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    u64(bits);
  }
  void str(const std::string& s) {
    u64(s.size());
    data += s;
  }
};

// |V|=16, D=8, d=4, H=2, L=2, no MLP. Entry values are a running counter
// scaled down so they are all distinct.
Bytes theory_file(std::size_t drop_floats = 0, bool nan = false) {
  const std::size_t V = 16, D = 8, d = 4, H = 2, L = 2;
  Bytes b;
  b.data = "DRIFTW1";
  for (auto v : {V, D, d, H, L, std::size_t{64}}) b.u64(v);
  std::size_t floats = V * D + L * H * (3 * d * D + D * d);
  std::size_t counter = 0;
  for (std::size_t i = 0; i < floats - drop_floats; ++i) {
    double v = 0.001 * static_cast<double>(++counter);
    if (nan && i == 5) v = std::numeric_limits<double>::quiet_NaN();
    b.f64(v);
  }
  if (drop_floats == 0) {
    b.u64(0);  // no MLP
    b.u64(V);
    const char* specials[] = {"<unk>", "<sys>", "<user>", "<agent>", "<eot>"};
    for (std::size_t i = 0; i < V; ++i) b.str(i < 5 ? specials[i] : "t" + std::to_string(i));
  }
  return b;
}

ModelWeights load_bytes(const std::string& s) {
  std::istringstream in(s);
  return load_weights(in);
}

std::vector<double> to_vec(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

HeadWeights scalar_head(double q, double k, double v, double o) {
  HeadWeights h;
  h.query = Mat::Constant(1, 1, q);
  h.key = Mat::Constant(1, 1, k);
  h.value = Mat::Constant(1, 1, v);
  h.output = Mat::Constant(1, 1, o);
  return h;
}

Vec scalar(double x) { return Vec::Constant(1, x); }

}  // namespace

TEST_SUITE("weight file") {
  TEST_CASE("declared dimensions are echoed") {
    const ModelWeights w = load_bytes(theory_file().data);
    CHECK(w.dims.vocab_size == 16);
    CHECK(w.dims.model_dim == 8);
    CHECK(w.dims.head_dim == 4);
    CHECK(w.dims.n_heads == 2);
    CHECK(w.dims.n_layers == 2);
    CHECK(w.mode() == ModelMode::theory);
    CHECK(w.embedding(0, 0) == doctest::Approx(0.001));
    CHECK(w.embedding(0, 1) == doctest::Approx(0.002));  // row-major
    CHECK(w.embedding(1, 0) == doctest::Approx(0.009));
    CHECK(w.layers[0].heads[0].query(0, 0) == doctest::Approx(0.001 * (16 * 8 + 1)));
    CHECK(w.vocab[7] == "t7");
  }

  TEST_CASE("payload one float short is a shape error") {
    Bytes b = theory_file(1);
    CHECK_THROWS_AS(load_bytes(b.data), ShapeError);
  }

  TEST_CASE("NaN entry is rejected") { CHECK_THROWS_AS(load_bytes(theory_file(0, true).data), NonFiniteError); }

  TEST_CASE("bad magic and short header") {
    std::string s = theory_file().data;
    s[0] = 'X';
    CHECK_THROWS_AS(load_bytes(s), FormatError);
    CHECK_THROWS_AS(load_bytes("DRIFTW1"), FormatError);
  }

  TEST_CASE("zero dimension in header") {
    Bytes b;
    b.data = "DRIFTW1";
    for (auto v : {16, 0, 4, 2, 2, 64}) b.u64(static_cast<std::uint64_t>(v));
    CHECK_THROWS_AS(load_bytes(b.data), FormatError);
  }

  TEST_CASE("vocabulary count must match header") {
    std::string s = theory_file().data;
    // Append a stray byte after the vocabulary.
    CHECK_THROWS_AS(load_bytes(s + "x"), ShapeError);
  }

  TEST_CASE("standard model round trip is exact") {
    const ModelWeights w = testing::random_model(12, 6, 3, 2, 2, 11, true);
    std::stringstream ss;
    save_weights(w, ss);
    const ModelWeights r = load_weights(ss);
    CHECK(r.dims == w.dims);
    CHECK(r.mode() == ModelMode::standard);
    CHECK(r.embedding == w.embedding);
    CHECK(r.layers[1].ffn->down == w.layers[1].ffn->down);
    CHECK(r.final_norm->gain == w.final_norm->gain);
    CHECK(r.vocab == w.vocab);
    std::stringstream again;
    save_weights(r, again);
    CHECK(again.str() == ss.str());
  }
}

TEST_SUITE("attention") {
  TEST_CASE("equal scores give a uniform row") {
    const HeadWeights h = scalar_head(1, 0, 1, 1);
    const std::vector<Vec> keys{scalar(1), scalar(2), scalar(3)};
    const auto row = attention_weights(scalar(1), keys, h);
    REQUIRE(row.size() == 3);
    for (double a : row) CHECK(a == doctest::Approx(1.0 / 3).epsilon(1e-12));
  }

  TEST_CASE("scores 1 and 2 match the scalar softmax") {
    const HeadWeights h = scalar_head(1, 1, 1, 1);
    const std::vector<Vec> keys{scalar(1), scalar(2)};
    const auto row = attention_weights(scalar(1), keys, h);
    const auto ref = oracle::softmax({1.0L, 2.0L});
    CHECK(std::abs(row[0] - 0.268941) < 1e-6);
    CHECK(std::abs(row[1] - 0.731059) < 1e-6);
    CHECK(std::abs(row[0] - static_cast<double>(ref[0])) < 1e-15);
  }

  TEST_CASE("single key and empty key list") {
    const HeadWeights h = scalar_head(3, -2, 1, 1);
    const std::vector<Vec> one{scalar(0.7)};
    CHECK(attention_weights(scalar(5), one, h) == std::vector<double>{1.0});
    CHECK_THROWS_AS(attention_weights(scalar(5), std::vector<Vec>{}, h), DomainError);
  }

  TEST_CASE("attend sums transformed values") {
    const Mat I = Mat::Identity(3, 3);
    const Vec v = Vec::LinSpaced(3, 1, 3);
    const std::vector<Vec> one{v};
    const std::vector<double> w1{1.0};
    CHECK((attend(w1, one, I, I) - v).norm() == 0.0);

    const std::vector<Vec> pm{v, -v};
    const std::vector<double> half{0.5, 0.5};
    CHECK(attend(half, pm, I, I).norm() == 0.0);

    const std::vector<Vec> s{scalar(1), scalar(3)};
    const std::vector<double> w{0.25, 0.75};
    CHECK(attend(w, s, Mat::Constant(1, 1, 2.0), Mat::Constant(1, 1, 1.0))[0] == doctest::Approx(5.0).epsilon(1e-15));

    const std::vector<double> bad{1.0};
    CHECK_THROWS(attend(bad, s, I.topLeftCorner(1, 1), I.topLeftCorner(1, 1)));
  }
}

TEST_SUITE("layer forward") {
  const ModelWeights w = testing::random_model(10, 6, 3, 2, 1, 5, false);

  std::vector<Vec> inputs(std::size_t t, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::vector<Vec> h;
    for (std::size_t i = 0; i < t; ++i) h.push_back(testing::gaussian_vec(6, 1.0, rng));
    return h;
  }

  TEST_CASE("recorded rows are the plain softmax rows") {
    const auto h = inputs(7, 1);
    std::vector<AttentionRow> rows;
    layer_forward(h, w.layers[0], {0, ModelMode::theory, nullptr, 0}, &rows);
    REQUIRE(rows.size() == 7 * 2);
    for (const auto& r : rows) {
      CHECK(r.applied.empty());
      CHECK(r.raw.size() == r.step);
      std::vector<Vec> keys(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(r.step));
      const auto expect = attention_weights(h[r.step - 1], keys, w.layers[0].heads[r.head]);
      for (std::size_t j = 0; j < expect.size(); ++j) CHECK(r.raw[j] == doctest::Approx(expect[j]).epsilon(1e-14));
    }
  }

  TEST_CASE("identity hook is bitwise neutral") {
    const auto h = inputs(9, 2);
    const AttentionHook id = [](std::span<const double> row, const HookSite&) { return std::vector<double>(row.begin(), row.end()); };
    const auto plain = layer_forward(h, w.layers[0], {0, ModelMode::theory, nullptr, 0});
    const auto hooked = layer_forward(h, w.layers[0], {0, ModelMode::theory, &id, 3});
    for (std::size_t i = 0; i < h.size(); ++i) CHECK(plain[i] == hooked[i]);
  }

  TEST_CASE("split-softmax with k=1 matches the hook-free pass") {
    const auto h = inputs(9, 3);
    const AttentionHook ss = split_softmax_hook(1.0);
    const auto plain = layer_forward(h, w.layers[0], {0, ModelMode::theory, nullptr, 0});
    const auto hooked = layer_forward(h, w.layers[0], {0, ModelMode::theory, &ss, 4});
    for (std::size_t i = 0; i < h.size(); ++i) CHECK((plain[i] - hooked[i]).norm() <= 1e-12);
  }

  TEST_CASE("invalid hook rows are rejected") {
    const auto h = inputs(4, 4);
    const AttentionHook neg = [](std::span<const double> row, const HookSite&) {
      std::vector<double> r(row.begin(), row.end());
      r[0] -= 0.5;
      if (r.size() > 1) r[1] += 0.5;
      return r;
    };
    const AttentionHook shortrow = [](std::span<const double>, const HookSite&) { return std::vector<double>{1.0}; };
    const AttentionHook heavy = [](std::span<const double> row, const HookSite&) {
      std::vector<double> r(row.begin(), row.end());
      r[0] += 1e-3;
      return r;
    };
    CHECK_THROWS_AS(layer_forward(h, w.layers[0], {0, ModelMode::theory, &neg, 0}), InvalidDistributionError);
    CHECK_THROWS_AS(layer_forward(h, w.layers[0], {0, ModelMode::theory, &shortrow, 0}), InvalidDistributionError);
    CHECK_THROWS_AS(layer_forward(h, w.layers[0], {0, ModelMode::theory, &heavy, 0}), InvalidDistributionError);
  }

  TEST_CASE("zero output projections leave activations unchanged") {
    LayerWeights layer = w.layers[0];
    for (auto& hw : layer.heads) hw.output.setZero();
    const auto h = inputs(6, 5);
    const auto out = layer_forward(h, layer, {0, ModelMode::theory, nullptr, 0});
    for (std::size_t i = 0; i < h.size(); ++i) CHECK(out[i] == h[i]);
  }
}

TEST_SUITE("next token distribution") {
  TEST_CASE("zero embedding gives a uniform distribution") {
    const auto p = next_token_dist(Vec::Ones(4), Mat::Zero(7, 4));
    for (double x : p) CHECK(x == doctest::Approx(1.0 / 7).epsilon(1e-15));
  }

  TEST_CASE("logits 0 and ln 3") {
    Mat we(2, 1);
    we << 0.0, std::log(3.0);
    const auto p = next_token_dist(scalar(1.0), we);
    CHECK(std::abs(p[0] - 0.25) < 1e-12);
    CHECK(std::abs(p[1] - 0.75) < 1e-12);
  }

  TEST_CASE("permuting rows permutes the output") {
    Rng rng = make_rng(9);
    const Mat we = testing::gaussian(6, 3, 1.0, rng);
    const Vec h = testing::gaussian_vec(3, 1.0, rng);
    const std::vector<int> perm{3, 0, 5, 1, 4, 2};
    Mat pw(6, 3);
    for (int i = 0; i < 6; ++i) pw.row(i) = we.row(perm[static_cast<std::size_t>(i)]);
    const auto p = next_token_dist(h, we);
    const auto q = next_token_dist(h, pw);
    for (int i = 0; i < 6; ++i) CHECK(q[static_cast<std::size_t>(i)] == doctest::Approx(p[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]).epsilon(1e-14));
  }

  TEST_CASE("softmax is shift invariant") {
    Rng rng = make_rng(10);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> x(9);
      for (auto& v : x) v = 5.0 * (uniform01(rng) - 0.5);
      std::vector<double> y = x;
      const double c = 100.0 * (uniform01(rng) - 0.5);
      for (auto& v : y) v += c;
      const auto a = softmax(x), b = softmax(y);
      for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
    }
  }

  TEST_CASE("non-finite input") { CHECK_THROWS_AS(next_token_dist(scalar(std::nan("")), Mat::Ones(2, 1)), NonFiniteError); }
}

TEST_SUITE("sampling") {
  TEST_CASE("plain categorical frequencies") {
    const std::vector<double> dist{0.1, 0.2, 0.3, 0.4};
    SamplerConfig cfg{1.0, 1.0, 0};
    Rng rng = make_rng(123);
    std::vector<int> counts(4, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[sample_token(dist, cfg, rng)];
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(counts[i] / double(n) - dist[i]) <= 0.01);
  }

  TEST_CASE("dominant token alone fills the nucleus") {
    const std::vector<double> dist{0.95, 0.03, 0.02};
    SamplerConfig cfg{1.0, 0.9, 0};
    Rng rng = make_rng(5);
    for (int i = 0; i < 2000; ++i) CHECK(sample_token(dist, cfg, rng) == 0);
  }

  TEST_CASE("nucleus keeps the crossing token and breaks ties by id") {
    const std::vector<double> dist{0.2, 0.3, 0.2, 0.3};
    CHECK(nucleus_set(dist, 0.5) == std::vector<TokenId>{1, 3});
    CHECK(nucleus_set(dist, 0.61) == std::vector<TokenId>{1, 3, 0});
    CHECK(nucleus_set(dist, 1.0).size() == 4);
  }

  TEST_CASE("same seed, same token") {
    const std::vector<double> dist{0.3, 0.3, 0.4};
    SamplerConfig cfg{0.7, 0.9, 0};
    for (std::uint64_t s = 0; s < 50; ++s) {
      Rng a = make_rng(s), b = make_rng(s);
      CHECK(sample_token(dist, cfg, a) == sample_token(dist, cfg, b));
    }
  }

  TEST_CASE("invalid configurations and distributions") {
    Rng rng = make_rng(1);
    const std::vector<double> zero{0.0, 0.0};
    CHECK_THROWS(sample_token(zero, SamplerConfig{1.0, 0.9, 0}, rng));
    CHECK_THROWS(SamplerConfig({0.0, 0.9, 0}).validate());
    CHECK_THROWS(SamplerConfig({1.0, 0.0, 0}).validate());
    CHECK_THROWS(SamplerConfig({1.0, 1.5, 0}).validate());
  }
}

TEST_SUITE("generation") {
  const ModelWeights w = testing::random_model(8, 4, 2, 2, 2, 77, true);

  TEST_CASE("zero budget yields an empty utterance with prefill rows only") {
    const std::vector<TokenId> ctx{1, 5, 6, 7, 3};
    GenerateOptions opts;
    opts.stop.max_new_tokens = 0;
    opts.record = RecordMode::all;
    const Generation g = generate_utterance(ctx, w, SamplerConfig{}, opts);
    CHECK(g.tokens.empty());
    CHECK(g.attention.rows.size() == ctx.size() * 2 * 2);
  }

  TEST_CASE("fixed seed reproduces the sequence") {
    const std::vector<TokenId> ctx{1, 5, 6, 3};
    GenerateOptions opts;
    opts.stop.max_new_tokens = 30;
    const auto a = generate_utterance(ctx, w, SamplerConfig{1.0, 0.9, 42}, opts);
    const auto b = generate_utterance(ctx, w, SamplerConfig{1.0, 0.9, 42}, opts);
    CHECK(a.tokens == b.tokens);
    CHECK(a.tokens.size() == 30);
  }

  TEST_CASE("every recorded row is a causal probability vector") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const ModelWeights m = testing::random_model(8, 4, 2, 2, 2, seed, seed % 2 == 0);
      GenerateOptions opts;
      opts.stop.max_new_tokens = 12;
      opts.record = RecordMode::all;
      const std::vector<TokenId> ctx{1, 6, 7, 3};
      const auto g = generate_utterance(ctx, m, SamplerConfig{1.0, 1.0, seed}, opts);
      std::map<std::size_t, int> per_step;
      for (const auto& r : g.attention.rows) {
        double s = 0.0;
        for (double a : r.raw) {
          CHECK(a >= 0.0);
          s += a;
        }
        CHECK(std::abs(s - 1.0) <= 1e-9);
        CHECK(r.raw.size() == r.step);
        ++per_step[r.step];
      }
      for (const auto& [step, n] : per_step) CHECK(n == 4);
    }
  }

  TEST_CASE("stop token is not returned") {
    GenerateOptions opts;
    opts.stop.max_new_tokens = 200;
    opts.stop.stop_token = 4;
    const std::vector<TokenId> ctx{1, 5, 3};
    bool stopped = false;
    for (std::uint64_t s = 0; s < 20 && !stopped; ++s) {
      const auto g = generate_utterance(ctx, w, SamplerConfig{1.0, 1.0, s}, opts);
      for (TokenId t : g.tokens) CHECK(t != 4);
      stopped = g.hit_stop_token;
    }
    CHECK(stopped);
  }

  TEST_CASE("context overflow") {
    ModelWeights small = testing::random_model(8, 4, 2, 1, 1, 1, false, 16, 10);
    GenerateOptions opts;
    opts.stop.max_new_tokens = 5;
    const std::vector<TokenId> ctx{1, 5, 6, 7, 5, 6};
    CHECK_THROWS_AS(generate_utterance(ctx, small, SamplerConfig{}, opts), ContextOverflowError);
  }

  TEST_CASE("incremental decoding matches the full causal pass") {
    const ModelWeights m = testing::random_model(10, 5, 3, 2, 3, 8, false);
    const std::vector<TokenId> ids{1, 5, 6, 7, 8, 9, 2, 5};
    DecoderState st(m, {nullptr, 0, RecordMode::none, false});
    std::vector<Vec> h;
    for (TokenId id : ids) h.push_back(m.embedding.row(id).transpose());
    for (std::size_t l = 0; l < m.layers.size(); ++l) h = layer_forward(h, m.layers[l], {l, ModelMode::theory, nullptr, 0});
    for (std::size_t i = 0; i < ids.size(); ++i) {
      st.push_token(ids[i]);
      CHECK((st.output() - h[i]).norm() <= 1e-12);
    }
  }

  TEST_CASE("later tokens never change earlier outputs") {
    const std::vector<TokenId> a{1, 5, 6, 7}, b{1, 5, 6, 7, 5, 5, 6};
    DecoderState sa(w, {nullptr, 0, RecordMode::none, false}), sb(w, {nullptr, 0, RecordMode::none, false});
    std::vector<Vec> oa, ob;
    for (auto t : a) oa.push_back(sa.push_token(t));
    for (auto t : b) ob.push_back(sb.push_token(t));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(oa[i] == ob[i]);
  }
}

TEST_SUITE("theory step") {
  TEST_CASE("empty network returns the last embedding") {
    Rng rng = make_rng(3);
    std::vector<Vec> h;
    for (int i = 0; i < 4; ++i) h.push_back(testing::gaussian_vec(5, 1.0, rng).normalized());
    const Vec out = theory_step(h, std::span<const LayerWeights>{});
    CHECK((out - h.back()).norm() <= 1e-15);
  }

  TEST_CASE("output is unit norm") {
    const ModelWeights m = testing::random_model(4, 6, 3, 2, 2, 4, false);
    Rng rng = make_rng(4);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<Vec> h;
      for (int i = 0; i < 1 + trial % 7; ++i) h.push_back(testing::gaussian_vec(6, 1.0, rng).normalized());
      CHECK(std::abs(theory_step(h, m.layers).norm() - 1.0) <= 1e-9);
    }
  }

  TEST_CASE("constant sequence is a fixed point under identity value-output maps") {
    Rng rng = make_rng(6);
    const Vec u = testing::gaussian_vec(4, 1.0, rng).normalized();
    LayerWeights layer;
    HeadWeights hw;
    hw.query = testing::gaussian(4, 4, 1.0, rng);
    hw.key = testing::gaussian(4, 4, 1.0, rng);
    hw.value = Mat::Identity(4, 4);
    hw.output = Mat::Identity(4, 4);
    layer.heads.push_back(hw);
    const std::vector<Vec> h(5, u);
    const std::vector<LayerWeights> layers{layer};
    CHECK((theory_step(h, layers) - u).norm() <= 1e-12);
  }

  TEST_CASE("preconditions") {
    const std::vector<Vec> not_unit{Vec::Constant(3, 1.0)};
    CHECK_THROWS_AS(theory_step(not_unit, std::span<const LayerWeights>{}), DomainError);
    // W_o W_v = -I wipes out the residual of a constant sequence.
    LayerWeights layer;
    HeadWeights hw;
    hw.query = Mat::Zero(3, 3);
    hw.key = Mat::Zero(3, 3);
    hw.value = Mat::Identity(3, 3);
    hw.output = -Mat::Identity(3, 3);
    layer.heads.push_back(hw);
    const std::vector<LayerWeights> layers{layer};
    const std::vector<Vec> h(2, Vec::Unit(3, 0));
    CHECK_THROWS_AS(theory_step(h, layers), DomainError);
  }
}

TEST_SUITE("tokenizer") {
  const Tokenizer tok({"<unk>", "<sys>", "<user>", "<agent>", "<eot>", "hello", "world", ",", "!", "Paris"});

  TEST_CASE("splitting and lookup") {
    CHECK(Tokenizer::split("Hello, world!") == std::vector<std::string>{"Hello", ",", "world", "!"});
    const auto ids = tok.encode("Hello, WORLD! Paris paris zzz");
    CHECK(tok.decode(ids) == "hello, world! Paris <unk> <unk>");
  }

  TEST_CASE("chat layout") {
    const History h{{Role::user, "hello", false}, {Role::agent, "world", false}};
    const auto ctx = render_chat(tok, "hello world", h);
    const std::vector<TokenId> expect{1, 5, 6, 2, 5, 4, 3, 6, 4, 3};
    CHECK(ctx.tokens == expect);
    CHECK(ctx.system_len == 3);
    const auto bare = render_chat(tok, "", h);
    CHECK(bare.system_len == 0);
    CHECK(bare.tokens.front() == tok.user());
  }

  TEST_CASE("missing special tokens") { CHECK_THROWS(Tokenizer({"a", "b"})); }
}

TEST_SUITE("desk model") {
  TEST_CASE("builds deterministically and validates") {
    const ModelWeights a = build_desk_model();
    const ModelWeights b = build_desk_model();
    CHECK(a.embedding == b.embedding);
    CHECK(a.mode() == ModelMode::standard);
    CHECK(a.vocab == desk_vocabulary());
    CHECK(a.vocab[0] == "<unk>");
    std::stringstream ss;
    save_weights(a, ss);
    CHECK(load_weights(ss).embedding == a.embedding);
  }
}
