#include <doctest.h>

#include <cmath>

#include "drift/errors.hpp"
#include "drift/interventions.hpp"
#include "drift/random.hpp"
#include "oracles.hpp"

using namespace drift;

namespace {

std::vector<double> random_row(std::size_t n, Rng& rng) {
  std::vector<double> r(n);
  double s = 0.0;
  for (auto& v : r) {
    v = -std::log(1.0 - uniform01(rng));  // Dirichlet(1) via exponentials
    s += v;
  }
  for (auto& v : r) v /= s;
  return r;
}

double prefix(const std::vector<double>& r, std::size_t L) {
  double s = 0.0;
  for (std::size_t i = 0; i < L; ++i) s += r[i];
  return s;
}

}  // namespace

TEST_SUITE("split-softmax") {
  TEST_CASE("four-entry example") {
    const std::vector<double> row{0.4, 0.1, 0.3, 0.2};
    const auto out = split_softmax_reweight(row, {0.5, 2});
    const std::vector<double> expect{0.565685, 0.141421, 0.175736, 0.117157};
    const auto ref = oracle::split_softmax(row, 2, 0.5);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(std::abs(out[i] - expect[i]) <= 1e-6);
      CHECK(std::abs(out[i] - static_cast<double>(ref[i])) <= 1e-15);
    }
  }

  TEST_CASE("k = 1 and full prefix are no-ops") {
    const std::vector<double> row{0.4, 0.1, 0.3, 0.2};
    CHECK(split_softmax_reweight(row, {1.0, 2}) == row);
    const std::vector<double> all_sys{0.7, 0.3, 0.0};
    for (double k : {0.0, 0.3, 0.9}) CHECK(split_softmax_reweight(all_sys, {k, 2}) == all_sys);
  }

  TEST_CASE("empty prefix") {
    const std::vector<double> row{0.5, 0.5};
    CHECK(split_softmax_reweight(row, {0.5, 0}) == row);
    CHECK_THROWS_AS(split_softmax_reweight(row, {0.0, 0}), DomainError);
  }

  TEST_CASE("invalid inputs") {
    const std::vector<double> row{0.5, 0.5};
    CHECK_THROWS_AS(split_softmax_reweight(row, {1.5, 1}), DomainError);
    CHECK_THROWS_AS(split_softmax_reweight(row, {-0.1, 1}), DomainError);
    CHECK_THROWS_AS(split_softmax_reweight(row, {0.5, 3}), DomainError);
    const std::vector<double> neg{1.2, -0.2};
    CHECK_THROWS_AS(split_softmax_reweight(neg, {0.5, 1}), InvalidDistributionError);
    const std::vector<double> heavy{0.6, 0.6};
    CHECK_THROWS_AS(split_softmax_reweight(heavy, {0.5, 1}), InvalidDistributionError);
    CHECK_THROWS_AS(split_softmax_reweight(std::vector<double>{}, {0.5, 0}), InvalidDistributionError);
  }

  TEST_CASE("mass, prefix power and ratios over random rows") {
    Rng rng = make_rng(2024);
    std::size_t checked = 0;
    double worst_sum = 0, worst_pi = 0, worst_ratio = 0;
    for (int trial = 0; trial < 100000; ++trial) {
      const std::size_t t = 2 + static_cast<std::size_t>(uniform01(rng) * 40);
      const std::size_t L = 1 + static_cast<std::size_t>(uniform01(rng) * (t - 1));
      const double k = uniform01(rng);
      const auto row = random_row(t, rng);
      const auto out = split_softmax_reweight(row, {k, L});
      double s = 0.0;
      for (double a : out) s += a;
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      worst_pi = std::max(worst_pi, std::abs(prefix(out, L) - std::pow(prefix(row, L), k)));
      // ratios against the first entry of each side
      for (std::size_t i = 1; i < t; ++i) {
        const std::size_t j = i < L ? 0 : L;
        if (i == j) continue;
        worst_ratio = std::max(worst_ratio, std::abs(out[i] / out[j] - row[i] / row[j]) / std::max(1.0, row[i] / row[j]));
      }
      ++checked;
    }
    CHECK(checked == 100000);
    CHECK(worst_sum <= 1e-12);
    CHECK(worst_pi <= 1e-9);
    CHECK(worst_ratio <= 1e-12);
  }

  TEST_CASE("smaller k gives more prefix mass") {
    Rng rng = make_rng(7);
    for (int trial = 0; trial < 2000; ++trial) {
      const auto row = random_row(10, rng);
      double k1 = uniform01(rng), k2 = uniform01(rng);
      if (k1 > k2) std::swap(k1, k2);
      const double m1 = prefix(split_softmax_reweight(row, {k1, 4}), 4);
      const double m2 = prefix(split_softmax_reweight(row, {k2, 4}), 4);
      CHECK(m1 >= m2 - 1e-15);
      CHECK(m2 >= prefix(row, 4) - 1e-15);
    }
  }

  TEST_CASE("hook leaves system rows and filtered heads alone") {
    const AttentionHook h = split_softmax_hook(0.5, HookFilter{{1}, {}});
    const std::vector<double> row{0.4, 0.1, 0.3, 0.2};
    CHECK(h(row, {0, 0, 4, 2}) == row);
    CHECK(h(row, {1, 3, 4, 4}) == row);
    CHECK(h(row, {1, 3, 4, 0}) == row);
    CHECK(h(row, {1, 3, 4, 2}) == split_softmax_reweight(row, {0.5, 2}));
    CHECK_THROWS_AS(split_softmax_hook(2.0), DomainError);
  }
}

TEST_SUITE("cfg") {
  TEST_CASE("worked example") {
    const std::vector<double> c{std::log(0.8), std::log(0.2)}, u{std::log(0.5), std::log(0.5)};
    const auto p = cfg_combine(c, u, 2.0);
    CHECK(std::abs(p[0] - 0.941176) <= 1e-6);
    CHECK(std::abs(p[1] - 0.058824) <= 1e-6);
    const auto ref = oracle::cfg({0.8L, 0.2L}, {0.5L, 0.5L}, 2.0L);
    CHECK(std::abs(p[0] - static_cast<double>(ref[0])) <= 1e-14);
  }

  TEST_CASE("endpoints and shift invariance") {
    Rng rng = make_rng(3);
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<double> c(6), u(6);
      for (auto& v : c) v = 4 * uniform01(rng) - 2;
      for (auto& v : u) v = 4 * uniform01(rng) - 2;
      const auto sc = softmax(c), su = softmax(u);
      const auto p1 = cfg_combine(c, u, 1.0), p0 = cfg_combine(c, u, 0.0);
      for (std::size_t i = 0; i < 6; ++i) {
        CHECK(std::abs(p1[i] - sc[i]) <= 1e-12);
        CHECK(std::abs(p0[i] - su[i]) <= 1e-12);
      }
      const double a = 0.5 + 3 * uniform01(rng);
      auto c2 = c, u2 = u;
      const double dc = 50 * uniform01(rng), du = -50 * uniform01(rng);
      for (auto& v : c2) v += dc;
      for (auto& v : u2) v += du;
      const auto p = cfg_combine(c, u, a), q = cfg_combine(c2, u2, a);
      for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(p[i] - q[i]) <= 1e-12);
    }
  }

  TEST_CASE("errors") {
    const std::vector<double> a{0.0, 1.0}, b{0.0};
    CHECK_THROWS_AS(cfg_combine(a, b, 2.0), ShapeError);
    CHECK_THROWS_AS(cfg_combine(a, a, std::nan("")), DomainError);
  }
}

TEST_SUITE("spr") {
  History synthetic(std::size_t user_turns) {
    History h;
    for (std::size_t i = 0; i < user_turns; ++i) {
      h.push_back({Role::user, "u" + std::to_string(i), false});
      h.push_back({Role::agent, "a" + std::to_string(i), false});
    }
    return h;
  }

  TEST_CASE("p = 0 and p = 1") {
    const History h = synthetic(5);
    CHECK(spr_expand_history(h, "sys", {0.0, 1}) == h);
    const History all = spr_expand_history(h, "sys", {1.0, 1});
    REQUIRE(all.size() == 15);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(all[3 * i] == Message{Role::user, "sys", true});
      CHECK(all[3 * i + 1] == h[2 * i]);
    }
    CHECK(visible_history(all) == h);
  }

  TEST_CASE("injection frequency at p = 0.5") {
    const History h = synthetic(10000);
    const History out = spr_expand_history(h, "sys", {0.5, 99});
    const double rate = static_cast<double>(out.size() - h.size()) / 10000.0;
    CHECK(std::abs(rate - 0.5) <= 0.02);
  }

  TEST_CASE("expansion is incremental and seeded") {
    const History h = synthetic(30);
    const History a = spr_expand_history(h, "sys", {0.3, 5});
    CHECK(a == spr_expand_history(h, "sys", {0.3, 5}));
    const History shorter(h.begin(), h.begin() + 20);
    const History b = spr_expand_history(shorter, "sys", {0.3, 5});
    CHECK(std::equal(b.begin(), b.end(), a.begin()));
    CHECK(a != spr_expand_history(h, "sys", {0.3, 6}));
  }

  TEST_CASE("already hidden messages are not counted") {
    History h = synthetic(2);
    h.insert(h.begin(), Message{Role::user, "sys", true});
    const History out = spr_expand_history(h, "sys", {1.0, 0});
    CHECK(out.size() == h.size() + 2);
  }

  TEST_CASE("p outside [0, 1]") { CHECK_THROWS_AS(spr_expand_history(synthetic(1), "s", {1.5, 0}), DomainError); }
}

TEST_SUITE("intervention config") {
  TEST_CASE("names and values") {
    CHECK(parse_intervention("ss") == InterventionKind::split_softmax);
    CHECK(intervention_name(InterventionKind::cfg) == "cfg");
    CHECK_THROWS_AS(parse_intervention("steer"), ConfigError);
    InterventionConfig c{InterventionKind::cfg, 1.0, 2.5, 0.0};
    CHECK(c.value() == 2.5);
    CHECK(InterventionConfig{InterventionKind::spr, 1.0, 1.0, 0.25}.value() == 0.25);
    CHECK(InterventionConfig{}.value() == 0.0);
    CHECK_THROWS(InterventionConfig({InterventionKind::split_softmax, 1.1, 1.0, 0.0}).validate());
  }
}
