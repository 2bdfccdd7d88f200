#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "drift/benchmark.hpp"
#include "drift/errors.hpp"
#include "drift/random.hpp"
#include "drift/text.hpp"

using namespace drift;

namespace {

const std::filesystem::path kData(DRIFT_DATA_DIR);

MeasureSpec spec(MeasureType t) {
  MeasureSpec s;
  s.type = t;
  return s;
}

std::string random_text(Rng& rng) {
  static const std::vector<std::string> atoms{"a", "Z", " ", "\n", "é", "ß", "日本", "🙂", "arr", "Je", "le", ",", "!", "42",
                                              "-3.5", "\xff", "\xc3", "A", "yes", "\t", "{", "}", "matey", "\0"};
  std::string s;
  const int n = static_cast<int>(uniform01(rng) * 60);
  for (int i = 0; i < n; ++i) s += atoms[static_cast<std::size_t>(uniform01(rng) * atoms.size())];
  return s;
}

std::vector<MeasureSpec> all_specs() {
  std::vector<MeasureSpec> v;
  auto k = spec(MeasureType::keyword_any);
  k.keywords = {"merci", "oui"};
  v.push_back(k);
  auto ka = spec(MeasureType::keyword_all);
  ka.keywords = {"arr", "matey"};
  v.push_back(ka);
  auto rf = spec(MeasureType::regex_full);
  rf.pattern = "[A-Z ]+";
  v.push_back(rf);
  auto rs = spec(MeasureType::regex_search);
  rs.pattern = "\\d{2}";
  v.push_back(rs);
  auto c = spec(MeasureType::choice_set);
  c.choices = {"A", "B", "C"};
  v.push_back(c);
  auto ps = spec(MeasureType::prefix_suffix);
  ps.prefix = "Dear";
  ps.suffix = "!";
  v.push_back(ps);
  auto sl = spec(MeasureType::stopword_language);
  sl.language = "fr";
  v.push_back(sl);
  auto ne = spec(MeasureType::numeric_equals);
  ne.expected = 42;
  v.push_back(ne);
  return v;
}

}  // namespace

TEST_SUITE("measures") {
  TEST_CASE("keyword containment ignores case") {
    auto s = spec(MeasureType::keyword_any);
    s.keywords = {"merci", "oui"};
    CHECK(evaluate_measure(s, "Merci beaucoup !") == 1.0);
    CHECK(evaluate_measure(s, "Thanks a lot") == 0.0);
    s.type = MeasureType::keyword_all;
    CHECK(evaluate_measure(s, "OUI, merci") == 1.0);
    CHECK(evaluate_measure(s, "oui") == 0.5);  // fraction of keywords present
    CHECK(evaluate_measure(s, "non") == 0.0);
  }

  TEST_CASE("choice sets") {
    auto s = spec(MeasureType::choice_set);
    s.choices = {"A", "B", "C"};
    CHECK(evaluate_measure(s, "D") == 0.0);
    CHECK(evaluate_measure(s, "B") == 1.0);
    CHECK(evaluate_measure(s, "  b.") == 1.0);
  }

  TEST_CASE("French stopword ratio") {
    auto s = spec(MeasureType::stopword_language);
    s.language = "fr";
    CHECK(evaluate_measure(s, "Je suis à Londres et je visite le musée") == 1.0);
    CHECK(evaluate_measure(s, "I am in London visiting the museum") == 0.0);
    // je, suis, à, et, je, le out of 9 words.
    CHECK(stopword_ratio("fr", "Je suis à Londres et je visite le musée") == doctest::Approx(6.0 / 9.0));
    CHECK(evaluate_measure(s, "") == 0.0);
  }

  TEST_CASE("regex, affixes and numbers") {
    auto rf = spec(MeasureType::regex_full);
    rf.pattern = "[A-Z ]+";
    CHECK(evaluate_measure(rf, "HELLO THERE") == 1.0);
    CHECK(evaluate_measure(rf, "HELLO there") == 0.0);
    auto rs = spec(MeasureType::regex_search);
    rs.pattern = "\\d{2}";
    CHECK(evaluate_measure(rs, "it is 42 now") == 1.0);
    auto ps = spec(MeasureType::prefix_suffix);
    ps.prefix = "Dear";
    ps.suffix = "!";
    CHECK(evaluate_measure(ps, "Dear sir!") == 1.0);
    CHECK(evaluate_measure(ps, "Dear sir") == 0.0);
    auto ne = spec(MeasureType::numeric_equals);
    ne.expected = 42;
    CHECK(evaluate_measure(ne, "The answer is 42.") == 1.0);
    CHECK(evaluate_measure(ne, "The answer is 41.") == 0.0);
  }

  TEST_CASE("malformed specs are configuration errors") {
    auto bad_re = spec(MeasureType::regex_full);
    bad_re.pattern = "([a-";
    CHECK_THROWS_AS(bad_re.validate(), ConfigError);
    auto empty = spec(MeasureType::choice_set);
    CHECK_THROWS_AS(empty.validate(), ConfigError);
    auto thr = spec(MeasureType::stopword_language);
    thr.language = "fr";
    thr.threshold = 1.0;
    CHECK_THROWS_AS(thr.validate(), ConfigError);
    thr.threshold = 0.2;
    thr.language = "xx";
    CHECK_THROWS_AS(thr.validate(), ConfigError);
  }

  TEST_CASE("pure and bounded on arbitrary text") {
    Rng rng = make_rng(17);
    const auto specs = all_specs();
    for (int i = 0; i < 1000; ++i) {
      const std::string t = random_text(rng);
      for (const auto& s : specs) {
        const double a = evaluate_measure(s, t), b = evaluate_measure(s, t);
        CHECK(a == b);
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
      }
    }
    const std::string huge(200000, 'x');
    for (const auto& s : specs) CHECK(evaluate_measure(s, huge) >= 0.0);
  }

  TEST_CASE("text normalization") {
    CHECK(text::nfc("e\xcc\x81") == "\xc3\xa9");
    CHECK(text::fold("ÉCOLE") == "école");
    CHECK(text::words("Hello, wörld! 42") == std::vector<std::string>{"hello", "wörld", "42"});
  }
}

TEST_SUITE("dataset") {
  TEST_CASE("shipped dataset") {
    const auto d = load_dataset(kData / "benchmark.jsonl");
    CHECK(d.size() == 25);
    std::map<Category, int> per;
    for (const auto& e : d) ++per[e.category];
    for (Category c : kAllCategories) CHECK(per[c] == 5);
  }

  TEST_CASE("empty file") {
    std::istringstream in("");
    CHECK(load_dataset(in).empty());
  }

  TEST_CASE("unknown category names the line") {
    std::istringstream in(
        R"({"id":"a","category":"language","system_prompt":"x","probe_question":null,"measure":{"type":"keyword_any","params":{"keywords":["y"]}}})"
        "\n"
        R"({"id":"b","category":"poetry","system_prompt":"x","probe_question":null,"measure":{"type":"keyword_any","params":{"keywords":["y"]}}})"
        "\n");
    try {
      load_dataset(in);
      FAIL("expected a schema error");
    } catch (const SchemaError& e) {
      CHECK(e.line() == 2);
    }
  }

  TEST_CASE("duplicate ids and bad measures") {
    const std::string line =
        R"({"id":"a","category":"language","system_prompt":"x","probe_question":null,"measure":{"type":"keyword_any","params":{"keywords":["y"]}}})";
    std::istringstream dup(line + "\n" + line + "\n");
    CHECK_THROWS(load_dataset(dup));
    std::istringstream bad(
        R"({"id":"a","category":"format","system_prompt":"x","probe_question":null,"measure":{"type":"regex_full","params":{"pattern":"(("}}})");
    CHECK_THROWS(load_dataset(bad));
  }

  TEST_CASE("canonical serialization round-trips byte for byte") {
    std::ifstream raw(kData / "benchmark.jsonl");
    const auto d = load_dataset(kData / "benchmark.jsonl");
    std::ostringstream a;
    save_dataset(d, a);
    std::istringstream in(a.str());
    std::ostringstream b;
    save_dataset(load_dataset(in), b);
    CHECK(a.str() == b.str());
    std::stringstream orig;
    orig << raw.rdbuf();
    CHECK(a.str() == orig.str());
  }
}

TEST_SUITE("probe pool") {
  TEST_CASE("single question and determinism") {
    const ProbePool one = parse_probe_pool(R"(["Only question?"])");
    CHECK(sample_probe(one, 123) == "Only question?");
    const ProbePool p = load_probe_pool(kData / "probe_pool.json");
    CHECK(sample_probe(p, 5) == sample_probe(p, 5));
    CHECK_THROWS(parse_probe_pool("[]"));
    CHECK_THROWS(sample_probe(ProbePool{}, 1));
  }

  TEST_CASE("uniform over four questions") {
    const ProbePool p = parse_probe_pool(R"(["a", "b", "c", "d"])");
    std::map<std::string, int> n;
    for (std::uint64_t s = 0; s < 10000; ++s) ++n[sample_probe(p, derive_seed(77, {s}))];
    for (const auto& [q, c] : n) CHECK(std::abs(c / 10000.0 - 0.25) <= 0.02);
    CHECK(n.size() == 4);
  }

  TEST_CASE("own probe wins over the pool") {
    const ProbePool p = parse_probe_pool(R"(["generic"])");
    BenchmarkEntry e;
    e.probe_question = "crafted";
    CHECK(probe_for(e, p, 1) == "crafted");
    e.probe_question.reset();
    CHECK(probe_for(e, p, 1) == "generic");
  }
}
