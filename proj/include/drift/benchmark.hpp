#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

namespace drift {

enum class Category { multi_choice, character, format, memorization, language };

std::string_view category_name(Category c);
std::optional<Category> parse_category(std::string_view s);
inline constexpr Category kAllCategories[] = {Category::multi_choice, Category::character, Category::format,
                                              Category::memorization, Category::language};

enum class MeasureType {
  keyword_any,
  keyword_all,
  regex_full,
  regex_search,
  choice_set,
  prefix_suffix,
  stopword_language,
  numeric_equals,
};

std::string_view measure_name(MeasureType t);
std::optional<MeasureType> parse_measure_type(std::string_view s);

// Declarative stability measure. Only the fields relevant to `type` are
// meaningful.
struct MeasureSpec {
  MeasureType type = MeasureType::keyword_any;
  std::vector<std::string> keywords;  // keyword_any, keyword_all
  std::string pattern;                // regex_full, regex_search
  std::vector<std::string> choices;   // choice_set
  std::string prefix, suffix;         // prefix_suffix
  std::string language;               // stopword_language: fr, es, de, en
  double threshold = 0.15;            // stopword_language
  double expected = 0.0;              // numeric_equals
  double tolerance = 1e-9;            // numeric_equals

  // Throws ConfigError on malformed parameters (bad regex, empty lists,
  // threshold outside (0,1), unknown language).
  void validate() const;
};

// Score in [0,1]. Never throws for any response text. keyword_all scores the
// fraction of keywords present; every other type is 0 or 1.
double evaluate_measure(const MeasureSpec& spec, std::string_view response);

struct BenchmarkEntry {
  std::string id;
  Category category = Category::language;
  std::string system_prompt;
  std::optional<std::string> probe_question;  // absent: use the generic pool
  MeasureSpec measure;
};

std::vector<BenchmarkEntry> load_dataset(std::istream& in);
std::vector<BenchmarkEntry> load_dataset(const std::filesystem::path& path);
// Canonical JSONL: fixed key order, one entry per line.
void save_dataset(const std::vector<BenchmarkEntry>& entries, std::ostream& out);
std::string entry_to_json(const BenchmarkEntry& e);
BenchmarkEntry entry_from_json(std::string_view line, std::size_t line_no = 1);

struct ProbePool {
  std::vector<std::string> questions;
};

ProbePool load_probe_pool(const std::filesystem::path& path);
ProbePool parse_probe_pool(std::string_view json);
const std::string& sample_probe(const ProbePool& pool, std::uint64_t seed);

// Probe question for an entry: its own, or one drawn from the pool.
std::string probe_for(const BenchmarkEntry& entry, const ProbePool& pool, std::uint64_t seed);

// Shipped stopword lists (lowercase, NFC).
const std::vector<std::string>& stopwords(std::string_view language);
double stopword_ratio(std::string_view language, std::string_view text);

}  // namespace drift
