#include "drift/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_set>

#include "drift/errors.hpp"
#include "drift/random.hpp"
#include "drift/text.hpp"

namespace drift {
namespace {

using ojson = nlohmann::ordered_json;

// Function words only. Tokens that are common English words (a, on, in, as,
// was, so) are left out of the other lists so English text does not score as
// French/Spanish/German.
const std::vector<std::string> kFrench = {
    "je", "tu", "il", "elle", "nous", "vous", "ils", "elles", "me", "moi", "te", "toi", "lui", "leur", "leurs", "se",
    "le", "la", "les", "l", "un", "une", "des", "du", "de", "d", "au", "aux", "et", "ou", "où", "mais", "donc", "car",
    "ni", "que", "qu", "qui", "quoi", "quand", "ce", "c", "cet", "cette", "ces", "mon", "ma", "mes", "ton", "ta", "tes",
    "son", "sa", "ses", "notre", "nos", "votre", "vos", "est", "sont", "suis", "es", "sommes", "êtes", "ai", "avons",
    "avez", "ont", "été", "être", "avoir", "fait", "pas", "ne", "n", "plus", "très", "tout", "tous", "toute", "aussi",
    "comme", "si", "même", "dans", "sur", "pour", "par", "avec", "sans", "chez", "à", "y", "j", "m", "s", "t", "bien",
    "oui", "non", "voici", "cela", "ça"};

const std::vector<std::string> kSpanish = {
    "el", "la", "los", "las", "un", "una", "unos", "unas", "de", "del", "al", "y", "e", "o", "u", "que", "en", "es",
    "por", "para", "con", "sin", "sobre", "entre", "hasta", "desde", "no", "se", "lo", "su", "sus", "como", "más",
    "pero", "sí", "yo", "tú", "él", "ella", "nosotros", "vosotros", "ellos", "ellas", "me", "te", "mi", "mis", "tu",
    "tus", "este", "esta", "estos", "estas", "ese", "esa", "muy", "también", "hay", "está", "están", "estoy", "soy",
    "eres", "somos", "son", "ser", "estar", "cuando", "donde", "porque", "qué", "cómo", "ni", "le", "les", "nos",
    "todo", "todos", "ya", "aquí", "ahora", "bien", "tengo", "tiene", "hola", "gracias"};

const std::vector<std::string> kGerman = {
    "der", "die", "das", "den", "dem", "des", "ein", "eine", "einen", "einem", "einer", "und", "ist", "sind", "ich",
    "du", "er", "sie", "es", "wir", "ihr", "nicht", "mit", "zu", "von", "auf", "für", "im", "auch", "dass", "sich",
    "bin", "bist", "hat", "haben", "war", "wie", "aber", "oder", "wenn", "noch", "nur", "schon", "mein", "meine",
    "dein", "deine", "sehr", "wer", "wo", "kein", "keine", "mir", "mich", "dir", "dich", "uns", "euch", "ihm", "ihn",
    "bei", "nach", "aus", "über", "um", "werden", "wird", "kann", "hier", "jetzt", "dann", "doch", "ja", "nein",
    "gut", "danke", "heute", "gern"};

const std::vector<std::string> kEnglish = {
    "the", "a", "an", "and", "or", "but", "is", "are", "was", "were", "be", "been", "i", "you", "he", "she", "it",
    "we", "they", "me", "him", "her", "us", "them", "my", "your", "his", "its", "our", "their", "this", "that",
    "these", "those", "in", "on", "at", "to", "of", "for", "with", "from", "by", "about", "as", "not", "no", "do",
    "does", "did", "have", "has", "had", "will", "would", "can", "could", "what", "which", "who", "when", "where",
    "why", "how", "am", "if", "so", "very", "there", "here", "also", "just", "all", "some", "any", "yes", "thanks"};

const std::unordered_set<std::string>& stopword_set(std::string_view language) {
  static const std::unordered_set<std::string> fr(kFrench.begin(), kFrench.end());
  static const std::unordered_set<std::string> es(kSpanish.begin(), kSpanish.end());
  static const std::unordered_set<std::string> de(kGerman.begin(), kGerman.end());
  static const std::unordered_set<std::string> en(kEnglish.begin(), kEnglish.end());
  if (language == "fr") return fr;
  if (language == "es") return es;
  if (language == "de") return de;
  if (language == "en") return en;
  throw ConfigError("unknown stopword language '" + std::string(language) + "' (expected fr, es, de or en)");
}

bool contains_sequence(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
  if (needle.empty()) return false;
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

bool starts_with_sequence(const std::vector<std::string>& hay, const std::vector<std::string>& prefix) {
  return !prefix.empty() && hay.size() >= prefix.size() && std::equal(prefix.begin(), prefix.end(), hay.begin());
}

// Trims whitespace and trailing/leading sentence punctuation.
std::string strip_response(std::string_view s) {
  std::string t(text::trim(s));
  constexpr std::string_view punct = ".,;:!?\"'()[] \t\r\n";
  auto b = t.find_first_not_of(punct);
  if (b == std::string::npos) return {};
  auto e = t.find_last_not_of(punct);
  return t.substr(b, e - b + 1);
}

const std::regex& number_regex() {
  static const std::regex re(R"([-+]?\d+(?:\.\d+)?)");
  return re;
}

std::vector<std::string> string_list(const ojson& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j.at(key).is_array()) throw SchemaError(line, std::string("measure params need array '") + key + "'");
  std::vector<std::string> out;
  for (const auto& v : j.at(key)) {
    if (!v.is_string()) throw SchemaError(line, std::string("'") + key + "' must contain strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::string string_field(const ojson& j, const char* key, std::size_t line, bool required = true) {
  if (!j.contains(key)) {
    if (required) throw SchemaError(line, std::string("measure params need string '") + key + "'");
    return {};
  }
  if (!j.at(key).is_string()) throw SchemaError(line, std::string("'") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

void check_keys(const ojson& j, std::initializer_list<std::string_view> allowed, std::size_t line, const char* where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw SchemaError(line, std::string("unknown field '") + it.key() + "' in " + where);
    }
  }
}

MeasureSpec measure_from_json(const ojson& j, std::size_t line) {
  if (!j.is_object()) throw SchemaError(line, "measure must be an object");
  check_keys(j, {"type", "params"}, line, "measure");
  if (!j.contains("type") || !j.at("type").is_string()) throw SchemaError(line, "measure needs a string 'type'");
  auto type = parse_measure_type(j.at("type").get<std::string>());
  if (!type) throw SchemaError(line, "unknown measure type '" + j.at("type").get<std::string>() + "'");
  const ojson params = j.contains("params") ? j.at("params") : ojson::object();
  if (!params.is_object()) throw SchemaError(line, "measure params must be an object");

  MeasureSpec m;
  m.type = *type;
  switch (m.type) {
    case MeasureType::keyword_any:
    case MeasureType::keyword_all:
      check_keys(params, {"keywords"}, line, "measure params");
      m.keywords = string_list(params, "keywords", line);
      break;
    case MeasureType::regex_full:
    case MeasureType::regex_search:
      check_keys(params, {"pattern"}, line, "measure params");
      m.pattern = string_field(params, "pattern", line);
      break;
    case MeasureType::choice_set:
      check_keys(params, {"choices"}, line, "measure params");
      m.choices = string_list(params, "choices", line);
      break;
    case MeasureType::prefix_suffix:
      check_keys(params, {"prefix", "suffix"}, line, "measure params");
      m.prefix = string_field(params, "prefix", line, false);
      m.suffix = string_field(params, "suffix", line, false);
      break;
    case MeasureType::stopword_language:
      check_keys(params, {"language", "threshold"}, line, "measure params");
      m.language = string_field(params, "language", line);
      if (params.contains("threshold")) {
        if (!params.at("threshold").is_number()) throw SchemaError(line, "'threshold' must be a number");
        m.threshold = params.at("threshold").get<double>();
      }
      break;
    case MeasureType::numeric_equals:
      check_keys(params, {"expected", "tolerance"}, line, "measure params");
      if (!params.contains("expected") || !params.at("expected").is_number()) throw SchemaError(line, "measure params need number 'expected'");
      m.expected = params.at("expected").get<double>();
      if (params.contains("tolerance")) {
        if (!params.at("tolerance").is_number()) throw SchemaError(line, "'tolerance' must be a number");
        m.tolerance = params.at("tolerance").get<double>();
      }
      break;
  }
  try {
    m.validate();
  } catch (const ConfigError& e) {
    throw SchemaError(line, e.what());
  }
  return m;
}

ojson measure_to_json(const MeasureSpec& m) {
  ojson params = ojson::object();
  switch (m.type) {
    case MeasureType::keyword_any:
    case MeasureType::keyword_all: params["keywords"] = m.keywords; break;
    case MeasureType::regex_full:
    case MeasureType::regex_search: params["pattern"] = m.pattern; break;
    case MeasureType::choice_set: params["choices"] = m.choices; break;
    case MeasureType::prefix_suffix:
      params["prefix"] = m.prefix;
      params["suffix"] = m.suffix;
      break;
    case MeasureType::stopword_language:
      params["language"] = m.language;
      params["threshold"] = m.threshold;
      break;
    case MeasureType::numeric_equals:
      params["expected"] = m.expected;
      params["tolerance"] = m.tolerance;
      break;
  }
  ojson j;
  j["type"] = std::string(measure_name(m.type));
  j["params"] = std::move(params);
  return j;
}

}  // namespace

std::string_view category_name(Category c) {
  switch (c) {
    case Category::multi_choice: return "multi_choice";
    case Category::character: return "character";
    case Category::format: return "format";
    case Category::memorization: return "memorization";
    case Category::language: return "language";
  }
  return "language";
}

std::optional<Category> parse_category(std::string_view s) {
  for (Category c : kAllCategories)
    if (category_name(c) == s) return c;
  return std::nullopt;
}

std::string_view measure_name(MeasureType t) {
  switch (t) {
    case MeasureType::keyword_any: return "keyword_any";
    case MeasureType::keyword_all: return "keyword_all";
    case MeasureType::regex_full: return "regex_full";
    case MeasureType::regex_search: return "regex_search";
    case MeasureType::choice_set: return "choice_set";
    case MeasureType::prefix_suffix: return "prefix_suffix";
    case MeasureType::stopword_language: return "stopword_language";
    case MeasureType::numeric_equals: return "numeric_equals";
  }
  return "keyword_any";
}

std::optional<MeasureType> parse_measure_type(std::string_view s) {
  for (auto t : {MeasureType::keyword_any, MeasureType::keyword_all, MeasureType::regex_full, MeasureType::regex_search,
                 MeasureType::choice_set, MeasureType::prefix_suffix, MeasureType::stopword_language,
                 MeasureType::numeric_equals}) {
    if (measure_name(t) == s) return t;
  }
  return std::nullopt;
}

void MeasureSpec::validate() const {
  switch (type) {
    case MeasureType::keyword_any:
    case MeasureType::keyword_all:
      if (keywords.empty()) throw ConfigError("keyword list is empty");
      for (const auto& k : keywords)
        if (text::words(k).empty()) throw ConfigError("keyword '" + k + "' has no word characters");
      break;
    case MeasureType::regex_full:
    case MeasureType::regex_search:
      try {
        std::regex re(pattern);
      } catch (const std::regex_error& e) {
        throw ConfigError("pattern does not compile: " + pattern);
      }
      break;
    case MeasureType::choice_set:
      if (choices.empty()) throw ConfigError("choice list is empty");
      break;
    case MeasureType::prefix_suffix:
      if (prefix.empty() && suffix.empty()) throw ConfigError("prefix_suffix needs a prefix or a suffix");
      break;
    case MeasureType::stopword_language:
      stopword_set(language);
      if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("stopword threshold must lie in (0, 1)");
      break;
    case MeasureType::numeric_equals:
      if (!std::isfinite(expected)) throw ConfigError("expected value must be finite");
      if (!(tolerance >= 0.0) || !std::isfinite(tolerance)) throw ConfigError("tolerance must be finite and nonnegative");
      break;
  }
}

double stopword_ratio(std::string_view language, std::string_view text) {
  const auto& set = stopword_set(language);
  auto ws = text::words(text);
  if (ws.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& w : ws) hits += set.count(w);
  return static_cast<double>(hits) / static_cast<double>(ws.size());
}

const std::vector<std::string>& stopwords(std::string_view language) {
  if (language == "fr") return kFrench;
  if (language == "es") return kSpanish;
  if (language == "de") return kGerman;
  if (language == "en") return kEnglish;
  throw ConfigError("unknown stopword language '" + std::string(language) + "'");
}

double evaluate_measure(const MeasureSpec& spec, std::string_view response) {
  try {
    switch (spec.type) {
      case MeasureType::keyword_any:
      case MeasureType::keyword_all: {
        auto hay = text::words(response);
        std::size_t found = 0;
        for (const auto& k : spec.keywords) found += contains_sequence(hay, text::words(k)) ? 1 : 0;
        if (spec.type == MeasureType::keyword_any) return found > 0 ? 1.0 : 0.0;
        return static_cast<double>(found) / static_cast<double>(spec.keywords.size());
      }
      case MeasureType::regex_full:
      case MeasureType::regex_search: {
        const std::regex re(spec.pattern);
        const std::string s(response);
        bool ok = spec.type == MeasureType::regex_full ? std::regex_match(s, re) : std::regex_search(s, re);
        return ok ? 1.0 : 0.0;
      }
      case MeasureType::choice_set: {
        // The answer is the leading word run of the response.
        const auto hay = text::words(response);
        const std::string r = text::fold(strip_response(text::nfc(response)));
        for (const auto& c : spec.choices) {
          const auto cw = text::words(c);
          if (cw.empty() ? text::fold(c) == r : starts_with_sequence(hay, cw)) return 1.0;
        }
        return 0.0;
      }
      case MeasureType::prefix_suffix: {
        const std::string r = text::fold(text::trim(text::nfc(response)));
        const std::string p = text::fold(spec.prefix), s = text::fold(spec.suffix);
        const bool ok = r.size() >= p.size() + s.size() && r.starts_with(p) && r.ends_with(s);
        return ok ? 1.0 : 0.0;
      }
      case MeasureType::stopword_language:
        return stopword_ratio(spec.language, response) >= spec.threshold ? 1.0 : 0.0;
      case MeasureType::numeric_equals: {
        const std::string s = text::nfc(response);
        std::smatch m;
        if (!std::regex_search(s, m, number_regex())) return 0.0;
        const double v = std::stod(m.str());
        return std::abs(v - spec.expected) <= spec.tolerance ? 1.0 : 0.0;
      }
    }
  } catch (const std::exception&) {
    // Pathological input (regex stack exhaustion, out-of-range numbers) scores 0.
    return 0.0;
  }
  return 0.0;
}

BenchmarkEntry entry_from_json(std::string_view line, std::size_t line_no) {
  ojson j;
  try {
    j = ojson::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(line_no, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw SchemaError(line_no, "entry must be a JSON object");
  check_keys(j, {"id", "category", "system_prompt", "probe_question", "measure"}, line_no, "entry");
  auto str = [&](const char* key) {
    if (!j.contains(key) || !j.at(key).is_string()) throw SchemaError(line_no, std::string("entry needs string '") + key + "'");
    return j.at(key).get<std::string>();
  };
  BenchmarkEntry e;
  e.id = str("id");
  if (e.id.empty()) throw SchemaError(line_no, "entry id is empty");
  const std::string cat = str("category");
  auto c = parse_category(cat);
  if (!c) throw SchemaError(line_no, "unknown category '" + cat + "'");
  e.category = *c;
  e.system_prompt = str("system_prompt");
  if (j.contains("probe_question") && !j.at("probe_question").is_null()) {
    if (!j.at("probe_question").is_string()) throw SchemaError(line_no, "probe_question must be a string or null");
    e.probe_question = j.at("probe_question").get<std::string>();
  }
  if (!j.contains("measure")) throw SchemaError(line_no, "entry needs a measure");
  e.measure = measure_from_json(j.at("measure"), line_no);
  return e;
}

std::string entry_to_json(const BenchmarkEntry& e) {
  ojson j;
  j["id"] = e.id;
  j["category"] = std::string(category_name(e.category));
  j["system_prompt"] = e.system_prompt;
  j["probe_question"] = e.probe_question ? ojson(*e.probe_question) : ojson(nullptr);
  j["measure"] = measure_to_json(e.measure);
  return j.dump();
}

std::vector<BenchmarkEntry> load_dataset(std::istream& in) {
  std::vector<BenchmarkEntry> out;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    auto e = entry_from_json(line, line_no);
    if (!ids.insert(e.id).second) throw SchemaError(line_no, "duplicate id '" + e.id + "'");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<BenchmarkEntry> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path.string());
  return load_dataset(in);
}

void save_dataset(const std::vector<BenchmarkEntry>& entries, std::ostream& out) {
  for (const auto& e : entries) out << entry_to_json(e) << '\n';
}

ProbePool parse_probe_pool(std::string_view json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("probe pool is not valid JSON: ") + e.what());
  }
  if (!j.is_array()) throw ConfigError("probe pool must be a JSON array of strings");
  ProbePool pool;
  for (const auto& q : j) {
    if (!q.is_string()) throw ConfigError("probe pool must be a JSON array of strings");
    pool.questions.push_back(q.get<std::string>());
  }
  if (pool.questions.empty()) throw ConfigError("probe pool is empty");
  return pool;
}

ProbePool load_probe_pool(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open probe pool " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_probe_pool(ss.str());
}

const std::string& sample_probe(const ProbePool& pool, std::uint64_t seed) {
  if (pool.questions.empty()) throw DomainError("probe pool is empty");
  Rng rng = make_rng(derive_seed(seed, {hash_tag("probe-pool")}));
  std::uniform_int_distribution<std::size_t> pick(0, pool.questions.size() - 1);
  return pool.questions[pick(rng)];
}

std::string probe_for(const BenchmarkEntry& entry, const ProbePool& pool, std::uint64_t seed) {
  if (entry.probe_question) return *entry.probe_question;
  return sample_probe(pool, seed);
}

}  // namespace drift
