#include "drift/desk_model.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <set>
#include <string_view>

#include "drift/errors.hpp"
#include "drift/random.hpp"

namespace drift {

namespace {

constexpr std::size_t kDim = 64;
constexpr std::size_t kHeadDim = 64;
constexpr std::size_t kHidden = 256;

// Feature layout.
constexpr std::size_t kConst = 0;
constexpr std::size_t kLang = 1;   // fr, es, de, en
constexpr std::size_t kStyle = 5;  // pirate, cat, robot, cowboy, chef
constexpr std::size_t kDir = 10;
constexpr std::size_t kTarget = 11;  // fr, es, de, then the five styles
constexpr std::size_t kChoice = 19;
constexpr std::size_t kBias = 20;
constexpr std::size_t kSpecial = 21;
constexpr std::size_t kIdentity = 22;
constexpr std::size_t kFeatures = 63;
constexpr std::size_t kIdentityDims = kFeatures - kIdentity;
constexpr std::size_t kTargets = 8;

enum Lang : unsigned { kFr = 1, kEs = 2, kDe = 4, kEn = 8 };

enum class Kind { word, special, eot, punct, letter, digit };

struct TokenSpec {
  std::string text;
  Kind kind = Kind::word;
  unsigned langs = 0;
  unsigned stop_langs = 0;
  int style = -1;
  int target = -1;
  bool directive = false;
  bool choice = false;
};

constexpr std::string_view kEnglishStop[] = {
    "the", "a", "an", "and", "or", "but", "is", "are", "was", "were", "be", "been", "I", "you", "he", "she", "it", "we",
    "they", "me", "him", "her", "us", "them", "my", "your", "his", "its", "our", "their", "this", "that", "these",
    "those", "in", "on", "at", "to", "of", "for", "with", "from", "by", "about", "as", "not", "no", "do", "does", "did",
    "have", "has", "had", "will", "would", "can", "could", "what", "which", "who", "when", "where", "why", "how", "am",
    "if", "so", "very", "there", "here", "also", "just", "all", "some", "any", "yes", "thanks"};

constexpr std::string_view kEnglish[] = {
    "after", "always", "answer", "anyone", "asks", "back", "best", "bit", "book", "capital", "city", "color", "comes",
    "cooking", "dash", "day", "describe", "dog", "each", "eat", "else", "end", "english", "ever", "every", "false",
    "favorite", "food", "friend", "fun", "good", "got", "greet", "hello", "hey", "hi", "home", "just", "learn", "legs",
    "letter", "letters", "like", "line", "list", "live", "makes", "many", "meow", "morning", "name", "never", "new",
    "nothing", "number", "old", "one", "only", "password", "plans", "please", "question", "read", "relax", "reply",
    "respond", "say", "sea", "season", "secret", "single", "sky", "sleep", "something", "speak", "speaks", "start",
    "starts", "talk", "talks", "tell", "then", "think", "today", "travel", "true", "tutor", "up", "walk", "way",
    "weather", "weekend", "well", "west", "word", "years", "ok", "sure", "great", "nice", "really", "love", "know",
    "want", "go", "going", "see", "time", "people", "place", "thing", "things", "work", "music", "movie", "tomorrow",
    "yesterday", "sun", "rain", "happy", "tired", "because", "should", "more", "too", "now", "yeah", "oh", "thank",
    "night", "water", "tea", "coffee", "park", "town", "house", "family", "school", "games", "play", "run", "story",
    "idea", "maybe", "sometimes", "lot", "little", "big", "small", "long", "week", "year", "let", "make", "feel",
    "sounds", "fine", "agree", "right", "kind", "help", "ask", "again", "first", "last", "other", "same", "look",
    "friends", "garden", "beach", "trip", "lunch", "dinner", "breakfast", "cake", "fruit", "summer", "winter", "spring",
    "autumn", "cold", "warm", "hot", "quiet", "busy", "fun", "interesting", "favourite", "song", "songs", "films", "art"};

constexpr std::string_view kFrenchStop[] = {
    "je", "tu", "il", "elle", "nous", "vous", "ils", "elles", "me", "moi", "te", "toi", "lui", "leur", "leurs", "se",
    "le", "la", "les", "l", "un", "une", "des", "du", "de", "d", "au", "aux", "et", "ou", "où", "mais", "donc", "car",
    "ni", "que", "qu", "qui", "quoi", "quand", "ce", "c", "cet", "cette", "ces", "mon", "ma", "mes", "ton", "ta", "tes",
    "son", "sa", "ses", "notre", "nos", "votre", "vos", "est", "sont", "suis", "es", "sommes", "êtes", "ai", "avons",
    "avez", "ont", "été", "être", "avoir", "fait", "pas", "ne", "n", "plus", "très", "tout", "tous", "toute", "aussi",
    "comme", "si", "même", "dans", "sur", "pour", "par", "avec", "sans", "chez", "à", "y", "j", "m", "s", "t", "bien",
    "oui", "non", "voici", "cela", "ça"};
constexpr std::string_view kFrench[] = {"bonjour", "merci", "beaucoup", "musée", "londres", "journée", "temps",
                                        "soleil", "manger", "pain", "fromage", "ami", "amis", "maison", "ville", "beau",
                                        "aime", "pense", "veux", "faire", "aller", "vais", "voir", "grand", "petit",
                                        "livre", "chien", "rouge", "vert", "bleu", "aujourd", "hui", "salut"};

constexpr std::string_view kSpanishStop[] = {
    "el", "la", "los", "las", "un", "una", "unos", "unas", "de", "del", "al", "y", "e", "o", "u", "que", "en", "es",
    "por", "para", "con", "sin", "sobre", "entre", "hasta", "desde", "no", "se", "lo", "su", "sus", "como", "más",
    "pero", "sí", "yo", "tú", "él", "ella", "nosotros", "vosotros", "ellos", "ellas", "me", "te", "mi", "mis", "tu",
    "tus", "este", "esta", "estos", "estas", "ese", "esa", "muy", "también", "hay", "está", "están", "estoy", "soy",
    "eres", "somos", "son", "ser", "estar", "cuando", "donde", "porque", "qué", "cómo", "ni", "le", "les", "nos",
    "todo", "todos", "ya", "aquí", "ahora", "bien", "tengo", "tiene", "hola", "gracias"};
constexpr std::string_view kSpanish[] = {"casa", "ciudad", "amigo", "comida", "bueno", "buena", "día", "hoy",
                                         "tiempo", "sol", "libro", "gato", "perro", "quiero", "puedo", "vamos",
                                         "mañana", "gusta", "hablar", "hablo", "verde", "azul", "mundo", "vida"};

constexpr std::string_view kGermanStop[] = {
    "der", "die", "das", "den", "dem", "des", "ein", "eine", "einen", "einem", "einer", "und", "ist", "sind", "ich",
    "du", "er", "sie", "es", "wir", "ihr", "nicht", "mit", "zu", "von", "auf", "für", "im", "auch", "dass", "sich",
    "bin", "bist", "hat", "haben", "war", "wie", "aber", "oder", "wenn", "noch", "nur", "schon", "mein", "meine",
    "dein", "deine", "sehr", "wer", "wo", "kein", "keine", "mir", "mich", "dir", "dich", "uns", "euch", "ihm", "ihn",
    "bei", "nach", "aus", "über", "um", "werden", "wird", "kann", "hier", "jetzt", "dann", "doch", "ja", "nein",
    "gut", "danke", "heute", "gern"};
constexpr std::string_view kGerman[] = {"hallo", "haus", "stadt", "freund", "essen", "brot", "tag", "zeit",
                                        "sonne", "buch", "katze", "hund", "möchte", "gehen", "sehen", "schön",
                                        "klein", "sprechen", "spreche", "grün", "blau", "welt", "leben"};

// Persona words, by style index.
constexpr std::string_view kStyleWords[5][6] = {
    {"arr", "matey", "ahoy", "treasure", "ship", "sail"},
    {"meow", "purr", "nap", "mouse", "whiskers", "paws"},
    {"beep", "boop", "circuits", "compute", "processing", "robots"},
    {"howdy", "partner", "yeehaw", "horse", "ranch", "saddle"},
    {"cook", "recipe", "kitchen", "delicious", "spices", "taste"}};

// Directive tokens: text, target index (-1 for pure facts copied by identity).
constexpr std::pair<std::string_view, int> kDirectives[] = {
    {"french", 0}, {"français", 0}, {"spanish", 1}, {"español", 1}, {"german", 2}, {"deutsch", 2},
    {"pirate", 3}, {"cat", 4},       {"robot", 5},   {"cowboy", 6},  {"chef", 7},   {"blue", -1},
    {"42", -1},    {"bob", -1},      {"paris", -1},  {"green", -1},  {"DONE", -1}};

constexpr std::string_view kPunct[] = {".", ",", "!", "?", ":", ";", "'", "\"", "(", ")", "-"};

std::vector<TokenSpec> make_specs() {
  std::vector<TokenSpec> specs;
  std::map<std::string, std::size_t> index;
  auto get = [&](std::string_view text, Kind kind) -> TokenSpec& {
    auto it = index.find(std::string(text));
    if (it != index.end()) return specs[it->second];
    index.emplace(std::string(text), specs.size());
    specs.push_back(TokenSpec{std::string(text), kind});
    return specs.back();
  };
  for (std::string_view s : {"<unk>", "<sys>", "<user>", "<agent>"}) get(s, Kind::special);
  get("<eot>", Kind::eot);
  for (auto p : kPunct) get(p, Kind::punct);
  for (char c = 'A'; c <= 'Z'; ++c) {
    auto& t = get(std::string(1, c), Kind::letter);
    t.choice = c <= 'D';
    if (c == 'I') {
      t.kind = Kind::word;
      t.langs |= kEn;
      t.stop_langs |= kEn;
    }
  }
  for (int d = 0; d <= 20; ++d) get(std::to_string(d), Kind::digit);
  get("42", Kind::digit);
  auto words = [&](auto& list, unsigned lang, bool stop) {
    for (auto w : list) {
      auto& t = get(w, Kind::word);
      if (t.kind != Kind::word) continue;
      t.langs |= lang;
      if (stop) t.stop_langs |= lang;
    }
  };
  words(kEnglishStop, kEn, true);
  words(kEnglish, kEn, false);
  words(kFrenchStop, kFr, true);
  words(kFrench, kFr, false);
  words(kSpanishStop, kEs, true);
  words(kSpanish, kEs, false);
  words(kGermanStop, kDe, true);
  words(kGerman, kDe, false);
  for (int s = 0; s < 5; ++s)
    for (auto w : kStyleWords[s]) {
      auto& t = get(w, Kind::word);
      t.style = s;
    }
  for (auto [w, target] : kDirectives) {
    auto& t = get(w, Kind::word);
    t.directive = true;
    t.target = target;
    if (t.langs == 0 && t.kind == Kind::word) t.langs = kEn;
  }
  return specs;
}

const std::vector<TokenSpec>& specs() {
  static const std::vector<TokenSpec> s = make_specs();
  return s;
}

double neutral_bias(const TokenSpec& t, const DeskModelConfig& c) {
  switch (t.kind) {
    case Kind::special: return c.bias_special;
    case Kind::eot: return c.bias_eot;
    case Kind::punct: return (t.text == "." || t.text == ",") ? c.bias_punct : (t.text == "!" || t.text == "?") ? c.bias_punct - 1.0 : c.bias_punct - 4.0;
    case Kind::letter: return t.choice ? c.bias_choice : c.bias_letter;
    case Kind::digit: return c.bias_digit;
    case Kind::word: break;
  }
  if (t.style >= 0) return c.bias_style;
  if (t.directive) return c.bias_directive;
  if (t.langs & kEn) return (t.stop_langs & kEn) ? c.bias_english_stop : c.bias_english;
  return t.stop_langs ? c.bias_foreign_stop : c.bias_foreign;
}

// Raw feature vector without the bias coordinate.
Vec base_features(const TokenSpec& t, const Vec& identity, double lang_weight) {
  Vec f = Vec::Zero(kFeatures);
  f[kConst] = 1.0;
  const unsigned bits[4] = {kFr, kEs, kDe, kEn};
  int n = 0;
  for (unsigned b : bits) n += (t.langs & b) ? 1 : 0;
  for (int i = 0; i < 4; ++i)
    if (t.langs & bits[i]) f[kLang + i] = lang_weight / std::sqrt(static_cast<double>(n));
  if (t.style >= 0) f[kStyle + t.style] = lang_weight;
  if (t.directive) f[kDir] = 1.0;
  if (t.target >= 0) f[kTarget + t.target] = 1.0;
  if (t.choice) f[kChoice] = 1.0;
  if (t.kind == Kind::special || t.kind == Kind::eot) f[kSpecial] = 1.0;
  f.segment(kIdentity, kIdentityDims) = identity;
  return f;
}

// Orthonormal D x 63 basis of the mean-zero subspace, randomly rotated.
Mat mean_zero_basis(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat g(kDim, kFeatures);
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = n(rng);
  Mat a(kDim, kFeatures + 1);
  a.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(kDim)));
  a.rightCols(kFeatures) = g;
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ() * Mat::Identity(kDim, kFeatures + 1);
  return q.rightCols(kFeatures);
}

Mat random_matrix(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = n(rng);
  return m;
}

LayerNorm unit_norm() { return LayerNorm{Vec::Ones(kDim), Vec::Zero(kDim)}; }

struct Fixed {
  Mat basis;                     // D x 63
  std::vector<Vec> identity;     // per token, kIdentityDims
  std::vector<Mat> random_qk;    // layer-1 heads: q0, k0, q1, k1
  std::vector<Mat> random_vo;    // v0, o0, v1, o1
  Mat mlp1_up, mlp1_down, mlp2_up, mlp2_down;
};

Fixed draw_fixed(const DeskModelConfig& c, std::size_t vocab) {
  Fixed f;
  Rng rng = make_rng(c.seed);
  f.basis = mean_zero_basis(rng);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t i = 0; i < vocab; ++i) {
    Vec v(kIdentityDims);
    for (auto& x : v) x = n(rng);
    f.identity.push_back(v.normalized());
  }
  const double qk = 1.0 / std::sqrt(static_cast<double>(kDim));
  for (int i = 0; i < 4; ++i) f.random_qk.push_back(random_matrix(kHeadDim, kDim, qk, rng));
  for (int i = 0; i < 2; ++i) {
    f.random_vo.push_back(random_matrix(kHeadDim, kDim, qk, rng));
    f.random_vo.push_back(random_matrix(kDim, kHeadDim, qk, rng));
  }
  f.mlp1_up = random_matrix(kHidden, kDim, qk, rng);
  f.mlp1_down = random_matrix(kDim, kHidden, 1.0 / std::sqrt(static_cast<double>(kHidden)), rng);
  f.mlp2_up = random_matrix(kHidden, kDim, qk, rng);
  f.mlp2_down = random_matrix(kDim, kHidden, 1.0 / std::sqrt(static_cast<double>(kHidden)), rng);
  return f;
}

// Coordinate i of the normalized token vector, averaged over `pick`.
template <class Pred>
double mean_coord(const std::vector<Vec>& n1, std::size_t i, Pred pick) {
  double s = 0.0;
  int k = 0;
  for (std::size_t t = 0; t < n1.size(); ++t)
    if (pick(t)) {
      s += n1[t][i];
      ++k;
    }
  return k ? s / k : 1.0;
}

ModelWeights assemble(const DeskModelConfig& c, const Fixed& fx, const std::vector<Vec>& feats) {
  const auto& sp = specs();
  const std::size_t V = sp.size();
  const Mat& Q = fx.basis;
  const double sqrt_d = std::sqrt(static_cast<double>(kDim));

  ModelWeights w;
  w.dims = ModelDims{V, kDim, kHeadDim, 2, 2, c.max_context};
  w.embedding.resize(static_cast<Eigen::Index>(V), kDim);
  std::vector<Vec> fhat(V);
  for (std::size_t t = 0; t < V; ++t) {
    fhat[t] = feats[t].normalized();
    w.embedding.row(static_cast<Eigen::Index>(t)) = (Q * fhat[t]).transpose();
  }
  for (const auto& s : sp) w.vocab.push_back(s.text);

  // Layer 1: weak random heads, suppression MLP.
  LayerWeights l1;
  for (int h = 0; h < 2; ++h) {
    HeadWeights hw;
    hw.query = fx.random_qk[2 * h];
    hw.key = fx.random_qk[2 * h + 1];
    hw.value = fx.random_vo[2 * h];
    hw.output = fx.random_vo[2 * h + 1] * c.random_head_scale;
    l1.heads.push_back(std::move(hw));
  }
  std::vector<std::size_t> suppressed;
  for (std::size_t i = kLang; i < kDir; ++i) suppressed.push_back(i);
  for (std::size_t i : {kBias, kSpecial}) suppressed.push_back(i);
  for (std::size_t i = kIdentity; i < kFeatures; ++i) suppressed.push_back(i);
  FeedForward f1{unit_norm(), unit_norm(), fx.mlp1_up, Vec::Zero(kHidden), fx.mlp1_down * c.random_mlp_scale, Vec::Zero(kDim)};
  // g(z) - g(-z) = z for GELU, so each pair of hidden units is one linear channel.
  const double kappa = -c.suppression / sqrt_d;
  for (std::size_t j = 0; j < suppressed.size(); ++j) {
    const auto col = Q.col(static_cast<Eigen::Index>(suppressed[j]));
    const auto a = static_cast<Eigen::Index>(2 * j), b = a + 1;
    f1.up.row(a) = col.transpose();
    f1.up.row(b) = -col.transpose();
    f1.down.col(a) = kappa * col;
    f1.down.col(b) = -kappa * col;
  }
  l1.ffn = std::move(f1);

  // Normalized layer-2 inputs of each token on its own.
  std::vector<Vec> n1(V);
  for (std::size_t t = 0; t < V; ++t) {
    Vec h = fhat[t];
    for (std::size_t i : suppressed) h[static_cast<Eigen::Index>(i)] *= 1.0 - c.suppression;
    n1[t] = sqrt_d * h / h.norm();
  }
  const double c_const = mean_coord(n1, kConst, [&](std::size_t t) { return sp[t].kind == Kind::word; });
  const double c_dir = mean_coord(n1, kDir, [&](std::size_t t) { return sp[t].target >= 0 && sp[t].target < 3; });
  const double c_choice = mean_coord(n1, kChoice, [&](std::size_t t) { return sp[t].choice; });
  double c_ident = 0.0;
  int nd = 0;
  for (std::size_t t = 0; t < V; ++t) {
    if (!sp[t].directive) continue;
    c_ident += n1[t].segment(kIdentity, kIdentityDims).norm() / fhat[t].segment(kIdentity, kIdentityDims).norm();
    ++nd;
  }
  c_ident /= nd;

  LayerWeights l2;
  auto keyed_head = [&](std::size_t key_feature, double score, double key_coord) {
    HeadWeights hw;
    hw.query = Mat::Zero(kHeadDim, kDim);
    hw.key = Mat::Zero(kHeadDim, kDim);
    const double scale = std::sqrt(score * std::sqrt(static_cast<double>(kHeadDim)) / (c_const * key_coord));
    hw.query.row(0) = scale * Q.col(kConst).transpose();
    hw.key.row(0) = scale * Q.col(static_cast<Eigen::Index>(key_feature)).transpose();
    hw.value = Mat::Zero(kHeadDim, kDim);
    hw.output = Mat::Zero(kDim, kHeadDim);
    return hw;
  };
  HeadWeights h0 = keyed_head(kDir, c.directive_score, c_dir);
  for (std::size_t i = 0; i < kTargets; ++i) {
    const auto in = static_cast<Eigen::Index>(kTarget + i);
    const auto out = static_cast<Eigen::Index>(i < 3 ? kLang + i : kStyle + (i - 3));
    h0.value.row(static_cast<Eigen::Index>(i)) = Q.col(in).transpose();
    // n1 target coordinate of a directive is about sqrt(D)/|h|; undo it.
    double coord = 0.0;
    int k = 0;
    for (std::size_t t = 0; t < V; ++t)
      if (sp[t].target == static_cast<int>(i)) {
        coord += n1[t][in];
        ++k;
      }
    coord = k ? coord / k : 1.0;
    h0.output.col(static_cast<Eigen::Index>(i)) = (c.target_gain / coord) * Q.col(out);
  }
  for (std::size_t j = 0; j < kIdentityDims; ++j) {
    const auto in = static_cast<Eigen::Index>(kIdentity + j);
    const auto r = static_cast<Eigen::Index>(kTargets + j);
    h0.value.row(r) = Q.col(in).transpose();
    h0.output.col(r) = (c.identity_gain / c_ident) * Q.col(in);
  }
  HeadWeights h1 = keyed_head(kChoice, c.choice_score, c_choice);
  h1.value.row(0) = Q.col(kChoice).transpose();
  h1.output.col(0) = (c.choice_gain / c_choice) * Q.col(kChoice);
  for (std::size_t j = 0; j < kIdentityDims; ++j) {
    const auto in = static_cast<Eigen::Index>(kIdentity + j);
    const auto r = static_cast<Eigen::Index>(1 + j);
    h1.value.row(r) = Q.col(in).transpose();
    h1.output.col(r) = (c.identity_gain / c_ident) * Q.col(in);
  }
  l2.heads.push_back(std::move(h0));
  l2.heads.push_back(std::move(h1));
  l2.ffn = FeedForward{unit_norm(), unit_norm(), fx.mlp2_up, Vec::Zero(kHidden), fx.mlp2_down * c.random_mlp_scale, Vec::Zero(kDim)};

  w.layers.push_back(std::move(l1));
  w.layers.push_back(std::move(l2));
  w.final_norm = LayerNorm{Vec::Constant(kDim, c.logit_scale / sqrt_d), Vec::Zero(kDim)};
  return w;
}

constexpr double kBiasScale = 240.0;

}  // namespace

const std::vector<std::string>& desk_vocabulary() {
  static const std::vector<std::string> v = [] {
    std::vector<std::string> out;
    for (const auto& s : specs()) out.push_back(s.text);
    return out;
  }();
  return v;
}

ModelWeights build_desk_model(const DeskModelConfig& c) {
  const auto& sp = specs();
  const std::size_t V = sp.size();
  const Fixed fx = draw_fixed(c, V);

  std::vector<Vec> base(V);
  std::vector<double> target(V), bias(V);
  for (std::size_t t = 0; t < V; ++t) {
    base[t] = base_features(sp[t], fx.identity[t], c.lang_weight);
    target[t] = neutral_bias(sp[t], c);
    bias[t] = target[t];
  }
  auto features = [&] {
    std::vector<Vec> f(V);
    for (std::size_t t = 0; t < V; ++t) {
      // Bias coordinate x with x / sqrt(R^2 + x^2) = b / kBiasScale.
      const double r = std::clamp(bias[t] / kBiasScale, -0.95, 0.95);
      f[t] = base[t];
      f[t][kBias] = r * base[t].norm() / std::sqrt(1.0 - r * r);
    }
    return f;
  };

  // Neutral position: no directive or choice anywhere in the context.
  const std::vector<std::string> neutral = {"<user>", "hello", "<eot>", "<agent>"};
  ModelWeights w;
  for (int round = 0;; ++round) {
    w = assemble(c, fx, features());
    w.final_norm->bias = kBiasScale * fx.basis.col(kBias);
    if (round >= c.calibration_rounds) break;
    DecoderState st(w, {nullptr, 0, RecordMode::none, false});
    for (const auto& s : neutral) {
      const auto it = std::find(w.vocab.begin(), w.vocab.end(), s);
      st.push_token(static_cast<TokenId>(it - w.vocab.begin()));
    }
    const Vec logits = model_logits(w, st.output());
    double off = 0.0;
    int n = 0;
    for (std::size_t t = 0; t < V; ++t)
      if (sp[t].kind == Kind::word) {
        off += logits[static_cast<Eigen::Index>(t)] - target[t];
        ++n;
      }
    off /= n;
    for (std::size_t t = 0; t < V; ++t) bias[t] += target[t] - (logits[static_cast<Eigen::Index>(t)] - off);
  }
  w.validate();
  return w;
}

std::shared_ptr<const ModelWeights> desk_model() {
  static std::once_flag once;
  static std::shared_ptr<const ModelWeights> model;
  std::call_once(once, [] { model = std::make_shared<const ModelWeights>(build_desk_model()); });
  return model;
}

}  // namespace drift
