#include "drift/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "drift/errors.hpp"
#include "drift/interventions.hpp"

namespace drift {
namespace {

constexpr std::string_view kMagic = "DRIFTW1";
constexpr double kHookSumTolerance = 1e-6;

bool all_finite(const Mat& m) { return m.allFinite(); }
bool all_finite(const Vec& v) { return v.allFinite(); }

void expect_shape(const Mat& m, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                     std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
  if (!all_finite(m)) throw NonFiniteError(what + " contains a non-finite entry");
}

void expect_size(const Vec& v, Eigen::Index n, const std::string& what) {
  if (v.size() != n) {
    throw ShapeError(what + ": expected length " + std::to_string(n) + ", got " + std::to_string(v.size()));
  }
  if (!all_finite(v)) throw NonFiniteError(what + " contains a non-finite entry");
}

double gelu(double x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

// Softmax of k_j . q / sqrt(d) over already-projected keys.
std::vector<double> scaled_dot_softmax(const Vec& q, std::span<const Vec> keys) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size()));
  std::vector<double> scores(keys.size());
  for (std::size_t j = 0; j < keys.size(); ++j) scores[j] = keys[j].dot(q) * scale;
  return softmax(scores);
}

void validate_hook_row(std::span<const double> row, std::size_t expected, const HookSite& site) {
  auto where = [&] {
    return " (layer " + std::to_string(site.layer) + ", head " + std::to_string(site.head) + ", step " +
           std::to_string(site.step) + ")";
  };
  if (row.size() != expected) {
    throw InvalidDistributionError("attention hook returned " + std::to_string(row.size()) + " entries, expected " +
                                   std::to_string(expected) + where());
  }
  double sum = 0.0;
  for (double a : row) {
    if (!std::isfinite(a) || a < 0.0) throw InvalidDistributionError("attention hook returned a negative or non-finite weight" + where());
    sum += a;
  }
  if (std::abs(sum - 1.0) > kHookSumTolerance) {
    throw InvalidDistributionError("attention hook row sums to " + std::to_string(sum) + where());
  }
}

struct HeadCacheRef {
  std::vector<Vec>* keys;
  std::vector<Vec>* values;
};

// One layer at one position. Appends this position's key/value to the caches
// and returns h^l given h^{l-1}. This is the only place attention is computed
// inside the network.
Vec layer_step(const LayerWeights& layer, ModelMode mode, const Vec& h, std::span<HeadCacheRef> caches, std::size_t layer_index,
               std::size_t step, const AttentionHook* hook, std::size_t system_len, std::vector<AttentionRow>* rows) {
  const bool standard = mode == ModelMode::standard;
  Vec x = standard ? layer.ffn->attn_norm.apply(h) : h;
  Vec out = h;
  for (std::size_t m = 0; m < layer.heads.size(); ++m) {
    const HeadWeights& head = layer.heads[m];
    auto& cache = caches[m];
    cache.keys->push_back(head.key * x);
    cache.values->push_back(head.value * x);
    Vec q = head.query * x;

    std::vector<double> alpha = scaled_dot_softmax(q, *cache.keys);
    std::vector<double> applied;
    if (hook != nullptr && *hook) {
      HookSite site{layer_index, m, step, system_len};
      applied = (*hook)(alpha, site);
      validate_hook_row(applied, alpha.size(), site);
    }
    const std::vector<double>& use = applied.empty() ? alpha : applied;

    Vec mixed = Vec::Zero(head.value.rows());
    for (std::size_t j = 0; j < use.size(); ++j) mixed.noalias() += use[j] * (*cache.values)[j];
    out.noalias() += head.output * mixed;

    if (rows != nullptr) rows->push_back(AttentionRow{layer_index, m, step, std::move(alpha), std::move(applied)});
  }
  if (standard) {
    const FeedForward& f = *layer.ffn;
    Vec y = f.mlp_norm.apply(out);
    Vec hidden = (f.up * y + f.up_bias).unaryExpr([](double v) { return gelu(v); });
    out.noalias() += f.down * hidden;
    out += f.down_bias;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Little-endian binary IO.

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw ShapeError(std::string("dimension mismatch: payload ends inside ") + what + " (" + std::to_string(remaining()) +
                       " bytes left, " + std::to_string(n) + " needed)");
    }
  }

  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)]);
    pos_ += 8;
    return v;
  }

  double f64(const char* what) {
    std::uint64_t bits = u64(what);
    double d;
    std::memcpy(&d, &bits, sizeof d);
    if (!std::isfinite(d)) throw NonFiniteError(std::string("non-finite entry in ") + what);
    return d;
  }

  Mat matrix(std::size_t rows, std::size_t cols, const char* what) {
    need(rows * cols * 8, what);
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = f64(what);
    return m;
  }

  Vec vector(std::size_t n, const char* what) {
    need(n * 8, what);
    Vec v(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) v(static_cast<Eigen::Index>(i)) = f64(what);
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void u64(std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
    out_.write(buf, 8);
  }
  void f64(double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof d);
    u64(bits);
  }
  void matrix(const Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }
  void vector(const Vec& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) f64(v(i));
  }
  void raw(std::string_view s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }

 private:
  std::ostream& out_;
};

LayerNorm read_norm(Reader& r, std::size_t dim, const char* what) {
  LayerNorm n;
  n.gain = r.vector(dim, what);
  n.bias = r.vector(dim, what);
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelDims::validate() const {
  if (vocab_size == 0 || model_dim == 0 || head_dim == 0 || n_heads == 0 || n_layers == 0 || max_context == 0) {
    throw DomainError("model dimensions must all be positive");
  }
}

Vec LayerNorm::apply(const Vec& x) const {
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  Vec y = (x.array() - mean) / std::sqrt(var + kEps);
  return y.cwiseProduct(gain) + bias;
}

std::size_t ModelWeights::mlp_hidden() const {
  if (layers.empty() || !layers.front().ffn) return 0;
  return static_cast<std::size_t>(layers.front().ffn->up.rows());
}

void ModelWeights::validate() const {
  dims.validate();
  const auto V = static_cast<Eigen::Index>(dims.vocab_size);
  const auto D = static_cast<Eigen::Index>(dims.model_dim);
  const auto d = static_cast<Eigen::Index>(dims.head_dim);
  expect_shape(embedding, V, D, "embedding");
  if (layers.size() != dims.n_layers) throw ShapeError("layer count does not match n_layers");
  const bool standard = final_norm.has_value();
  const auto F = static_cast<Eigen::Index>(mlp_hidden());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto tag = "layer " + std::to_string(l);
    const auto& layer = layers[l];
    if (layer.heads.size() != dims.n_heads) throw ShapeError(tag + ": head count does not match n_heads");
    for (std::size_t m = 0; m < layer.heads.size(); ++m) {
      const auto htag = tag + " head " + std::to_string(m);
      expect_shape(layer.heads[m].query, d, D, htag + " W_q");
      expect_shape(layer.heads[m].key, d, D, htag + " W_k");
      expect_shape(layer.heads[m].value, d, D, htag + " W_v");
      expect_shape(layer.heads[m].output, D, d, htag + " W_o");
    }
    if (layer.ffn.has_value() != standard) throw ShapeError(tag + ": MLP presence disagrees with model mode");
    if (layer.ffn) {
      const auto& f = *layer.ffn;
      if (F == 0) throw ShapeError(tag + ": empty MLP");
      expect_size(f.attn_norm.gain, D, tag + " attn_norm gain");
      expect_size(f.attn_norm.bias, D, tag + " attn_norm bias");
      expect_size(f.mlp_norm.gain, D, tag + " mlp_norm gain");
      expect_size(f.mlp_norm.bias, D, tag + " mlp_norm bias");
      expect_shape(f.up, F, D, tag + " W_up");
      expect_size(f.up_bias, F, tag + " b_up");
      expect_shape(f.down, D, F, tag + " W_down");
      expect_size(f.down_bias, D, tag + " b_down");
    }
  }
  if (final_norm) {
    expect_size(final_norm->gain, D, "final norm gain");
    expect_size(final_norm->bias, D, "final norm bias");
  }
  if (vocab.size() != dims.vocab_size) throw ShapeError("vocabulary size does not match vocab_size");
}

ModelWeights load_weights(std::istream& in) {
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < kMagic.size() || std::string_view(bytes.data(), kMagic.size()) != kMagic) {
    throw FormatError("malformed header: missing DRIFTW1 magic");
  }
  if (bytes.size() < kMagic.size() + 6 * 8) throw FormatError("malformed header: truncated dimension block");
  Reader r(std::vector<char>(bytes.begin() + static_cast<std::ptrdiff_t>(kMagic.size()), bytes.end()));

  ModelWeights w;
  w.dims.vocab_size = r.u64("header");
  w.dims.model_dim = r.u64("header");
  w.dims.head_dim = r.u64("header");
  w.dims.n_heads = r.u64("header");
  w.dims.n_layers = r.u64("header");
  w.dims.max_context = r.u64("header");
  try {
    w.dims.validate();
  } catch (const DomainError& e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }
  constexpr std::uint64_t kSane = 1ULL << 32;
  if (w.dims.vocab_size > kSane || w.dims.model_dim > kSane || w.dims.head_dim > kSane || w.dims.n_heads > kSane ||
      w.dims.n_layers > kSane) {
    throw FormatError("malformed header: implausible dimensions");
  }
  const std::size_t V = w.dims.vocab_size, D = w.dims.model_dim, d = w.dims.head_dim;

  w.embedding = r.matrix(V, D, "W_e");
  w.layers.resize(w.dims.n_layers);
  for (auto& layer : w.layers) {
    layer.heads.resize(w.dims.n_heads);
    for (auto& h : layer.heads) {
      h.query = r.matrix(d, D, "W_q");
      h.key = r.matrix(d, D, "W_k");
      h.value = r.matrix(d, D, "W_v");
      h.output = r.matrix(D, d, "W_o");
    }
  }
  const std::uint64_t hidden = r.u64("MLP width");
  if (hidden > 0) {
    if (hidden > kSane) throw ShapeError("dimension mismatch: implausible MLP width " + std::to_string(hidden));
    for (auto& layer : w.layers) {
      FeedForward f;
      f.attn_norm = read_norm(r, D, "attention norm");
      f.mlp_norm = read_norm(r, D, "MLP norm");
      f.up = r.matrix(hidden, D, "W_up");
      f.up_bias = r.vector(hidden, "b_up");
      f.down = r.matrix(D, hidden, "W_down");
      f.down_bias = r.vector(D, "b_down");
      layer.ffn = std::move(f);
    }
    w.final_norm = read_norm(r, D, "final norm");
  }
  const std::uint64_t count = r.u64("vocabulary count");
  if (count != V) {
    throw ShapeError("dimension mismatch: vocabulary lists " + std::to_string(count) + " entries, header declares " +
                     std::to_string(V));
  }
  w.vocab.reserve(V);
  for (std::size_t i = 0; i < V; ++i) {
    const std::uint64_t len = r.u64("vocabulary entry length");
    if (len > r.remaining()) throw ShapeError("dimension mismatch: vocabulary entry overruns payload");
    w.vocab.push_back(r.bytes(len, "vocabulary entry"));
  }
  if (r.remaining() != 0) {
    throw ShapeError("dimension mismatch: " + std::to_string(r.remaining()) + " trailing bytes after vocabulary");
  }
  w.validate();
  return w;
}

ModelWeights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open weight file " + path.string());
  return load_weights(in);
}

void save_weights(const ModelWeights& w, std::ostream& out) {
  w.validate();
  Writer wr(out);
  wr.raw(kMagic);
  wr.u64(w.dims.vocab_size);
  wr.u64(w.dims.model_dim);
  wr.u64(w.dims.head_dim);
  wr.u64(w.dims.n_heads);
  wr.u64(w.dims.n_layers);
  wr.u64(w.dims.max_context);
  wr.matrix(w.embedding);
  for (const auto& layer : w.layers) {
    for (const auto& h : layer.heads) {
      wr.matrix(h.query);
      wr.matrix(h.key);
      wr.matrix(h.value);
      wr.matrix(h.output);
    }
  }
  wr.u64(w.mlp_hidden());
  if (w.final_norm) {
    for (const auto& layer : w.layers) {
      const auto& f = *layer.ffn;
      wr.vector(f.attn_norm.gain);
      wr.vector(f.attn_norm.bias);
      wr.vector(f.mlp_norm.gain);
      wr.vector(f.mlp_norm.bias);
      wr.matrix(f.up);
      wr.vector(f.up_bias);
      wr.matrix(f.down);
      wr.vector(f.down_bias);
    }
    wr.vector(w.final_norm->gain);
    wr.vector(w.final_norm->bias);
  }
  wr.u64(w.vocab.size());
  for (const auto& tok : w.vocab) {
    wr.u64(tok.size());
    wr.raw(tok);
  }
}

void save_weights(const ModelWeights& w, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write weight file " + path.string());
  save_weights(w, out);
}

// ---------------------------------------------------------------------------

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double mx = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(mx)) throw NonFiniteError("softmax input is not finite");
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double mx = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(mx)) throw NonFiniteError("log-softmax input is not finite");
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::vector<double> attention_weights(const Vec& query, std::span<const Vec> keys, const HeadWeights& head) {
  if (keys.empty()) throw DomainError("attention over an empty key list");
  if (query.size() != head.query.cols()) throw ShapeError("query activation does not match W_q");
  std::vector<Vec> projected;
  projected.reserve(keys.size());
  for (const auto& k : keys) {
    if (k.size() != head.key.cols()) throw ShapeError("key activation does not match W_k");
    projected.push_back(head.key * k);
  }
  return scaled_dot_softmax(head.query * query, projected);
}

Vec attend(std::span<const double> weights, std::span<const Vec> values, const Mat& value_proj, const Mat& output_proj) {
  if (weights.size() != values.size()) {
    throw ShapeError("attention weights (" + std::to_string(weights.size()) + ") and values (" +
                     std::to_string(values.size()) + ") differ in length");
  }
  if (output_proj.cols() != value_proj.rows()) throw ShapeError("W_o and W_v do not compose");
  Vec mixed = Vec::Zero(value_proj.rows());
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (values[j].size() != value_proj.cols()) throw ShapeError("value activation does not match W_v");
    mixed.noalias() += weights[j] * (value_proj * values[j]);
  }
  return output_proj * mixed;
}

std::vector<Vec> layer_forward(std::span<const Vec> activations, const LayerWeights& layer, const LayerForwardOptions& opts,
                               std::vector<AttentionRow>* rows) {
  if (activations.empty()) throw DomainError("layer_forward needs at least one position");
  if (opts.mode == ModelMode::standard && !layer.ffn) throw ShapeError("standard-mode layer without MLP weights");
  std::vector<std::vector<Vec>> keys(layer.heads.size()), values(layer.heads.size());
  std::vector<HeadCacheRef> caches;
  for (std::size_t m = 0; m < layer.heads.size(); ++m) caches.push_back({&keys[m], &values[m]});
  std::vector<Vec> out;
  out.reserve(activations.size());
  for (std::size_t i = 0; i < activations.size(); ++i) {
    out.push_back(layer_step(layer, opts.mode, activations[i], caches, opts.layer_index, i + 1, opts.hook, opts.system_len, rows));
  }
  return out;
}

std::vector<double> next_token_dist(const Vec& final_activation, const Mat& embedding) {
  if (final_activation.size() != embedding.cols()) throw ShapeError("activation does not match W_e");
  if (!final_activation.allFinite()) throw NonFiniteError("final activation is not finite");
  Vec logits = embedding * final_activation;
  return softmax(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())));
}

Vec model_logits(const ModelWeights& w, const Vec& final_activation) {
  if (!final_activation.allFinite()) throw NonFiniteError("final activation is not finite");
  if (w.final_norm) return w.embedding * w.final_norm->apply(final_activation);
  return w.embedding * final_activation;
}

// ---------------------------------------------------------------------------

void SamplerConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw DomainError("temperature must be positive");
  if (!(nucleus_p > 0.0 && nucleus_p <= 1.0)) throw DomainError("nucleus_p must lie in (0, 1]");
}

std::vector<TokenId> nucleus_set(std::span<const double> dist, double nucleus_p) {
  std::vector<TokenId> order(dist.size());
  std::iota(order.begin(), order.end(), TokenId{0});
  std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) { return dist[a] > dist[b]; });
  std::vector<TokenId> kept;
  double cum = 0.0;
  for (TokenId id : order) {
    if (!(dist[id] > 0.0)) break;
    kept.push_back(id);
    cum += dist[id];
    if (nucleus_p < 1.0 && cum >= nucleus_p) break;
  }
  if (kept.empty()) throw InvalidDistributionError("degenerate distribution: no mass left after nucleus truncation");
  return kept;
}

TokenId sample_token(std::span<const double> dist, const SamplerConfig& config, Rng& rng) {
  config.validate();
  if (dist.empty()) throw InvalidDistributionError("empty distribution");
  double total = 0.0;
  for (double p : dist) {
    if (!std::isfinite(p) || p < 0.0) throw InvalidDistributionError("distribution has a negative or non-finite entry");
    total += p;
  }
  if (!(total > 0.0)) throw InvalidDistributionError("degenerate distribution: all-zero");

  std::vector<double> tempered(dist.begin(), dist.end());
  if (config.temperature != 1.0) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double p : dist)
      if (p > 0.0) mx = std::max(mx, std::log(p));
    double sum = 0.0;
    for (double& p : tempered) {
      p = p > 0.0 ? std::exp((std::log(p) - mx) / config.temperature) : 0.0;
      sum += p;
    }
    for (double& p : tempered) p /= sum;
  } else {
    for (double& p : tempered) p /= total;
  }

  const auto kept = nucleus_set(tempered, config.nucleus_p);
  double mass = 0.0;
  for (TokenId id : kept) mass += tempered[id];
  const double u = uniform01(rng) * mass;
  double cum = 0.0;
  for (TokenId id : kept) {
    cum += tempered[id];
    if (u < cum) return id;
  }
  return kept.back();
}

// ---------------------------------------------------------------------------

DecoderState::DecoderState(const ModelWeights& weights, Options opts)
    : DecoderState(weights.layers, weights.dims.model_dim, weights.mode(), opts) {
  weights_ = &weights;
}

DecoderState::DecoderState(std::span<const LayerWeights> layers, std::size_t model_dim, ModelMode mode, Options opts)
    : layers_(layers), model_dim_(model_dim), mode_(mode), opts_(opts) {
  cache_.resize(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) cache_[l].resize(layers_[l].heads.size());
  if (opts_.keep_residuals) state_.residuals.resize(layers_.size() + 1);
}

const Vec& DecoderState::push_token(TokenId id) {
  if (weights_ == nullptr) throw DomainError("decoder state has no embedding table");
  if (id >= weights_->dims.vocab_size) throw DomainError("token id " + std::to_string(id) + " outside vocabulary");
  return push(weights_->embedding.row(id).transpose());
}

const Vec& DecoderState::push_embedding(const Vec& h0) {
  if (static_cast<std::size_t>(h0.size()) != model_dim_) throw ShapeError("embedding does not match model_dim");
  return push(h0);
}

void DecoderState::push_tokens(std::span<const TokenId> ids) {
  for (TokenId id : ids) push_token(id);
}

const Vec& DecoderState::push(Vec h) {
  const std::size_t step = ++length_;
  const bool record = opts_.record == RecordMode::all || (opts_.record == RecordMode::generated && generating_);
  if (opts_.keep_residuals) state_.residuals[0].push_back(h);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    std::vector<HeadCacheRef> refs;
    refs.reserve(cache_[l].size());
    for (auto& c : cache_[l]) refs.push_back({&c.keys, &c.values});
    h = layer_step(layers_[l], mode_, h, refs, l, step, opts_.hook, opts_.system_len, record ? &state_.rows : nullptr);
    if (opts_.keep_residuals) state_.residuals[l + 1].push_back(h);
  }
  last_ = std::move(h);
  return last_;
}

// ---------------------------------------------------------------------------

Generation continue_generation(DecoderState& conditional, DecoderState* unconditional, const ModelWeights& weights,
                               const SamplerConfig& sampler, const GenerateOptions& opts, Rng& rng) {
  sampler.validate();
  if (conditional.length() == 0) throw DomainError("generation needs a non-empty context");
  if (opts.cfg && (unconditional == nullptr || unconditional->length() == 0)) {
    throw DomainError("CFG generation needs a prefilled unconditional state");
  }
  Generation g;
  g.first_generated_step = conditional.length();
  for (std::size_t n = 0; n < opts.stop.max_new_tokens; ++n) {
    Vec logits = model_logits(weights, conditional.output());
    std::vector<double> dist;
    if (opts.cfg) {
      Vec ulogits = model_logits(weights, unconditional->output());
      auto lc = log_softmax(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())));
      auto lu = log_softmax(std::span<const double>(ulogits.data(), static_cast<std::size_t>(ulogits.size())));
      dist = cfg_combine(lc, lu, opts.cfg->alpha);
    } else {
      dist = softmax(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())));
    }
    const TokenId next = sample_token(dist, sampler, rng);
    if (opts.keep_distributions) g.distributions.push_back(std::move(dist));
    if (opts.stop.stop_token && next == *opts.stop.stop_token) {
      g.hit_stop_token = true;
      break;
    }
    g.tokens.push_back(next);
    if (n + 1 < opts.stop.max_new_tokens) {
      conditional.push_token(next);
      if (opts.cfg) unconditional->push_token(next);
    }
  }
  g.attention = conditional.take_attention();
  return g;
}

Generation generate_utterance(std::span<const TokenId> context, const ModelWeights& weights, const SamplerConfig& sampler,
                              const GenerateOptions& opts) {
  sampler.validate();
  if (context.empty()) throw DomainError("generation needs a non-empty context");
  auto check_budget = [&](std::size_t len) {
    if (len + opts.stop.max_new_tokens > weights.dims.max_context) {
      throw ContextOverflowError("context of " + std::to_string(len) + " tokens plus budget " +
                                 std::to_string(opts.stop.max_new_tokens) + " exceeds max_context " +
                                 std::to_string(weights.dims.max_context));
    }
  };
  check_budget(context.size());
  if (opts.system_len > context.size()) throw DomainError("system prefix longer than the context");

  DecoderState::Options cond_opts{opts.hook, opts.system_len, opts.record, false};
  DecoderState cond(weights, cond_opts);
  cond.push_tokens(context.first(context.size() - 1));
  cond.begin_generation();
  cond.push_token(context.back());

  std::optional<DecoderState> uncond;
  if (opts.cfg) {
    const auto& uctx = opts.cfg->unconditional_context;
    if (uctx.empty()) throw DomainError("CFG unconditional context is empty");
    check_budget(uctx.size());
    uncond.emplace(weights, DecoderState::Options{nullptr, 0, RecordMode::none, false});
    uncond->push_tokens(uctx);
  }
  Rng rng = make_rng(sampler.seed);
  return continue_generation(cond, uncond ? &*uncond : nullptr, weights, sampler, opts, rng);
}

// ---------------------------------------------------------------------------

Vec theory_step(std::span<const Vec> embeddings, std::span<const LayerWeights> layers) {
  if (embeddings.empty()) throw DomainError("theory_step needs at least one embedding");
  const auto D = embeddings.front().size();
  for (const auto& h : embeddings) {
    if (h.size() != D) throw ShapeError("embeddings differ in dimension");
    if (std::abs(h.norm() - 1.0) > 1e-9) throw DomainError("theory_step inputs must be unit-norm");
  }
  DecoderState state(layers, static_cast<std::size_t>(D), ModelMode::theory, {nullptr, 0, RecordMode::none, false});
  for (const auto& h : embeddings) state.push_embedding(h);
  const double norm = state.output().norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw DomainError("final activation has zero norm");
  return state.output() / norm;
}

}  // namespace drift
