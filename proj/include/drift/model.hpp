#pragma once

// Decoder-only toy transformer.
//
// Two modes share one forward path:
//   theory   - residual stream plus attention only (no MLP, no layer norm),
//              logits = W_e h^L.
//   standard - pre-norm attention block followed by a position-wise GELU MLP,
//              and a final layer norm before the tied unembedding.
//
// Positions enter only through the causal mask; there is no positional
// encoding. All arithmetic is double precision.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drift/random.hpp"

namespace drift {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using TokenId = std::uint32_t;

struct ModelDims {
  std::size_t vocab_size = 0;
  std::size_t model_dim = 0;
  std::size_t head_dim = 0;
  std::size_t n_heads = 0;
  std::size_t n_layers = 0;
  std::size_t max_context = 0;

  void validate() const;
  bool operator==(const ModelDims&) const = default;
};

enum class ModelMode { theory, standard };

// One attention head. query/key/value are head_dim x model_dim, output is
// model_dim x head_dim.
struct HeadWeights {
  Mat query;
  Mat key;
  Mat value;
  Mat output;
};

struct LayerNorm {
  Vec gain;
  Vec bias;
  static constexpr double kEps = 1e-5;

  Vec apply(const Vec& x) const;
};

// Standard-mode extras for one layer.
struct FeedForward {
  LayerNorm attn_norm;
  LayerNorm mlp_norm;
  Mat up;         // hidden x model_dim
  Vec up_bias;    // hidden
  Mat down;       // model_dim x hidden
  Vec down_bias;  // model_dim
};

struct LayerWeights {
  std::vector<HeadWeights> heads;
  std::optional<FeedForward> ffn;
};

struct ModelWeights {
  ModelDims dims;
  Mat embedding;  // vocab_size x model_dim, tied with the unembedding
  std::vector<LayerWeights> layers;
  std::optional<LayerNorm> final_norm;  // present iff standard mode
  std::vector<std::string> vocab;

  ModelMode mode() const { return final_norm ? ModelMode::standard : ModelMode::theory; }
  std::size_t mlp_hidden() const;
  // Throws ShapeError / NonFiniteError / DomainError.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Weight file ("DRIFTW1"). See README for the byte layout.

ModelWeights load_weights(std::istream& in);
ModelWeights load_weights(const std::filesystem::path& path);
void save_weights(const ModelWeights& w, std::ostream& out);
void save_weights(const ModelWeights& w, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Attention telemetry.

struct AttentionRow {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t step = 0;         // 1-based position t of the attending token
  std::vector<double> raw;      // softmax row before any hook
  std::vector<double> applied;  // row after the hook; empty when no hook ran

  const std::vector<double>& used() const { return applied.empty() ? raw : applied; }
};

enum class RecordMode { none, generated, all };

struct AttentionState {
  std::vector<AttentionRow> rows;
  // residuals[l][i] = h_i^l for l = 0..L (l = 0 is the embedding).
  std::vector<std::vector<Vec>> residuals;
};

struct HookSite {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t step = 0;
  std::size_t system_len = 0;
};

// Receives a softmax row and returns the row to use instead. The result is
// validated (nonnegative, sums to 1 within 1e-6) before it is applied.
using AttentionHook = std::function<std::vector<double>(std::span<const double>, const HookSite&)>;

// ---------------------------------------------------------------------------
// Building blocks.

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

// softmax over (W_k h_j) . (W_q h_t) / sqrt(d) for the given keys.
std::vector<double> attention_weights(const Vec& query, std::span<const Vec> keys, const HeadWeights& head);

// sum_j weights_j * W_o W_v h_j.
Vec attend(std::span<const double> weights, std::span<const Vec> values, const Mat& value_proj, const Mat& output_proj);

struct LayerForwardOptions {
  std::size_t layer_index = 0;
  ModelMode mode = ModelMode::theory;
  const AttentionHook* hook = nullptr;
  std::size_t system_len = 0;
};

// Full causal pass of one layer over h_1..h_t. Rows are appended to `rows`
// when it is non-null.
std::vector<Vec> layer_forward(std::span<const Vec> activations, const LayerWeights& layer, const LayerForwardOptions& opts,
                               std::vector<AttentionRow>* rows = nullptr);

std::vector<double> next_token_dist(const Vec& final_activation, const Mat& embedding);

// Logits for the model's own head: final norm (standard mode) then W_e.
Vec model_logits(const ModelWeights& w, const Vec& final_activation);

// ---------------------------------------------------------------------------
// Sampling.

struct SamplerConfig {
  double temperature = 1.0;
  double nucleus_p = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

// Tokens sorted by probability (ties by id) and truncated to the shortest
// prefix whose mass reaches nucleus_p; the crossing token is kept.
std::vector<TokenId> nucleus_set(std::span<const double> dist, double nucleus_p);
TokenId sample_token(std::span<const double> dist, const SamplerConfig& config, Rng& rng);

// ---------------------------------------------------------------------------
// Incremental decoding. Keeps per-layer keys and values for every position
// so a new token costs O(t) per head instead of a full re-run.

class DecoderState {
 public:
  struct Options {
    const AttentionHook* hook = nullptr;
    std::size_t system_len = 0;
    RecordMode record = RecordMode::all;
    bool keep_residuals = false;
  };

  DecoderState(const ModelWeights& weights, Options opts);
  // Network-only state for raw embedding inputs (theory experiments).
  DecoderState(std::span<const LayerWeights> layers, std::size_t model_dim, ModelMode mode, Options opts);

  const Vec& push_token(TokenId id);
  const Vec& push_embedding(const Vec& h0);
  void push_tokens(std::span<const TokenId> ids);

  // Rows recorded under RecordMode::generated are the ones pushed after this.
  void begin_generation() { generating_ = true; }

  std::size_t length() const { return length_; }
  const Vec& output() const { return last_; }
  const AttentionState& attention() const { return state_; }
  AttentionState take_attention() { return std::move(state_); }

 private:
  struct HeadCache {
    std::vector<Vec> keys;
    std::vector<Vec> values;
  };

  const Vec& push(Vec h);

  const ModelWeights* weights_ = nullptr;
  std::span<const LayerWeights> layers_;
  std::size_t model_dim_ = 0;
  ModelMode mode_ = ModelMode::theory;
  Options opts_;
  std::vector<std::vector<HeadCache>> cache_;  // [layer][head]
  AttentionState state_;
  std::size_t length_ = 0;
  bool generating_ = false;
  Vec last_;
};

// ---------------------------------------------------------------------------
// Generation.

struct StopCondition {
  std::size_t max_new_tokens = 128;
  std::optional<TokenId> stop_token;  // generated but not returned
};

struct CfgPass {
  std::vector<TokenId> unconditional_context;
  double alpha = 1.0;
};

struct GenerateOptions {
  const AttentionHook* hook = nullptr;
  std::size_t system_len = 0;
  StopCondition stop;
  RecordMode record = RecordMode::generated;
  std::optional<CfgPass> cfg;
  bool keep_distributions = false;
};

struct Generation {
  std::vector<TokenId> tokens;
  AttentionState attention;
  bool hit_stop_token = false;
  std::size_t first_generated_step = 0;  // 1-based position of the first new token's query
  std::vector<std::vector<double>> distributions;  // per step, when requested
};

Generation generate_utterance(std::span<const TokenId> context, const ModelWeights& weights, const SamplerConfig& sampler,
                              const GenerateOptions& opts);

// Continues from already-prefilled states. `unconditional` is only used when
// opts.cfg is set; its context must already be pushed.
Generation continue_generation(DecoderState& conditional, DecoderState* unconditional, const ModelWeights& weights,
                               const SamplerConfig& sampler, const GenerateOptions& opts, Rng& rng);

// ---------------------------------------------------------------------------
// Simplified generation: h_{t+1} = h_t^L / ||h_t^L||, theory-mode layers.

Vec theory_step(std::span<const Vec> embeddings, std::span<const LayerWeights> layers);

}  // namespace drift
