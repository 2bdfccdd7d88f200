#pragma once

// Hand-constructed two-layer chat model used for the desk-scale drift runs.
//
// Tokens live in a 63-dimensional feature space (constant, language, persona
// style, directive, target, choice, bias, special, identity) embedded in the
// mean-zero subspace of R^64, so layer norm acts as a pure rescale.
//
// Layer 1: two weak random heads, then an MLP that removes most of the
//          current token's identity/language/style (a GELU pair g(z) - g(-z)
//          is exactly linear), which keeps sampling from looping.
// Layer 2: head 0 attends to directive tokens ("french", "pirate", "blue")
//          and copies their target language or persona into the output
//          features plus their identity; head 1 does the same for choice
//          letters A-D.
//
// Attention to a directive is a softmax share against every other token, so
// it falls as the conversation grows. That is the drift mechanism.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "drift/model.hpp"

namespace drift {

struct DeskModelConfig {
  std::uint64_t seed = 0x6465736b;
  std::size_t max_context = 8192;
  double directive_score = 3.2;  // log attention weight of a directive vs a plain token
  double choice_score = 4.0;
  double target_gain = 4.0;      // copied target feature, in units of a token's own feature
  double identity_gain = 0.9;
  double choice_gain = 5.0;
  double suppression = 0.95;     // fraction of the current token's identity removed
  double logit_scale = 15.0;
  double lang_weight = 2.0;      // language/style share of a word embedding
  double random_head_scale = 0.02;
  double random_mlp_scale = 0.01;
  // Unigram log-weights at a neutral position.
  double bias_english_stop = 1.0;
  double bias_english = 0.0;
  double bias_foreign_stop = -2.6;
  double bias_foreign = -3.4;
  double bias_style = -3.6;
  double bias_directive = -3.5;
  double bias_choice = -4.0;
  double bias_letter = -5.0;
  double bias_digit = -3.0;
  double bias_punct = 2.5;  // . and ,; ! and ? one lower; the rest four lower
  double bias_eot = 2.8;
  double bias_special = -30.0;
  int calibration_rounds = 6;
};

// Vocabulary in id order. Specials first.
const std::vector<std::string>& desk_vocabulary();

ModelWeights build_desk_model(const DeskModelConfig& config = {});

// Default model, built once.
std::shared_ptr<const ModelWeights> desk_model();

}  // namespace drift
