#pragma once

#include <random>
#include <string>

#include "drift/model.hpp"
#include "drift/random.hpp"

namespace testing {

inline drift::Mat gaussian(std::size_t r, std::size_t c, double scale, drift::Rng& rng) {
  std::normal_distribution<double> n(0.0, scale);
  drift::Mat m(r, c);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = n(rng);
  return m;
}

inline drift::Vec gaussian_vec(std::size_t n, double scale, drift::Rng& rng) {
  return gaussian(n, 1, scale, rng).col(0);
}

// Random weights. Standard mode adds MLPs and norms with slightly perturbed
// gains. Vocabulary: specials then w0, w1, ...
inline drift::ModelWeights random_model(std::size_t V, std::size_t D, std::size_t d, std::size_t H, std::size_t L,
                                        std::uint64_t seed, bool standard, std::size_t hidden = 16,
                                        std::size_t max_context = 512) {
  drift::Rng rng = drift::make_rng(seed);
  drift::ModelWeights w;
  w.dims = {V, D, d, H, L, max_context};
  w.embedding = gaussian(V, D, 1.0, rng);
  for (std::size_t l = 0; l < L; ++l) {
    drift::LayerWeights layer;
    for (std::size_t h = 0; h < H; ++h) {
      drift::HeadWeights hw;
      hw.query = gaussian(d, D, 0.5, rng);
      hw.key = gaussian(d, D, 0.5, rng);
      hw.value = gaussian(d, D, 0.5, rng);
      hw.output = gaussian(D, d, 0.5, rng);
      layer.heads.push_back(hw);
    }
    if (standard) {
      drift::FeedForward f;
      f.attn_norm = {drift::Vec::Ones(D) + gaussian_vec(D, 0.1, rng), gaussian_vec(D, 0.1, rng)};
      f.mlp_norm = {drift::Vec::Ones(D) + gaussian_vec(D, 0.1, rng), gaussian_vec(D, 0.1, rng)};
      f.up = gaussian(hidden, D, 0.5, rng);
      f.up_bias = gaussian_vec(hidden, 0.1, rng);
      f.down = gaussian(D, hidden, 0.5, rng);
      f.down_bias = gaussian_vec(D, 0.1, rng);
      layer.ffn = f;
    }
    w.layers.push_back(layer);
  }
  if (standard) w.final_norm = drift::LayerNorm{drift::Vec::Ones(D), drift::Vec::Zero(D)};
  const char* specials[] = {"<unk>", "<sys>", "<user>", "<agent>", "<eot>"};
  for (std::size_t i = 0; i < V; ++i) w.vocab.push_back(i < 5 ? specials[i] : "w" + std::to_string(i - 5));
  return w;
}

}  // namespace testing
