#pragma once

// Cone geometry behind the attention-decay argument: epsilon-approximate
// cones, the closed-hemisphere test, Wendel's formula, spherical caps and
// the Monte Carlo experiments that check them.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drift/model.hpp"

namespace drift {

// eps / sqrt(eps^2 + cos^2(theta) (1 - eps^2)).
double epsilon_tilde(double eps, double theta);

// Cone generated by nonnegative combinations of `generators` (columns,
// D-vectors inside span(basis)), widened by eps in the orthogonal complement.
struct ApproxCone {
  Mat basis;       // D x d, orthonormal columns
  Mat generators;  // D x g
  double eps = 0.1;

  std::size_t ambient_dim() const { return static_cast<std::size_t>(basis.rows()); }
  std::size_t span_dim() const { return static_cast<std::size_t>(basis.cols()); }
  void validate() const;
};

// P^d[c, theta] inside span(basis), widened by eps.
struct SphericalCone {
  Mat basis;  // D x d
  Vec axis;   // unit, inside span(basis)
  double theta = 0.5;
  double eps = 0.1;

  void validate() const;
};

struct Membership {
  bool member = false;
  Vec u;               // projection onto span
  Vec v;               // orthogonal remainder
  double ratio = 0.0;  // |v| / |w|
  bool in_base = false;
};

// `eps_override` replaces cone.eps in the ratio test; `ratio_slack` is added
// to it.
Membership cone_membership(const Vec& w, const ApproxCone& cone, std::optional<double> eps_override = std::nullopt,
                           double ratio_slack = 0.0);
Membership cone_membership(const Vec& w, const SphericalCone& cone);

// Nonnegative least squares min |A x - b|, x >= 0 (Lawson-Hanson).
Vec nnls(const Mat& A, const Vec& b, std::size_t max_iter = 0);

// True iff some nonzero c has <c, p_i> >= 0 for every point (closed
// hemisphere). Exact: checks every candidate normal spanned by D-1 points.
bool hemisphere_exists(std::span<const Vec> points, double tol = 1e-12);

// a_{m,N}: probability that N uniform points on S^m share a hemisphere.
double wendel_probability(std::size_t m, std::size_t N);

// Smallest integer n with n >= 4 D + 2 ln(1/eta).
std::size_t expansion_sample_size(std::size_t D, double eta);

// Uniform point on S^{D-1} from normalized standard normals.
Vec random_unit(std::size_t D, Rng& rng);

struct RateEstimate {
  std::size_t trials = 0;
  std::size_t hits = 0;
  double rate() const { return trials ? static_cast<double>(hits) / static_cast<double>(trials) : 0.0; }
  double stderr_() const;
};

// Fraction of trials in which `points` uniform points on S^m lie in a closed
// hemisphere.
RateEstimate hemisphere_monte_carlo(std::size_t m, std::size_t points, std::size_t trials, std::uint64_t seed,
                                    std::size_t jobs = 1);

struct ExpansionResult {
  std::size_t D = 0;
  double eta = 0.0;
  std::size_t n = 0;
  RateEstimate failures;  // trials where the points fit in a hemisphere
  bool within_bound() const { return failures.rate() <= eta; }
};

// n defaults to expansion_sample_size(D, eta).
ExpansionResult expansion_experiment(std::size_t D, double eta, std::size_t trials, std::uint64_t seed,
                                     std::optional<std::size_t> n = std::nullopt, std::size_t jobs = 1);

// Normalized measure of the cap of half-angle theta on S^{D-1}, by adaptive
// Simpson quadrature of the sin^{D-2} integral.
double spherical_cap_measure(std::size_t D, double theta);

// Exact measure of an eps-approximate spherical cone of span dimension d in
// R^D with half-angle psi. Used as a test oracle.
double approx_spherical_cone_measure(std::size_t D, std::size_t d, double psi, double eps);

struct VolumeEstimate {
  double eps = 0.0;
  double mu1 = 0.0, mu2 = 0.0;
  double se1 = 0.0, se2 = 0.0;
  bool tube1 = false, tube2 = false;  // estimated with tube-conditioned sampling
  double ratio() const { return mu1 / mu2; }
};

struct VolumeRatioResult {
  std::vector<VolumeEstimate> points;
  double slope = 0.0;  // least-squares slope of log ratio vs log eps
};

struct VolumeRatioConfig {
  std::size_t D = 8;
  std::size_t d1 = 2, d2 = 4;
  double psi1 = 0.7853981633974483, psi2 = 0.7853981633974483;
  std::vector<double> eps_grid{0.05, 0.1, 0.2};
  std::size_t samples = 10'000'000;
  std::size_t min_accepted = 100;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

// Monte Carlo estimates of mu(C1^eps) and mu(C2^eps) on a grid of eps. Plain
// rejection sampling first; when fewer than min_accepted points land in a
// cone the estimate is redone with points drawn from the tube |v| <= r|w|
// (r = min(1, 2 eps)) and reweighted by the tube's exact measure.
VolumeRatioResult volume_ratio_experiment(const VolumeRatioConfig& config);

// --- Closure under self-generation -----------------------------------------

enum class ClosureAttention { random, marker };

struct ClosureConfig {
  std::size_t D = 16;
  std::size_t d = 3;
  double eps = 0.1;
  double theta = 0.5235987755982988;  // pi/6
  std::size_t prompt_len = 8;
  std::size_t steps = 100;
  std::size_t n_layers = 1;
  std::size_t n_heads = 1;
  bool identity_ov = false;
  ClosureAttention attention = ClosureAttention::random;
  std::size_t inject = 0;  // random unit vectors pushed mid-sequence
  double ratio_slack = 1e-7;
  std::uint64_t seed = 0;
};

struct ClosureSetup {
  ApproxCone cone;
  Vec axis;
  std::vector<Vec> prompt;
  std::vector<LayerWeights> layers;
};

// Builds a cone, prompt points in it and theory-mode weights whose W_o W_v
// maps the cone into itself.
ClosureSetup make_closure_setup(const ClosureConfig& config);

// Throws HypothesisError unless every head's W_o W_v keeps the generators and
// 100 random members of C^eps inside C^eps.
void check_closure_hypothesis(const ClosureSetup& setup, std::uint64_t seed);

struct ClosureResult {
  std::size_t generated = 0;
  std::size_t violations = 0;
  double eps_tilde = 0.0;
  double max_ratio = 0.0;
  std::vector<Vec> sequence;          // prompt then generated/injected points
  std::vector<AttentionRow> rows;     // rows of generated steps, when recorded
};

ClosureResult cone_closure_experiment(const ClosureSetup& setup, const ClosureConfig& config, bool record_attention = false);

// --- Results table ---------------------------------------------------------

struct GeometryRecord {
  std::string experiment;
  std::string parameters;
  double estimate = 0.0;
  double stderr_ = 0.0;
  double bound = 0.0;
  bool pass = false;
};

void write_geometry_csv(std::ostream& out, const std::vector<GeometryRecord>& records);

}  // namespace drift
