#include "drift/geometry.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "drift/errors.hpp"
#include "drift/parallel.hpp"
#include "drift/telemetry.hpp"

namespace drift {
namespace {

constexpr double kPi = std::numbers::pi;

bool orthonormal_columns(const Mat& B, double tol) {
  const Mat g = B.transpose() * B;
  return (g - Mat::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff() <= tol;
}

Mat random_orthogonal(std::size_t n, Rng& rng) {
  std::normal_distribution<double> N01;
  Mat A(n, n);
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) A(i, j) = N01(rng);
  Eigen::HouseholderQR<Mat> qr(A);
  Mat Q = qr.householderQ();
  const Mat R = qr.matrixQR();
  for (Eigen::Index j = 0; j < Q.cols(); ++j)
    if (R(j, j) < 0) Q.col(j) = -Q.col(j);
  return Q;
}

Vec gaussian(std::size_t n, Rng& rng) {
  std::normal_distribution<double> N01;
  Vec v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = N01(rng);
  return v;
}

// Null vector of the (D-1) x D matrix whose rows are `rows`. Empty optional
// when the rows are dependent.
std::optional<Vec> null_vector(const std::vector<const Vec*>& rows, std::size_t D) {
  if (D == 2) {
    const Vec& a = *rows[0];
    Vec c(2);
    c << -a(1), a(0);
    const double n = c.norm();
    if (n < 1e-14) return std::nullopt;
    return c / n;
  }
  if (D == 3) {
    const Eigen::Vector3d a = *rows[0], b = *rows[1];
    Eigen::Vector3d c = a.cross(b);
    const double n = c.norm();
    if (n < 1e-14) return std::nullopt;
    return Vec(c / n);
  }
  Mat S(static_cast<Eigen::Index>(D - 1), static_cast<Eigen::Index>(D));
  for (std::size_t i = 0; i < rows.size(); ++i) S.row(static_cast<Eigen::Index>(i)) = rows[i]->transpose();
  Eigen::FullPivLU<Mat> lu(S);
  lu.setThreshold(1e-12);
  if (lu.rank() != static_cast<Eigen::Index>(D - 1)) return std::nullopt;
  Vec c = lu.kernel().col(0);
  return c.normalized();
}

bool all_nonnegative(std::span<const Vec> points, const Vec& c, double tol) {
  for (const auto& p : points)
    if (p.dot(c) < -tol) return false;
  return true;
}

double simpson(double a, double b, double fa, double fm, double fb) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_simpson(const auto& f, double a, double b, double fa, double fm, double fb, double whole, double tol,
                        int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = simpson(a, m, fa, flm, fm);
  const double right = simpson(m, b, fm, frm, fb);
  const double delta = left + right - whole;
  if (std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  if (depth <= 0) throw DomainError("cap-measure quadrature did not converge");
  return adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
}

Mat complement_basis(const Mat& basis) {
  const auto D = basis.rows();
  const auto d = basis.cols();
  Eigen::HouseholderQR<Mat> qr(basis);
  Mat Q = qr.householderQ() * Mat::Identity(D, D);
  return Q.rightCols(D - d);
}

Membership decompose(const Vec& w, const Mat& basis) {
  const double n = w.norm();
  if (!(n > 0.0)) throw DomainError("membership of the zero vector is undefined");
  Membership m;
  m.u = basis * (basis.transpose() * w);
  m.v = w - m.u;
  m.ratio = m.v.norm() / n;
  return m;
}

}  // namespace

double epsilon_tilde(double eps, double theta) {
  if (!(eps > 0.0 && eps < 1.0)) throw DomainError("epsilon must lie in (0, 1)");
  if (!(theta > 0.0 && theta < kPi / 2)) throw DomainError("theta must lie in (0, pi/2)");
  const double c = std::cos(theta);
  return eps / std::sqrt(eps * eps + c * c * (1.0 - eps * eps));
}

void ApproxCone::validate() const {
  if (basis.cols() == 0 || basis.rows() < basis.cols()) throw DomainError("cone basis must be D x d with 1 <= d <= D");
  if (!orthonormal_columns(basis, 1e-9)) throw DomainError("cone basis is not orthonormal");
  if (generators.rows() != basis.rows() || generators.cols() == 0) throw ShapeError("generators must be D x g with g >= 1");
  if (!(eps > 0.0 && eps < 1.0)) throw DomainError("epsilon must lie in (0, 1)");
  const Mat off = generators - basis * (basis.transpose() * generators);
  if (off.cwiseAbs().maxCoeff() > 1e-9) throw DomainError("generators leave the span of the basis");
}

void SphericalCone::validate() const {
  if (basis.cols() == 0 || basis.rows() < basis.cols()) throw DomainError("cone basis must be D x d with 1 <= d <= D");
  if (!orthonormal_columns(basis, 1e-9)) throw DomainError("cone basis is not orthonormal");
  if (axis.size() != basis.rows() || std::abs(axis.norm() - 1.0) > 1e-9) throw DomainError("cone axis must be a unit D-vector");
  if ((axis - basis * (basis.transpose() * axis)).norm() > 1e-9) throw DomainError("cone axis leaves the span");
  if (!(theta > 0.0 && theta < kPi / 2)) throw DomainError("theta must lie in (0, pi/2)");
  if (!(eps > 0.0 && eps < 1.0)) throw DomainError("epsilon must lie in (0, 1)");
}

Vec nnls(const Mat& A, const Vec& b, std::size_t max_iter) {
  const auto n = A.cols();
  if (b.size() != A.rows()) throw ShapeError("nnls: A and b disagree");
  if (max_iter == 0) max_iter = static_cast<std::size_t>(3 * n + 10);
  const double tol = 1e-12 * std::max(1.0, A.cwiseAbs().maxCoeff() * b.cwiseAbs().maxCoeff()) * static_cast<double>(std::max<Eigen::Index>(n, 1));
  Vec x = Vec::Zero(n);
  std::vector<bool> passive(static_cast<std::size_t>(n), false);
  Vec w = A.transpose() * (b - A * x);

  auto solve_passive = [&](Vec& s) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < n; ++j)
      if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
    Mat Ap(A.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) Ap.col(static_cast<Eigen::Index>(k)) = A.col(idx[k]);
    Vec sp = Ap.colPivHouseholderQr().solve(b);
    s = Vec::Zero(n);
    for (std::size_t k = 0; k < idx.size(); ++k) s(idx[k]) = sp(static_cast<Eigen::Index>(k));
  };

  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    Eigen::Index best = -1;
    double best_w = tol;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!passive[static_cast<std::size_t>(j)] && w(j) > best_w) {
        best_w = w(j);
        best = j;
      }
    }
    if (best < 0) break;
    passive[static_cast<std::size_t>(best)] = true;
    Vec s;
    for (std::size_t inner = 0; inner < static_cast<std::size_t>(3 * n + 10); ++inner) {
      solve_passive(s);
      double alpha = 1.0;
      bool feasible = true;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[static_cast<std::size_t>(j)] && s(j) <= 0.0) {
          feasible = false;
          const double denom = x(j) - s(j);
          if (denom > 0.0) alpha = std::min(alpha, x(j) / denom);
        }
      }
      if (feasible) break;
      x += alpha * (s - x);
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[static_cast<std::size_t>(j)] && x(j) <= 1e-15) {
          passive[static_cast<std::size_t>(j)] = false;
          x(j) = 0.0;
        }
      }
    }
    x = s.cwiseMax(0.0);
    w = A.transpose() * (b - A * x);
  }
  return x;
}

Membership cone_membership(const Vec& w, const ApproxCone& cone, std::optional<double> eps_override, double ratio_slack) {
  if (w.size() != cone.basis.rows()) throw ShapeError("point dimension does not match the cone");
  Membership m = decompose(w, cone.basis);
  const Mat A = cone.basis.transpose() * cone.generators;
  const Vec b = cone.basis.transpose() * w;
  const Vec x = nnls(A, b);
  const double residual = (A * x - b).norm();
  m.in_base = residual <= 1e-9 * std::max(1.0, b.norm());
  const double eps = eps_override.value_or(cone.eps);
  m.member = m.in_base && m.ratio <= eps + ratio_slack;
  return m;
}

Membership cone_membership(const Vec& w, const SphericalCone& cone) {
  if (w.size() != cone.basis.rows()) throw ShapeError("point dimension does not match the cone");
  Membership m = decompose(w, cone.basis);
  const double un = m.u.norm();
  m.in_base = un > 0.0 && cone.axis.dot(m.u) >= un * std::cos(cone.theta) - 1e-12;
  m.member = m.in_base && m.ratio <= cone.eps;
  return m;
}

bool hemisphere_exists(std::span<const Vec> points, double tol) {
  if (points.empty()) throw DomainError("hemisphere test needs at least one point");
  const auto D = static_cast<std::size_t>(points.front().size());
  for (const auto& p : points)
    if (static_cast<std::size_t>(p.size()) != D) throw ShapeError("points differ in dimension");
  if (D == 1) {
    bool pos = true, neg = true;
    for (const auto& p : points) {
      pos = pos && p(0) >= -tol;
      neg = neg && p(0) <= tol;
    }
    return pos || neg;
  }
  if (points.size() < D) return true;
  {
    Mat P(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(points.size()));
    for (std::size_t i = 0; i < points.size(); ++i) P.col(static_cast<Eigen::Index>(i)) = points[i];
    Eigen::FullPivLU<Mat> lu(P);
    lu.setThreshold(1e-12);
    if (lu.rank() < static_cast<Eigen::Index>(D)) return true;
  }
  // Extreme rays of {c : <c, p_i> >= 0} are orthogonal to D-1 independent
  // points, so it suffices to test those candidates and their negatives.
  const std::size_t k = D - 1;
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  std::vector<const Vec*> rows(k);
  const std::size_t n = points.size();
  for (;;) {
    for (std::size_t i = 0; i < k; ++i) rows[i] = &points[idx[i]];
    if (auto c = null_vector(rows, D)) {
      if (all_nonnegative(points, *c, tol) || all_nonnegative(points, -*c, tol)) return true;
    }
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
    if (i == 0) break;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
  return false;
}

double wendel_probability(std::size_t m, std::size_t N) {
  if (N == 0) throw DomainError("Wendel probability needs N >= 1");
  if (N <= m + 1) return 1.0;
  const double n1 = static_cast<double>(N - 1);
  const double lg = std::lgamma(n1 + 1.0);
  double mx = -INFINITY;
  std::vector<double> terms;
  for (std::size_t k = 0; k <= m; ++k) {
    const double kk = static_cast<double>(k);
    terms.push_back(lg - std::lgamma(kk + 1.0) - std::lgamma(n1 - kk + 1.0));
    mx = std::max(mx, terms.back());
  }
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  const double log_p = mx + std::log(s) - n1 * std::numbers::ln2;
  return std::clamp(std::exp(log_p), 0.0, 1.0);
}

std::size_t expansion_sample_size(std::size_t D, double eta) {
  if (!(eta > 0.0 && eta < 1.0)) throw DomainError("eta must lie in (0, 1)");
  const double n = 4.0 * static_cast<double>(D) + 2.0 * std::log(1.0 / eta);
  return static_cast<std::size_t>(std::ceil(n - 1e-12));
}

Vec random_unit(std::size_t D, Rng& rng) {
  for (;;) {
    Vec g = gaussian(D, rng);
    const double n = g.norm();
    if (n > 1e-300) return g / n;
  }
}

double RateEstimate::stderr_() const {
  if (trials == 0) return 0.0;
  const double p = rate();
  return std::sqrt(p * (1.0 - p) / static_cast<double>(trials));
}

RateEstimate hemisphere_monte_carlo(std::size_t m, std::size_t points, std::size_t trials, std::uint64_t seed, std::size_t jobs) {
  if (points == 0) throw DomainError("need at least one point");
  std::vector<unsigned char> hit(trials, 0);
  parallel_for(trials, jobs, [&](std::size_t t) {
    Rng rng = make_rng(derive_seed(seed, {hash_tag("hemisphere"), t}));
    std::vector<Vec> pts;
    pts.reserve(points);
    for (std::size_t i = 0; i < points; ++i) pts.push_back(random_unit(m + 1, rng));
    hit[t] = hemisphere_exists(pts) ? 1 : 0;
  });
  RateEstimate r;
  r.trials = trials;
  for (auto h : hit) r.hits += h;
  return r;
}

ExpansionResult expansion_experiment(std::size_t D, double eta, std::size_t trials, std::uint64_t seed,
                                     std::optional<std::size_t> n, std::size_t jobs) {
  if (D < 1) throw DomainError("D must be positive");
  if (trials == 0) throw DomainError("need at least one trial");
  ExpansionResult r;
  r.D = D;
  r.eta = eta;
  r.n = n.value_or(expansion_sample_size(D, eta));
  if (!(eta > 0.0 && eta < 1.0)) throw DomainError("eta must lie in (0, 1)");
  r.failures = hemisphere_monte_carlo(D - 1, r.n, trials, derive_seed(seed, {D, r.n}), jobs);
  return r;
}

double spherical_cap_measure(std::size_t D, double theta) {
  if (D < 2) throw DomainError("cap measure needs D >= 2");
  if (!(theta > 0.0 && theta <= kPi / 2 + 1e-15)) throw DomainError("theta must lie in (0, pi/2]");
  const double m = static_cast<double>(D - 1);
  const double pref = std::exp(std::lgamma((m + 1.0) / 2.0) - std::lgamma(m / 2.0)) / std::sqrt(kPi);
  auto f = [m](double x) { return m == 1.0 ? 1.0 : std::pow(std::sin(x), m - 1.0); };
  const double fa = f(0.0), fb = f(theta), fm = f(theta / 2);
  const double whole = simpson(0.0, theta, fa, fm, fb);
  const double integral = adaptive_simpson(f, 0.0, theta, fa, fm, fb, whole, 1e-10, 50);
  return pref * integral;
}

double approx_spherical_cone_measure(std::size_t D, std::size_t d, double psi, double eps) {
  if (d < 1 || d > D) throw DomainError("span dimension must lie in [1, D]");
  const double cap = d == 1 ? 0.5 : spherical_cap_measure(d, psi);
  if (d == D) return cap;
  const double a = static_cast<double>(D - d) / 2.0, b = static_cast<double>(d) / 2.0;
  return boost::math::ibeta(a, b, eps * eps) * cap;
}

VolumeRatioResult volume_ratio_experiment(const VolumeRatioConfig& cfg) {
  if (!(cfg.d1 >= 1 && cfg.d1 <= cfg.d2 && cfg.d2 <= cfg.D)) throw DomainError("need 1 <= d1 <= d2 <= D");
  if (cfg.eps_grid.empty()) throw DomainError("epsilon grid is empty");
  for (double e : cfg.eps_grid)
    if (!(e > 0.0 && e < 0.5)) throw DomainError("epsilon grid must lie in (0, 0.5)");
  if (cfg.samples == 0) throw DomainError("need at least one sample");

  Rng setup_rng = make_rng(derive_seed(cfg.seed, {hash_tag("volume-setup")}));
  const Mat Q = random_orthogonal(cfg.D, setup_rng);
  const Vec axis = Q.col(0);
  const Mat basis1 = Q.leftCols(static_cast<Eigen::Index>(cfg.d1));
  const Mat basis2 = Q.leftCols(static_cast<Eigen::Index>(cfg.d2));
  const std::size_t G = cfg.eps_grid.size();

  auto cone_at = [&](int which, double eps) {
    return SphericalCone{which == 1 ? basis1 : basis2, axis, which == 1 ? cfg.psi1 : cfg.psi2, eps};
  };
  for (double e : cfg.eps_grid) {
    cone_at(1, e).validate();
    cone_at(2, e).validate();
  }

  // Plain rejection sampling, chunked so the result is independent of jobs.
  constexpr std::size_t kChunk = 1 << 16;
  const std::size_t chunks = (cfg.samples + kChunk - 1) / kChunk;
  std::vector<std::vector<std::size_t>> hits(chunks, std::vector<std::size_t>(2 * G, 0));
  parallel_for(chunks, cfg.jobs, [&](std::size_t c) {
    Rng rng = make_rng(derive_seed(cfg.seed, {hash_tag("volume-plain"), c}));
    const std::size_t count = std::min(kChunk, cfg.samples - c * kChunk);
    for (std::size_t i = 0; i < count; ++i) {
      const Vec w = random_unit(cfg.D, rng);
      for (std::size_t g = 0; g < G; ++g) {
        hits[c][g] += cone_membership(w, cone_at(1, cfg.eps_grid[g])).member;
        hits[c][G + g] += cone_membership(w, cone_at(2, cfg.eps_grid[g])).member;
      }
    }
  });

  auto tube_estimate = [&](int which, double eps, std::size_t g, double& se) {
    const std::size_t d = which == 1 ? cfg.d1 : cfg.d2;
    const Mat& basis = which == 1 ? basis1 : basis2;
    const Mat comp = complement_basis(basis);
    const double a = static_cast<double>(cfg.D - d) / 2.0, b = static_cast<double>(d) / 2.0;
    const double r = std::min(1.0, 2.0 * eps);
    const double T = boost::math::ibeta(a, b, r * r);
    const auto cone = cone_at(which, eps);
    std::size_t n = std::min<std::size_t>(cfg.samples, 1'000'000);
    for (int attempt = 0; attempt < 5; ++attempt, n *= 2) {
      const std::size_t tchunks = (n + kChunk - 1) / kChunk;
      std::vector<std::size_t> th(tchunks, 0);
      parallel_for(tchunks, cfg.jobs, [&](std::size_t c) {
        Rng rng = make_rng(derive_seed(cfg.seed, {hash_tag("volume-tube"), static_cast<std::uint64_t>(which), g,
                                                  static_cast<std::uint64_t>(attempt), c}));
        const std::size_t count = std::min(kChunk, n - c * kChunk);
        for (std::size_t i = 0; i < count; ++i) {
          const double s = boost::math::ibeta_inv(a, b, uniform01(rng) * T);
          const Vec ud = random_unit(d, rng);
          const Vec vd = random_unit(cfg.D - d, rng);
          const Vec w = std::sqrt(1.0 - s) * (basis * ud) + std::sqrt(s) * (comp * vd);
          th[c] += cone_membership(w, cone).member;
        }
      });
      std::size_t total = 0;
      for (auto h : th) total += h;
      if (total >= cfg.min_accepted) {
        const double p = static_cast<double>(total) / static_cast<double>(n);
        se = T * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
        return T * p;
      }
    }
    throw DomainError("volume-ratio experiment: too few accepted samples even after enlarging the tube sample");
  };

  VolumeRatioResult out;
  std::vector<double> lx, ly;
  for (std::size_t g = 0; g < G; ++g) {
    VolumeEstimate e;
    e.eps = cfg.eps_grid[g];
    std::size_t h1 = 0, h2 = 0;
    for (const auto& c : hits) h1 += c[g], h2 += c[G + g];
    const double n = static_cast<double>(cfg.samples);
    auto plain = [&](std::size_t h, double& se) {
      const double p = static_cast<double>(h) / n;
      se = std::sqrt(p * (1.0 - p) / n);
      return p;
    };
    if (h1 >= cfg.min_accepted || cfg.d1 == cfg.D) {
      e.mu1 = plain(h1, e.se1);
    } else {
      e.mu1 = tube_estimate(1, e.eps, g, e.se1);
      e.tube1 = true;
    }
    if (h2 >= cfg.min_accepted || cfg.d2 == cfg.D) {
      e.mu2 = plain(h2, e.se2);
    } else {
      e.mu2 = tube_estimate(2, e.eps, g, e.se2);
      e.tube2 = true;
    }
    if (!(e.mu1 > 0.0 && e.mu2 > 0.0)) throw DomainError("volume-ratio experiment: zero measure estimate");
    lx.push_back(std::log(e.eps));
    ly.push_back(std::log(e.mu1 / e.mu2));
    out.points.push_back(e);
  }
  out.slope = ls_slope(lx, ly);
  return out;
}

// ---------------------------------------------------------------------------

ClosureSetup make_closure_setup(const ClosureConfig& cfg) {
  if (cfg.d < 1 || cfg.d >= cfg.D) throw DomainError("closure setup needs 1 <= d < D");
  if (cfg.prompt_len < 1) throw DomainError("closure setup needs a prompt");
  epsilon_tilde(cfg.eps, cfg.theta);  // domain check
  Rng rng = make_rng(derive_seed(cfg.seed, {hash_tag("closure-setup")}));
  std::uniform_real_distribution<double> U01(0.0, 1.0);

  const auto D = static_cast<Eigen::Index>(cfg.D), d = static_cast<Eigen::Index>(cfg.d);
  const Mat Q = random_orthogonal(cfg.D, rng);
  const Mat QU = Q.leftCols(d), Qp = Q.rightCols(D - d);

  // Axis and generators in span coordinates.
  Vec c = random_unit(cfg.d, rng);
  Mat Gs(d, d);
  for (;;) {
    for (Eigen::Index i = 0; i < d; ++i) {
      const double phi = cfg.theta * (0.3 + 0.65 * U01(rng));
      Vec t = gaussian(cfg.d, rng);
      t -= t.dot(c) * c;
      const double tn = t.norm();
      t = tn > 1e-12 ? Vec(t / tn) : Vec::Zero(d);
      Gs.col(i) = d == 1 ? c : Vec(std::cos(phi) * c + std::sin(phi) * t);
    }
    if (d == 1 || Gs.fullPivLu().rank() == d) break;
  }

  ClosureSetup s;
  s.cone.basis = QU;
  s.cone.generators = QU * Gs;
  s.cone.eps = cfg.eps;
  s.axis = QU * c;
  const Vec marker = Qp.col(0);

  auto random_member = [&](Rng& r, bool use_marker) {
    Vec lam(d);
    for (Eigen::Index i = 0; i < d; ++i) lam(i) = 0.05 + U01(r);
    Vec u = s.cone.generators * lam;
    u.normalize();
    Vec v = use_marker ? marker : Vec(Qp * random_unit(cfg.D - cfg.d, r));
    const double rad = use_marker ? cfg.eps * (0.5 + 0.5 * U01(r)) : cfg.eps * U01(r);
    return Vec(std::sqrt(1.0 - rad * rad) * u + rad * v);
  };
  for (std::size_t i = 0; i < cfg.prompt_len; ++i) s.prompt.push_back(random_member(rng, cfg.attention == ClosureAttention::marker));

  std::normal_distribution<double> N01;
  s.layers.resize(cfg.n_layers);
  for (auto& layer : s.layers) {
    layer.heads.resize(cfg.n_heads);
    for (auto& head : layer.heads) {
      Mat Wov;
      if (cfg.identity_ov) {
        Wov = Mat::Identity(D, D);
      } else {
        Mat M = Mat::Identity(d, d);
        for (Eigen::Index i = 0; i < d; ++i)
          for (Eigen::Index j = 0; j < d; ++j) M(i, j) += 0.3 * U01(rng);
        const Mat A = Gs * M * Gs.inverse();
        const double smin = Eigen::JacobiSVD<Mat>(A).singularValues().minCoeff();
        Mat B(D - d, D - d);
        for (Eigen::Index i = 0; i < B.rows(); ++i)
          for (Eigen::Index j = 0; j < B.cols(); ++j) B(i, j) = N01(rng);
        if (cfg.attention == ClosureAttention::marker) B.col(0).setZero();
        B *= 0.9 * smin / Eigen::JacobiSVD<Mat>(B).singularValues().maxCoeff();
        Wov = QU * A * QU.transpose() + Qp * B * Qp.transpose();
      }
      const Mat R = random_orthogonal(cfg.D, rng);
      head.output = R;
      head.value = R.transpose() * Wov;
      if (cfg.attention == ClosureAttention::marker) {
        head.query = Mat::Zero(D, D);
        head.key = Mat::Zero(D, D);
        head.query.row(0) = s.axis.transpose();
        head.key.row(0) = 500.0 * marker.transpose();
      } else {
        head.query.resize(D, D);
        head.key.resize(D, D);
        for (Eigen::Index i = 0; i < D; ++i)
          for (Eigen::Index j = 0; j < D; ++j) {
            head.query(i, j) = N01(rng) / std::sqrt(static_cast<double>(cfg.D));
            head.key(i, j) = N01(rng) / std::sqrt(static_cast<double>(cfg.D));
          }
      }
    }
  }
  return s;
}

void check_closure_hypothesis(const ClosureSetup& setup, std::uint64_t seed) {
  setup.cone.validate();
  const auto& cone = setup.cone;
  for (std::size_t i = 0; i < setup.prompt.size(); ++i) {
    if (!cone_membership(setup.prompt[i], cone, std::nullopt, 1e-12).member) {
      throw HypothesisError("prompt embedding " + std::to_string(i) + " is not in the cone");
    }
  }
  Rng rng = make_rng(derive_seed(seed, {hash_tag("closure-check")}));
  std::uniform_real_distribution<double> U01(0.0, 1.0);
  const auto D = cone.ambient_dim(), d = cone.span_dim();
  const Mat comp = complement_basis(cone.basis);
  std::vector<Vec> samples;
  for (Eigen::Index j = 0; j < cone.generators.cols(); ++j) samples.push_back(cone.generators.col(j).normalized());
  for (int i = 0; i < 100; ++i) {
    Vec lam(cone.generators.cols());
    for (Eigen::Index k = 0; k < lam.size(); ++k) lam(k) = U01(rng);
    Vec u = (cone.generators * lam).normalized();
    const double r = cone.eps * U01(rng);
    Vec v = D > d ? Vec(comp * random_unit(D - d, rng)) : Vec::Zero(static_cast<Eigen::Index>(D));
    samples.push_back(std::sqrt(1.0 - r * r) * u + r * v);
  }
  for (std::size_t l = 0; l < setup.layers.size(); ++l) {
    for (std::size_t m = 0; m < setup.layers[l].heads.size(); ++m) {
      const auto& h = setup.layers[l].heads[m];
      const Mat Wov = h.output * h.value;
      for (const auto& w : samples) {
        const Vec img = Wov * w;
        if (!(img.norm() > 0.0) || !cone_membership(img, cone, std::nullopt, 1e-9).member) {
          throw HypothesisError("W_o W_v of layer " + std::to_string(l) + " head " + std::to_string(m) +
                                " maps a cone member outside the cone");
        }
      }
    }
  }
}

ClosureResult cone_closure_experiment(const ClosureSetup& setup, const ClosureConfig& cfg, bool record_attention) {
  check_closure_hypothesis(setup, cfg.seed);
  ClosureResult out;
  out.eps_tilde = epsilon_tilde(cfg.eps, cfg.theta);
  const std::size_t n = setup.prompt.size();
  DecoderState state(setup.layers, setup.cone.ambient_dim(), ModelMode::theory,
                     {nullptr, n, record_attention ? RecordMode::generated : RecordMode::none, false});
  for (std::size_t i = 0; i + 1 < n; ++i) state.push_embedding(setup.prompt[i]);
  state.begin_generation();
  state.push_embedding(setup.prompt[n - 1]);
  out.sequence = setup.prompt;

  Rng rng = make_rng(derive_seed(cfg.seed, {hash_tag("closure-inject")}));
  const std::size_t inject_at = cfg.steps / 2;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Vec next;
    if (cfg.inject > 0 && step >= inject_at && step < inject_at + cfg.inject) {
      next = random_unit(setup.cone.ambient_dim(), rng);
    } else {
      const double norm = state.output().norm();
      if (!(norm > 0.0)) throw DomainError("final activation has zero norm");
      next = state.output() / norm;
      ++out.generated;
    }
    const Membership m = cone_membership(next, setup.cone, out.eps_tilde, cfg.ratio_slack);
    out.max_ratio = std::max(out.max_ratio, m.ratio);
    if (!m.member) ++out.violations;
    out.sequence.push_back(next);
    if (step + 1 < cfg.steps) state.push_embedding(next);
  }
  if (record_attention) out.rows = state.take_attention().rows;
  return out;
}

void write_geometry_csv(std::ostream& out, const std::vector<GeometryRecord>& records) {
  out << "experiment,parameters,estimate,stderr,bound,pass\n";
  char buf[160];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%s\n", r.estimate, r.stderr_, r.bound, r.pass ? "true" : "false");
    out << r.experiment << ",\"" << r.parameters << '"' << buf;
  }
}

}  // namespace drift
