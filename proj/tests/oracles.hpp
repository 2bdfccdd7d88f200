#pragma once

// Reference computations written independently of the library, in long
// double where it matters. Tests compare library output against these.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace oracle {

inline std::vector<long double> softmax(const std::vector<long double>& x) {
  long double mx = x[0];
  for (auto v : x) mx = std::max(mx, v);
  std::vector<long double> out;
  long double s = 0;
  for (auto v : x) {
    out.push_back(std::exp(v - mx));
    s += out.back();
  }
  for (auto& v : out) v /= s;
  return out;
}

// Prefix scaled to pi^k / pi, suffix to (1 - pi^k) / (1 - pi).
inline std::vector<long double> split_softmax(const std::vector<double>& row, std::size_t L, double k) {
  long double pi = 0;
  for (std::size_t i = 0; i < L; ++i) pi += row[i];
  const long double target = std::pow(pi, static_cast<long double>(k));
  std::vector<long double> out;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i < L) {
      out.push_back(pi > 0 ? row[i] * target / pi : 0.0L);
    } else {
      out.push_back(pi < 1 ? row[i] * (1 - target) / (1 - pi) : 0.0L);
    }
  }
  return out;
}

// p_u^(1-a) p_c^a, normalized.
inline std::vector<long double> cfg(const std::vector<long double>& pc, const std::vector<long double>& pu, long double a) {
  std::vector<long double> out;
  long double s = 0;
  for (std::size_t i = 0; i < pc.size(); ++i) {
    out.push_back(std::pow(pu[i], 1 - a) * std::pow(pc[i], a));
    s += out.back();
  }
  for (auto& v : out) v /= s;
  return out;
}

// Exact for small N: 2^{1-N} sum_{k<=m} C(N-1, k) in integers.
inline double wendel(unsigned m, unsigned N) {
  std::uint64_t sum = 0, c = 1;
  for (unsigned k = 0; k <= m && k <= N - 1; ++k) {
    sum += c;
    c = c * (N - 1 - k) / (k + 1);
  }
  return static_cast<double>(sum) / static_cast<double>(std::uint64_t{1} << (N - 1));
}

inline long double eps_tilde(long double e, long double th) {
  const long double c = std::cos(th);
  return e / std::sqrt(e * e + c * c * (1 - e * e));
}

struct Stats {
  double mean = 0, std = 0;
  std::size_t n = 0;
};

// Mean and n-1 standard deviation.
inline Stats stats(const std::vector<double>& xs) {
  Stats s;
  s.n = xs.size();
  if (xs.empty()) return s;
  long double sum = 0;
  for (double x : xs) sum += x;
  const long double m = sum / xs.size();
  long double ss = 0;
  for (double x : xs) ss += (x - m) * (x - m);
  s.mean = static_cast<double>(m);
  s.std = xs.size() > 1 ? static_cast<double>(std::sqrt(ss / (xs.size() - 1))) : 0.0;
  return s;
}

}  // namespace oracle
