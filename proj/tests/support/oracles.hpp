#pragma once

// Independent reference computations used only by the tests. Nothing here
// calls into the spectral or autodiff code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <vector>

#include "spectramix/rng.hpp"
#include "spectramix/tensor.hpp"

namespace spectramix::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

/// 2D DFT by direct summation with std::complex and freshly computed angles.
inline std::vector<std::complex<double>> dft2_oracle(const Tensor& x) {
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  std::vector<std::complex<double>> out(rows * cols);
  for (std::size_t k = 0; k < rows; ++k) {
    for (std::size_t h = 0; h < cols; ++h) {
      std::complex<double> acc = 0.0;
      for (std::size_t n = 0; n < rows; ++n) {
        for (std::size_t m = 0; m < cols; ++m) {
          const double angle = -2.0 * std::numbers::pi *
                               (static_cast<double>(n * k) / static_cast<double>(rows) +
                                static_cast<double>(m * h) / static_cast<double>(cols));
          acc += x(n, m) * std::polar(1.0, angle);
        }
      }
      out[k * cols + h] = acc;
    }
  }
  return out;
}

/// y_{k,h} = Σ x_{n,m} cas(2π(nk/L + mh/H)), the true 2D Hartley kernel.
inline Tensor cas2d_oracle(const Tensor& x) {
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  Tensor out(x.shape());
  for (std::size_t k = 0; k < rows; ++k) {
    for (std::size_t h = 0; h < cols; ++h) {
      double acc = 0.0;
      for (std::size_t n = 0; n < rows; ++n) {
        for (std::size_t m = 0; m < cols; ++m) {
          const double angle = 2.0 * std::numbers::pi *
                               (static_cast<double>(n * k) / static_cast<double>(rows) +
                                static_cast<double>(m * h) / static_cast<double>(cols));
          acc += x(n, m) * (std::cos(angle) + std::sin(angle));
        }
      }
      out(k, h) = acc;
    }
  }
  return out;
}

/// Central finite differences of a scalar function with respect to every
/// element of `x` (x is perturbed in place and restored).
inline Tensor finite_difference(const std::function<double()>& f, Tensor& x, double step = 1e-6) {
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f();
    x[i] = saved - step;
    const double down = f();
    x[i] = saved;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

/// ‖a − b‖ / max(‖a‖, ‖b‖, 1e-5). The floor keeps gradients that are zero in
/// exact arithmetic (finite differences return ~1e-11 noise) from reading as 100% error.
inline double relative_error(const Tensor& a, const Tensor& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max(std::sqrt(std::max(na, nb)), 1e-5);
  return std::sqrt(diff) / denom;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Longest common subsequence by enumerating every subsequence of `a`.
template <class T>
std::size_t brute_force_lcs(const std::vector<T>& a, const std::vector<T>& b) {
  std::size_t best = 0;
  const std::size_t n = a.size();
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    std::vector<T> sub;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (std::size_t{1} << i)) sub.push_back(a[i]);
    }
    if (sub.size() <= best) continue;
    std::size_t j = 0;
    for (std::size_t i = 0; i < b.size() && j < sub.size(); ++i) {
      if (b[i] == sub[j]) ++j;
    }
    if (j == sub.size()) best = sub.size();
  }
  return best;
}

}  // namespace spectramix::testing
