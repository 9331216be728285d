#pragma once

// Discrete Fourier and Hartley transforms (unnormalized forward convention)
// and the parameter-free 2D token-mixing variants built on them.

#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spectramix/tensor.hpp"

namespace spectramix {

struct ComplexSeq {
  std::vector<double> re;
  std::vector<double> im;

  ComplexSeq() = default;
  explicit ComplexSeq(std::size_t n) : re(n, 0.0), im(n, 0.0) {}
  ComplexSeq(std::vector<double> r, std::vector<double> i) : re(std::move(r)), im(std::move(i)) {
    if (re.size() != im.size()) throw std::invalid_argument("ComplexSeq: re/im length mismatch");
  }
  static ComplexSeq real(std::span<const double> x) {
    return ComplexSeq(std::vector<double>(x.begin(), x.end()), std::vector<double>(x.size(), 0.0));
  }

  std::size_t size() const { return re.size(); }
};

enum class MixingKind { FourierReal, Hartley, FourierImag, Modulus, Phase };

inline constexpr std::array<MixingKind, 5> kAllMixingKinds = {
    MixingKind::FourierReal, MixingKind::Hartley, MixingKind::FourierImag, MixingKind::Modulus,
    MixingKind::Phase};

inline constexpr std::array<MixingKind, 3> kLinearMixingKinds = {
    MixingKind::FourierReal, MixingKind::Hartley, MixingKind::FourierImag};

inline constexpr bool is_linear(MixingKind kind) {
  return kind == MixingKind::FourierReal || kind == MixingKind::Hartley ||
         kind == MixingKind::FourierImag;
}

inline constexpr std::string_view to_string(MixingKind kind) {
  switch (kind) {
    case MixingKind::FourierReal: return "fourier-real";
    case MixingKind::Hartley: return "hartley";
    case MixingKind::FourierImag: return "fourier-imag";
    case MixingKind::Modulus: return "modulus";
    case MixingKind::Phase: return "phase";
  }
  return "unknown";
}

inline MixingKind parse_mixing_kind(std::string_view name) {
  for (auto kind : kAllMixingKinds) {
    if (to_string(kind) == name) return kind;
  }
  throw std::invalid_argument("unknown mixing kind '" + std::string(name) +
                              "' (expected fourier-real|hartley|fourier-imag|modulus|phase)");
}

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && std::has_single_bit(n); }

/// cos/sin of 2πj/n for j in [0, n). Kernels index it with (a·b) mod n,
/// which keeps the argument reduction exact for any length.
struct Twiddles {
  explicit Twiddles(std::size_t n) : cos(n), sin(n) {
    for (std::size_t j = 0; j < n; ++j) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
      cos[j] = std::cos(angle);
      sin[j] = std::sin(angle);
    }
  }
  std::size_t size() const { return cos.size(); }

  std::vector<double> cos;
  std::vector<double> sin;
};

/// In-place iterative radix-2 decimation-in-time FFT; n must be a power of two.
inline void fft_radix2(double* re, double* im, const Twiddles& tw) {
  const std::size_t n = tw.size();
  if (n <= 1) return;
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len >> 1;
    const std::size_t stride = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        // w = e^{-2πi k/len}
        const double wr = tw.cos[k * stride];
        const double wi = -tw.sin[k * stride];
        const std::size_t a = start + k;
        const std::size_t b = a + half;
        const double tr = re[b] * wr - im[b] * wi;
        const double ti = re[b] * wi + im[b] * wr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
      }
    }
  }
}

/// Row-major complex matrix stored as split real/imaginary planes.
struct ComplexMatrix {
  ComplexMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), re({r, c}), im({r, c}) {}

  std::size_t rows;
  std::size_t cols;
  Tensor re;
  Tensor im;
};

/// Dense DFT along each row: Y = X·(C − iS) with C,S the cos/sin kernels.
/// `imag_is_zero` skips the two products that would multiply a zero plane.
inline void dft_rows_dense(ComplexMatrix& m, bool imag_is_zero) {
  const std::size_t n = m.cols;
  const Twiddles tw(n);
  Tensor c({n, n});
  Tensor s({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t idx = (j * k) % n;
      c(j, k) = tw.cos[idx];
      s(j, k) = tw.sin[idx];
    }
  }
  Tensor re = matmul(m.re, c);
  Tensor im = matmul(m.re, s);
  im *= -1.0;
  if (!imag_is_zero) {
    kernels::gemm_acc(m.rows, n, n, m.im.data(), s.data(), re.data());
    kernels::gemm_acc(m.rows, n, n, m.im.data(), c.data(), im.data());
  }
  m.re = std::move(re);
  m.im = std::move(im);
}

inline void dft_rows(ComplexMatrix& m, bool imag_is_zero) {
  if (!is_pow2(m.cols)) {
    dft_rows_dense(m, imag_is_zero);
    return;
  }
  const Twiddles tw(m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) {
    fft_radix2(m.re.data() + r * m.cols, m.im.data() + r * m.cols, tw);
  }
}

inline ComplexMatrix transpose(const ComplexMatrix& m) {
  ComplexMatrix out(m.cols, m.rows);
  kernels::transpose(m.rows, m.cols, m.re.data(), out.re.data());
  kernels::transpose(m.rows, m.cols, m.im.data(), out.im.data());
  return out;
}

/// F_seq(F_h(z)): hidden-axis transform first, then sequence axis.
inline ComplexMatrix dft2(ComplexMatrix z, bool imag_is_zero) {
  dft_rows(z, imag_is_zero);
  ComplexMatrix t = transpose(z);
  dft_rows(t, false);
  return transpose(t);
}

inline ComplexMatrix dft2_real(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("mix2d: expected a rank-2 [seq, hidden] tensor");
  ComplexMatrix z(x.rows(), x.cols());
  z.re = x;
  return dft2(std::move(z), true);
}

}  // namespace detail

/// Direct O(N²) evaluation of y_k = Σ x_n e^{-2πi nk/N}.
inline ComplexSeq dft_naive(const ComplexSeq& x) {
  const std::size_t n = x.size();
  if (n == 0) throw std::invalid_argument("dft_naive: empty input");
  const detail::Twiddles tw(n);
  ComplexSeq y(n);
  for (std::size_t k = 0; k < n; ++k) {
    double sr = 0.0;
    double si = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t idx = (t * k) % n;
      const double c = tw.cos[idx];
      const double s = tw.sin[idx];
      sr += x.re[t] * c + x.im[t] * s;
      si += x.im[t] * c - x.re[t] * s;
    }
    y.re[k] = sr;
    y.im[k] = si;
  }
  return y;
}

/// Radix-2 FFT for power-of-two N; other lengths go through dft_naive.
inline ComplexSeq fft(const ComplexSeq& x) {
  const std::size_t n = x.size();
  if (n == 0) throw std::invalid_argument("fft: empty input");
  if (!detail::is_pow2(n)) return dft_naive(x);
  ComplexSeq y = x;
  detail::fft_radix2(y.re.data(), y.im.data(), detail::Twiddles(n));
  return y;
}

/// Direct O(N²) discrete Hartley transform with the cas kernel.
inline std::vector<double> dht_naive(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n == 0) throw std::invalid_argument("dht_naive: empty input");
  const detail::Twiddles tw(n);
  std::vector<double> y(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double s = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t idx = (t * k) % n;
      s += x[t] * (tw.cos[idx] + tw.sin[idx]);
    }
    y[k] = s;
  }
  return y;
}

/// Hartley transform as Re(F) − Im(F) of the Fourier transform.
inline std::vector<double> fht(std::span<const double> x) {
  const ComplexSeq f = fft(ComplexSeq::real(x));
  std::vector<double> y(f.size());
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = f.re[k] - f.im[k];
  return y;
}

/// Parameter-free token mixing of a [seq, hidden] matrix through its 2D DFT.
inline Tensor mix2d(const Tensor& x, MixingKind kind) {
  const detail::ComplexMatrix f = detail::dft2_real(x);
  Tensor out(x.shape());
  const double* re = f.re.data();
  const double* im = f.im.data();
  double* o = out.data();
  const std::size_t n = out.size();
  switch (kind) {
    case MixingKind::FourierReal:
      for (std::size_t i = 0; i < n; ++i) o[i] = re[i];
      break;
    case MixingKind::Hartley:
      for (std::size_t i = 0; i < n; ++i) o[i] = re[i] - im[i];
      break;
    case MixingKind::FourierImag:
      for (std::size_t i = 0; i < n; ++i) o[i] = im[i];
      break;
    case MixingKind::Modulus:
      for (std::size_t i = 0; i < n; ++i) o[i] = std::hypot(re[i], im[i]);
      break;
    case MixingKind::Phase:
      for (std::size_t i = 0; i < n; ++i) o[i] = std::atan2(im[i], re[i]);
      break;
  }
  return out;
}

/// Jᵀ·grad_out for mix2d at x.
///
/// The cos, cas and −sin kernels are symmetric in (n,m)↔(k,h), so the linear
/// kinds are their own adjoint and x is not read. Modulus and Phase chain the
/// elementwise derivative through the adjoint of the complex transform:
/// grad = Re(DFT2(a − ib)) with (a, b) the per-frequency sensitivities to
/// (Re F, −Im F). Frequencies where |F| = 0 contribute nothing.
inline Tensor mix2d_vjp(MixingKind kind, const Tensor& x, const Tensor& grad_out) {
  if (x.shape() != grad_out.shape()) throw ShapeError("mix2d_vjp", x.shape(), grad_out.shape());
  if (is_linear(kind)) return mix2d(grad_out, kind);

  const detail::ComplexMatrix f = detail::dft2_real(x);
  detail::ComplexMatrix w(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double re = f.re[i];
    const double im = f.im[i];
    const double g = grad_out[i];
    const double mag2 = re * re + im * im;
    if (mag2 == 0.0) continue;
    double a = 0.0;
    double b = 0.0;
    if (kind == MixingKind::Modulus) {
      const double mag = std::sqrt(mag2);
      a = g * re / mag;
      b = g * im / mag;
    } else {
      a = -g * im / mag2;
      b = g * re / mag2;
    }
    w.re[i] = a;
    w.im[i] = -b;
  }
  return detail::dft2(std::move(w), false).re;
}

}  // namespace spectramix
