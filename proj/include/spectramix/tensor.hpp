#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace spectramix {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Raised when operand extents disagree. The message names every shape involved.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b)
      : std::invalid_argument(op + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b)),
        lhs(a),
        rhs(b) {}

  Shape lhs;
  Shape rhs;
};

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of doubles. Rank-2 tensors are the common case
/// ([sequence, width]); higher ranks are only used for storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    for (auto extent : shape_) {
      if (extent == 0) throw std::invalid_argument("Tensor: zero extent in " + shape_string(shape_));
    }
  }
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw std::invalid_argument("Tensor: " + shape_string(shape_) + " does not hold " +
                                  std::to_string(data_.size()) + " values");
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
  }
  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Leading extent for rank-2, 1 for rank-1.
  std::size_t rows() const { return shape_.size() >= 2 ? data_.size() / shape_.back() : 1; }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& other) {
    if (other.shape_ != shape_) throw ShapeError("add", shape_, other.shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline Tensor operator+(Tensor a, const Tensor& b) {
  a += b;
  return a;
}

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

namespace kernels {

/// C[M,N] += A[M,K] * B[K,N], all row-major and contiguous.
/// Blocked over K and N with a 4-row register tile; the inner loop vectorizes.
inline void gemm_acc(std::size_t M, std::size_t K, std::size_t N, const double* A, const double* B,
                     double* C) {
  constexpr std::size_t kBlockK = 256;
  constexpr std::size_t kBlockN = 512;
  for (std::size_t k0 = 0; k0 < K; k0 += kBlockK) {
    const std::size_t k1 = std::min(K, k0 + kBlockK);
    for (std::size_t j0 = 0; j0 < N; j0 += kBlockN) {
      const std::size_t j1 = std::min(N, j0 + kBlockN);
      std::size_t i = 0;
      for (; i + 4 <= M; i += 4) {
        double* c0 = C + i * N;
        double* c1 = c0 + N;
        double* c2 = c1 + N;
        double* c3 = c2 + N;
        const double* a0 = A + i * K;
        const double* a1 = a0 + K;
        const double* a2 = a1 + K;
        const double* a3 = a2 + K;
        for (std::size_t k = k0; k < k1; ++k) {
          const double x0 = a0[k], x1 = a1[k], x2 = a2[k], x3 = a3[k];
          const double* b = B + k * N;
          for (std::size_t j = j0; j < j1; ++j) {
            const double bj = b[j];
            c0[j] += x0 * bj;
            c1[j] += x1 * bj;
            c2[j] += x2 * bj;
            c3[j] += x3 * bj;
          }
        }
      }
      for (; i < M; ++i) {
        double* c = C + i * N;
        const double* a = A + i * K;
        for (std::size_t k = k0; k < k1; ++k) {
          const double x = a[k];
          const double* b = B + k * N;
          for (std::size_t j = j0; j < j1; ++j) c[j] += x * b[j];
        }
      }
    }
  }
}

/// out[cols, rows] = in[rows, cols]ᵀ
inline void transpose(std::size_t rows, std::size_t cols, const double* in, double* out) {
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t r1 = std::min(rows, r0 + kTile);
      const std::size_t c1 = std::min(cols, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
      }
    }
  }
}

}  // namespace kernels

inline Tensor transpose(const Tensor& a) {
  Tensor out({a.cols(), a.rows()});
  kernels::transpose(a.rows(), a.cols(), a.data(), out.data());
  return out;
}

/// a[M,K] · b[K,N]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows() || b.rank() != 2) throw ShapeError("matmul", a.shape(), b.shape());
  Tensor out({a.rows(), b.cols()});
  kernels::gemm_acc(a.rows(), a.cols(), b.cols(), a.data(), b.data(), out.data());
  return out;
}

/// a[M,K] · b[N,K]ᵀ
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt", a.shape(), b.shape());
  return matmul(a, transpose(b));
}

/// a[K,M]ᵀ · b[K,N]
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_tn", a.shape(), b.shape());
  return matmul(transpose(a), b);
}

/// acc += a[K,M]ᵀ · b[K,N]
inline void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& acc) {
  if (a.rows() != b.rows() || acc.rows() != a.cols() || acc.cols() != b.cols()) {
    throw ShapeError("matmul_tn_acc", a.shape(), b.shape());
  }
  const Tensor at = transpose(a);
  kernels::gemm_acc(at.rows(), at.cols(), b.cols(), at.data(), b.data(), acc.data());
}

inline double sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s;
}

inline double dot(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("dot", a.shape(), b.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace spectramix
