#pragma once

// Dense ops with hand-written vector-Jacobian products. Every forward op is a
// pure function; its `_vjp` partner maps an output gradient back to the input
// gradient and accumulates (+=) into any parameter gradient it is handed.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spectramix/rng.hpp"
#include "spectramix/tensor.hpp"

namespace spectramix {

inline constexpr int kIgnoreLabel = -1;
inline constexpr double kDefaultLayerNormEps = 1e-12;

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

struct ParamId {
  std::size_t index = 0;
};

/// Ordered, name-unique parameter store. Order is insertion order and is the
/// order used for checkpoints and optimizer state.
class ParameterSet {
 public:
  ParamId add(std::string name, Shape shape) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    const ParamId id{params_.size()};
    index_.emplace(name, id.index);
    Tensor value(shape);
    Tensor grad(std::move(shape));
    params_.push_back({std::move(name), std::move(value), std::move(grad)});
    return id;
  }

  Parameter& operator[](ParamId id) { return params_[id.index]; }
  const Parameter& operator[](ParamId id) const { return params_[id.index]; }
  Tensor& value(ParamId id) { return params_[id.index].value; }
  const Tensor& value(ParamId id) const { return params_[id.index].value; }
  Tensor& grad(ParamId id) { return params_[id.index].grad; }

  std::optional<ParamId> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return ParamId{it->second};
  }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline void init_normal(Tensor& t, Rng& rng, double stddev) {
  for (auto& v : t.values()) v = stddev * rng.normal();
}

// ---------------------------------------------------------------------------
// linear

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2 || x.cols() != w.rows()) throw ShapeError("linear", x.shape(), w.shape());
  if (b.rank() != 1 || b.size() != w.cols()) throw ShapeError("linear(bias)", w.shape(), b.shape());
  Shape out_shape = x.shape();
  out_shape.back() = w.cols();
  Tensor y(out_shape);
  const std::size_t rows = x.rows();
  const std::size_t n = w.cols();
  for (std::size_t r = 0; r < rows; ++r) std::copy(b.data(), b.data() + n, y.data() + r * n);
  kernels::gemm_acc(rows, w.rows(), n, x.data(), w.data(), y.data());
  return y;
}

/// Returns dL/dx; accumulates dL/dW into grad_w and dL/db into grad_b.
inline Tensor linear_vjp(const Tensor& x, const Tensor& w, const Tensor& grad_y, Tensor& grad_w,
                         Tensor& grad_b) {
  const std::size_t rows = x.rows();
  const std::size_t d_in = w.rows();
  const std::size_t d_out = w.cols();
  if (grad_y.rows() != rows || grad_y.cols() != d_out) {
    throw ShapeError("linear_vjp", x.shape(), grad_y.shape());
  }
  const Tensor wt = transpose(w);
  Tensor grad_x(x.shape());
  kernels::gemm_acc(rows, d_out, d_in, grad_y.data(), wt.data(), grad_x.data());

  Tensor xt({d_in, rows});
  kernels::transpose(rows, d_in, x.data(), xt.data());
  kernels::gemm_acc(d_in, rows, d_out, xt.data(), grad_y.data(), grad_w.data());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* g = grad_y.data() + r * d_out;
    for (std::size_t j = 0; j < d_out; ++j) grad_b[j] += g[j];
  }
  return grad_x;
}

// ---------------------------------------------------------------------------
// layer norm

struct LayerNormCache {
  Tensor normalized;
  std::vector<double> inv_std;
};

/// Per-row (x − mean)/sqrt(var + eps)·gamma + beta with population variance.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                         LayerNormCache* cache = nullptr) {
  const std::size_t d = x.cols();
  if (gamma.size() != d || beta.size() != d) throw ShapeError("layer_norm", x.shape(), gamma.shape());
  const std::size_t rows = x.rows();
  Tensor y(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + eps);
    inv_std[r] = rstd;
    double* xh = xhat.data() + r * d;
    double* out = y.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (in[j] - mean) * rstd;
      out[j] = xh[j] * gamma[j] + beta[j];
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

inline Tensor layer_norm_vjp(const LayerNormCache& cache, const Tensor& gamma, const Tensor& grad_y,
                             Tensor& grad_gamma, Tensor& grad_beta) {
  const Tensor& xhat = cache.normalized;
  if (grad_y.shape() != xhat.shape()) throw ShapeError("layer_norm_vjp", xhat.shape(), grad_y.shape());
  const std::size_t d = xhat.cols();
  const std::size_t rows = xhat.rows();
  Tensor grad_x(xhat.shape());
  std::vector<double> gxhat(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* g = grad_y.data() + r * d;
    const double* xh = xhat.data() + r * d;
    double mean_g = 0.0;
    double mean_gx = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      grad_gamma[j] += g[j] * xh[j];
      grad_beta[j] += g[j];
      gxhat[j] = g[j] * gamma[j];
      mean_g += gxhat[j];
      mean_gx += gxhat[j] * xh[j];
    }
    mean_g /= static_cast<double>(d);
    mean_gx /= static_cast<double>(d);
    double* gx = grad_x.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) gx[j] = cache.inv_std[r] * (gxhat[j] - mean_g - xh[j] * mean_gx);
  }
  return grad_x;
}

// ---------------------------------------------------------------------------
// GELU (exact erf form)

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline Tensor gelu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu(x[i]);
  return y;
}

inline Tensor gelu_vjp(const Tensor& x, const Tensor& grad_y) {
  const double inv_sqrt_2pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  Tensor grad_x(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
    grad_x[i] = grad_y[i] * (cdf + v * pdf);
  }
  return grad_x;
}

// ---------------------------------------------------------------------------
// softmax over the last axis

inline Tensor softmax(const Tensor& x) {
  Tensor y(x.shape());
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* in = x.data() + r * n;
    double* out = y.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[j] = std::exp(in[j] - mx);
      total += out[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] /= total;
  }
  return y;
}

/// Takes the softmax output y (not its input).
inline Tensor softmax_vjp(const Tensor& y, const Tensor& grad_y) {
  Tensor grad_x(y.shape());
  const std::size_t n = y.cols();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const double* p = y.data() + r * n;
    const double* g = grad_y.data() + r * n;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += p[j] * g[j];
    double* gx = grad_x.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) gx[j] = p[j] * (g[j] - s);
  }
  return grad_x;
}

// ---------------------------------------------------------------------------
// embeddings

class IndexError : public std::out_of_range {
 public:
  IndexError(const std::string& what, std::size_t pos, std::int64_t id, std::size_t limit)
      : std::out_of_range(what + ": id " + std::to_string(id) + " at position " + std::to_string(pos) +
                          " outside [0, " + std::to_string(limit) + ")"),
        position(pos),
        value(id) {}

  std::size_t position;
  std::int64_t value;
};

inline Tensor embedding_lookup(std::span<const int> ids, const Tensor& table) {
  if (ids.empty()) throw std::invalid_argument("embedding_lookup: empty id sequence");
  const std::size_t vocab = table.rows();
  const std::size_t d = table.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding_lookup", i, ids[i], vocab);
    }
    std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  return out;
}

/// Scatter-add of grad rows into grad_table; repeated ids accumulate.
inline void embedding_vjp(std::span<const int> ids, const Tensor& grad_out, Tensor& grad_table) {
  const std::size_t d = grad_table.cols();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    double* dst = grad_table.data() + static_cast<std::size_t>(ids[i]) * d;
    const double* src = grad_out.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
}

// ---------------------------------------------------------------------------
// cross-entropy over labelled positions

struct CrossEntropyResult {
  double loss = 0.0;
  Tensor grad;            // dloss/dlogits
  std::size_t count = 0;  // labelled positions
};

/// Mean of −log softmax(logits)[label] over positions whose label is not
/// kIgnoreLabel. With nothing labelled the loss and gradient are zero.
inline CrossEntropyResult masked_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t rows = logits.rows();
  const std::size_t vocab = logits.cols();
  if (labels.size() != rows) {
    throw ShapeError("masked_cross_entropy", logits.shape(), Shape{labels.size()});
  }
  CrossEntropyResult result{0.0, Tensor(logits.shape()), 0};
  for (int label : labels) {
    if (label != kIgnoreLabel) ++result.count;
  }
  if (result.count == 0) return result;
  const double scale = 1.0 / static_cast<double>(result.count);
  for (std::size_t r = 0; r < rows; ++r) {
    const int label = labels[r];
    if (label == kIgnoreLabel) continue;
    if (label < 0 || static_cast<std::size_t>(label) >= vocab) {
      throw IndexError("masked_cross_entropy", r, label, vocab);
    }
    const double* z = logits.data() + r * vocab;
    const double mx = *std::max_element(z, z + vocab);
    double total = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) total += std::exp(z[j] - mx);
    const double log_norm = mx + std::log(total);
    result.loss += (log_norm - z[label]) * scale;
    double* g = result.grad.data() + r * vocab;
    for (std::size_t j = 0; j < vocab; ++j) g[j] = std::exp(z[j] - log_norm) * scale;
    g[label] -= scale;
  }
  return result;
}

// ---------------------------------------------------------------------------
// multi-head attention

struct AttentionConfig {
  std::size_t n_heads = 1;
  std::size_t d_model = 1;
  bool causal = false;

  std::size_t head_dim() const { return d_model / n_heads; }
  void validate() const {
    if (n_heads == 0 || d_model == 0 || d_model % n_heads != 0) {
      throw std::invalid_argument("AttentionConfig: d_model " + std::to_string(d_model) +
                                  " not divisible by n_heads " + std::to_string(n_heads));
    }
  }
};

struct AttentionWeights {
  const Tensor* q_w;
  const Tensor* q_b;
  const Tensor* k_w;
  const Tensor* k_b;
  const Tensor* v_w;
  const Tensor* v_b;
  const Tensor* o_w;
  const Tensor* o_b;
};

struct AttentionGrads {
  Tensor* q_w;
  Tensor* q_b;
  Tensor* k_w;
  Tensor* k_b;
  Tensor* v_w;
  Tensor* v_b;
  Tensor* o_w;
  Tensor* o_b;
};

struct AttentionCache {
  Tensor query_in;
  Tensor memory_in;
  Tensor q, k, v;
  std::vector<Tensor> probs;  // per head, [L_q, L_k]
  Tensor context;
};

/// Key mask: true = may attend. Empty = every key visible.
using KeyMask = std::vector<bool>;

namespace detail {

inline Tensor take_cols(const Tensor& t, std::size_t first, std::size_t width) {
  Tensor out({t.rows(), width});
  for (std::size_t r = 0; r < t.rows(); ++r) {
    std::copy_n(t.data() + r * t.cols() + first, width, out.data() + r * width);
  }
  return out;
}

inline void put_cols(Tensor& t, std::size_t first, const Tensor& block) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    std::copy_n(block.data() + r * block.cols(), block.cols(), t.data() + r * t.cols() + first);
  }
}

}  // namespace detail

/// Scaled dot-product attention of `query_in` [L_q, d] over `memory_in`
/// [L_k, d] with input and output projections. Pass a cache to keep what the
/// VJP needs; without one only a single head's scores live at a time.
inline Tensor multi_head_attention(const Tensor& query_in, const Tensor& memory_in,
                                   const AttentionWeights& w, const AttentionConfig& cfg,
                                   const KeyMask& key_mask = {}, AttentionCache* cache = nullptr) {
  cfg.validate();
  if (memory_in.empty()) throw std::invalid_argument("multi_head_attention: no key positions");
  if (query_in.cols() != cfg.d_model || memory_in.cols() != cfg.d_model) {
    throw ShapeError("multi_head_attention", query_in.shape(), memory_in.shape());
  }
  const std::size_t lq = query_in.rows();
  const std::size_t lk = memory_in.rows();
  if (!key_mask.empty() && key_mask.size() != lk) {
    throw ShapeError("multi_head_attention(mask)", memory_in.shape(), Shape{key_mask.size()});
  }
  const std::size_t dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  for (std::size_t i = 0; i < lq; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < lk && !any; ++j) {
      any = (key_mask.empty() || key_mask[j]) && !(cfg.causal && j > i);
    }
    if (!any) {
      throw std::invalid_argument("multi_head_attention: query row " + std::to_string(i) +
                                  " has every key masked");
    }
  }

  Tensor q = linear(query_in, *w.q_w, *w.q_b);
  Tensor k = linear(memory_in, *w.k_w, *w.k_b);
  Tensor v = linear(memory_in, *w.v_w, *w.v_b);
  Tensor context({lq, cfg.d_model});
  std::vector<Tensor> probs;

  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const Tensor qh = detail::take_cols(q, h * dh, dh);
    const Tensor kh = detail::take_cols(k, h * dh, dh);
    const Tensor vh = detail::take_cols(v, h * dh, dh);
    Tensor scores = matmul_nt(qh, kh);
    for (std::size_t i = 0; i < lq; ++i) {
      for (std::size_t j = 0; j < lk; ++j) {
        const bool visible = (key_mask.empty() || key_mask[j]) && !(cfg.causal && j > i);
        scores(i, j) = visible ? scores(i, j) * scale : kNegInf;
      }
    }
    Tensor p = softmax(scores);
    detail::put_cols(context, h * dh, matmul(p, vh));
    if (cache) probs.push_back(std::move(p));
  }

  Tensor out = linear(context, *w.o_w, *w.o_b);
  if (cache) {
    cache->query_in = query_in;
    cache->memory_in = memory_in;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->context = std::move(context);
  }
  return out;
}

struct AttentionInputGrads {
  Tensor query;
  Tensor memory;
};

inline AttentionInputGrads multi_head_attention_vjp(const AttentionCache& cache,
                                                    const AttentionWeights& w,
                                                    const AttentionConfig& cfg, const Tensor& grad_out,
                                                    const AttentionGrads& g) {
  const std::size_t dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor grad_context = linear_vjp(cache.context, *w.o_w, grad_out, *g.o_w, *g.o_b);

  Tensor grad_q(cache.q.shape());
  Tensor grad_k(cache.k.shape());
  Tensor grad_v(cache.v.shape());
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const Tensor qh = detail::take_cols(cache.q, h * dh, dh);
    const Tensor kh = detail::take_cols(cache.k, h * dh, dh);
    const Tensor vh = detail::take_cols(cache.v, h * dh, dh);
    const Tensor gctx = detail::take_cols(grad_context, h * dh, dh);
    const Tensor& p = cache.probs[h];
    const Tensor grad_p = matmul_nt(gctx, vh);
    detail::put_cols(grad_v, h * dh, matmul_tn(p, gctx));
    Tensor grad_scores = softmax_vjp(p, grad_p);
    grad_scores *= scale;
    detail::put_cols(grad_q, h * dh, matmul(grad_scores, kh));
    detail::put_cols(grad_k, h * dh, matmul_tn(grad_scores, qh));
  }

  AttentionInputGrads result;
  result.query = linear_vjp(cache.query_in, *w.q_w, grad_q, *g.q_w, *g.q_b);
  result.memory = linear_vjp(cache.memory_in, *w.k_w, grad_k, *g.k_w, *g.k_b);
  result.memory += linear_vjp(cache.memory_in, *w.v_w, grad_v, *g.v_w, *g.v_b);
  return result;
}

}  // namespace spectramix
