#pragma once

// Parameter groups that model code declares by name. A "declare" callable maps
// (name, shape) to a ParamId; the same declaration routine therefore builds a
// fresh ParameterSet, lists expected shapes, or validates a loaded one.

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spectramix/nn.hpp"

namespace spectramix {

struct ParamSpec {
  std::string name;
  Shape shape;
};

/// Thrown when a stored parameter set does not match the set a config implies.
class ParameterSetMismatch : public std::invalid_argument {
 public:
  ParameterSetMismatch(std::vector<std::string> missing_names, std::vector<std::string> extra_names,
                       std::vector<std::string> wrong_shape_names)
      : std::invalid_argument(describe(missing_names, extra_names, wrong_shape_names)),
        missing(std::move(missing_names)),
        extra(std::move(extra_names)),
        wrong_shape(std::move(wrong_shape_names)) {}

  std::vector<std::string> missing;
  std::vector<std::string> extra;
  std::vector<std::string> wrong_shape;

 private:
  static std::string join(const std::vector<std::string>& names) {
    std::string out;
    for (const auto& n : names) out += (out.empty() ? "" : ", ") + n;
    return out.empty() ? "-" : out;
  }
  static std::string describe(const std::vector<std::string>& missing,
                              const std::vector<std::string>& extra,
                              const std::vector<std::string>& wrong) {
    return "parameter set mismatch; missing: " + join(missing) + "; extra: " + join(extra) +
           "; wrong shape: " + join(wrong);
  }
};

/// Sink that records specs instead of allocating.
class SpecCollector {
 public:
  ParamId operator()(std::string name, Shape shape) {
    specs_.push_back({std::move(name), std::move(shape)});
    return ParamId{specs_.size() - 1};
  }
  std::vector<ParamSpec>& specs() { return specs_; }

 private:
  std::vector<ParamSpec> specs_;
};

/// Sink that allocates zero-valued parameters.
struct ParamAllocator {
  ParameterSet* params;
  ParamId operator()(std::string name, Shape shape) const {
    return params->add(std::move(name), std::move(shape));
  }
};

/// Compares `entries` (name, shape) against `expected`, ignoring entries whose
/// name starts with one of `ignored_prefixes`.
template <class Entries>
void check_parameter_set(const std::vector<ParamSpec>& expected, const Entries& entries,
                         const std::vector<std::string>& ignored_prefixes = {}) {
  auto ignored = [&](const std::string& name) {
    return std::any_of(ignored_prefixes.begin(), ignored_prefixes.end(),
                       [&](const std::string& p) { return name.starts_with(p); });
  };
  std::vector<std::string> missing, extra, wrong;
  for (const auto& spec : expected) {
    auto it = std::find_if(entries.begin(), entries.end(),
                           [&](const auto& e) { return e.name == spec.name; });
    if (it == entries.end()) {
      missing.push_back(spec.name);
    } else if (it->value.shape() != spec.shape) {
      wrong.push_back(spec.name);
    }
  }
  for (const auto& e : entries) {
    if (ignored(e.name)) continue;
    auto it = std::find_if(expected.begin(), expected.end(),
                           [&](const ParamSpec& s) { return s.name == e.name; });
    if (it == expected.end()) extra.push_back(e.name);
  }
  if (!missing.empty() || !extra.empty() || !wrong.empty()) {
    throw ParameterSetMismatch(std::move(missing), std::move(extra), std::move(wrong));
  }
}

struct LinearIds {
  ParamId weight;
  ParamId bias;

  template <class Declare>
  static LinearIds declare(Declare& d, const std::string& prefix, std::size_t d_in, std::size_t d_out) {
    return {d(prefix + ".weight", {d_in, d_out}), d(prefix + ".bias", {d_out})};
  }
  void init(ParameterSet& ps, Rng& rng, double stddev) const {
    init_normal(ps.value(weight), rng, stddev);
    ps.value(bias).fill(0.0);
  }
  Tensor forward(const ParameterSet& ps, const Tensor& x) const {
    return linear(x, ps.value(weight), ps.value(bias));
  }
  Tensor backward(ParameterSet& ps, const Tensor& x, const Tensor& grad_y) const {
    return linear_vjp(x, ps.value(weight), grad_y, ps.grad(weight), ps.grad(bias));
  }
};

struct NormIds {
  ParamId gamma;
  ParamId beta;

  template <class Declare>
  static NormIds declare(Declare& d, const std::string& prefix, std::size_t width) {
    return {d(prefix + ".gamma", {width}), d(prefix + ".beta", {width})};
  }
  void init(ParameterSet& ps) const {
    ps.value(gamma).fill(1.0);
    ps.value(beta).fill(0.0);
  }
  Tensor forward(const ParameterSet& ps, const Tensor& x, double eps, LayerNormCache* cache) const {
    return layer_norm(x, ps.value(gamma), ps.value(beta), eps, cache);
  }
  Tensor backward(ParameterSet& ps, const LayerNormCache& cache, const Tensor& grad_y) const {
    return layer_norm_vjp(cache, ps.value(gamma), grad_y, ps.grad(gamma), ps.grad(beta));
  }
};

struct AttentionIds {
  LinearIds q, k, v, o;

  template <class Declare>
  static AttentionIds declare(Declare& d, const std::string& prefix, std::size_t width) {
    return {LinearIds::declare(d, prefix + ".q", width, width),
            LinearIds::declare(d, prefix + ".k", width, width),
            LinearIds::declare(d, prefix + ".v", width, width),
            LinearIds::declare(d, prefix + ".o", width, width)};
  }
  void init(ParameterSet& ps, Rng& rng, double stddev) const {
    for (const auto* l : {&q, &k, &v, &o}) l->init(ps, rng, stddev);
  }
  AttentionWeights weights(const ParameterSet& ps) const {
    return {&ps.value(q.weight), &ps.value(q.bias), &ps.value(k.weight), &ps.value(k.bias),
            &ps.value(v.weight), &ps.value(v.bias), &ps.value(o.weight), &ps.value(o.bias)};
  }
  AttentionGrads grads(ParameterSet& ps) const {
    return {&ps.grad(q.weight), &ps.grad(q.bias), &ps.grad(k.weight), &ps.grad(k.bias),
            &ps.grad(v.weight), &ps.grad(v.bias), &ps.grad(o.weight), &ps.grad(o.bias)};
  }
};

/// Raised when a sequence is longer than the learned position table.
class LengthError : public std::invalid_argument {
 public:
  LengthError(const std::string& what, std::size_t len, std::size_t max)
      : std::invalid_argument(what + ": sequence length " + std::to_string(len) +
                              " exceeds max_positions " + std::to_string(max)),
        length(len),
        limit(max) {}

  std::size_t length;
  std::size_t limit;
};

}  // namespace spectramix
