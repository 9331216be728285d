#pragma once

// Single-threaded throughput of the attention sub-layer against the
// parameter-free mixing sub-layer, across sequence lengths.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spectramix/layers.hpp"
#include "spectramix/nn.hpp"
#include "spectramix/rng.hpp"
#include "spectramix/spectral.hpp"

namespace spectramix {

inline constexpr const char* kAttentionWorkload = "attention";

struct BenchConfig {
  std::vector<std::size_t> seq_lens{512, 1024, 2048, 4096};
  std::size_t d_model = 768;
  std::size_t n_heads = 12;
  std::size_t repeats = 5;
  std::size_t warmups = 2;
  double min_repeat_seconds = 0.05;  // short workloads loop until a repeat lasts this long
  std::uint64_t seed = 0;
  std::vector<MixingKind> mixing{MixingKind::FourierReal, MixingKind::Hartley};

  void validate() const {
    if (repeats < 5) throw std::invalid_argument("BenchConfig: repeats must be >= 5");
    if (warmups < 2) throw std::invalid_argument("BenchConfig: warmups must be >= 2");
    if (seq_lens.empty()) throw std::invalid_argument("BenchConfig: no sequence lengths");
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
      throw std::invalid_argument("BenchConfig: d_model must be a positive multiple of n_heads");
    }
  }
};

struct BenchResult {
  std::string workload;
  std::size_t seq_len = 0;
  std::size_t d_model = 0;
  double iters_per_sec = 0.0;
  double speedup_vs_baseline = 0.0;
  double checksum = 0.0;
};

struct Workload {
  std::string name;
  std::function<double()> run;  // returns a digest folded into the checksum
};

struct Measurement {
  double iters_per_sec = 0.0;  // median over repeats
  double checksum = 0.0;
};

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Median it/s per workload. Repeats are interleaved round-robin across the
/// workloads, with the starting workload rotated every round, so slow drift on
/// the host hits all of them alike; each repeat loops a short workload until it
/// lasts min_repeat_seconds.
inline std::vector<Measurement> measure_interleaved(const std::vector<Workload>& workloads, std::size_t warmups,
                                                    std::size_t repeats, double min_repeat_seconds) {
  using clock = std::chrono::steady_clock;
  std::vector<Measurement> out(workloads.size());
  std::vector<std::size_t> inner(workloads.size(), 1);
  for (std::size_t w = 0; w < workloads.size(); ++w) {
    double secs = 0.0;
    for (std::size_t i = 0; i < warmups; ++i) {
      const auto t0 = clock::now();
      out[w].checksum += workloads[w].run();
      secs = std::chrono::duration<double>(clock::now() - t0).count();
    }
    if (secs < min_repeat_seconds) {
      inner[w] = static_cast<std::size_t>(std::ceil(min_repeat_seconds / std::max(secs, 1e-9)));
    }
  }
  std::vector<std::vector<double>> rates(workloads.size());
  for (std::size_t r = 0; r < repeats; ++r) {
    for (std::size_t k = 0; k < workloads.size(); ++k) {
      const std::size_t w = (r + k) % workloads.size();  // rotate who runs first
      const auto t0 = clock::now();
      for (std::size_t i = 0; i < inner[w]; ++i) out[w].checksum += workloads[w].run();
      const double secs = std::chrono::duration<double>(clock::now() - t0).count();
      rates[w].push_back(static_cast<double>(inner[w]) / std::max(secs, 1e-12));
    }
  }
  for (std::size_t w = 0; w < workloads.size(); ++w) out[w].iters_per_sec = median(rates[w]);
  return out;
}

/// Self-attention sub-layer: Q/K/V/output projections plus softmax attention.
struct AttentionSublayer {
  ParameterSet params;
  AttentionIds ids;
  AttentionConfig config;

  AttentionSublayer(std::size_t d_model, std::size_t n_heads, Rng& rng) : config{n_heads, d_model, false} {
    ParamAllocator alloc{&params};
    ids = AttentionIds::declare(alloc, "attention", d_model);
    ids.init(params, rng, 0.02);
  }

  Tensor operator()(const Tensor& x) const { return multi_head_attention(x, x, ids.weights(params), config); }
};

inline double output_digest(const Tensor& y) {
  if (!y.all_finite()) throw std::runtime_error("benchmark workload produced non-finite output");
  return y[0] + y[y.size() - 1];
}

/// Times every workload at every sequence length on the same random input.
/// Speed-ups are relative to the attention sub-layer at that length.
inline std::vector<BenchResult> bench_mixing_vs_attention(const BenchConfig& cfg,
                                                          const std::function<void(const BenchResult&)>& on_result = {}) {
  cfg.validate();
  Rng rng(cfg.seed);
  Rng weight_rng = rng.split(1);
  const AttentionSublayer attention(cfg.d_model, cfg.n_heads, weight_rng);
  std::vector<BenchResult> out;
  for (std::size_t len : cfg.seq_lens) {
    Rng input_rng = rng.split(100 + len);
    Tensor x({len, cfg.d_model});
    for (auto& v : x.values()) v = input_rng.normal();

    std::vector<Workload> workloads{{kAttentionWorkload, [&] { return output_digest(attention(x)); }}};
    for (MixingKind kind : cfg.mixing) {
      workloads.push_back({std::string(to_string(kind)), [&x, kind] { return output_digest(mix2d(x, kind)); }});
    }
    const auto m = measure_interleaved(workloads, cfg.warmups, cfg.repeats, cfg.min_repeat_seconds);
    for (std::size_t w = 0; w < workloads.size(); ++w) {
      const BenchResult r{workloads[w].name, len, cfg.d_model, m[w].iters_per_sec,
                          m[w].iters_per_sec / m[0].iters_per_sec, m[w].checksum};
      out.push_back(r);
      if (on_result) on_result(r);
    }
  }
  return out;
}

inline const BenchResult* find_result(const std::vector<BenchResult>& results, const std::string& workload,
                                      std::size_t seq_len) {
  for (const auto& r : results) {
    if (r.workload == workload && r.seq_len == seq_len) return &r;
  }
  return nullptr;
}

inline std::string bench_markdown(const std::vector<BenchResult>& results) {
  std::ostringstream os;
  os << "| workload | seq_len | d_model | it/s | speed-up |\n";
  os << "|---|---:|---:|---:|---:|\n";
  char buf[128];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "| %s | %zu | %zu | %.3f | %.2fx |\n", r.workload.c_str(), r.seq_len,
                  r.d_model, r.iters_per_sec, r.speedup_vs_baseline);
    os << buf;
  }
  return os.str();
}

inline std::string bench_csv(const std::vector<BenchResult>& results) {
  std::ostringstream os;
  os << "workload,seq_len,it_per_s,speedup\n";
  char buf[128];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.6g,%.6g\n", r.workload.c_str(), r.seq_len, r.iters_per_sec,
                  r.speedup_vs_baseline);
    os << buf;
  }
  return os.str();
}

}  // namespace spectramix
