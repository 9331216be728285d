#pragma once

// Attention-free encoder: embeddings followed by N blocks of
// (token mixing → add & norm → feed-forward → add & norm).

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spectramix/layers.hpp"
#include "spectramix/nn.hpp"
#include "spectramix/spectral.hpp"

namespace spectramix {

inline constexpr double kInitStddev = 0.02;

struct EncoderConfig {
  std::size_t n_layers = 12;
  std::size_t d_model = 768;
  std::size_t d_ff = 3072;
  std::size_t vocab_size = 32000;
  std::size_t max_positions = 4096;
  std::size_t n_token_types = 2;
  MixingKind mixing = MixingKind::Hartley;
  double layer_norm_eps = kDefaultLayerNormEps;
  /// Pretraining head (dense → GELU → norm → tied projection).
  bool mlm_head = true;

  void validate() const {
    if (n_layers == 0 || d_model == 0 || d_ff == 0 || vocab_size == 0 || max_positions == 0 ||
        n_token_types == 0) {
      throw std::invalid_argument("EncoderConfig: every extent must be positive");
    }
    if (!(layer_norm_eps > 0.0)) throw std::invalid_argument("EncoderConfig: layer_norm_eps must be > 0");
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// 12 layers, width 768, feed-forward 3072, 32k vocabulary.
inline EncoderConfig base_encoder_config(std::size_t max_positions = 4096,
                                         MixingKind mixing = MixingKind::Hartley) {
  EncoderConfig cfg;
  cfg.max_positions = max_positions;
  cfg.mixing = mixing;
  return cfg;
}

struct EncoderBlockIds {
  NormIds mixing_norm;
  LinearIds ff_in;
  LinearIds ff_out;
  NormIds output_norm;
};

struct MlmHeadIds {
  LinearIds dense;
  NormIds norm;
  ParamId bias;
};

struct EncoderLayout {
  ParamId word;
  ParamId position;
  ParamId token_type;
  NormIds embed_norm;
  std::vector<EncoderBlockIds> blocks;
  LinearIds pooler;
  std::optional<MlmHeadIds> mlm_head;
};

/// Declares every encoder parameter, in checkpoint order.
template <class Declare>
EncoderLayout declare_encoder(const EncoderConfig& cfg, Declare& d, const std::string& prefix = "encoder") {
  const std::size_t w = cfg.d_model;
  EncoderLayout layout;
  layout.word = d(prefix + ".embeddings.word", {cfg.vocab_size, w});
  layout.position = d(prefix + ".embeddings.position", {cfg.max_positions, w});
  layout.token_type = d(prefix + ".embeddings.token_type", {cfg.n_token_types, w});
  layout.embed_norm = NormIds::declare(d, prefix + ".embeddings.norm", w);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const std::string p = prefix + ".layers." + std::to_string(i);
    layout.blocks.push_back({NormIds::declare(d, p + ".mixing_norm", w),
                             LinearIds::declare(d, p + ".ff.in", w, cfg.d_ff),
                             LinearIds::declare(d, p + ".ff.out", cfg.d_ff, w),
                             NormIds::declare(d, p + ".output_norm", w)});
  }
  layout.pooler = LinearIds::declare(d, prefix + ".pooler", w, w);
  if (cfg.mlm_head) {
    layout.mlm_head = MlmHeadIds{LinearIds::declare(d, prefix + ".mlm_head.dense", w, w),
                                 NormIds::declare(d, prefix + ".mlm_head.norm", w),
                                 d(prefix + ".mlm_head.bias", {cfg.vocab_size})};
  }
  return layout;
}

inline std::vector<ParamSpec> encoder_param_specs(const EncoderConfig& cfg,
                                                  const std::string& prefix = "encoder") {
  SpecCollector collector;
  declare_encoder(cfg, collector, prefix);
  return std::move(collector.specs());
}

/// Closed-form scalar parameter count; allocates nothing.
inline std::size_t count_params(const EncoderConfig& cfg) {
  const std::size_t w = cfg.d_model;
  const std::size_t ff = cfg.d_ff;
  const std::size_t embeddings = (cfg.vocab_size + cfg.max_positions + cfg.n_token_types) * w + 2 * w;
  const std::size_t per_layer = 2 * w + (w * ff + ff) + (ff * w + w) + 2 * w;
  const std::size_t pooler = w * w + w;
  const std::size_t head = cfg.mlm_head ? (w * w + w) + 2 * w + cfg.vocab_size : 0;
  return embeddings + cfg.n_layers * per_layer + pooler + head;
}

/// Architecture (config + parameter handles) without the values.
struct EncoderModel {
  EncoderConfig config;
  EncoderLayout layout;
};

inline void initialize_encoder(const EncoderModel& model, ParameterSet& ps, Rng& rng) {
  const auto& l = model.layout;
  for (ParamId id : {l.word, l.position, l.token_type}) init_normal(ps.value(id), rng, kInitStddev);
  l.embed_norm.init(ps);
  for (const auto& b : l.blocks) {
    b.mixing_norm.init(ps);
    b.ff_in.init(ps, rng, kInitStddev);
    b.ff_out.init(ps, rng, kInitStddev);
    b.output_norm.init(ps);
  }
  l.pooler.init(ps, rng, kInitStddev);
  if (l.mlm_head) {
    l.mlm_head->dense.init(ps, rng, kInitStddev);
    l.mlm_head->norm.init(ps);
    ps.value(l.mlm_head->bias).fill(0.0);
  }
}

/// Encoder parameters plus the architecture that reads them.
class EncoderState {
 public:
  /// Zero-valued parameters.
  explicit EncoderState(const EncoderConfig& cfg) {
    cfg.validate();
    ParamAllocator alloc{&params_};
    model_ = {cfg, declare_encoder(cfg, alloc)};
  }
  EncoderState(const EncoderConfig& cfg, Rng& rng) : EncoderState(cfg) {
    initialize_encoder(model_, params_, rng);
  }

  const EncoderModel& model() const { return model_; }
  const EncoderConfig& config() const { return model_.config; }
  const EncoderLayout& layout() const { return model_.layout; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  void set_mixing(MixingKind kind) { model_.config.mixing = kind; }

 private:
  EncoderModel model_;
  ParameterSet params_;
};

struct EncoderBlockTape {
  Tensor input;
  LayerNormCache mixing_norm;
  Tensor mixed_normed;  // u
  Tensor ff_hidden;     // pre-activation
  Tensor ff_activated;
  LayerNormCache output_norm;
};

/// Everything encoder_backward needs from one forward pass.
struct EncoderTape {
  std::vector<int> tokens;
  std::vector<int> types;
  LayerNormCache embed_norm;
  std::vector<EncoderBlockTape> blocks;
};

inline Tensor encoder_forward(const EncoderModel& model, const ParameterSet& ps,
                              std::span<const int> tokens, std::span<const int> types = {},
                              EncoderTape* tape = nullptr) {
  const auto& cfg = model.config;
  const auto& l = model.layout;
  const std::size_t len = tokens.size();
  if (len == 0) throw std::invalid_argument("encoder_forward: empty input");
  if (len > cfg.max_positions) throw LengthError("encoder_forward", len, cfg.max_positions);
  std::vector<int> type_ids(types.begin(), types.end());
  if (type_ids.empty()) type_ids.assign(len, 0);
  if (type_ids.size() != len) {
    throw ShapeError("encoder_forward(type_ids)", Shape{len}, Shape{type_ids.size()});
  }
  std::vector<int> positions(len);
  for (std::size_t i = 0; i < len; ++i) positions[i] = static_cast<int>(i);

  Tensor x = embedding_lookup(tokens, ps.value(l.word));
  x += embedding_lookup(positions, ps.value(l.position));
  x += embedding_lookup(type_ids, ps.value(l.token_type));
  if (tape) {
    tape->tokens.assign(tokens.begin(), tokens.end());
    tape->types = type_ids;
    tape->blocks.clear();
  }
  x = l.embed_norm.forward(ps, x, cfg.layer_norm_eps, tape ? &tape->embed_norm : nullptr);

  for (const auto& b : l.blocks) {
    EncoderBlockTape* bt = nullptr;
    if (tape) {
      bt = &tape->blocks.emplace_back();
      bt->input = x;
    }
    Tensor u = b.mixing_norm.forward(ps, x + mix2d(x, cfg.mixing), cfg.layer_norm_eps,
                                     bt ? &bt->mixing_norm : nullptr);
    Tensor h = b.ff_in.forward(ps, u);
    Tensor g = gelu(h);
    Tensor f = b.ff_out.forward(ps, g);
    x = b.output_norm.forward(ps, u + f, cfg.layer_norm_eps, bt ? &bt->output_norm : nullptr);
    if (bt) {
      bt->mixed_normed = std::move(u);
      bt->ff_hidden = std::move(h);
      bt->ff_activated = std::move(g);
    }
  }
  return x;
}

inline Tensor encoder_forward(const EncoderState& state, std::span<const int> tokens,
                              std::span<const int> types = {}, EncoderTape* tape = nullptr) {
  return encoder_forward(state.model(), state.params(), tokens, types, tape);
}

/// Accumulates parameter gradients for dL/d(hidden) = grad_hidden.
inline void encoder_backward(const EncoderModel& model, ParameterSet& ps, const EncoderTape& tape,
                             Tensor grad) {
  const auto& l = model.layout;
  for (std::size_t i = l.blocks.size(); i-- > 0;) {
    const auto& b = l.blocks[i];
    const auto& bt = tape.blocks[i];
    const Tensor g_sum2 = b.output_norm.backward(ps, bt.output_norm, grad);
    const Tensor g_act = b.ff_out.backward(ps, bt.ff_activated, g_sum2);
    Tensor g_u = b.ff_in.backward(ps, bt.mixed_normed, gelu_vjp(bt.ff_hidden, g_act));
    g_u += g_sum2;
    const Tensor g_sum1 = b.mixing_norm.backward(ps, bt.mixing_norm, g_u);
    grad = g_sum1 + mix2d_vjp(model.config.mixing, bt.input, g_sum1);
  }
  const Tensor g_embed = l.embed_norm.backward(ps, tape.embed_norm, grad);
  std::vector<int> positions(tape.tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
  embedding_vjp(tape.tokens, g_embed, ps.grad(l.word));
  embedding_vjp(positions, g_embed, ps.grad(l.position));
  embedding_vjp(tape.types, g_embed, ps.grad(l.token_type));
}

inline void encoder_backward(EncoderState& state, const EncoderTape& tape, const Tensor& grad) {
  encoder_backward(state.model(), state.params(), tape, grad);
}

struct MlmHeadTape {
  Tensor hidden;
  Tensor dense_out;
  Tensor activated;
  LayerNormCache norm;
  Tensor normed;
};

/// Vocabulary logits [L, V]; the output projection is the word embedding table.
inline Tensor mlm_logits(const EncoderModel& model, const ParameterSet& ps, const Tensor& hidden,
                         MlmHeadTape* tape = nullptr) {
  if (!model.layout.mlm_head) throw std::logic_error("mlm_logits: encoder built without an MLM head");
  const auto& head = *model.layout.mlm_head;
  Tensor z = head.dense.forward(ps, hidden);
  Tensor a = gelu(z);
  LayerNormCache norm_cache;
  Tensor n = head.norm.forward(ps, a, model.config.layer_norm_eps, tape ? &norm_cache : nullptr);
  Tensor logits = matmul_nt(n, ps.value(model.layout.word));
  const Tensor& bias = ps.value(head.bias);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
  }
  if (tape) {
    tape->hidden = hidden;
    tape->dense_out = std::move(z);
    tape->activated = std::move(a);
    tape->norm = std::move(norm_cache);
    tape->normed = std::move(n);
  }
  return logits;
}

/// Returns dL/d(hidden); accumulates head and tied-embedding gradients.
inline Tensor mlm_head_backward(const EncoderModel& model, ParameterSet& ps, const MlmHeadTape& tape,
                                const Tensor& grad_logits) {
  const auto& head = *model.layout.mlm_head;
  matmul_tn_acc(grad_logits, tape.normed, ps.grad(model.layout.word));
  Tensor& grad_bias = ps.grad(head.bias);
  for (std::size_t r = 0; r < grad_logits.rows(); ++r) {
    auto row = grad_logits.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) grad_bias[j] += row[j];
  }
  const Tensor g_normed = matmul(grad_logits, ps.value(model.layout.word));
  const Tensor g_act = head.norm.backward(ps, tape.norm, g_normed);
  return head.dense.backward(ps, tape.hidden, gelu_vjp(tape.dense_out, g_act));
}

/// tanh(W·h₀ + b) over the first position.
inline Tensor pool(const EncoderModel& model, const ParameterSet& ps, const Tensor& hidden) {
  Tensor first({1, hidden.cols()});
  std::copy_n(hidden.data(), hidden.cols(), first.data());
  Tensor out = model.layout.pooler.forward(ps, first);
  for (auto& v : out.values()) v = std::tanh(v);
  return out;
}

/// Copies named tensors into a fresh state for `cfg` after checking that the
/// names and shapes match exactly (entries under `ignored_prefixes` are skipped).
template <class Entries>
EncoderState encoder_from_entries(const EncoderConfig& cfg, const Entries& entries,
                                  const std::vector<std::string>& ignored_prefixes = {}) {
  check_parameter_set(encoder_param_specs(cfg), entries, ignored_prefixes);
  EncoderState state(cfg);
  for (const auto& e : entries) {
    if (auto id = state.params().find(e.name)) state.params().value(*id) = e.value;
  }
  return state;
}

/// Same parameters under a different mixing kind.
inline EncoderState swap_mixing(EncoderState state, MixingKind kind) {
  state.set_mixing(kind);
  return state;
}

/// Loads checkpoint entries recorded under `cfg` and re-targets them to `kind`.
template <class Entries>
EncoderState swap_mixing(const EncoderConfig& cfg, const Entries& entries, MixingKind kind) {
  return swap_mixing(encoder_from_entries(cfg, entries), kind);
}

}  // namespace spectramix
