#pragma once

// Right-side attention encoder-decoder: the spectral encoder feeds an
// attention decoder (causal self-attention, cross-attention, feed-forward)
// through cross-attention only.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spectramix/encoder.hpp"
#include "spectramix/layers.hpp"
#include "spectramix/nn.hpp"

namespace spectramix {

struct DecoderConfig {
  std::size_t n_layers = 6;
  std::size_t d_model = 768;
  std::size_t d_ff = 3072;
  std::size_t n_heads = 12;
  std::size_t vocab_size = 32000;
  std::size_t max_positions = 1024;
  double layer_norm_eps = kDefaultLayerNormEps;

  void validate() const {
    if (n_layers == 0 || d_model == 0 || d_ff == 0 || n_heads == 0 || vocab_size == 0 || max_positions == 0) {
      throw std::invalid_argument("DecoderConfig: every extent must be positive");
    }
    if (d_model % n_heads != 0) {
      throw std::invalid_argument("DecoderConfig: d_model " + std::to_string(d_model) +
                                  " not divisible by n_heads " + std::to_string(n_heads));
    }
    if (!(layer_norm_eps > 0.0)) throw std::invalid_argument("DecoderConfig: layer_norm_eps must be > 0");
  }

  friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

struct GenerationConfig {
  std::size_t max_input_len = 4096;
  std::size_t max_target_len = 512;
  std::size_t no_repeat_ngram = 2;  // 0 disables the constraint
  std::size_t beam_size = 1;
  int bos_id = 2;
  int eos_id = 3;
  int pad_id = 0;

  void validate() const {
    if (max_target_len == 0) throw std::invalid_argument("GenerationConfig: max_target_len must be >= 1");
    if (beam_size == 0) throw std::invalid_argument("GenerationConfig: beam_size must be >= 1");
  }

  friend bool operator==(const GenerationConfig&, const GenerationConfig&) = default;
};

struct DecoderBlockIds {
  AttentionIds self_attn;
  NormIds self_attn_norm;
  AttentionIds cross_attn;
  NormIds cross_attn_norm;
  LinearIds ff_in;
  LinearIds ff_out;
  NormIds output_norm;
};

struct DecoderLayout {
  ParamId word;
  ParamId position;
  NormIds embed_norm;
  std::vector<DecoderBlockIds> blocks;
  ParamId lm_bias;
};

template <class Declare>
DecoderLayout declare_decoder(const DecoderConfig& cfg, Declare& d, const std::string& prefix = "decoder") {
  const std::size_t w = cfg.d_model;
  DecoderLayout layout;
  layout.word = d(prefix + ".embeddings.word", {cfg.vocab_size, w});
  layout.position = d(prefix + ".embeddings.position", {cfg.max_positions, w});
  layout.embed_norm = NormIds::declare(d, prefix + ".embeddings.norm", w);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const std::string p = prefix + ".layers." + std::to_string(i);
    layout.blocks.push_back({AttentionIds::declare(d, p + ".self_attn", w),
                             NormIds::declare(d, p + ".self_attn_norm", w),
                             AttentionIds::declare(d, p + ".cross_attn", w),
                             NormIds::declare(d, p + ".cross_attn_norm", w),
                             LinearIds::declare(d, p + ".ff.in", w, cfg.d_ff),
                             LinearIds::declare(d, p + ".ff.out", cfg.d_ff, w),
                             NormIds::declare(d, p + ".output_norm", w)});
  }
  layout.lm_bias = d(prefix + ".lm_head.bias", {cfg.vocab_size});
  return layout;
}

inline std::vector<ParamSpec> decoder_param_specs(const DecoderConfig& cfg,
                                                  const std::string& prefix = "decoder") {
  SpecCollector collector;
  declare_decoder(cfg, collector, prefix);
  return std::move(collector.specs());
}

inline std::size_t count_decoder_params(const DecoderConfig& cfg) {
  const std::size_t w = cfg.d_model;
  const std::size_t attention = 4 * (w * w + w);
  const std::size_t ff = (w * cfg.d_ff + cfg.d_ff) + (cfg.d_ff * w + w);
  const std::size_t per_layer = 2 * attention + ff + 3 * 2 * w;
  return (cfg.vocab_size + cfg.max_positions) * w + 2 * w + cfg.n_layers * per_layer + cfg.vocab_size;
}

struct DecoderModel {
  DecoderConfig config;
  DecoderLayout layout;

  AttentionConfig self_attention() const { return {config.n_heads, config.d_model, true}; }
  AttentionConfig cross_attention() const { return {config.n_heads, config.d_model, false}; }
};

inline void initialize_decoder(const DecoderModel& model, ParameterSet& ps, Rng& rng) {
  const auto& l = model.layout;
  init_normal(ps.value(l.word), rng, kInitStddev);
  init_normal(ps.value(l.position), rng, kInitStddev);
  l.embed_norm.init(ps);
  for (const auto& b : l.blocks) {
    b.self_attn.init(ps, rng, kInitStddev);
    b.self_attn_norm.init(ps);
    b.cross_attn.init(ps, rng, kInitStddev);
    b.cross_attn_norm.init(ps);
    b.ff_in.init(ps, rng, kInitStddev);
    b.ff_out.init(ps, rng, kInitStddev);
    b.output_norm.init(ps);
  }
  ps.value(l.lm_bias).fill(0.0);
}

/// Encoder and decoder parameters in one store ("encoder.*" then "decoder.*").
class Seq2SeqState {
 public:
  Seq2SeqState(const EncoderConfig& enc, const DecoderConfig& dec) {
    enc.validate();
    dec.validate();
    if (enc.d_model != dec.d_model) {
      throw ShapeError("Seq2SeqState(encoder/decoder width)", Shape{enc.d_model}, Shape{dec.d_model});
    }
    ParamAllocator alloc{&params_};
    encoder_ = {enc, declare_encoder(enc, alloc)};
    decoder_ = {dec, declare_decoder(dec, alloc)};
  }
  Seq2SeqState(const EncoderConfig& enc, const DecoderConfig& dec, Rng& rng) : Seq2SeqState(enc, dec) {
    Rng enc_rng = rng.split(1);
    Rng dec_rng = rng.split(2);
    initialize_encoder(encoder_, params_, enc_rng);
    initialize_decoder(decoder_, params_, dec_rng);
  }

  const EncoderModel& encoder() const { return encoder_; }
  const DecoderModel& decoder() const { return decoder_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  void set_mixing(MixingKind kind) { encoder_.config.mixing = kind; }

  std::vector<ParamSpec> param_specs() const {
    auto specs = encoder_param_specs(encoder_.config);
    auto dec = decoder_param_specs(decoder_.config);
    specs.insert(specs.end(), dec.begin(), dec.end());
    return specs;
  }

 private:
  EncoderModel encoder_;
  DecoderModel decoder_;
  ParameterSet params_;
};

/// Copies pretrained encoder weights into a fresh seq2seq state. Entries under
/// "encoder.mlm_head." are skipped; every other encoder parameter must match.
template <class Entries>
void load_pretrained_encoder(Seq2SeqState& state, const Entries& entries) {
  check_parameter_set(encoder_param_specs(state.encoder().config), entries, {"encoder.mlm_head."});
  for (const auto& e : entries) {
    if (auto id = state.params().find(e.name)) state.params().value(*id) = e.value;
  }
}

struct DecoderBlockTape {
  AttentionCache self_attn;
  LayerNormCache self_attn_norm;
  AttentionCache cross_attn;
  LayerNormCache cross_attn_norm;
  Tensor ff_input;
  Tensor ff_hidden;
  Tensor ff_activated;
  LayerNormCache output_norm;
};

struct DecoderTape {
  std::vector<int> inputs;
  LayerNormCache embed_norm;
  std::vector<DecoderBlockTape> blocks;
  Tensor final_hidden;
};

/// Logits [L_tgt, V] for decoder inputs `input_ids` attending over `encoder_out`.
inline Tensor decoder_forward(const DecoderModel& model, const ParameterSet& ps, std::span<const int> input_ids,
                              const Tensor& encoder_out, DecoderTape* tape = nullptr) {
  const auto& cfg = model.config;
  const auto& l = model.layout;
  const std::size_t len = input_ids.size();
  if (len == 0) throw std::invalid_argument("decoder_forward: empty input");
  if (len > cfg.max_positions) throw LengthError("decoder_forward", len, cfg.max_positions);
  if (encoder_out.rank() != 2 || encoder_out.cols() != cfg.d_model) {
    throw ShapeError("decoder_forward(encoder_out)", Shape{len, cfg.d_model}, encoder_out.shape());
  }
  std::vector<int> positions(len);
  for (std::size_t i = 0; i < len; ++i) positions[i] = static_cast<int>(i);

  Tensor x = embedding_lookup(input_ids, ps.value(l.word));
  x += embedding_lookup(positions, ps.value(l.position));
  if (tape) {
    tape->inputs.assign(input_ids.begin(), input_ids.end());
    tape->blocks.clear();
  }
  x = l.embed_norm.forward(ps, x, cfg.layer_norm_eps, tape ? &tape->embed_norm : nullptr);

  const double eps = cfg.layer_norm_eps;
  for (const auto& b : l.blocks) {
    DecoderBlockTape* bt = tape ? &tape->blocks.emplace_back() : nullptr;
    Tensor a = multi_head_attention(x, x, b.self_attn.weights(ps), model.self_attention(), {},
                                    bt ? &bt->self_attn : nullptr);
    x = b.self_attn_norm.forward(ps, x + a, eps, bt ? &bt->self_attn_norm : nullptr);
    Tensor c = multi_head_attention(x, encoder_out, b.cross_attn.weights(ps), model.cross_attention(), {},
                                    bt ? &bt->cross_attn : nullptr);
    x = b.cross_attn_norm.forward(ps, x + c, eps, bt ? &bt->cross_attn_norm : nullptr);
    Tensor h = b.ff_in.forward(ps, x);
    Tensor g = gelu(h);
    Tensor f = b.ff_out.forward(ps, g);
    Tensor next = b.output_norm.forward(ps, x + f, eps, bt ? &bt->output_norm : nullptr);
    if (bt) {
      bt->ff_input = std::move(x);
      bt->ff_hidden = std::move(h);
      bt->ff_activated = std::move(g);
    }
    x = std::move(next);
  }

  Tensor logits = matmul_nt(x, ps.value(l.word));
  const Tensor& bias = ps.value(l.lm_bias);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
  }
  if (tape) tape->final_hidden = std::move(x);
  return logits;
}

/// Accumulates decoder parameter gradients and returns dL/d(encoder_out).
inline Tensor decoder_backward(const DecoderModel& model, ParameterSet& ps, const DecoderTape& tape,
                               const Tensor& grad_logits) {
  const auto& l = model.layout;
  matmul_tn_acc(grad_logits, tape.final_hidden, ps.grad(l.word));
  Tensor& grad_bias = ps.grad(l.lm_bias);
  for (std::size_t r = 0; r < grad_logits.rows(); ++r) {
    auto row = grad_logits.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) grad_bias[j] += row[j];
  }
  Tensor grad = matmul(grad_logits, ps.value(l.word));
  Tensor grad_memory;

  for (std::size_t i = l.blocks.size(); i-- > 0;) {
    const auto& b = l.blocks[i];
    const auto& bt = tape.blocks[i];
    const Tensor g_sum3 = b.output_norm.backward(ps, bt.output_norm, grad);
    const Tensor g_act = b.ff_out.backward(ps, bt.ff_activated, g_sum3);
    Tensor g_ffin = b.ff_in.backward(ps, bt.ff_input, gelu_vjp(bt.ff_hidden, g_act));
    g_ffin += g_sum3;

    const Tensor g_sum2 = b.cross_attn_norm.backward(ps, bt.cross_attn_norm, g_ffin);
    auto cross = multi_head_attention_vjp(bt.cross_attn, b.cross_attn.weights(ps), model.cross_attention(),
                                          g_sum2, b.cross_attn.grads(ps));
    if (grad_memory.empty()) {
      grad_memory = std::move(cross.memory);
    } else {
      grad_memory += cross.memory;
    }
    Tensor g_x1 = g_sum2 + cross.query;

    const Tensor g_sum1 = b.self_attn_norm.backward(ps, bt.self_attn_norm, g_x1);
    auto self = multi_head_attention_vjp(bt.self_attn, b.self_attn.weights(ps), model.self_attention(),
                                         g_sum1, b.self_attn.grads(ps));
    grad = g_sum1 + self.query;
    grad += self.memory;
  }

  const Tensor g_embed = l.embed_norm.backward(ps, tape.embed_norm, grad);
  std::vector<int> positions(tape.inputs.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
  embedding_vjp(tape.inputs, g_embed, ps.grad(l.word));
  embedding_vjp(positions, g_embed, ps.grad(l.position));
  return grad_memory;
}

/// Teacher forcing: decoder sees bos + target[:-1] and predicts target.
/// Positions whose label is pad are ignored.
struct TeacherForcing {
  std::vector<int> inputs;
  std::vector<int> labels;
};

inline TeacherForcing teacher_forcing(std::span<const int> target, int bos_id, int pad_id) {
  if (target.empty()) throw std::invalid_argument("seq2seq: empty target sequence");
  TeacherForcing tf;
  tf.inputs.push_back(bos_id);
  tf.inputs.insert(tf.inputs.end(), target.begin(), target.end() - 1);
  for (int t : target) tf.labels.push_back(t == pad_id ? kIgnoreLabel : t);
  return tf;
}

struct LossAndCount {
  double loss = 0.0;
  std::size_t count = 0;
};

inline LossAndCount seq2seq_loss_detail(const Seq2SeqState& state, std::span<const int> source,
                                        std::span<const int> target, const GenerationConfig& gen = {}) {
  const TeacherForcing tf = teacher_forcing(target, gen.bos_id, gen.pad_id);
  const Tensor memory = encoder_forward(state.encoder(), state.params(), source);
  const Tensor logits = decoder_forward(state.decoder(), state.params(), tf.inputs, memory);
  const auto ce = masked_cross_entropy(logits, tf.labels);
  return {ce.loss, ce.count};
}

/// Mean cross-entropy over non-pad target tokens.
inline double seq2seq_loss(const Seq2SeqState& state, std::span<const int> source, std::span<const int> target,
                           const GenerationConfig& gen = {}) {
  return seq2seq_loss_detail(state, source, target, gen).loss;
}

/// Adds weight·∇loss to the parameter gradients through decoder, cross-attention
/// and encoder. Returns the unweighted loss.
inline LossAndCount accumulate_seq2seq_gradients(Seq2SeqState& state, std::span<const int> source,
                                                 std::span<const int> target, double weight = 1.0,
                                                 const GenerationConfig& gen = {}) {
  const TeacherForcing tf = teacher_forcing(target, gen.bos_id, gen.pad_id);
  EncoderTape enc_tape;
  const Tensor memory = encoder_forward(state.encoder(), state.params(), source, {}, &enc_tape);
  DecoderTape dec_tape;
  const Tensor logits = decoder_forward(state.decoder(), state.params(), tf.inputs, memory, &dec_tape);
  auto ce = masked_cross_entropy(logits, tf.labels);
  ce.grad *= weight;
  const Tensor grad_memory = decoder_backward(state.decoder(), state.params(), dec_tape, ce.grad);
  encoder_backward(state.encoder(), state.params(), enc_tape, grad_memory);
  return {ce.loss, ce.count};
}

// ---------------------------------------------------------------------------
// generation

/// Tokens that would complete an n-gram already present in `hyp`.
inline std::vector<int> banned_next_tokens(std::span<const int> hyp, std::size_t n) {
  std::vector<int> banned;
  if (n == 0 || hyp.size() + 1 < n) return banned;
  const std::size_t prefix_len = n - 1;
  const auto tail = hyp.subspan(hyp.size() - prefix_len);
  for (std::size_t i = 0; i + n <= hyp.size(); ++i) {
    if (std::equal(tail.begin(), tail.end(), hyp.begin() + static_cast<std::ptrdiff_t>(i))) {
      banned.push_back(hyp[i + prefix_len]);
    }
  }
  std::sort(banned.begin(), banned.end());
  banned.erase(std::unique(banned.begin(), banned.end()), banned.end());
  return banned;
}

/// True when some n-gram occurs twice in `seq`.
inline bool has_repeated_ngram(std::span<const int> seq, std::size_t n) {
  if (n == 0 || seq.size() < n) return false;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    for (std::size_t j = i + 1; j + n <= seq.size(); ++j) {
      if (std::equal(seq.begin() + i, seq.begin() + i + n, seq.begin() + j)) return true;
    }
  }
  return false;
}

namespace detail {

/// Log-probabilities of the next token after `bos + hyp`. Tokens completing a
/// repeated n-gram, bos and pad are set to −∞.
inline std::vector<double> next_token_logprobs(const Seq2SeqState& state, const Tensor& memory,
                                               std::span<const int> hyp, const GenerationConfig& gen) {
  std::vector<int> inputs{gen.bos_id};
  inputs.insert(inputs.end(), hyp.begin(), hyp.end());
  const Tensor logits = decoder_forward(state.decoder(), state.params(), inputs, memory);
  const auto last = logits.row(logits.rows() - 1);
  const double mx = *std::max_element(last.begin(), last.end());
  double total = 0.0;
  for (double z : last) total += std::exp(z - mx);
  const double log_norm = mx + std::log(total);
  std::vector<double> logp(last.size());
  for (std::size_t j = 0; j < last.size(); ++j) logp[j] = last[j] - log_norm;
  constexpr double kBanned = -std::numeric_limits<double>::infinity();
  for (int t : banned_next_tokens(hyp, gen.no_repeat_ngram)) logp[static_cast<std::size_t>(t)] = kBanned;
  for (int t : {gen.bos_id, gen.pad_id}) {
    if (t >= 0 && static_cast<std::size_t>(t) < logp.size() && t != gen.eos_id) logp[static_cast<std::size_t>(t)] = kBanned;
  }
  return logp;
}

inline void check_generation(const Seq2SeqState& state, std::span<const int> source, const GenerationConfig& gen) {
  gen.validate();
  if (source.size() > gen.max_input_len) throw LengthError("generate(source)", source.size(), gen.max_input_len);
  if (gen.max_target_len > state.decoder().config.max_positions) {
    throw LengthError("generate(max_target_len)", gen.max_target_len, state.decoder().config.max_positions);
  }
}

}  // namespace detail

/// Argmax decoding (lowest token id wins ties); stops at eos, which is not returned.
inline std::vector<int> greedy_generate(const Seq2SeqState& state, std::span<const int> source,
                                        const GenerationConfig& gen) {
  detail::check_generation(state, source, gen);
  const Tensor memory = encoder_forward(state.encoder(), state.params(), source);
  std::vector<int> hyp;
  while (hyp.size() < gen.max_target_len) {
    const auto logp = detail::next_token_logprobs(state, memory, hyp, gen);
    const auto best = std::max_element(logp.begin(), logp.end());
    if (!std::isfinite(*best)) break;
    const int token = static_cast<int>(best - logp.begin());
    if (token == gen.eos_id) break;
    hyp.push_back(token);
  }
  return hyp;
}

/// Beam search ranked by cumulative log-probability; finished hypotheses are
/// compared by mean log-probability per emitted token (eos included). Search
/// stops early once beam_size finished hypotheses all score at least as well
/// as the best live one. With beam_size = 1 this is exactly greedy_generate.
inline std::vector<int> generate(const Seq2SeqState& state, std::span<const int> source,
                                 const GenerationConfig& gen) {
  detail::check_generation(state, source, gen);
  const Tensor memory = encoder_forward(state.encoder(), state.params(), source);

  struct Hypothesis {
    std::vector<int> tokens;
    double logprob = 0.0;
    std::size_t length = 0;  // emitted tokens, eos included
  };
  struct Candidate {
    double score;
    std::size_t beam;
    int token;
  };

  auto mean = [](const Hypothesis& h) { return h.length ? h.logprob / static_cast<double>(h.length) : 0.0; };
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> finished;
  for (std::size_t step = 0; step < gen.max_target_len && !live.empty(); ++step) {
    std::vector<Candidate> candidates;
    for (std::size_t b = 0; b < live.size(); ++b) {
      const auto logp = detail::next_token_logprobs(state, memory, live[b].tokens, gen);
      for (std::size_t t = 0; t < logp.size(); ++t) {
        if (std::isfinite(logp[t])) candidates.push_back({live[b].logprob + logp[t], b, static_cast<int>(t)});
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.beam != b.beam) return a.beam < b.beam;
      return a.token < b.token;
    });
    std::vector<Hypothesis> next;
    for (const auto& c : candidates) {
      if (next.size() == gen.beam_size) break;
      const Hypothesis& parent = live[c.beam];
      if (c.token == gen.eos_id) {
        finished.push_back({parent.tokens, c.score, parent.tokens.size() + 1});
      } else {
        Hypothesis h{parent.tokens, c.score, parent.tokens.size() + 1};
        h.tokens.push_back(c.token);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    if (finished.size() >= gen.beam_size) {
      std::vector<double> done;
      for (const auto& h : finished) done.push_back(mean(h));
      std::nth_element(done.begin(), done.begin() + static_cast<long>(gen.beam_size - 1), done.end(), std::greater<>());
      double best_live = -std::numeric_limits<double>::infinity();
      for (const auto& h : live) best_live = std::max(best_live, mean(h));
      if (done[gen.beam_size - 1] >= best_live) break;
    }
  }
  for (auto& h : live) finished.push_back(std::move(h));
  if (finished.empty()) return {};

  const auto best = std::max_element(finished.begin(), finished.end(),
                                     [&](const Hypothesis& a, const Hypothesis& b) { return mean(a) < mean(b); });
  return best->tokens;
}

}  // namespace spectramix
