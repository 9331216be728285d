#pragma once

// Byte-level tokenizer, corpus packing, MLM masking, AdamW with linear warmup,
// the batch-size schedule and the MLM / seq2seq training loops.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "spectramix/encoder.hpp"
#include "spectramix/nn.hpp"
#include "spectramix/raed.hpp"
#include "spectramix/rng.hpp"

namespace spectramix {

// ---------------------------------------------------------------------------
// tokenizer

namespace tokens {
inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kMask = 4;
inline constexpr int kByteOffset = 5;
inline constexpr std::size_t kVocabSize = 256 + kByteOffset;
}  // namespace tokens

inline bool is_special(int id) { return id >= 0 && id < tokens::kByteOffset; }

inline std::vector<int> encode(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<int>(c) + tokens::kByteOffset);
  return ids;
}

/// Drops special ids; ids outside the vocabulary are an error.
inline std::string decode(std::span<const int> ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens::kVocabSize) {
      throw std::out_of_range("decode: token id " + std::to_string(id) + " outside the byte vocabulary");
    }
    if (!is_special(id)) out.push_back(static_cast<char>(id - tokens::kByteOffset));
  }
  return out;
}

// ---------------------------------------------------------------------------
// packing

struct PackedDataset {
  std::size_t max_seq_len = 0;
  std::vector<std::vector<int>> slices;

  bool empty() const { return slices.empty(); }
  std::size_t size() const { return slices.size(); }
};

/// Concatenates every document in order and cuts consecutive slices of
/// `max_seq_len`; the trailing partial slice is dropped.
inline PackedDataset pack_corpus(const std::vector<std::vector<int>>& docs, std::size_t max_seq_len) {
  if (max_seq_len < 2) throw std::invalid_argument("pack_corpus: max_seq_len must be >= 2");
  PackedDataset out{max_seq_len, {}};
  std::vector<int> current;
  current.reserve(max_seq_len);
  for (const auto& doc : docs) {
    for (int id : doc) {
      current.push_back(id);
      if (current.size() == max_seq_len) {
        out.slices.push_back(std::move(current));
        current.clear();
        current.reserve(max_seq_len);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// masking

struct MaskingPolicy {
  double mask_prob = 0.15;
  double mask_token_frac = 0.8;
  double random_frac = 0.1;
  double keep_frac = 0.1;

  void validate() const {
    if (!(mask_prob >= 0.0 && mask_prob < 1.0)) {
      throw std::invalid_argument("MaskingPolicy: mask_prob must be in [0, 1)");
    }
    for (double f : {mask_token_frac, random_frac, keep_frac}) {
      if (f < 0.0) throw std::invalid_argument("MaskingPolicy: negative fraction");
    }
    if (std::abs(mask_token_frac + random_frac + keep_frac - 1.0) > 1e-9) {
      throw std::invalid_argument("MaskingPolicy: mask/random/keep fractions must sum to 1");
    }
  }

  friend bool operator==(const MaskingPolicy&, const MaskingPolicy&) = default;
};

struct MaskedExample {
  std::vector<int> inputs;
  std::vector<int> labels;
};

/// Special ids in `slice` are never selected.
inline MaskedExample apply_mlm_mask(std::span<const int> slice, const MaskingPolicy& policy, Rng& rng,
                                    std::size_t vocab_size = tokens::kVocabSize) {
  policy.validate();
  if (vocab_size <= static_cast<std::size_t>(tokens::kByteOffset)) {
    throw std::invalid_argument("apply_mlm_mask: vocabulary has no non-special ids");
  }
  MaskedExample ex{{slice.begin(), slice.end()}, std::vector<int>(slice.size(), kIgnoreLabel)};
  const std::uint64_t n_regular = vocab_size - tokens::kByteOffset;
  for (std::size_t i = 0; i < slice.size(); ++i) {
    if (is_special(slice[i]) || !rng.bernoulli(policy.mask_prob)) continue;
    ex.labels[i] = slice[i];
    const double u = rng.uniform();
    if (u < policy.mask_token_frac) {
      ex.inputs[i] = tokens::kMask;
    } else if (u < policy.mask_token_frac + policy.random_frac) {
      ex.inputs[i] = tokens::kByteOffset + static_cast<int>(rng.uniform_int(n_regular));
    }
  }
  return ex;
}

// ---------------------------------------------------------------------------
// optimizer

struct AdamWConfig {
  double base_lr = 5e-5;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 500;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<std::string> frozen_prefixes;  // parameters under these get lr 0

  void validate() const {
    if (!(base_lr >= 0.0) || !(weight_decay >= 0.0) || !(eps > 0.0)) {
      throw std::invalid_argument("AdamWConfig: lr, weight_decay must be >= 0 and eps > 0");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("AdamWConfig: betas must be in [0, 1)");
    }
  }

  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

/// Linear warmup from 0 to base_lr over warmup_steps, constant afterwards.
inline double lr_at(std::size_t step, const AdamWConfig& cfg) {
  if (cfg.warmup_steps == 0 || step >= cfg.warmup_steps) return cfg.base_lr;
  return cfg.base_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
}

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& param)
      : std::runtime_error("non-finite gradient in parameter " + param), name(param) {}
  std::string name;
};

struct OptimizerState {
  AdamWConfig config;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;

  OptimizerState() = default;
  OptimizerState(const ParameterSet& ps, AdamWConfig cfg) : config(std::move(cfg)) {
    config.validate();
    for (const auto& p : ps) {
      m.emplace_back(p.value.shape());
      v.emplace_back(p.value.shape());
    }
  }
};

/// One decoupled-weight-decay Adam update at lr_at(step); zeroes the gradients.
/// Every gradient is checked before any parameter moves.
inline void adamw_step(OptimizerState& opt, ParameterSet& ps) {
  if (opt.m.size() != ps.size()) {
    throw std::invalid_argument("adamw_step: optimizer has " + std::to_string(opt.m.size()) +
                                " moment slots for " + std::to_string(ps.size()) + " parameters");
  }
  for (const auto& p : ps) {
    if (!p.grad.all_finite()) throw NonFiniteGradient(p.name);
  }
  const auto& c = opt.config;
  const double lr = lr_at(opt.step, c);
  ++opt.step;
  const double t = static_cast<double>(opt.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  std::size_t i = 0;
  for (auto& p : ps) {
    Tensor& m = opt.m[i];
    Tensor& v = opt.v[i];
    ++i;
    if (m.shape() != p.value.shape()) throw ShapeError("adamw_step(" + p.name + ")", m.shape(), p.value.shape());
    const bool frozen = std::any_of(c.frozen_prefixes.begin(), c.frozen_prefixes.end(),
                                    [&](const std::string& pre) { return p.name.starts_with(pre); });
    const double plr = frozen ? 0.0 : lr;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
      const double mhat = m[k] / correction1;
      const double vhat = v[k] / correction2;
      p.value[k] -= plr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * p.value[k]);
    }
  }
  ps.zero_grad();
}

// ---------------------------------------------------------------------------
// batch schedule

struct BatchPhase {
  std::optional<std::size_t> until_step;  // exclusive; nullopt = unbounded
  std::size_t batch_size = 1;

  friend bool operator==(const BatchPhase&, const BatchPhase&) = default;
};

struct BatchSchedule {
  std::vector<BatchPhase> phases{{std::nullopt, 1}};

  void validate() const {
    if (phases.empty()) throw std::invalid_argument("BatchSchedule: no phases");
    std::optional<std::size_t> prev;
    for (std::size_t i = 0; i < phases.size(); ++i) {
      const auto& ph = phases[i];
      if (ph.batch_size == 0) throw std::invalid_argument("BatchSchedule: batch_size must be >= 1");
      if (!ph.until_step) {
        if (i + 1 != phases.size()) throw std::invalid_argument("BatchSchedule: only the last phase may be unbounded");
        continue;
      }
      if (prev && *ph.until_step <= *prev) {
        throw std::invalid_argument("BatchSchedule: until_step must be strictly increasing");
      }
      prev = ph.until_step;
    }
  }

  /// Batch size in force at `step`; past the last bound the last phase persists.
  std::size_t batch_size_at(std::size_t step) const {
    for (const auto& ph : phases) {
      if (!ph.until_step || step < *ph.until_step) return ph.batch_size;
    }
    return phases.back().batch_size;
  }

  friend bool operator==(const BatchSchedule&, const BatchSchedule&) = default;
};

// ---------------------------------------------------------------------------
// sampling

/// Walks the dataset epoch by epoch, each epoch in its own seeded permutation.
/// The position is a pure function of (seed, consumed) so a run can resume.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::uint64_t seed, std::uint64_t consumed = 0) : n_(n), seed_(seed) {
    if (n == 0) throw std::invalid_argument("EpochSampler: empty dataset");
    seek(consumed);
  }

  std::size_t next() {
    if (pos_ == n_) {
      ++epoch_;
      pos_ = 0;
      shuffle();
    }
    ++consumed_;
    return order_[pos_++];
  }

  std::uint64_t consumed() const { return consumed_; }
  /// Completed epochs.
  std::uint64_t epochs_done() const { return consumed_ / n_; }

 private:
  void seek(std::uint64_t consumed) {
    consumed_ = consumed;
    epoch_ = consumed / n_;
    pos_ = consumed % n_;
    if (pos_ == 0 && epoch_ > 0) {
      --epoch_;
      pos_ = n_;
    }
    shuffle();
  }

  void shuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng = Rng(seed_).split(epoch_);
    for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng.uniform_int(i)]);
  }

  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t consumed_ = 0;
  std::uint64_t epoch_ = 0;
  std::size_t pos_ = 0;
  std::vector<std::size_t> order_;
};

// ---------------------------------------------------------------------------
// training loops

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;
  std::size_t batch_size = 0;  // effective: schedule size × grad_accum
  double lr = 0.0;

  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

struct TrainOptions {
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  std::size_t grad_accum = 1;
  BatchSchedule schedule;
  std::function<void(const LossRecord&)> on_step;  // optional progress sink
};

/// Resumable loop position: optimizer step plus examples drawn so far.
struct TrainCursor {
  std::uint64_t examples_seen = 0;
};

/// Adds weight·∇(mean masked CE) to the encoder + MLM head gradients.
inline LossAndCount accumulate_mlm_gradients(EncoderState& state, std::span<const int> inputs,
                                             std::span<const int> labels, double weight = 1.0) {
  if (!state.layout().mlm_head) throw std::invalid_argument("accumulate_mlm_gradients: encoder has no MLM head");
  EncoderTape tape;
  const Tensor hidden = encoder_forward(state.model(), state.params(), inputs, {}, &tape);
  MlmHeadTape head;
  const Tensor logits = mlm_logits(state.model(), state.params(), hidden, &head);
  auto ce = masked_cross_entropy(logits, labels);
  if (ce.count == 0) return {0.0, 0};
  ce.grad *= weight;
  const Tensor grad_hidden = mlm_head_backward(state.model(), state.params(), head, ce.grad);
  encoder_backward(state, tape, grad_hidden);
  return {ce.loss, ce.count};
}

inline Rng masking_rng(std::uint64_t seed, std::size_t step, std::size_t example) {
  return Rng(seed).split(0x4D4C4D).split(step).split(example);
}

/// MLM pretraining. Each step draws schedule(step)·grad_accum slices, masks
/// each with a stream keyed by (seed, step, example), and takes one AdamW step
/// on the gradient of Σ CE / Σ labelled positions over the whole batch.
inline std::vector<LossRecord> train_mlm(EncoderState& state, OptimizerState& opt, const PackedDataset& data,
                                         const MaskingPolicy& policy, const TrainOptions& options,
                                         TrainCursor* cursor = nullptr) {
  if (data.empty()) throw std::invalid_argument("train_mlm: empty dataset");
  if (options.grad_accum == 0) throw std::invalid_argument("train_mlm: grad_accum must be >= 1");
  options.schedule.validate();
  policy.validate();
  EpochSampler sampler(data.size(), options.seed, cursor ? cursor->examples_seen : 0);
  std::vector<LossRecord> trace;
  state.params().zero_grad();
  for (std::size_t k = 0; k < options.steps; ++k) {
    const std::size_t step = opt.step;
    const std::size_t batch = options.schedule.batch_size_at(step) * options.grad_accum;
    std::vector<MaskedExample> examples;
    std::size_t total = 0;
    for (std::size_t e = 0; e < batch; ++e) {
      Rng rng = masking_rng(options.seed, step, e);
      examples.push_back(apply_mlm_mask(data.slices[sampler.next()], policy, rng, state.config().vocab_size));
      total += static_cast<std::size_t>(
          std::count_if(examples.back().labels.begin(), examples.back().labels.end(),
                        [](int l) { return l != kIgnoreLabel; }));
    }
    double loss_sum = 0.0;
    for (const auto& ex : examples) {
      const double w = total ? 1.0 / static_cast<double>(total) : 0.0;
      std::size_t count = static_cast<std::size_t>(
          std::count_if(ex.labels.begin(), ex.labels.end(), [](int l) { return l != kIgnoreLabel; }));
      if (count == 0) continue;
      const auto r = accumulate_mlm_gradients(state, ex.inputs, ex.labels, w * static_cast<double>(count));
      loss_sum += r.loss * static_cast<double>(r.count);
    }
    const LossRecord rec{step, total ? loss_sum / static_cast<double>(total) : 0.0, batch, lr_at(step, opt.config)};
    adamw_step(opt, state.params());
    trace.push_back(rec);
    if (options.on_step) options.on_step(rec);
  }
  if (cursor) cursor->examples_seen = sampler.consumed();
  return trace;
}

struct TokenPair {
  std::vector<int> source;
  std::vector<int> target;  // ends with eos

  friend bool operator==(const TokenPair&, const TokenPair&) = default;
};

/// Tokenizes a text pair, truncating the source to max_input_len and the target
/// to max_target_len − 1 before appending eos.
inline TokenPair tokenize_pair(std::string_view source, std::string_view target, const GenerationConfig& gen) {
  TokenPair p{encode(source), encode(target)};
  if (p.source.empty()) p.source.push_back(tokens::kUnk);
  if (p.source.size() > gen.max_input_len) p.source.resize(gen.max_input_len);
  if (p.target.size() + 1 > gen.max_target_len) p.target.resize(gen.max_target_len - 1);
  p.target.push_back(gen.eos_id);
  return p;
}

/// Stops once the validation loss has failed to improve for `patience`
/// consecutive epochs.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Records one epoch's validation loss; true means stop now.
  bool update(double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      bad_epochs_ = 0;
    } else {
      ++bad_epochs_;
    }
    return patience_ > 0 && bad_epochs_ >= patience_;
  }

  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t bad_epochs_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct Seq2SeqOptions {
  TrainOptions train;
  GenerationConfig generation;
  std::size_t patience = 0;  // epochs; 0 disables early stopping
  std::vector<TokenPair> validation;
};

struct Seq2SeqTrace {
  std::vector<LossRecord> steps;
  std::vector<double> validation_losses;  // one per completed epoch when validating
  bool stopped_early = false;
};

inline double mean_pair_loss(const Seq2SeqState& state, const std::vector<TokenPair>& pairs,
                             const GenerationConfig& gen) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& p : pairs) {
    const auto r = seq2seq_loss_detail(state, p.source, p.target, gen);
    sum += r.loss * static_cast<double>(r.count);
    count += r.count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

/// Teacher-forced fine-tuning. With patience > 0 and a validation split, the
/// validation loss is measured at every epoch boundary.
inline Seq2SeqTrace train_seq2seq(Seq2SeqState& state, OptimizerState& opt, const std::vector<TokenPair>& pairs,
                                  const Seq2SeqOptions& options, TrainCursor* cursor = nullptr) {
  if (pairs.empty()) throw std::invalid_argument("train_seq2seq: empty pair set");
  const auto& gen = options.generation;
  const auto& to = options.train;
  if (to.grad_accum == 0) throw std::invalid_argument("train_seq2seq: grad_accum must be >= 1");
  to.schedule.validate();
  for (const auto& p : pairs) {
    if (p.source.size() > gen.max_input_len) throw LengthError("train_seq2seq(source)", p.source.size(), gen.max_input_len);
    if (p.target.size() > gen.max_target_len) throw LengthError("train_seq2seq(target)", p.target.size(), gen.max_target_len);
  }
  EpochSampler sampler(pairs.size(), to.seed, cursor ? cursor->examples_seen : 0);
  EarlyStopping stopper(options.patience);
  const bool validate = options.patience > 0 && !options.validation.empty();
  Seq2SeqTrace trace;
  state.params().zero_grad();
  for (std::size_t k = 0; k < to.steps; ++k) {
    const std::size_t step = opt.step;
    const std::size_t batch = to.schedule.batch_size_at(step) * to.grad_accum;
    const std::uint64_t epochs_before = sampler.epochs_done();
    std::vector<std::size_t> picks(batch);
    std::size_t total = 0;
    for (auto& i : picks) {
      i = sampler.next();
      total += teacher_forcing(pairs[i].target, gen.bos_id, gen.pad_id).labels.size() -
               static_cast<std::size_t>(std::count(pairs[i].target.begin(), pairs[i].target.end(), gen.pad_id));
    }
    double loss_sum = 0.0;
    for (std::size_t i : picks) {
      const auto& p = pairs[i];
      const std::size_t count = p.target.size() -
                                static_cast<std::size_t>(std::count(p.target.begin(), p.target.end(), gen.pad_id));
      if (count == 0) continue;
      const auto r = accumulate_seq2seq_gradients(state, p.source, p.target,
                                                  static_cast<double>(count) / static_cast<double>(total), gen);
      loss_sum += r.loss * static_cast<double>(r.count);
    }
    const LossRecord rec{step, total ? loss_sum / static_cast<double>(total) : 0.0, batch, lr_at(step, opt.config)};
    adamw_step(opt, state.params());
    trace.steps.push_back(rec);
    if (to.on_step) to.on_step(rec);

    if (validate && sampler.epochs_done() > epochs_before) {
      const double val = mean_pair_loss(state, options.validation, gen);
      trace.validation_losses.push_back(val);
      if (stopper.update(val)) {
        trace.stopped_early = true;
        break;
      }
    }
  }
  if (cursor) cursor->examples_seen = sampler.consumed();
  return trace;
}

}  // namespace spectramix
