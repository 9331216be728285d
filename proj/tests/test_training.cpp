#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "spectramix/training.hpp"
#include "support/tasks.hpp"

namespace spectramix {
namespace {

TEST(Tokenizer, RoundTripsEveryByte) {
  std::string all;
  for (int b = 0; b < 256; ++b) all.push_back(static_cast<char>(b));
  const auto ids = encode(all);
  EXPECT_EQ(ids.front(), tokens::kByteOffset);
  EXPECT_EQ(static_cast<std::size_t>(ids.back()), tokens::kVocabSize - 1);
  EXPECT_EQ(decode(ids), all);
}

TEST(Tokenizer, DecodeDropsSpecialsAndRejectsUnknownIds) {
  auto ids = encode("hi");
  ids.insert(ids.begin(), tokens::kBos);
  ids.push_back(tokens::kEos);
  ids.push_back(tokens::kPad);
  EXPECT_EQ(decode(ids), "hi");
  EXPECT_THROW(decode(std::vector<int>{261}), std::out_of_range);
  EXPECT_THROW(decode(std::vector<int>{-1}), std::out_of_range);
}

std::vector<std::vector<int>> docs_of_lengths(const std::vector<std::size_t>& lengths) {
  std::vector<std::vector<int>> docs;
  int next = 5;
  for (auto n : lengths) {
    std::vector<int> d(n);
    for (auto& t : d) t = next++;
    docs.push_back(d);
  }
  return docs;
}

TEST(PackCorpus, DropsTheTrailingPartialSlice) {
  const auto packed = pack_corpus(docs_of_lengths({10, 7, 5}), 8);
  ASSERT_EQ(packed.size(), 2u);
  EXPECT_EQ(packed.slices[1].front(), 5 + 8);
}

TEST(PackCorpus, ExactDocumentIsOneSlice) {
  EXPECT_EQ(pack_corpus(docs_of_lengths({8}), 8).size(), 1u);
}

TEST(PackCorpus, ShortCorpusGivesNothing) {
  EXPECT_TRUE(pack_corpus(docs_of_lengths({3, 2}), 8).empty());
  EXPECT_TRUE(pack_corpus({}, 8).empty());
  EXPECT_THROW(pack_corpus({}, 1), std::invalid_argument);
}

TEST(PackCorpus, StreamIsTheTruncatedConcatenation) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<int>> docs(rng.uniform_int(6));
    std::vector<int> stream;
    for (auto& d : docs) {
      d.resize(rng.uniform_int(30));
      for (auto& t : d) t = 5 + static_cast<int>(rng.uniform_int(256));
      stream.insert(stream.end(), d.begin(), d.end());
    }
    const std::size_t len = 2 + rng.uniform_int(10);
    const auto packed = pack_corpus(docs, len);
    stream.resize(stream.size() / len * len);
    std::vector<int> flat;
    for (const auto& s : packed.slices) {
      EXPECT_EQ(s.size(), len);
      flat.insert(flat.end(), s.begin(), s.end());
    }
    EXPECT_EQ(flat, stream);
  }
}

TEST(Masking, ZeroProbabilityLeavesInputAlone) {
  MaskingPolicy policy;
  policy.mask_prob = 0.0;
  Rng rng(2);
  const auto slice = encode("some bytes here");
  const auto ex = apply_mlm_mask(slice, policy, rng);
  EXPECT_EQ(ex.inputs, slice);
  EXPECT_EQ(ex.labels, std::vector<int>(slice.size(), kIgnoreLabel));
}

TEST(Masking, SelectionRateOverAMillionPositions) {
  std::vector<int> slice(1'000'000);
  for (std::size_t i = 0; i < slice.size(); ++i) slice[i] = 5 + static_cast<int>(i % 256);
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    Rng rng(seed);
    const auto ex = apply_mlm_mask(slice, MaskingPolicy{}, rng);
    std::size_t selected = 0, masked = 0, kept = 0;
    for (std::size_t i = 0; i < slice.size(); ++i) {
      if (ex.labels[i] == kIgnoreLabel) {
        ASSERT_EQ(ex.inputs[i], slice[i]);
        continue;
      }
      ASSERT_EQ(ex.labels[i], slice[i]);
      ++selected;
      if (ex.inputs[i] == tokens::kMask) ++masked;
      if (ex.inputs[i] == slice[i]) ++kept;
      ASSERT_TRUE(ex.inputs[i] == tokens::kMask || !is_special(ex.inputs[i]));
    }
    const double rate = static_cast<double>(selected) / static_cast<double>(slice.size());
    EXPECT_GE(rate, 0.148);
    EXPECT_LE(rate, 0.152);
    EXPECT_NEAR(static_cast<double>(masked) / static_cast<double>(selected), 0.8, 0.01);
    // kept includes random draws that happen to hit the original byte (1/256 of 10%)
    EXPECT_NEAR(static_cast<double>(kept) / static_cast<double>(selected), 0.1, 0.01);
  }
}

TEST(Masking, NeverSelectsSpecials) {
  std::vector<int> slice(5000);
  for (std::size_t i = 0; i < slice.size(); ++i) slice[i] = static_cast<int>(i % 10);
  Rng rng(3);
  const auto ex = apply_mlm_mask(slice, MaskingPolicy{}, rng);
  for (std::size_t i = 0; i < slice.size(); ++i) {
    if (is_special(slice[i])) {
      EXPECT_EQ(ex.labels[i], kIgnoreLabel);
      EXPECT_EQ(ex.inputs[i], slice[i]);
    }
  }
}

TEST(Masking, SameSeedSameOutput) {
  const auto slice = encode("the quick brown fox jumps over the lazy dog, twice over");
  Rng a(4), b(4);
  const auto x = apply_mlm_mask(slice, MaskingPolicy{}, a);
  const auto y = apply_mlm_mask(slice, MaskingPolicy{}, b);
  EXPECT_EQ(x.inputs, y.inputs);
  EXPECT_EQ(x.labels, y.labels);
}

TEST(Masking, PolicyValidation) {
  MaskingPolicy p;
  p.random_frac = 0.2;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.mask_prob = 1.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

ParameterSet scalar_param(double value) {
  ParameterSet ps;
  ps.add("p", {1});
  ps.value(ParamId{0})[0] = value;
  return ps;
}

TEST(AdamW, ZeroGradientZeroDecayIsIdentity) {
  ParameterSet ps = scalar_param(0.7);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.warmup_steps = 0;
  OptimizerState opt(ps, cfg);
  for (int i = 0; i < 5; ++i) adamw_step(opt, ps);
  EXPECT_EQ(ps.value(ParamId{0})[0], 0.7);
}

TEST(AdamW, FirstStepMovesByTheLearningRate) {
  ParameterSet ps = scalar_param(0.3);
  AdamWConfig cfg;
  cfg.base_lr = 1e-3;
  cfg.weight_decay = 0.0;
  cfg.warmup_steps = 0;
  OptimizerState opt(ps, cfg);
  ps.grad(ParamId{0})[0] = 1.0;
  adamw_step(opt, ps);
  EXPECT_NEAR(ps.value(ParamId{0})[0], 0.3 - 1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(ps.grad(ParamId{0})[0], 0.0);
  EXPECT_EQ(opt.step, 1u);
}

TEST(AdamW, WeightDecayAloneIsGeometric) {
  ParameterSet ps = scalar_param(2.0);
  AdamWConfig cfg;
  cfg.base_lr = 0.1;
  cfg.warmup_steps = 0;
  OptimizerState opt(ps, cfg);
  for (int i = 0; i < 10; ++i) adamw_step(opt, ps);
  EXPECT_NEAR(ps.value(ParamId{0})[0], 2.0 * std::pow(1.0 - 0.1 * 0.01, 10), 1e-14);
}

TEST(AdamW, ZeroLearningRateIsIdentity) {
  Rng rng(5);
  ParameterSet ps;
  ps.add("a", {3, 2});
  ps.add("b", {4});
  for (auto& p : ps) {
    for (auto& v : p.value.values()) v = rng.normal();
    for (auto& g : p.grad.values()) g = rng.normal();
  }
  std::vector<Tensor> before;
  for (const auto& p : ps) before.push_back(p.value);
  AdamWConfig cfg;
  cfg.base_lr = 0.0;
  OptimizerState opt(ps, cfg);
  adamw_step(opt, ps);
  std::size_t i = 0;
  for (const auto& p : ps) EXPECT_EQ(p.value, before[i++]);
}

TEST(AdamW, NonFiniteGradientNamesTheParameterAndChangesNothing) {
  ParameterSet ps;
  ps.add("ok", {2});
  ps.add("bad", {2});
  ps.value(ParamId{0}).fill(1.0);
  ps.grad(ParamId{0}).fill(1.0);
  ps.grad(ParamId{1})[1] = std::nan("");
  AdamWConfig cfg;
  cfg.warmup_steps = 0;
  OptimizerState opt(ps, cfg);
  try {
    adamw_step(opt, ps);
    FAIL() << "expected NonFiniteGradient";
  } catch (const NonFiniteGradient& e) {
    EXPECT_EQ(e.name, "bad");
  }
  EXPECT_EQ(ps.value(ParamId{0})[0], 1.0);
  EXPECT_EQ(opt.step, 0u);
}

TEST(AdamW, FrozenPrefixesDoNotMove) {
  ParameterSet ps;
  ps.add("decoder.w", {2});
  ps.add("encoder.w", {2});
  for (auto& p : ps) {
    p.value.fill(1.0);
    p.grad.fill(0.5);
  }
  AdamWConfig cfg;
  cfg.warmup_steps = 0;
  cfg.frozen_prefixes = {"decoder."};
  OptimizerState opt(ps, cfg);
  adamw_step(opt, ps);
  EXPECT_EQ(ps.value(ParamId{0})[0], 1.0);
  EXPECT_LT(ps.value(ParamId{1})[0], 1.0);
}

TEST(LearningRate, WarmupThenConstant) {
  const AdamWConfig cfg;
  EXPECT_EQ(lr_at(0, cfg), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(250, cfg), 2.5e-5);
  EXPECT_EQ(lr_at(500, cfg), 5e-5);
  EXPECT_EQ(lr_at(10'000, cfg), 5e-5);
}

TEST(BatchSchedule, PhaseBoundaries) {
  const BatchSchedule s{{{100, 2}, {std::nullopt, 4}}};
  s.validate();
  EXPECT_EQ(s.batch_size_at(0), 2u);
  EXPECT_EQ(s.batch_size_at(99), 2u);
  EXPECT_EQ(s.batch_size_at(100), 4u);
  EXPECT_EQ(s.batch_size_at(1'000'000), 4u);
  const BatchSchedule bounded{{{10, 3}}};
  EXPECT_EQ(bounded.batch_size_at(50), 3u);
}

TEST(BatchSchedule, Validation) {
  EXPECT_THROW((BatchSchedule{{}}).validate(), std::invalid_argument);
  EXPECT_THROW((BatchSchedule{{{10, 0}}}).validate(), std::invalid_argument);
  EXPECT_THROW((BatchSchedule{{{10, 2}, {10, 4}}}).validate(), std::invalid_argument);
  EXPECT_THROW((BatchSchedule{{{std::nullopt, 2}, {10, 4}}}).validate(), std::invalid_argument);
}

TEST(EpochSampler, EachEpochIsAPermutationAndSeekingMatches) {
  EpochSampler s(7, 9);
  std::vector<std::size_t> drawn;
  for (int i = 0; i < 21; ++i) drawn.push_back(s.next());
  for (int e = 0; e < 3; ++e) {
    std::vector<std::size_t> epoch(drawn.begin() + 7 * e, drawn.begin() + 7 * (e + 1));
    std::sort(epoch.begin(), epoch.end());
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(epoch[i], i);
  }
  EXPECT_NE(std::vector<std::size_t>(drawn.begin(), drawn.begin() + 7),
            std::vector<std::size_t>(drawn.begin() + 7, drawn.begin() + 14));
  for (std::uint64_t start : {0u, 3u, 7u, 13u, 14u}) {
    EpochSampler resumed(7, 9, start);
    for (std::size_t i = start; i < drawn.size(); ++i) EXPECT_EQ(resumed.next(), drawn[i]) << start;
  }
}

TEST(EarlyStopping, RisingLossStopsAfterPatienceEpochs) {
  EarlyStopping stop(3);
  EXPECT_FALSE(stop.update(1.0));  // epoch 1
  EXPECT_FALSE(stop.update(1.1));
  EXPECT_FALSE(stop.update(1.2));
  EXPECT_TRUE(stop.update(1.3));  // epoch 4
}

TEST(EarlyStopping, ImprovementResetsTheCount) {
  EarlyStopping stop(2);
  EXPECT_FALSE(stop.update(1.0));
  EXPECT_FALSE(stop.update(1.5));
  EXPECT_FALSE(stop.update(0.5));
  EXPECT_FALSE(stop.update(0.6));
  EXPECT_TRUE(stop.update(0.7));
  EXPECT_EQ(stop.best(), 0.5);
}

// ---------------------------------------------------------------------------
// training loops

EncoderConfig mlm_config(MixingKind kind) {
  EncoderConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 64;
  cfg.d_ff = 128;
  cfg.vocab_size = tokens::kVocabSize;
  cfg.max_positions = 128;
  cfg.mixing = kind;
  return cfg;
}

AdamWConfig smoke_optimizer() {
  AdamWConfig cfg;
  cfg.base_lr = 2e-3;
  cfg.warmup_steps = 20;
  return cfg;
}

double mean_loss(const std::vector<LossRecord>& trace, std::size_t from, std::size_t to) {
  double s = 0.0;
  for (std::size_t i = from; i < to; ++i) s += trace[i].loss;
  return s / static_cast<double>(to - from);
}

TEST(TrainMlm, LossHalvesOnARepetitiveCorpusForLinearKinds) {
  const auto data = pack_corpus(testing::repetitive_corpus(60, 1), 128);
  ASSERT_GE(data.size(), 8u);
  for (auto kind : kLinearMixingKinds) {
    Rng rng(2);
    EncoderState state(mlm_config(kind), rng);
    OptimizerState opt(state.params(), smoke_optimizer());
    TrainOptions options;
    options.steps = 200;
    options.seed = 3;
    options.schedule = {{{std::nullopt, 4}}};
    const auto trace = train_mlm(state, opt, data, MaskingPolicy{}, options);
    ASSERT_EQ(trace.size(), 200u);
    const double first = mean_loss(trace, 0, 20);
    const double last = mean_loss(trace, 180, 200);
    EXPECT_LE(last, 0.5 * first) << to_string(kind) << " first " << first << " last " << last;
  }
}

TEST(TrainMlm, NonlinearKindsStayFiniteAndDeterministic) {
  const auto data = pack_corpus(testing::repetitive_corpus(20, 4), 32);
  for (auto kind : {MixingKind::Modulus, MixingKind::Phase}) {
    auto run = [&] {
      auto cfg = mlm_config(kind);
      cfg.d_model = 16;
      cfg.d_ff = 32;
      Rng rng(5);
      EncoderState state(cfg, rng);
      OptimizerState opt(state.params(), smoke_optimizer());
      TrainOptions options;
      options.steps = 15;
      options.seed = 6;
      options.schedule = {{{std::nullopt, 2}}};
      return train_mlm(state, opt, data, MaskingPolicy{}, options);
    };
    const auto a = run();
    for (const auto& r : a) EXPECT_TRUE(std::isfinite(r.loss)) << to_string(kind);
    EXPECT_EQ(a, run()) << to_string(kind);
  }
}

EncoderConfig micro_mlm() {
  auto cfg = mlm_config(MixingKind::Hartley);
  cfg.n_layers = 1;
  cfg.d_model = 8;
  cfg.d_ff = 8;
  cfg.max_positions = 16;
  return cfg;
}

TEST(TrainMlm, ScheduleSwitchIsObservedAtTheBoundary) {
  const auto data = pack_corpus(testing::repetitive_corpus(10, 7), 16);
  Rng rng(8);
  EncoderState state(micro_mlm(), rng);
  OptimizerState opt(state.params(), smoke_optimizer());
  opt.step = 99;
  TrainOptions options;
  options.steps = 2;
  options.schedule = {{{100, 2}, {std::nullopt, 4}}};
  const auto trace = train_mlm(state, opt, data, MaskingPolicy{}, options);
  ASSERT_EQ(trace.size(), 2u);
  EXPECT_EQ(trace[0].step, 99u);
  EXPECT_EQ(trace[0].batch_size, 2u);
  EXPECT_EQ(trace[1].step, 100u);
  EXPECT_EQ(trace[1].batch_size, 4u);
}

TEST(TrainMlm, GradAccumulationMultipliesTheEffectiveBatch) {
  const auto data = pack_corpus(testing::repetitive_corpus(10, 7), 16);
  Rng rng(8);
  EncoderState state(micro_mlm(), rng);
  OptimizerState opt(state.params(), smoke_optimizer());
  TrainOptions options;
  options.steps = 1;
  options.grad_accum = 3;
  options.schedule = {{{std::nullopt, 2}}};
  TrainCursor cursor;
  EXPECT_EQ(train_mlm(state, opt, data, MaskingPolicy{}, options, &cursor).front().batch_size, 6u);
  EXPECT_EQ(cursor.examples_seen, 6u);
}

TEST(TrainMlm, SplitRunMatchesContinuousRun) {
  const auto data = pack_corpus(testing::repetitive_corpus(10, 9), 16);
  TrainOptions options;
  options.seed = 10;
  options.schedule = {{{5, 2}, {std::nullopt, 3}}};

  Rng rng_a(11);
  EncoderState a(micro_mlm(), rng_a);
  OptimizerState opt_a(a.params(), smoke_optimizer());
  options.steps = 12;
  const auto whole = train_mlm(a, opt_a, data, MaskingPolicy{}, options);

  Rng rng_b(11);
  EncoderState b(micro_mlm(), rng_b);
  OptimizerState opt_b(b.params(), smoke_optimizer());
  TrainCursor cursor;
  options.steps = 7;
  auto split = train_mlm(b, opt_b, data, MaskingPolicy{}, options, &cursor);
  options.steps = 5;
  const auto rest = train_mlm(b, opt_b, data, MaskingPolicy{}, options, &cursor);
  split.insert(split.end(), rest.begin(), rest.end());

  EXPECT_EQ(whole, split);
  auto pa = a.params().begin();
  for (const auto& p : b.params()) EXPECT_EQ((pa++)->value, p.value) << p.name;
}

EncoderConfig copy_encoder() {
  EncoderConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 64;
  cfg.d_ff = 128;
  cfg.vocab_size = tokens::kVocabSize;
  cfg.max_positions = 32;
  cfg.mixing = MixingKind::Hartley;
  cfg.mlm_head = false;
  return cfg;
}

DecoderConfig copy_decoder() {
  DecoderConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 64;
  cfg.d_ff = 128;
  cfg.n_heads = 4;
  cfg.vocab_size = tokens::kVocabSize;
  cfg.max_positions = 32;
  return cfg;
}

GenerationConfig copy_generation() {
  GenerationConfig gen;
  gen.max_input_len = 32;
  gen.max_target_len = 32;
  return gen;
}

TEST(TokenizePair, TruncatesAndAppendsEos) {
  GenerationConfig gen;
  gen.max_input_len = 3;
  gen.max_target_len = 3;
  const auto p = tokenize_pair("abcdef", "xyz", gen);
  EXPECT_EQ(p.source, encode("abc"));
  EXPECT_EQ(p.target, (std::vector<int>{encode("x")[0], encode("y")[0], gen.eos_id}));
}

TEST(TrainSeq2Seq, FrozenDecoderStillLearnsThroughCrossAttention) {
  const auto gen = copy_generation();
  const auto pairs = testing::copy_pairs(testing::copy_sources(8, 12, 4, 8), gen);
  Rng rng(13);
  Seq2SeqState state(copy_encoder(), copy_decoder(), rng);
  std::vector<Tensor> decoder_before;
  for (const auto& p : state.params()) {
    if (p.name.starts_with("decoder.")) decoder_before.push_back(p.value);
  }
  AdamWConfig cfg = smoke_optimizer();
  cfg.frozen_prefixes = {"decoder."};
  OptimizerState opt(state.params(), cfg);
  Seq2SeqOptions options;
  options.generation = gen;
  options.train.steps = 100;
  options.train.seed = 14;
  options.train.schedule = {{{std::nullopt, 4}}};
  const double before = mean_pair_loss(state, pairs, gen);
  train_seq2seq(state, opt, pairs, options);
  const double after = mean_pair_loss(state, pairs, gen);
  // A frozen random decoder caps how far the logits can move; the drop is
  // small but comes only from encoder and cross-attention input updates.
  EXPECT_LT(after, before - 0.01) << before << " -> " << after;
  std::size_t i = 0;
  for (const auto& p : state.params()) {
    if (p.name.starts_with("decoder.")) {
      EXPECT_EQ(p.value, decoder_before[i++]) << p.name;
    }
  }
}

TEST(TrainSeq2Seq, PatienceStopsAfterStaleEpochs) {
  const auto gen = copy_generation();
  const auto pairs = testing::copy_pairs(testing::copy_sources(4, 15, 3, 5), gen);
  auto enc = copy_encoder();
  auto dec = copy_decoder();
  enc.d_model = dec.d_model = 8;
  dec.n_heads = 2;
  Rng rng(16);
  Seq2SeqState state(enc, dec, rng);
  AdamWConfig cfg;
  cfg.base_lr = 0.0;  // validation loss never improves after epoch 1
  OptimizerState opt(state.params(), cfg);
  Seq2SeqOptions options;
  options.generation = gen;
  options.train.steps = 100;
  options.train.schedule = {{{std::nullopt, 2}}};
  options.patience = 3;
  options.validation = pairs;
  const auto trace = train_seq2seq(state, opt, pairs, options);
  EXPECT_TRUE(trace.stopped_early);
  EXPECT_EQ(trace.validation_losses.size(), 4u);
  EXPECT_EQ(trace.steps.size(), 8u);  // 4 epochs of 2 steps
}

TEST(TrainSeq2Seq, RejectsOverlongPairsAndEmptyInput) {
  auto gen = copy_generation();
  Rng rng(17);
  Seq2SeqState state(copy_encoder(), copy_decoder(), rng);
  OptimizerState opt(state.params(), AdamWConfig{});
  Seq2SeqOptions options;
  options.generation = gen;
  options.train.steps = 1;
  EXPECT_THROW(train_seq2seq(state, opt, {}, options), std::invalid_argument);
  options.generation.max_target_len = 3;
  const std::vector<TokenPair> pairs{{encode("ab"), {10, 11, 12, 3}}};
  EXPECT_THROW(train_seq2seq(state, opt, pairs, options), LengthError);
}

}  // namespace
}  // namespace spectramix
