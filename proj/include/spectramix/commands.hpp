#pragma once

// Bodies of the command-line subcommands. Each takes parsed options and
// output streams and returns a process exit code, so tests can drive them
// without spawning the binary.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spectramix/bench.hpp"
#include "spectramix/checkpoint.hpp"
#include "spectramix/config.hpp"
#include "spectramix/datasets.hpp"
#include "spectramix/encoder.hpp"
#include "spectramix/evalmetrics.hpp"
#include "spectramix/raed.hpp"
#include "spectramix/training.hpp"

namespace spectramix {

inline constexpr const char* kMlmCheckpoint = "mlm";
inline constexpr const char* kSeq2SeqCheckpoint = "seq2seq";
inline constexpr std::uint64_t kInitStream = 0x494E4954;

/// Flags shared by every subcommand.
struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mixing;
  std::string out;
};

struct TrainCommandOptions {
  std::optional<std::size_t> steps;
};

struct ResumeCommandOptions {
  std::string checkpoint;
  std::optional<std::size_t> steps;
};

struct GenerateCommandOptions {
  std::string checkpoint;
  std::string input;
  std::optional<std::size_t> beam_size;
  std::optional<std::size_t> no_repeat_ngram;
  std::optional<std::size_t> max_target_len;
};

struct EvaluateCommandOptions {
  std::string rouge;     // JSONL {"hyp","ref"}
  std::string relative;  // CSV task,candidate,reference
};

struct BenchCommandOptions {
  std::vector<std::size_t> seq_lens{512, 1024, 2048, 4096};
  std::size_t d_model = 768;
  std::size_t n_heads = 12;
  std::size_t repeats = 5;
  std::size_t warmups = 2;
};

struct CountParamsCommandOptions {
  std::vector<std::size_t> positions{4096, 8192};
};

// ---------------------------------------------------------------------------
// helpers

/// 1234567 -> "1,234,567".
inline std::string with_commas(std::size_t n) {
  std::string digits = std::to_string(n);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out.push_back(',');
    out.push_back(digits[i]);
  }
  return out;
}

namespace detail {

inline std::string resolve_against(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  return (path.is_absolute() ? path : std::filesystem::absolute(base / path)).lexically_normal().string();
}

}  // namespace detail

/// Relative paths inside a config file are taken relative to the file itself.
inline RunConfig load_run_config_file(const std::filesystem::path& path) {
  RunConfig cfg = load_run_config(path);
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  for (auto* p : {&cfg.paths.corpus, &cfg.paths.pairs, &cfg.paths.validation, &cfg.paths.checkpoint_in,
                  &cfg.paths.checkpoint_out, &cfg.paths.loss_csv}) {
    *p = detail::resolve_against(*p, base);
  }
  return cfg;
}

inline void apply_overrides(RunConfig& cfg, const GlobalOptions& g) {
  if (g.seed) cfg.training.seed = *g.seed;
  if (g.mixing) cfg.model.encoder.mixing = parse_mixing_kind(*g.mixing);
  if (!g.out.empty()) cfg.paths.checkpoint_out = g.out;
  validate(cfg);
}

inline RunConfig require_config(const GlobalOptions& g) {
  if (g.config.empty()) throw ConfigError("--config is required");
  RunConfig cfg = load_run_config_file(g.config);
  apply_overrides(cfg, g);
  return cfg;
}

inline std::string loss_csv_path(const RunConfig& cfg) {
  return cfg.paths.loss_csv.empty() ? cfg.paths.checkpoint_out + ".loss.csv" : cfg.paths.loss_csv;
}

/// Streams LossRecords as CSV rows; losses are written with full precision so
/// two runs can be compared byte for byte.
class LossCsvWriter {
 public:
  explicit LossCsvWriter(const std::string& path, bool append = false) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    const bool header = !append || !std::filesystem::exists(p) || std::filesystem::file_size(p) == 0;
    out_.open(p, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot write " + path);
    if (header) out_ << "step,loss,batch_size,lr\n";
  }

  void operator()(const LossRecord& r) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%zu,%.17g\n", r.step, r.loss, r.batch_size, r.lr);
    out_ << buf;
    out_.flush();
  }

 private:
  std::ofstream out_;
};

inline nlohmann::json checkpoint_metadata(const std::string& kind, const RunConfig& cfg, std::size_t step,
                                          std::uint64_t examples_seen) {
  return {{"format", "spectramix"},
          {"kind", kind},
          {"config", to_json(cfg)},
          {"progress", {{"step", step}, {"examples_seen", examples_seen}}}};
}

struct CheckpointInfo {
  std::string kind;
  RunConfig config;
  std::size_t step = 0;
  std::uint64_t examples_seen = 0;
};

inline CheckpointInfo checkpoint_info(const Checkpoint& ckpt) {
  const auto& m = ckpt.metadata;
  try {
    CheckpointInfo info;
    info.kind = m.at("kind").get<std::string>();
    info.config = run_config_from_json(m.at("config"));
    info.step = m.at("progress").at("step").get<std::size_t>();
    info.examples_seen = m.at("progress").at("examples_seen").get<std::uint64_t>();
    return info;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata is incomplete: ") + e.what());
  }
}

inline void require_kind(const CheckpointInfo& info, const std::string& kind) {
  if (info.kind != kind) throw CheckpointError("expected a " + kind + " checkpoint, found " + info.kind);
}

inline Seq2SeqState seq2seq_from_entries(const EncoderConfig& enc, const DecoderConfig& dec,
                                         const std::vector<CheckpointEntry>& entries) {
  Seq2SeqState state(enc, dec);
  check_parameter_set(state.param_specs(), entries);
  for (const auto& e : entries) {
    if (auto id = state.params().find(e.name)) state.params().value(*id) = e.value;
  }
  return state;
}

inline PackedDataset load_mlm_corpus(const RunConfig& cfg) {
  if (cfg.paths.corpus.empty()) throw ConfigError("paths.corpus is required");
  if (cfg.training.max_seq_len > cfg.model.encoder.max_positions) {
    throw ConfigError("training.max_seq_len exceeds model.encoder.max_positions");
  }
  std::vector<std::vector<int>> docs;
  for (const auto& text : read_text_jsonl(cfg.paths.corpus)) docs.push_back(encode(text));
  auto data = pack_corpus(docs, cfg.training.max_seq_len);
  if (data.empty()) throw std::invalid_argument(cfg.paths.corpus + ": corpus is shorter than one training slice");
  return data;
}

inline void require_byte_vocab(std::size_t vocab, const char* what) {
  if (vocab < tokens::kVocabSize) {
    throw ConfigError(std::string(what) + ".vocab_size must be at least " + std::to_string(tokens::kVocabSize) +
                      " for the byte tokenizer");
  }
}

inline TrainOptions train_options(const RunConfig& cfg, std::size_t steps) {
  TrainOptions o;
  o.steps = steps;
  o.seed = cfg.training.seed;
  o.grad_accum = cfg.training.grad_accum;
  o.schedule = cfg.training.schedule;
  return o;
}

inline void write_summary(std::ostream& out, const std::vector<LossRecord>& trace, const std::string& ckpt,
                          const std::string& csv) {
  if (!trace.empty()) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "steps %zu..%zu, loss %.4f -> %.4f\n", trace.front().step, trace.back().step,
                  trace.front().loss, trace.back().loss);
    out << buf;
  }
  out << "checkpoint: " << ckpt << "\nloss trace: " << csv << "\n";
}

// ---------------------------------------------------------------------------
// commands

/// MLM pretraining from a JSONL corpus.
inline int cmd_train_mlm(const GlobalOptions& g, const TrainCommandOptions& o, std::ostream& out) {
  RunConfig cfg = require_config(g);
  if (cfg.paths.checkpoint_out.empty()) throw ConfigError("an output checkpoint (--out) is required");
  if (!cfg.model.encoder.mlm_head) throw ConfigError("model.encoder.mlm_head must be true for MLM training");
  require_byte_vocab(cfg.model.encoder.vocab_size, "model.encoder");
  const auto data = load_mlm_corpus(cfg);
  const std::size_t steps = o.steps.value_or(cfg.training.steps);

  Rng init = Rng(cfg.training.seed).split(kInitStream);
  EncoderState state(cfg.model.encoder, init);
  OptimizerState opt(state.params(), cfg.training.optimizer);
  TrainCursor cursor;
  const auto csv_path = loss_csv_path(cfg);
  LossCsvWriter csv(csv_path);
  auto options = train_options(cfg, steps);
  options.on_step = std::ref(csv);
  const auto trace = train_mlm(state, opt, data, cfg.training.masking, options, &cursor);

  save_checkpoint(cfg.paths.checkpoint_out,
                  {checkpoint_metadata(kMlmCheckpoint, cfg, opt.step, cursor.examples_seen), entries_from(state.params())});
  out << "slices: " << data.size() << " x " << data.max_seq_len << " tokens\n";
  write_summary(out, trace, cfg.paths.checkpoint_out, csv_path);
  return 0;
}

/// Continues MLM training from a checkpoint, optionally under another mixing
/// kind. Optimizer moments restart at zero; the step counter and data cursor
/// carry over.
inline int cmd_resume(const GlobalOptions& g, const ResumeCommandOptions& o, std::ostream& out) {
  std::string path = o.checkpoint;
  std::optional<RunConfig> fresh;
  if (!g.config.empty()) {
    fresh = load_run_config_file(g.config);
    if (path.empty()) path = fresh->paths.checkpoint_in;
  }
  if (path.empty()) throw ConfigError("a checkpoint to resume from (--checkpoint) is required");
  const Checkpoint ckpt = load_checkpoint(path);
  const CheckpointInfo info = checkpoint_info(ckpt);
  require_kind(info, kMlmCheckpoint);

  RunConfig cfg = info.config;
  if (fresh) {
    cfg.training = fresh->training;
    cfg.paths = fresh->paths;
  }
  const MixingKind from = cfg.model.encoder.mixing;
  EncoderState state = encoder_from_entries(cfg.model.encoder, ckpt.entries);
  if (!g.out.empty() && !fresh) cfg.paths.loss_csv.clear();  // never append to the parent run's trace
  apply_overrides(cfg, g);
  if (cfg.paths.checkpoint_out.empty()) throw ConfigError("an output checkpoint (--out) is required");
  state.set_mixing(cfg.model.encoder.mixing);

  const auto data = load_mlm_corpus(cfg);
  OptimizerState opt(state.params(), cfg.training.optimizer);
  opt.step = info.step;
  TrainCursor cursor{info.examples_seen};
  const auto csv_path = loss_csv_path(cfg);
  LossCsvWriter csv(csv_path);
  auto options = train_options(cfg, o.steps.value_or(cfg.training.steps));
  options.on_step = std::ref(csv);
  const auto trace = train_mlm(state, opt, data, cfg.training.masking, options, &cursor);

  save_checkpoint(cfg.paths.checkpoint_out,
                  {checkpoint_metadata(kMlmCheckpoint, cfg, opt.step, cursor.examples_seen), entries_from(state.params())});
  out << "resumed at step " << info.step << ", mixing " << to_string(from) << " -> "
      << to_string(cfg.model.encoder.mixing) << "\n";
  write_summary(out, trace, cfg.paths.checkpoint_out, csv_path);
  return 0;
}

/// Sequence-to-sequence fine-tuning, optionally from a pretrained MLM encoder
/// given as paths.checkpoint_in.
inline int cmd_finetune(const GlobalOptions& g, const TrainCommandOptions& o, std::ostream& out) {
  RunConfig cfg = require_config(g);
  if (!cfg.model.decoder) throw ConfigError("model.decoder is required for fine-tuning");
  if (cfg.paths.pairs.empty()) throw ConfigError("paths.pairs is required");
  if (cfg.paths.checkpoint_out.empty()) throw ConfigError("an output checkpoint (--out) is required");
  cfg.model.encoder.mlm_head = false;
  require_byte_vocab(cfg.model.encoder.vocab_size, "model.encoder");
  require_byte_vocab(cfg.model.decoder->vocab_size, "model.decoder");
  const auto& gen = cfg.model.generation;

  Rng init = Rng(cfg.training.seed).split(kInitStream);
  Seq2SeqState state(cfg.model.encoder, *cfg.model.decoder, init);
  if (!cfg.paths.checkpoint_in.empty()) {
    const Checkpoint pre = load_checkpoint(cfg.paths.checkpoint_in);
    require_kind(checkpoint_info(pre), kMlmCheckpoint);
    load_pretrained_encoder(state, pre.entries);
    out << "encoder initialised from " << cfg.paths.checkpoint_in << "\n";
  }

  std::vector<TokenPair> pairs;
  for (const auto& p : read_pairs_jsonl(cfg.paths.pairs)) pairs.push_back(tokenize_pair(p.source, p.target, gen));
  Seq2SeqOptions options;
  options.train = train_options(cfg, o.steps.value_or(cfg.training.steps));
  options.generation = gen;
  options.patience = cfg.training.patience;
  if (!cfg.paths.validation.empty()) {
    for (const auto& p : read_pairs_jsonl(cfg.paths.validation)) {
      options.validation.push_back(tokenize_pair(p.source, p.target, gen));
    }
  }
  const auto csv_path = loss_csv_path(cfg);
  LossCsvWriter csv(csv_path);
  options.train.on_step = std::ref(csv);

  OptimizerState opt(state.params(), cfg.training.optimizer);
  TrainCursor cursor;
  const auto trace = train_seq2seq(state, opt, pairs, options, &cursor);

  save_checkpoint(cfg.paths.checkpoint_out, {checkpoint_metadata(kSeq2SeqCheckpoint, cfg, opt.step,
                                                                 cursor.examples_seen),
                                             entries_from(state.params())});
  out << "pairs: " << pairs.size() << "\n";
  if (!trace.validation_losses.empty()) {
    out << "validation loss: " << trace.validation_losses.back() << " after " << trace.validation_losses.size()
        << " epoch(s)" << (trace.stopped_early ? ", stopped early" : "") << "\n";
  }
  write_summary(out, trace.steps, cfg.paths.checkpoint_out, csv_path);
  return 0;
}

/// Reads {"source"} lines and writes {"source","generated"} lines.
inline int cmd_generate(const GlobalOptions& g, const GenerateCommandOptions& o, std::ostream& out) {
  std::optional<RunConfig> given;
  if (!g.config.empty()) given = load_run_config_file(g.config);
  std::string path = o.checkpoint;
  if (path.empty() && given) path = given->paths.checkpoint_out;
  if (path.empty()) throw ConfigError("a fine-tuned checkpoint (--checkpoint) is required");
  std::string input = o.input;
  if (input.empty() && given) input = given->paths.pairs;
  if (input.empty()) throw ConfigError("an input JSONL file (--input) is required");

  const Checkpoint ckpt = load_checkpoint(path);
  const CheckpointInfo info = checkpoint_info(ckpt);
  require_kind(info, kSeq2SeqCheckpoint);
  const RunConfig& cfg = info.config;
  Seq2SeqState state = seq2seq_from_entries(cfg.model.encoder, *cfg.model.decoder, ckpt.entries);
  if (g.mixing) state.set_mixing(parse_mixing_kind(*g.mixing));
  GenerationConfig gen = cfg.model.generation;
  if (o.beam_size) gen.beam_size = *o.beam_size;
  if (o.no_repeat_ngram) gen.no_repeat_ngram = *o.no_repeat_ngram;
  if (o.max_target_len) gen.max_target_len = *o.max_target_len;
  gen.validate();

  std::ofstream file;
  if (!g.out.empty()) {
    file.open(g.out, std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write " + g.out);
  }
  std::ostream& sink = g.out.empty() ? out : file;
  std::size_t n = 0;
  for (const auto& p : read_pairs_jsonl(input, false)) {
    std::vector<int> src = encode(p.source);
    if (src.empty()) src.push_back(tokens::kUnk);
    if (src.size() > gen.max_input_len) src.resize(gen.max_input_len);
    auto ids = generate(state, src, gen);
    if (!ids.empty() && ids.back() == gen.eos_id) ids.pop_back();
    sink << nlohmann::json{{"source", p.source}, {"generated", decode(ids)}}.dump() << "\n";
    ++n;
  }
  if (!g.out.empty()) out << "generated " << n << " sequence(s) -> " << g.out << "\n";
  return 0;
}

/// ROUGE over hyp/ref JSONL, or the task-mean ratio P over a metric CSV.
inline int cmd_evaluate(const GlobalOptions&, const EvaluateCommandOptions& o, std::ostream& out) {
  if (o.rouge.empty() && o.relative.empty()) throw ConfigError("give --rouge FILE or --relative FILE");
  char buf[200];
  if (!o.relative.empty()) {
    std::ifstream in(o.relative);
    if (!in) throw std::invalid_argument("cannot open " + o.relative);
    const auto rows = read_task_metric_csv(in);
    const double p = relative_performance(rows);
    std::snprintf(buf, sizeof buf, "tasks: %zu\nratio = %.6f\nP = %.1f\n", rows.size(), p, 100.0 * p);
    out << buf;
  }
  if (!o.rouge.empty()) {
    std::ifstream in(o.rouge);
    if (!in) throw std::invalid_argument("cannot open " + o.rouge);
    const auto pairs = read_hyp_ref_jsonl(in);
    const auto s = summarize_rouge(pairs);
    std::snprintf(buf, sizeof buf,
                  "pairs: %zu\nrouge1 p=%.4f r=%.4f f=%.4f\nrougeL p=%.4f r=%.4f f=%.4f\n", s.count,
                  s.rouge1.precision, s.rouge1.recall, s.rouge1.fmeasure, s.rougeL.precision, s.rougeL.recall,
                  s.rougeL.fmeasure);
    out << buf;
  }
  return 0;
}

/// Markdown table on `out`; CSV to --out when given.
inline int cmd_bench(const GlobalOptions& g, const BenchCommandOptions& o, std::ostream& out) {
  BenchConfig cfg;
  cfg.seq_lens = o.seq_lens;
  cfg.d_model = o.d_model;
  cfg.n_heads = o.n_heads;
  cfg.repeats = o.repeats;
  cfg.warmups = o.warmups;
  cfg.seed = g.seed.value_or(0);
  if (g.mixing) cfg.mixing = {parse_mixing_kind(*g.mixing)};
  const auto results = bench_mixing_vs_attention(cfg);
  out << bench_markdown(results);
  if (!g.out.empty()) {
    std::ofstream csv(g.out, std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write " + g.out);
    csv << bench_csv(results);
  }
  return 0;
}

/// Exact parameter counts, plus how they change with max_positions.
inline int cmd_count_params(const GlobalOptions& g, const CountParamsCommandOptions& o, std::ostream& out) {
  RunConfig cfg;
  cfg.model.encoder = base_encoder_config();
  if (!g.config.empty()) cfg = load_run_config_file(g.config);
  const EncoderConfig& enc = cfg.model.encoder;
  out << "encoder (" << enc.n_layers << " layers, d_model " << enc.d_model << ", max_positions "
      << enc.max_positions << ", mlm_head " << (enc.mlm_head ? "on" : "off") << "): " << with_commas(count_params(enc))
      << "\n";
  if (cfg.model.decoder) {
    const std::size_t dec = count_decoder_params(*cfg.model.decoder);
    EncoderConfig body = enc;
    body.mlm_head = false;
    out << "decoder: " << with_commas(dec) << "\n";
    out << "encoder-decoder total: " << with_commas(count_params(body) + dec) << "\n";
  }
  if (!o.positions.empty()) {
    out << "\n| max_positions | parameters | delta |\n|---:|---:|---:|\n";
    std::optional<std::size_t> prev;
    for (std::size_t len : o.positions) {
      EncoderConfig c = enc;
      c.max_positions = len;
      const std::size_t n = count_params(c);
      out << "| " << with_commas(len) << " | " << with_commas(n) << " | "
          << (prev ? (n >= *prev ? "+" : "-") + with_commas(n >= *prev ? n - *prev : *prev - n) : std::string())
          << " |\n";
      prev = n;
    }
  }
  return 0;
}

/// Runs a command body, turning exceptions into "error: ..." and exit code 1.
template <class F>
int run_command(F&& body, std::ostream& err) {
  try {
    return body();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace spectramix
