#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "spectramix/commands.hpp"

namespace sm = spectramix;

int main(int argc, char** argv) {
  CLI::App app{"spectramix: spectral-mixing encoders, encoder-decoder fine-tuning and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  sm::GlobalOptions g;
  std::uint64_t seed = 0;
  std::string mixing;
  app.add_option("--config", g.config, "run configuration (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "override training.seed");
  std::vector<std::string> kinds;
  for (auto k : sm::kAllMixingKinds) kinds.emplace_back(sm::to_string(k));
  auto* mixing_opt = app.add_option("--mixing", mixing, "override the mixing kind")->check(CLI::IsMember(kinds));
  app.add_option("--out", g.out, "output checkpoint / file");

  sm::TrainCommandOptions train;
  auto* train_cmd = app.add_subcommand("train-mlm", "masked-language-model pretraining on a JSONL corpus");
  train_cmd->add_option("--steps", train.steps, "override training.steps");

  sm::ResumeCommandOptions resume;
  auto* resume_cmd = app.add_subcommand("resume", "continue MLM training from a checkpoint");
  resume_cmd->add_option("--checkpoint", resume.checkpoint, "checkpoint to resume from");
  resume_cmd->add_option("--steps", resume.steps, "number of further steps");

  sm::TrainCommandOptions finetune;
  auto* finetune_cmd = app.add_subcommand("finetune", "encoder-decoder fine-tuning on JSONL pairs");
  finetune_cmd->add_option("--steps", finetune.steps, "override training.steps");

  sm::GenerateCommandOptions gen;
  auto* gen_cmd = app.add_subcommand("generate", "decode JSONL sources with a fine-tuned checkpoint");
  gen_cmd->add_option("--checkpoint", gen.checkpoint, "fine-tuned checkpoint");
  gen_cmd->add_option("--input", gen.input, "JSONL with a \"source\" field per line");
  gen_cmd->add_option("--beam-size", gen.beam_size);
  gen_cmd->add_option("--no-repeat-ngram", gen.no_repeat_ngram, "0 disables the constraint");
  gen_cmd->add_option("--max-target-len", gen.max_target_len);

  sm::EvaluateCommandOptions eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "ROUGE scores or relative performance");
  eval_cmd->add_option("--rouge", eval.rouge, "JSONL with \"hyp\" and \"ref\" fields");
  eval_cmd->add_option("--relative", eval.relative, "CSV task,candidate,reference");

  sm::BenchCommandOptions bench;
  auto* bench_cmd = app.add_subcommand("bench", "mixing vs attention throughput");
  bench_cmd->add_option("--seq-lens", bench.seq_lens)->delimiter(',');
  bench_cmd->add_option("--d-model", bench.d_model);
  bench_cmd->add_option("--heads", bench.n_heads);
  bench_cmd->add_option("--repeats", bench.repeats);
  bench_cmd->add_option("--warmups", bench.warmups);

  sm::CountParamsCommandOptions count;
  auto* count_cmd = app.add_subcommand("count-params", "exact parameter counts");
  count_cmd->add_option("--positions", count.positions, "max_positions values to compare")->delimiter(',');

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed;
  if (*mixing_opt) g.mixing = mixing;

  auto& out = std::cout;
  auto dispatch = [&]() -> int {
    if (*train_cmd) return sm::cmd_train_mlm(g, train, out);
    if (*resume_cmd) return sm::cmd_resume(g, resume, out);
    if (*finetune_cmd) return sm::cmd_finetune(g, finetune, out);
    if (*gen_cmd) return sm::cmd_generate(g, gen, out);
    if (*eval_cmd) return sm::cmd_evaluate(g, eval, out);
    if (*bench_cmd) return sm::cmd_bench(g, bench, out);
    if (*count_cmd) return sm::cmd_count_params(g, count, out);
    return 2;
  };
  return sm::run_command(dispatch, std::cerr);
}
