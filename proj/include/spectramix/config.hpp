#pragma once

// Run configuration: model, training and path sections as strict JSON.
// Missing keys keep their defaults; unknown keys are errors.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "spectramix/encoder.hpp"
#include "spectramix/raed.hpp"
#include "spectramix/training.hpp"

namespace spectramix {

using json = nlohmann::json;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelSection {
  EncoderConfig encoder;
  std::optional<DecoderConfig> decoder;
  GenerationConfig generation;

  friend bool operator==(const ModelSection&, const ModelSection&) = default;
};

struct TrainingSection {
  MaskingPolicy masking;
  AdamWConfig optimizer;
  BatchSchedule schedule;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  std::size_t grad_accum = 1;
  std::size_t max_seq_len = 128;  // packing slice length for MLM
  std::size_t patience = 0;       // early-stopping epochs for fine-tuning, 0 = off

  friend bool operator==(const TrainingSection&, const TrainingSection&) = default;
};

struct PathsSection {
  std::string corpus;          // JSONL {"text"} for MLM
  std::string pairs;           // JSONL {"source","target"} for fine-tuning / generation
  std::string validation;      // JSONL pairs for early stopping
  std::string checkpoint_in;
  std::string checkpoint_out;
  std::string loss_csv;

  friend bool operator==(const PathsSection&, const PathsSection&) = default;
};

struct RunConfig {
  ModelSection model;
  TrainingSection training;
  PathsSection paths;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

/// Reads keys from one JSON object, remembering which were consumed so that
/// leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  const json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string where(const std::string& key) const { return path_ + "." + key; }

  void size(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(where(key) + ": expected a non-negative integer");
    out = v.get<std::size_t>();
  }
  void u64(const std::string& key, std::uint64_t& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(where(key) + ": expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  void integer(const std::string& key, int& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(where(key) + ": expected an integer");
    out = v.get<int>();
  }
  void real(const std::string& key, double& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(where(key) + ": expected a number");
    out = v.get<double>();
  }
  void boolean(const std::string& key, bool& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(where(key) + ": expected true or false");
    out = v.get<bool>();
  }
  void string(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(where(key) + ": expected a string");
    out = v.get<std::string>();
  }
  void strings(const std::string& key, std::vector<std::string>& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(where(key) + ": expected an array of strings");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_string()) throw ConfigError(where(key) + ": expected an array of strings");
      out.push_back(e.get<std::string>());
    }
  }
  void mixing(const std::string& key, MixingKind& out) {
    std::string name;
    string(key, name);
    if (name.empty()) return;
    try {
      out = parse_mixing_kind(name);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  /// Throws if the object holds keys nobody asked for.
  void finish() const {
    std::string unknown;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) unknown += (unknown.empty() ? "" : ", ") + path_ + "." + k;
    }
    if (!unknown.empty()) throw ConfigError("unknown configuration key(s): " + unknown);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// to JSON

inline json to_json(const EncoderConfig& c) {
  return {{"n_layers", c.n_layers},         {"d_model", c.d_model},
          {"d_ff", c.d_ff},                 {"vocab_size", c.vocab_size},
          {"max_positions", c.max_positions}, {"n_token_types", c.n_token_types},
          {"mixing", std::string(to_string(c.mixing))}, {"layer_norm_eps", c.layer_norm_eps},
          {"mlm_head", c.mlm_head}};
}

inline json to_json(const DecoderConfig& c) {
  return {{"n_layers", c.n_layers},     {"d_model", c.d_model},           {"d_ff", c.d_ff},
          {"n_heads", c.n_heads},       {"vocab_size", c.vocab_size},     {"max_positions", c.max_positions},
          {"layer_norm_eps", c.layer_norm_eps}};
}

inline json to_json(const GenerationConfig& c) {
  return {{"max_input_len", c.max_input_len}, {"max_target_len", c.max_target_len},
          {"no_repeat_ngram", c.no_repeat_ngram}, {"beam_size", c.beam_size},
          {"bos_id", c.bos_id}, {"eos_id", c.eos_id}, {"pad_id", c.pad_id}};
}

inline json to_json(const ModelSection& m) {
  json j{{"encoder", to_json(m.encoder)}, {"generation", to_json(m.generation)}};
  j["decoder"] = m.decoder ? to_json(*m.decoder) : json(nullptr);
  return j;
}

inline json to_json(const TrainingSection& t) {
  json schedule = json::array();
  for (const auto& ph : t.schedule.phases) {
    schedule.push_back({{"until_step", ph.until_step ? json(*ph.until_step) : json(nullptr)},
                        {"batch_size", ph.batch_size}});
  }
  const auto& o = t.optimizer;
  return {{"masking",
           {{"mask_prob", t.masking.mask_prob},
            {"mask_token_frac", t.masking.mask_token_frac},
            {"random_frac", t.masking.random_frac},
            {"keep_frac", t.masking.keep_frac}}},
          {"optimizer",
           {{"base_lr", o.base_lr},
            {"weight_decay", o.weight_decay},
            {"warmup_steps", o.warmup_steps},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"eps", o.eps},
            {"frozen_prefixes", o.frozen_prefixes}}},
          {"schedule", schedule},
          {"steps", t.steps},
          {"seed", t.seed},
          {"grad_accum", t.grad_accum},
          {"max_seq_len", t.max_seq_len},
          {"patience", t.patience}};
}

inline json to_json(const PathsSection& p) {
  return {{"corpus", p.corpus},
          {"pairs", p.pairs},
          {"validation", p.validation},
          {"checkpoint_in", p.checkpoint_in},
          {"checkpoint_out", p.checkpoint_out},
          {"loss_csv", p.loss_csv}};
}

inline json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)}, {"training", to_json(c.training)}, {"paths", to_json(c.paths)}};
}

// ---------------------------------------------------------------------------
// from JSON

inline EncoderConfig encoder_config_from_json(const json& j, const std::string& path = "model.encoder") {
  EncoderConfig c;
  detail::ObjectReader r(j, path);
  r.size("n_layers", c.n_layers);
  r.size("d_model", c.d_model);
  r.size("d_ff", c.d_ff);
  r.size("vocab_size", c.vocab_size);
  r.size("max_positions", c.max_positions);
  r.size("n_token_types", c.n_token_types);
  r.mixing("mixing", c.mixing);
  r.real("layer_norm_eps", c.layer_norm_eps);
  r.boolean("mlm_head", c.mlm_head);
  r.finish();
  return c;
}

inline DecoderConfig decoder_config_from_json(const json& j, const std::string& path = "model.decoder") {
  DecoderConfig c;
  detail::ObjectReader r(j, path);
  r.size("n_layers", c.n_layers);
  r.size("d_model", c.d_model);
  r.size("d_ff", c.d_ff);
  r.size("n_heads", c.n_heads);
  r.size("vocab_size", c.vocab_size);
  r.size("max_positions", c.max_positions);
  r.real("layer_norm_eps", c.layer_norm_eps);
  r.finish();
  return c;
}

inline GenerationConfig generation_config_from_json(const json& j, const std::string& path = "model.generation") {
  GenerationConfig c;
  detail::ObjectReader r(j, path);
  r.size("max_input_len", c.max_input_len);
  r.size("max_target_len", c.max_target_len);
  r.size("no_repeat_ngram", c.no_repeat_ngram);
  r.size("beam_size", c.beam_size);
  r.integer("bos_id", c.bos_id);
  r.integer("eos_id", c.eos_id);
  r.integer("pad_id", c.pad_id);
  r.finish();
  return c;
}

inline ModelSection model_section_from_json(const json& j) {
  ModelSection m;
  detail::ObjectReader r(j, "model");
  if (r.has("encoder")) m.encoder = encoder_config_from_json(r.at("encoder"));
  if (r.has("decoder")) m.decoder = decoder_config_from_json(r.at("decoder"));
  if (r.has("generation")) m.generation = generation_config_from_json(r.at("generation"));
  r.finish();
  return m;
}

inline TrainingSection training_section_from_json(const json& j) {
  TrainingSection t;
  detail::ObjectReader r(j, "training");
  if (r.has("masking")) {
    detail::ObjectReader m(r.at("masking"), "training.masking");
    m.real("mask_prob", t.masking.mask_prob);
    m.real("mask_token_frac", t.masking.mask_token_frac);
    m.real("random_frac", t.masking.random_frac);
    m.real("keep_frac", t.masking.keep_frac);
    m.finish();
  }
  if (r.has("optimizer")) {
    detail::ObjectReader o(r.at("optimizer"), "training.optimizer");
    auto& c = t.optimizer;
    o.real("base_lr", c.base_lr);
    o.real("weight_decay", c.weight_decay);
    o.size("warmup_steps", c.warmup_steps);
    o.real("beta1", c.beta1);
    o.real("beta2", c.beta2);
    o.real("eps", c.eps);
    o.strings("frozen_prefixes", c.frozen_prefixes);
    o.finish();
  }
  if (r.has("schedule")) {
    const auto& arr = r.at("schedule");
    if (!arr.is_array()) throw ConfigError("training.schedule: expected an array of phases");
    t.schedule.phases.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string path = "training.schedule[" + std::to_string(i) + "]";
      detail::ObjectReader p(arr[i], path);
      BatchPhase phase;
      if (p.has("until_step")) {
        std::size_t until = 0;
        p.size("until_step", until);
        phase.until_step = until;
      }
      p.size("batch_size", phase.batch_size);
      p.finish();
      t.schedule.phases.push_back(phase);
    }
  }
  r.size("steps", t.steps);
  r.u64("seed", t.seed);
  r.size("grad_accum", t.grad_accum);
  r.size("max_seq_len", t.max_seq_len);
  r.size("patience", t.patience);
  r.finish();
  return t;
}

inline PathsSection paths_section_from_json(const json& j) {
  PathsSection p;
  detail::ObjectReader r(j, "paths");
  r.string("corpus", p.corpus);
  r.string("pairs", p.pairs);
  r.string("validation", p.validation);
  r.string("checkpoint_in", p.checkpoint_in);
  r.string("checkpoint_out", p.checkpoint_out);
  r.string("loss_csv", p.loss_csv);
  r.finish();
  return p;
}

/// Structural checks that need more than one section.
inline void validate(const RunConfig& c) {
  try {
    c.model.encoder.validate();
    if (c.model.decoder) {
      c.model.decoder->validate();
      if (c.model.decoder->d_model != c.model.encoder.d_model) {
        throw ConfigError("model.decoder.d_model must equal model.encoder.d_model");
      }
    }
    c.model.generation.validate();
    c.training.masking.validate();
    c.training.optimizer.validate();
    c.training.schedule.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.training.grad_accum == 0) throw ConfigError("training.grad_accum must be >= 1");
  if (c.training.max_seq_len < 2) throw ConfigError("training.max_seq_len must be >= 2");
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  detail::ObjectReader r(j, "$");
  if (r.has("model")) c.model = model_section_from_json(r.at("model"));
  if (r.has("training")) c.training = training_section_from_json(r.at("training"));
  if (r.has("paths")) c.paths = paths_section_from_json(r.at("paths"));
  r.finish();
  validate(c);
  return c;
}

inline RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

/// Deterministic text form (sorted keys, two-space indent).
inline std::string serialize_run_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace spectramix
