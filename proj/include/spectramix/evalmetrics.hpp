#pragma once

// ROUGE-1 / ROUGE-L f-measures, token accuracy and the task-mean relative
// performance ratio P.

#include <algorithm>
#include <cctype>
#include <istream>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "spectramix/nn.hpp"

namespace spectramix {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double fmeasure = 0.0;

  friend bool operator==(const RougeScore&, const RougeScore&) = default;
};

inline RougeScore make_rouge_score(std::size_t overlap, std::size_t hyp_len, std::size_t ref_len) {
  if (hyp_len == 0 || ref_len == 0) return {};
  RougeScore s;
  s.precision = static_cast<double>(overlap) / static_cast<double>(hyp_len);
  s.recall = static_cast<double>(overlap) / static_cast<double>(ref_len);
  const double denom = s.precision + s.recall;
  s.fmeasure = denom > 0.0 ? 2.0 * s.precision * s.recall / denom : 0.0;
  return s;
}

/// Lowercases ASCII and splits on whitespace.
inline std::vector<std::string> rouge_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// Clipped unigram overlap.
template <class T>
RougeScore rouge1_f(std::span<const T> hyp, std::span<const T> ref) {
  std::map<T, std::size_t> ref_counts;
  for (const auto& t : ref) ++ref_counts[t];
  std::size_t overlap = 0;
  for (const auto& t : hyp) {
    auto it = ref_counts.find(t);
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return make_rouge_score(overlap, hyp.size(), ref.size());
}

namespace detail {

template <class T>
std::size_t lcs_rows(std::span<const T> a, std::span<const T> b, std::size_t* prev, std::size_t* cur) {
  std::fill(prev, prev + b.size() + 1, std::size_t{0});
  cur[0] = 0;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    // prev[j-1] + 1 dominates both neighbours on a match, and prev[j-1] never
    // exceeds prev[j] otherwise, so one three-way max covers both cases.
    const T& ai = a[i - 1];
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t diag = prev[j - 1] + static_cast<std::size_t>(ai == b[j - 1]);
      cur[j] = std::max(std::max(prev[j], cur[j - 1]), diag);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

/// Longest common subsequence length, two-row dynamic programme.
template <class T>
std::size_t lcs_length(std::span<const T> a, std::span<const T> b) {
  constexpr std::size_t kStack = 64;
  if (b.size() < kStack) {
    std::size_t prev[kStack], cur[kStack];
    return detail::lcs_rows(a, b, prev, cur);
  }
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  return detail::lcs_rows(a, b, prev.data(), cur.data());
}

template <class T>
RougeScore rougeL_f(std::span<const T> hyp, std::span<const T> ref) {
  return make_rouge_score(lcs_length(hyp, ref), hyp.size(), ref.size());
}

inline RougeScore rouge1_f(std::string_view hyp, std::string_view ref) {
  const auto h = rouge_tokens(hyp);
  const auto r = rouge_tokens(ref);
  return rouge1_f<std::string>(h, r);
}

inline RougeScore rougeL_f(std::string_view hyp, std::string_view ref) {
  const auto h = rouge_tokens(hyp);
  const auto r = rouge_tokens(ref);
  return rougeL_f<std::string>(h, r);
}

/// Fraction of labelled positions predicted correctly; 1 when nothing is labelled.
inline double token_accuracy(std::span<const int> pred, std::span<const int> gold) {
  if (pred.size() != gold.size()) {
    throw std::invalid_argument("token_accuracy: " + std::to_string(pred.size()) + " predictions for " +
                                std::to_string(gold.size()) + " labels");
  }
  std::size_t labelled = 0, correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == kIgnoreLabel) continue;
    ++labelled;
    if (pred[i] == gold[i]) ++correct;
  }
  return labelled ? static_cast<double>(correct) / static_cast<double>(labelled) : 1.0;
}

// ---------------------------------------------------------------------------
// relative performance

struct TaskMetricPair {
  std::string task;
  double candidate = 0.0;
  double reference = 0.0;
};

class MetricError : public std::invalid_argument {
 public:
  MetricError(const std::string& what, std::string task_name)
      : std::invalid_argument(what), task(std::move(task_name)) {}
  std::string task;
};

/// Mean over tasks of candidate / reference.
inline double relative_performance(std::span<const TaskMetricPair> pairs) {
  if (pairs.empty()) throw MetricError("relative_performance: no tasks", "");
  double sum = 0.0;
  for (const auto& p : pairs) {
    if (!(p.reference > 0.0)) {
      throw MetricError("relative_performance: reference metric for task '" + p.task + "' must be positive",
                        p.task);
    }
    sum += p.candidate / p.reference;
  }
  return sum / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// input formats

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline double parse_metric(const std::string& field, std::size_t line_no) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(field, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != field.size()) {
    throw std::invalid_argument("line " + std::to_string(line_no) + ": '" + field + "' is not a number");
  }
  return v;
}

}  // namespace detail

/// CSV rows `task,candidate,reference`; a header row starting with "task" is skipped.
inline std::vector<TaskMetricPair> read_task_metric_csv(std::istream& in) {
  std::vector<TaskMetricPair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line.starts_with("#")) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 3) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": expected task,candidate,reference");
    }
    if (out.empty() && f[0] == "task") continue;
    out.push_back({f[0], detail::parse_metric(f[1], line_no), detail::parse_metric(f[2], line_no)});
  }
  return out;
}

struct HypRef {
  std::string hyp;
  std::string ref;
};

/// One JSON object per line with string fields "hyp" and "ref".
inline std::vector<HypRef> read_hyp_ref_jsonl(std::istream& in) {
  std::vector<HypRef> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("hyp").get<std::string>(), j.at("ref").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

struct RougeSummary {
  std::size_t count = 0;
  RougeScore rouge1;  // per-field means over pairs
  RougeScore rougeL;
};

inline RougeSummary summarize_rouge(std::span<const HypRef> pairs) {
  RougeSummary s;
  s.count = pairs.size();
  if (pairs.empty()) return s;
  auto add = [](RougeScore& acc, const RougeScore& x) {
    acc.precision += x.precision;
    acc.recall += x.recall;
    acc.fmeasure += x.fmeasure;
  };
  for (const auto& p : pairs) {
    add(s.rouge1, rouge1_f(p.hyp, p.ref));
    add(s.rougeL, rougeL_f(p.hyp, p.ref));
  }
  const double n = static_cast<double>(pairs.size());
  for (auto* r : {&s.rouge1, &s.rougeL}) {
    r->precision /= n;
    r->recall /= n;
    r->fmeasure /= n;
  }
  return s;
}

}  // namespace spectramix
