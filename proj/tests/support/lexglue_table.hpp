#pragma once

// Published LexGLUE test scores (micro-F1 / macro-F1 per task). CaseHOLD
// reports a single score, used for both averages.

#include <array>
#include <string>
#include <vector>

#include "spectramix/evalmetrics.hpp"

namespace spectramix::testing {

struct LexGlueRow {
  std::array<double, 7> micro;
  std::array<double, 7> macro;
};

inline const std::array<std::string, 7> kLexGlueTasks{"ecthr_a", "ecthr_b", "scotus", "eurlex",
                                                     "ledgar", "unfair_tos", "casehold"};

inline const LexGlueRow kBert{{71.2, 79.7, 68.3, 71.4, 87.6, 95.6, 70.8}, {63.6, 73.4, 58.3, 57.2, 81.8, 81.3, 70.8}};
inline const LexGlueRow kFNet{{57.1, 65.7, 60.5, 65.2, 85.6, 95.3, 50.9}, {46.4, 56.4, 46.5, 46.5, 80.1, 78.0, 50.9}};
inline const LexGlueRow kHNet4096{{62.0, 70.4, 72.2, 65.6, 85.5, 93.5, 63.1},
                                  {52.7, 54.9, 63.4, 47.3, 78.9, 71.0, 63.1}};

inline std::vector<TaskMetricPair> lexglue_pairs(const std::array<double, 7>& candidate,
                                                 const std::array<double, 7>& reference) {
  std::vector<TaskMetricPair> out;
  for (std::size_t i = 0; i < 7; ++i) out.push_back({kLexGlueTasks[i], candidate[i], reference[i]});
  return out;
}

}  // namespace spectramix::testing
