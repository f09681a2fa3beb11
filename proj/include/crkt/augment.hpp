#pragma once

#include "crkt/config.hpp"
#include "crkt/data.hpp"
#include "crkt/model.hpp"

#include <cstdint>
#include <vector>

namespace crkt {

// Per-question mean correctness over a training split.
struct QuestionStats {
  static constexpr double kUnseen = -1.0;
  std::vector<double> rate;  // kUnseen for questions absent from the split
  std::vector<std::size_t> count;

  bool seen(int q) const { return count[static_cast<std::size_t>(q)] > 0; }
};

QuestionStats compute_question_stats(const DatasetBundle& train);

enum class FlipKind { none, to_correct, to_wrong };

struct AugmentedTriple {
  StudentSequence original;
  StudentSequence positive;
  StudentSequence negative;
  bool has_base = false;
  // Per position: the flip each copy would apply if drawn, and the base
  // position governing it (-1 when the position is not base-related).
  std::vector<FlipKind> positive_eligible;
  std::vector<FlipKind> negative_eligible;
  std::vector<int> governing_base;
};

// Builds the positive and negative histories. A base question has a seen
// correct rate inside [band_low, band_high]. Every other position sharing a
// concept with at least one base position is governed by the latest such
// base position in the sequence. With a correct base, the positive copy turns
// wrong answers to lower-rate questions correct and the negative copy turns
// correct answers to higher-rate questions wrong; with a wrong base the roles
// of the two copies are swapped. Each eligible flip happens with probability
// flip_rate.
AugmentedTriple flip_augment(const StudentSequence& sequence, const QuestionStats& stats, const Vocabulary& vocab,
                             const LossConfig& config, std::uint64_t seed);

}  // namespace crkt
