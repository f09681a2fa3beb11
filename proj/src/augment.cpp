#include "crkt/augment.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace crkt {

QuestionStats compute_question_stats(const DatasetBundle& train) {
  const auto n = train.questions.size();
  QuestionStats s;
  s.rate.assign(n, QuestionStats::kUnseen);
  s.count.assign(n, 0);
  std::vector<std::size_t> correct(n, 0);
  for (const auto& seq : train.sequences) {
    for (const auto& r : seq.interactions) {
      ++s.count[r.question];
      if (r.correct) ++correct[r.question];
    }
  }
  for (std::size_t q = 0; q < n; ++q) {
    if (s.count[q]) s.rate[q] = static_cast<double>(correct[q]) / static_cast<double>(s.count[q]);
  }
  return s;
}

namespace {

bool shares_concept(const std::vector<int>& a, const std::vector<int>& b) {
  // Both lists are sorted.
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i == *j) return true;
    (*i < *j) ? ++i : ++j;
  }
  return false;
}

void apply(InteractionRecord& r, FlipKind kind, const Vocabulary& vocab, std::mt19937_64& rng) {
  const int correct = vocab.correct_options[r.question];
  if (kind == FlipKind::to_correct) {
    r.chosen_option = correct;
    r.correct = true;
  } else if (kind == FlipKind::to_wrong) {
    std::uniform_int_distribution<int> pick(0, vocab.option_counts[r.question] - 2);
    const int o = pick(rng);
    r.chosen_option = o >= correct ? o + 1 : o;
    r.correct = false;
  }
}

}  // namespace

AugmentedTriple flip_augment(const StudentSequence& sequence, const QuestionStats& stats, const Vocabulary& vocab,
                             const LossConfig& config, std::uint64_t seed) {
  const auto& xs = sequence.interactions;
  const auto n = xs.size();
  AugmentedTriple out;
  out.original = sequence;
  out.positive = sequence;
  out.negative = sequence;
  out.positive_eligible.assign(n, FlipKind::none);
  out.negative_eligible.assign(n, FlipKind::none);
  out.governing_base.assign(n, -1);

  auto concepts = [&](std::size_t t) -> const std::vector<int>& { return vocab.question_concepts[xs[t].question]; };
  std::vector<bool> is_base(n, false);
  for (std::size_t t = 0; t < n; ++t) {
    const int q = xs[t].question;
    if (q < 0 || q >= static_cast<int>(stats.rate.size())) throw std::out_of_range("flip_augment: unknown question");
    if (stats.seen(q) && stats.rate[q] >= config.band_low && stats.rate[q] <= config.band_high) {
      is_base[t] = true;
      out.has_base = true;
    }
  }
  if (!out.has_base) return out;

  for (std::size_t t = 0; t < n; ++t) {
    if (is_base[t] || !stats.seen(xs[t].question)) continue;
    int base = -1;
    for (std::size_t b = n; b-- > 0;) {
      if (is_base[b] && shares_concept(concepts(t), concepts(b))) {
        base = static_cast<int>(b);
        break;
      }
    }
    if (base < 0) continue;
    out.governing_base[t] = base;
    const double rate = stats.rate[xs[t].question];
    const double base_rate = stats.rate[xs[static_cast<std::size_t>(base)].question];
    // Consistent-with-base copy and contrary copy.
    FlipKind raise = FlipKind::none;  // lower-rate wrong answer turned correct
    FlipKind lower = FlipKind::none;  // higher-rate correct answer turned wrong
    if (rate < base_rate && !xs[t].correct) raise = FlipKind::to_correct;
    if (rate > base_rate && xs[t].correct) lower = FlipKind::to_wrong;
    if (xs[static_cast<std::size_t>(base)].correct) {
      out.positive_eligible[t] = raise;
      out.negative_eligible[t] = lower;
    } else {
      out.positive_eligible[t] = lower;
      out.negative_eligible[t] = raise;
    }
  }

  std::mt19937_64 rng(seed);
  std::bernoulli_distribution draw(config.flip_rate);
  for (auto [copy, eligible] : {std::pair{&out.positive, &out.positive_eligible},
                                std::pair{&out.negative, &out.negative_eligible}}) {
    for (std::size_t t = 0; t < n; ++t) {
      if ((*eligible)[t] == FlipKind::none) continue;
      if (draw(rng)) apply(copy->interactions[t], (*eligible)[t], vocab, rng);
    }
  }
  return out;
}

}  // namespace crkt
