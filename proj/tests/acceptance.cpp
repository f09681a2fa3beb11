// Acceptance gate. Prints one "<id> PASS|FAIL|SKIP <detail>" line per
// criterion and exits non-zero when any criterion fails. Criterion ids may be
// passed on the command line to run a subset.

#include "crkt/concept_map.hpp"
#include "crkt/eval.hpp"
#include "crkt/training.hpp"
#include "gradcheck.hpp"
#include "model_fixtures.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

using namespace crkt;
using namespace crkt::testing;

namespace {

// ---- Pinned tolerances and budgets ------------------------------------------

constexpr double kGradStep = 1e-5;
constexpr double kGradRelTol = 1e-4;
constexpr double kSessionTol = 1e-6;
constexpr double kAdjacencyTol = 1e-12;
constexpr double kFlipTarget = 0.8;
constexpr double kFlipTol = 0.05;
constexpr double kPipelineTol = 1e-10;
constexpr double kOverfitAcc = 0.95;
constexpr double kSignalAuc = 0.70;
constexpr double kFullScaleAuc = 81.04;
constexpr double kFullScaleAcc = 79.87;
constexpr double kFullScaleBand = 2.0;

constexpr double kOneMinute = 60.0;
constexpr double kFiveMinutes = 300.0;
constexpr double kThirtyMinutes = 1800.0;

struct Outcome {
  enum Status { pass, fail, skip } status = fail;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Outcome::pass : Outcome::fail, std::move(detail)}; }

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void jitter(Model& m, std::uint64_t seed, double amount) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amount, amount);
  for (auto* p : m.parameters()) p->value() = p->value().unaryExpr([&](double v) { return v + u(rng); });
}

// ---- G-1 --------------------------------------------------------------------

Outcome gradient_check_all() {
  const auto t0 = Clock::now();
  SynthConfig sc;
  sc.students = 3;
  sc.questions = 5;
  sc.concepts = 3;
  sc.options = 3;
  sc.min_length = sc.max_length = 3;
  const auto d = generate_synthetic(sc, 4);
  ModelConfig mc;
  mc.d_q = mc.d_c = mc.d_g = 4;
  mc.gnn_layers = 2;
  mc.top_k = 2;
  Model m(mc, Vocabulary::from_bundle(d.bundle), ConceptMap::from_edges(3, d.truth.edges), 5);
  // Zero-initialised biases can leave an attention row exactly on a tie,
  // where maxout is not differentiable.
  jitter(m, 17, 0.2);

  LossConfig lc;
  lc.alpha = 0.3;
  lc.beta = 0.4;
  lc.flip_rate = 1.0;
  QuestionStats stats;
  stats.rate = {0.5, 0.2, 0.8, 0.5, 0.3};
  stats.count.assign(5, 1);
  std::vector<AugmentedTriple> batch;
  for (const auto& s : d.bundle.sequences) batch.push_back(flip_augment(s, stats, m.vocabulary(), lc, 9));

  const auto& xs = d.bundle.sequences[0].interactions;
  ad::Matrix labels(static_cast<Eigen::Index>(xs.size() - 1), 1);
  std::vector<std::vector<int>> tags;
  for (std::size_t t = 1; t < xs.size(); ++t) {
    labels(static_cast<Eigen::Index>(t - 1), 0) = xs[t].correct ? 1.0 : 0.0;
    tags.push_back(m.vocabulary().question_concepts[xs[t].question]);
  }

  const std::vector<std::pair<std::string, std::function<ad::Var()>>> losses{
      {"kt", [&] { return loss_kt(m.forward_sequence(xs).readout.logits, labels); }},
      {"topk", [&] { return loss_topk(m.forward_sequence(xs).context.relevance_logits, tags, m.effective_k()); }},
      {"cl",
       [&] {
         return loss_cl(m.final_knowledge(batch[0].original.interactions),
                        m.final_knowledge(batch[0].positive.interactions),
                        {m.final_knowledge(batch[0].negative.interactions),
                         m.final_knowledge(batch[1].negative.interactions)});
       }},
      {"total", [&] { return batch_loss(m, batch, lc).total; }},
  };
  bool ok = true;
  std::string detail;
  int checked = 0;
  for (const auto& [name, fn] : losses) {
    const auto r = gradient_check(m.parameters(), fn, kGradStep);
    ok = ok && r.max_rel_error < kGradRelTol;
    checked += r.checked;
    detail += fmt::format("{} rel={:.2e} ", name, r.max_rel_error);
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < kOneMinute;
  return verdict(ok, fmt::format("{}entries={} tol={:.0e} time={:.1f}s", detail, checked, kGradRelTol, secs));
}

// ---- G-2 --------------------------------------------------------------------

Outcome causality() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  int failures = 0;
  int compared = 0;
  const std::vector<Ablation> variants{Ablation::none, Ablation::no_opt, Ablation::no_unc, Ablation::no_map,
                                       Ablation::no_topk};
  for (int trial = 0; trial < 200; ++trial) {
    auto cfg = tiny_config();
    cfg.ablation = variants[static_cast<std::size_t>(trial) % variants.size()];
    cfg.heads = trial % 3 == 0 ? 2 : 1;
    Model m = make_model(cfg, 8, 3, 4, 100 + static_cast<std::uint64_t>(trial));
    const int length = 3 + static_cast<int>(rng() % 10);
    auto seq = random_sequence(m.vocabulary(), length, rng);
    // Prediction index t-1 targets record t from records 0..t-1.
    const int t = 1 + static_cast<int>(rng() % static_cast<unsigned>(length - 1));
    const auto before = m.predict_sequence(seq);
    auto mutated = seq;
    // The response at t is still unobserved for its own prediction.
    auto& own = mutated[static_cast<std::size_t>(t)];
    own.chosen_option = (own.chosen_option + 1) % m.vocabulary().option_counts[own.question];
    own.correct = own.chosen_option == m.vocabulary().correct_options[own.question];
    const auto tail = random_sequence(m.vocabulary(), length, rng);
    for (int j = t + 1; j < length; ++j) {
      mutated[static_cast<std::size_t>(j)] = tail[static_cast<std::size_t>(j)];
      mutated[static_cast<std::size_t>(j)].position = j;
    }
    const auto after = m.predict_sequence(mutated);
    for (int i = 0; i < t; ++i) {
      ++compared;
      if (!same_output(before[static_cast<std::size_t>(i)], after[static_cast<std::size_t>(i)], 0.0)) ++failures;
    }
  }
  const double secs = seconds_since(t0);
  return verdict(failures == 0 && secs < kOneMinute,
                 fmt::format("trials=200 outputs={} mismatches={} time={:.1f}s", compared, failures, secs));
}

// ---- G-3 --------------------------------------------------------------------

// Least-squares residual of y against [1, x].
double fit_sse(const std::vector<double>& x, const std::vector<double>& y) {
  Eigen::MatrixXd a(static_cast<Eigen::Index>(x.size()), 2);
  Eigen::VectorXd b(static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    a(static_cast<Eigen::Index>(i), 0) = 1.0;
    a(static_cast<Eigen::Index>(i), 1) = x[i];
    b(static_cast<Eigen::Index>(i)) = y[i];
  }
  const Eigen::VectorXd coef = a.colPivHouseholderQr().solve(b);
  return (a * coef - b).squaredNorm();
}

Outcome incremental_inference() {
  double worst = 0.0;
  for (int session = 0; session < 5; ++session) {
    auto cfg = tiny_config();
    cfg.heads = session % 2 ? 2 : 1;
    Model m = make_model(cfg, 10, 3, 4, 30 + static_cast<std::uint64_t>(session));
    std::mt19937_64 rng(300 + static_cast<std::uint64_t>(session));
    const auto seq = random_sequence(m.vocabulary(), 50, rng);
    InferenceSession s(m);
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const int target = static_cast<int>(rng() % static_cast<unsigned>(m.vocabulary().question_count()));
      const auto inc = s.step(seq[t], target);
      const auto full = m.predict(std::span(seq).first(t + 1), target);
      auto gap = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
        return a.size() ? (a - b).cwiseAbs().maxCoeff() : 0.0;
      };
      worst = std::max({worst, std::abs(inc.y_hat - full.y_hat), std::abs(inc.ability - full.ability),
                        std::abs(inc.difficulty - full.difficulty), gap(inc.relevance, full.relevance),
                        gap(inc.mastery, full.mastery), gap(inc.latent, full.latent)});
      if (inc.selected_concepts != full.selected_concepts) worst = std::max(worst, 1.0);
    }
  }

  // Per-step cost over t = 1..200: wide attention, few concepts, so the
  // growing attention work is visible next to the fixed readout.
  constexpr int kSteps = 200;
  constexpr int kRepeats = 7;
  ModelConfig cfg;
  cfg.d_q = 64;
  cfg.d_c = cfg.d_g = 4;
  cfg.gnn_layers = 1;
  cfg.top_k = 2;
  Model m = make_model(cfg, 10, 3, 4, 3);
  std::mt19937_64 rng(33);
  const auto seq = random_sequence(m.vocabulary(), kSteps, rng);
  std::vector<double> cost(kSteps, 1e300);
  for (int r = 0; r < kRepeats; ++r) {
    InferenceSession s(m);
    s.prepare(0);
    for (int t = 0; t < kSteps; ++t) {
      const auto t0 = Clock::now();
      s.step(seq[static_cast<std::size_t>(t)], 0);
      cost[static_cast<std::size_t>(t)] = std::min(cost[static_cast<std::size_t>(t)], seconds_since(t0));
    }
  }
  std::vector<double> lin, quad;
  for (int t = 1; t <= kSteps; ++t) {
    lin.push_back(t);
    quad.push_back(static_cast<double>(t) * t);
  }
  const double sse_lin = fit_sse(lin, cost);
  const double sse_quad = fit_sse(quad, cost);
  const bool ok = worst <= kSessionTol && sse_lin < sse_quad;
  return verdict(ok, fmt::format("sessions=5x50 max_diff={:.2e} tol={:.0e} sse_linear={:.3e} sse_quadratic={:.3e} "
                                 "step_us[1]={:.1f} step_us[200]={:.1f}",
                                 worst, kSessionTol, sse_lin, sse_quad, cost.front() * 1e6, cost.back() * 1e6));
}

// ---- G-4 --------------------------------------------------------------------

Outcome auc_oracle() {
  std::mt19937_64 rng(44);
  int mismatches = 0;
  int tied = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 199);
    const bool ties = trial % 2 == 0;
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> y(static_cast<std::size_t>(n));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = ties ? static_cast<double>(rng() % 7) / 7.0 : u(rng);
      y[static_cast<std::size_t>(i)] = static_cast<int>(rng() % 2);
    }
    y[0] = 1;
    y[1] = 0;
    tied += ties;
    long long twice = 0, pos = 0, neg = 0;
    for (int i = 0; i < n; ++i) {
      if (y[static_cast<std::size_t>(i)] != 1) continue;
      for (int j = 0; j < n; ++j) {
        if (y[static_cast<std::size_t>(j)] != 0) continue;
        const double a = s[static_cast<std::size_t>(i)], b = s[static_cast<std::size_t>(j)];
        twice += a > b ? 2 : (a == b ? 1 : 0);
      }
    }
    for (int v : y) (v ? pos : neg) += 1;
    const double brute = static_cast<double>(twice) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
    const auto fast = auc(s, y);
    if (!fast || *fast != brute) ++mismatches;
  }
  return verdict(mismatches == 0, fmt::format("instances=100 tied={} mismatches={}", tied, mismatches));
}

// ---- G-5 --------------------------------------------------------------------

Outcome topk_oracle() {
  std::mt19937_64 rng(55);
  int mismatches = 0, leaks = 0, boundary_ties = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 12);
    const int k = 1 + static_cast<int>(rng() % static_cast<unsigned>(n));
    Eigen::VectorXd v(n);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int i = 0; i < n; ++i) v(i) = trial % 2 ? u(rng) : static_cast<double>(rng() % 4);
    std::vector<double> sorted(v.data(), v.data() + n);
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    if (trial % 4 == 1 && k < n) {
      // Force a tie exactly at the k-th value.
      const double kth = sorted[static_cast<std::size_t>(k - 1)];
      for (int i = 0; i < n; ++i) {
        if (v(i) < kth) {
          v(i) = kth;
          break;
        }
      }
      sorted.assign(v.data(), v.data() + n);
      std::sort(sorted.begin(), sorted.end(), std::greater<>());
    }
    const double kth = sorted[static_cast<std::size_t>(k - 1)];
    std::set<int> expected;
    for (int i = 0; i < n; ++i)
      if (v(i) >= kth) expected.insert(i);
    if (static_cast<int>(expected.size()) > k) ++boundary_ties;
    double z = 0.0;
    for (int i : expected) z += std::exp(v(i) - sorted.front());

    const Eigen::VectorXd got = topk_relevance(v, k);
    const Eigen::MatrixXd rows = ad::topk_softmax_rows(ad::constant(v.transpose()), k).value();
    std::set<int> support;
    bool values_ok = true;
    for (int i = 0; i < n; ++i) {
      if (got(i) != 0.0) support.insert(i);
      if (!expected.count(i) && (got(i) != 0.0 || rows(0, i) != 0.0)) ++leaks;
      if (expected.count(i) && std::abs(got(i) - std::exp(v(i) - sorted.front()) / z) > 1e-12) values_ok = false;
      if (rows(0, i) != got(i)) values_ok = false;
    }
    if (support != expected || !values_ok) ++mismatches;
  }
  return verdict(mismatches == 0 && leaks == 0,
                 fmt::format("vectors=1000 boundary_ties={} mismatches={} off_support_nonzero={}", boundary_ties,
                             mismatches, leaks));
}

// ---- G-6 --------------------------------------------------------------------

Outcome concept_map_golden() {
  std::ifstream in(std::string(CRKT_TEST_DATA) + "/golden/concept_map_3.json");
  if (!in) return {Outcome::fail, "golden file missing"};
  const auto golden = nlohmann::json::parse(in);
  DatasetBundle b;
  int qid = 0;
  for (const auto& concepts : golden["questions"]) {
    b.questions.push_back(QuestionMeta{qid++, 2, 1, concepts.get<std::vector<int>>()});
  }
  b.concept_count = static_cast<int>(b.questions.size());
  int s = 0;
  for (const auto& seq : golden["sequences"]) {
    StudentSequence out{"s" + std::to_string(s++), {}};
    int t = 0;
    for (const auto& pair : seq) {
      const bool correct = pair[1].get<int>() == 1;
      out.interactions.push_back(InteractionRecord{pair[0].get<int>(), correct ? 1 : 0, correct, t++});
    }
    b.sequences.push_back(out);
  }
  const auto inferred = infer_statistical_map(b);
  const auto& ex = golden["expected"];
  int diffs = 0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      diffs += inferred.stats.counts(i, j) != ex["counts"][i][j].get<std::int64_t>();
      diffs += inferred.stats.correct_matrix(i, j) != ex["V"][i][j].get<double>();
      diffs += inferred.stats.transition(i, j) != ex["V_prime"][i][j].get<double>();
    }
  }
  diffs += inferred.stats.threshold != ex["threshold"].get<double>();
  const bool edges_ok = inferred.map.edges() == ex["edges"].get<std::vector<std::pair<int, int>>>();
  return verdict(diffs == 0 && edges_ok,
                 fmt::format("entry_mismatches={} edges={}", diffs, edges_ok ? "match" : "differ"));
}

// ---- G-7 --------------------------------------------------------------------

Outcome adjacency_normalization() {
  double identity_gap = 0.0;
  for (int n = 1; n <= 8; ++n) {
    identity_gap = std::max(identity_gap,
                            (normalize_adjacency(Eigen::MatrixXd::Zero(n, n)) - Eigen::MatrixXd::Identity(n, n))
                                .cwiseAbs()
                                .maxCoeff());
  }
  Eigen::MatrixXd a(2, 2);
  a << 0, 1, 0, 0;
  Eigen::MatrixXd expected(2, 2);
  expected << 0.5, 1.0 / std::sqrt(2.0), 0.0, 1.0;
  const double example_gap = (normalize_adjacency(a) - expected).cwiseAbs().maxCoeff();

  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  bool finite = true;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 20);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j && rng() % 3 == 0) w(i, j) = trial % 2 ? u(rng) : 1.0;
    finite = finite && normalize_adjacency(w).allFinite();
    finite = finite && ad::normalize_adjacency_blocks(ad::constant(w), n).value().allFinite();
  }
  const bool ok = identity_gap == 0.0 && example_gap <= kAdjacencyTol && finite;
  return verdict(ok, fmt::format("identity_gap={:.1e} example_gap={:.1e} tol={:.0e} finite={}", identity_gap,
                                 example_gap, kAdjacencyTol, finite));
}

// ---- G-8 --------------------------------------------------------------------

bool bit_identical(const InteractionRecord& a, const InteractionRecord& b) {
  return a.question == b.question && a.chosen_option == b.chosen_option && a.correct == b.correct &&
         a.position == b.position;
}

Outcome augmentation_rules() {
  constexpr int kEligibleTarget = 10000;
  std::mt19937_64 rng(88);
  LossConfig lc;
  lc.flip_rate = kFlipTarget;
  long eligible = 0, flipped = 0, direction_errors = 0, stray_changes = 0, seeds = 0;
  while (eligible < kEligibleTarget) {
    const int questions = 12, concepts = 4;
    Vocabulary v;
    v.concept_count = concepts;
    QuestionStats stats;
    for (int q = 0; q < questions; ++q) {
      v.option_counts.push_back(3 + static_cast<int>(rng() % 3));
      v.correct_options.push_back(static_cast<int>(rng() % static_cast<unsigned>(v.option_counts.back())));
      std::set<int> cs{static_cast<int>(rng() % concepts)};
      if (rng() % 3 == 0) cs.insert(static_cast<int>(rng() % concepts));
      v.question_concepts.emplace_back(cs.begin(), cs.end());
      // Rates on a coarse grid so band edges and equal rates occur.
      const bool unseen = rng() % 10 == 0;
      stats.rate.push_back(unseen ? QuestionStats::kUnseen : static_cast<double>(rng() % 11) / 10.0);
      stats.count.push_back(unseen ? 0 : 5);
    }
    StudentSequence seq{"s", random_sequence(v, 5 + static_cast<int>(rng() % 20), rng)};
    const auto out = flip_augment(seq, stats, v, lc, seeds++);
    const auto& xs = seq.interactions;

    // Independent eligibility: the latest base sharing a concept governs.
    auto in_band = [&](int q) {
      return stats.count[static_cast<std::size_t>(q)] > 0 && stats.rate[static_cast<std::size_t>(q)] >= lc.band_low &&
             stats.rate[static_cast<std::size_t>(q)] <= lc.band_high;
    };
    auto overlap = [&](int a, int b) {
      for (int c : v.question_concepts[static_cast<std::size_t>(a)])
        for (int d : v.question_concepts[static_cast<std::size_t>(b)])
          if (c == d) return true;
      return false;
    };
    for (std::size_t t = 0; t < xs.size(); ++t) {
      const int q = xs[t].question;
      int base = -1;
      if (!in_band(q) && stats.count[static_cast<std::size_t>(q)] > 0) {
        for (std::size_t b = 0; b < xs.size(); ++b)
          if (in_band(xs[b].question) && overlap(q, xs[b].question)) base = static_cast<int>(b);
      }
      bool to_correct_ok = false, to_wrong_ok = false;
      const double base_rate = base >= 0 ? stats.rate[static_cast<std::size_t>(xs[static_cast<std::size_t>(base)].question)] : 0.0;
      const double rate = stats.rate[static_cast<std::size_t>(q)];
      if (base >= 0) {
        to_correct_ok = rate < base_rate && !xs[t].correct;
        to_wrong_ok = rate > base_rate && xs[t].correct;
      }
      const bool base_correct = base >= 0 && xs[static_cast<std::size_t>(base)].correct;
      for (int copy = 0; copy < 2; ++copy) {
        const auto& r = (copy == 0 ? out.positive : out.negative).interactions[t];
        // Positive copy agrees with the base, negative copy contradicts it.
        const bool wants_correct = (copy == 0) == base_correct;
        const bool is_eligible = wants_correct ? to_correct_ok : to_wrong_ok;
        const bool changed = !bit_identical(r, xs[t]);
        if (!is_eligible) {
          stray_changes += changed;
          continue;
        }
        ++eligible;
        if (!changed) continue;
        ++flipped;
        const int correct_option = v.correct_options[static_cast<std::size_t>(q)];
        const bool direction =
            wants_correct ? (r.correct && r.chosen_option == correct_option)
                          : (!r.correct && r.chosen_option != correct_option && r.chosen_option >= 0 &&
                             r.chosen_option < v.option_counts[static_cast<std::size_t>(q)]);
        direction_errors += !(direction && r.question == q && r.position == xs[t].position);
      }
    }
  }
  const double fraction = static_cast<double>(flipped) / static_cast<double>(eligible);
  const bool ok = std::abs(fraction - kFlipTarget) <= kFlipTol && direction_errors == 0 && stray_changes == 0;
  return verdict(ok, fmt::format("eligible={} flip_fraction={:.4f} direction_errors={} non_eligible_changed={}",
                                 eligible, fraction, direction_errors, stray_changes));
}

// ---- G-9 --------------------------------------------------------------------

Outcome pipeline_golden() {
  const PipelineCase c = pipeline_case();
  const double model_y = c.model.predict(c.sequence, c.target).y_hat;
  const double oracle_y = pipeline_oracle(c.model, c.target).y;
  const bool ok = std::abs(model_y - oracle_y) <= kPipelineTol && std::abs(oracle_y - kPipelineGolden) <= kPipelineTol;
  return verdict(ok, fmt::format("model={:.17g} oracle={:.17g} pinned={:.17g} tol={:.0e}", model_y, oracle_y,
                                 kPipelineGolden, kPipelineTol));
}

// ---- G-10 -------------------------------------------------------------------

Outcome overfit_smoke() {
  const auto t0 = Clock::now();
  const auto ds = generate_synthetic(SynthConfig{}, 1);
  const auto data = preprocess(ds.bundle);
  RunConfig rc;
  rc.model.d_q = rc.model.d_c = rc.model.d_g = 32;
  rc.model.top_k = 3;
  rc.train.learning_rate = 1e-3;
  rc.train.max_epochs = 200;
  rc.train.patience = 200;
  rc.train.batch_size = 8;
  Model m(rc.model, Vocabulary::from_bundle(ds.bundle),
          ConceptMap::from_edges(ds.bundle.concept_count, ds.truth.edges), 1);
  int first_epoch = -1;
  train(m, data, DatasetBundle{}, rc, [&](const EpochRecord& r) {
    if (first_epoch < 0 && r.val_acc >= kOverfitAcc) first_epoch = r.epoch;
  });
  const auto report = compute_metrics(evaluate(m, data).targets);
  const double secs = seconds_since(t0);
  const bool ok = report.acc >= kOverfitAcc && secs < kFiveMinutes;
  return verdict(ok, fmt::format("students={} train_acc={:.4f} first_epoch_at_target={} time={:.1f}s",
                                 ds.bundle.sequences.size(), report.acc, first_epoch, secs));
}

// ---- G-11 -------------------------------------------------------------------

// Distractor choice follows the severity of the student's deficit; a shared
// per-student ability offset and modest difficulty spread keep the signal
// within what a bounded difficulty head can express.
constexpr const char* kSignalBundle = R"({
  "students": 500, "questions": 20, "options": 6, "min_length": 8, "max_length": 20,
  "ability_std": 0.5, "general_ability_std": 2.0, "difficulty_std": 0.5,
  "distractor_informativeness": 1.0, "distractor_rule": "deficit_severity"
})";

Outcome learning_signal() {
  const auto t0 = Clock::now();
  const auto ds = generate_synthetic(synth_config_from_json(kSignalBundle), 11);
  const auto map = ConceptMap::from_edges(ds.bundle.concept_count, ds.truth.edges);
  std::vector<double> means;
  std::string detail;
  bool all_folds = true;
  for (auto ablation : {Ablation::none, Ablation::no_opt}) {
    RunConfig rc;
    rc.model.d_q = rc.model.d_c = rc.model.d_g = 16;
    rc.model.top_k = 3;
    rc.model.ablation = ablation;
    rc.train.learning_rate = 2e-3;
    rc.train.max_epochs = 80;
    rc.train.patience = 8;
    CvOptions opt;
    opt.folds = 5;
    opt.seed = 1;
    const auto folds = run_cv(ds.bundle, map, rc, opt);
    std::vector<double> aucs;
    for (const auto& f : folds) {
      if (!f.ok || !f.test.auc) {
        all_folds = false;
        continue;
      }
      aucs.push_back(*f.test.auc);
    }
    const double mean = aucs.empty() ? 0.0 : std::accumulate(aucs.begin(), aucs.end(), 0.0) / aucs.size();
    means.push_back(mean);
    detail += fmt::format("{}_auc={:.4f} ", ablation == Ablation::none ? "full" : "noOpt", mean);
  }
  const double secs = seconds_since(t0);
  const bool ok = all_folds && means[0] >= kSignalAuc && means[1] < means[0] && secs < kThirtyMinutes;
  return verdict(ok, fmt::format("folds=5 students=500 {}time={:.1f}s", detail, secs));
}

// ---- G-12 -------------------------------------------------------------------

Outcome loss_arithmetic() {
  std::mt19937_64 rng(1212);
  int weight_errors = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int c = 1 + static_cast<int>(rng() % 60);
    const int tagged = 1 + static_cast<int>(rng() % static_cast<unsigned>(c));
    const int k = 1 + static_cast<int>(rng() % static_cast<unsigned>(c));
    const double expected = static_cast<double>(c - tagged) / static_cast<double>(k);
    if (std::abs(topk_positive_weight(c, tagged, k) - expected) > 1e-15 * std::max(1.0, expected)) ++weight_errors;
  }

  LossConfig lc;
  std::uniform_real_distribution<double> u(0.0, 3.0);
  double combo_gap = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    lc.alpha = u(rng);
    lc.beta = u(rng);
    const double kt = u(rng), tk = u(rng), cl = u(rng);
    combo_gap = std::max(combo_gap, std::abs(total_loss(kt, tk, cl, lc) - (kt + lc.alpha * tk + lc.beta * cl)));
  }
  // The batch objective is the same combination of its reported parts.
  Model m = make_model(tiny_config(), 6, 3, 4, 12);
  jitter(m, 12, 0.2);
  QuestionStats stats;
  stats.rate = {0.5, 0.2, 0.8, 0.45, 0.3, 0.9};
  stats.count.assign(6, 3);
  lc.alpha = 0.3;
  lc.beta = 0.7;
  std::vector<AugmentedTriple> batch;
  for (int s = 0; s < 4; ++s) {
    StudentSequence seq{"s" + std::to_string(s), random_sequence(m.vocabulary(), 6, rng)};
    batch.push_back(flip_augment(seq, stats, m.vocabulary(), lc, static_cast<std::uint64_t>(s)));
  }
  const BatchLoss bl = batch_loss(m, batch, lc);
  const double batch_gap = std::abs(bl.total.item() - total_loss(bl.kt, bl.topk, bl.cl, lc));
  const bool ok = weight_errors == 0 && combo_gap <= 1e-12 && batch_gap <= 1e-12 && bl.cl > 0.0;
  return verdict(ok, fmt::format("triples=1000 weight_errors={} combination_gap={:.1e} batch_gap={:.1e}",
                                 weight_errors, combo_gap, batch_gap));
}

// ---- G-13 -------------------------------------------------------------------

Outcome ablation_wiring() {
  std::vector<std::string> failed;
  // noUnc: unchosen option rows are perturbed; the full model must react.
  for (auto ablation : {Ablation::none, Ablation::no_unc}) {
    auto cfg = tiny_config();
    cfg.ablation = ablation;
    Model m = make_model(cfg);
    std::mt19937_64 rng(17);
    const auto seq = random_sequence(m.vocabulary(), 5, rng);
    const auto before = m.predict(seq, 2);
    int offset = 0;
    for (int q = 0; q < m.vocabulary().question_count(); ++q) {
      for (int o = 0; o < m.vocabulary().option_counts[static_cast<std::size_t>(q)]; ++o) {
        const bool chosen = std::any_of(seq.begin(), seq.end(),
                                        [&](const auto& r) { return r.question == q && r.chosen_option == o; });
        if (!chosen) m.option_emb.value().row(offset + o).array() += 0.7;
      }
      offset += m.vocabulary().option_counts[static_cast<std::size_t>(q)];
    }
    const bool invariant = same_output(before, m.predict(seq, 2), 0.0);
    if (invariant != (ablation == Ablation::no_unc)) failed.push_back("noUnc");
  }
  // noOpt: swap one wrong answer to a different distractor.
  for (auto ablation : {Ablation::none, Ablation::no_opt}) {
    auto cfg = tiny_config();
    cfg.ablation = ablation;
    Model m = make_model(cfg, 6, 3, 4, 18);
    std::mt19937_64 rng(18);
    auto seq = random_sequence(m.vocabulary(), 5, rng);
    auto& r = seq[2];
    const int correct = m.vocabulary().correct_options[static_cast<std::size_t>(r.question)];
    r.chosen_option = (correct + 1) % 4;
    r.correct = false;
    const auto before = m.predict(seq, 1);
    r.chosen_option = (correct + 2) % 4;
    const bool invariant = same_output(before, m.predict(seq, 1), 0.0);
    if (invariant != (ablation == Ablation::no_opt)) failed.push_back("noOpt");
  }
  // noTopK: k is ignored and every concept is selected.
  {
    auto cfg = tiny_config();
    cfg.top_k = 1;
    cfg.ablation = Ablation::no_topk;
    Model m = make_model(cfg, 6, 3);
    std::mt19937_64 rng(19);
    const auto seq = random_sequence(m.vocabulary(), 4, rng);
    bool all = m.effective_k() == 3;
    for (const auto& o : m.predict_sequence(seq)) {
      all = all && o.selected_concepts == std::vector<int>{0, 1, 2} && (o.relevance.array() > 0.0).all();
    }
    if (!all) failed.push_back("noTopK");
  }
  // noMap: GNN and edge-intensity weights no longer matter.
  for (auto ablation : {Ablation::none, Ablation::no_map}) {
    auto cfg = tiny_config();
    cfg.ablation = ablation;
    Model m = make_model(cfg);
    std::mt19937_64 rng(20);
    const auto seq = random_sequence(m.vocabulary(), 5, rng);
    const auto before = m.predict(seq, 3);
    for (auto& layer : m.gnn) layer.weight.value().array() *= -1.5;
    for (auto* l : {&m.f_intensity.first, &m.f_intensity.second}) l->weight.value().array() += 0.5;
    const bool invariant = same_output(before, m.predict(seq, 3), 0.0);
    if (invariant != (ablation == Ablation::no_map)) failed.push_back("noMap");
  }
  std::string names;
  for (const auto& f : failed) names += f + " ";
  return verdict(failed.empty(), failed.empty() ? "noUnc noOpt noTopK noMap verified" : "failed: " + names);
}

// ---- R-1 --------------------------------------------------------------------

Outcome full_scale() {
  const char* dir = std::getenv("CRKT_DBE_KT22_DIR");
  if (!dir || !*dir) return {Outcome::skip, "set CRKT_DBE_KT22_DIR to an ingested bundle directory"};
  const auto t0 = Clock::now();
  const DatasetBundle bundle = load_bundle_dir(dir);
  if (!bundle.concept_edges) return {Outcome::fail, "bundle has no concept_map.csv"};
  const auto map = ConceptMap::from_edges(bundle.concept_count, *bundle.concept_edges);
  RunConfig rc;  // defaults are the published hyperparameters
  CvOptions opt;
  opt.folds = 5;
  const auto folds = run_cv(bundle, map, rc, opt);
  std::vector<double> aucs, accs;
  for (const auto& f : folds) {
    if (!f.ok || !f.test.auc) return {Outcome::fail, fmt::format("fold {} failed: {}", f.fold, f.error)};
    aucs.push_back(100.0 * *f.test.auc);
    accs.push_back(100.0 * f.test.acc);
  }
  const auto [auc_mean, auc_std] = mean_std(aucs);
  const auto [acc_mean, acc_std] = mean_std(accs);
  const bool ok = std::abs(auc_mean - kFullScaleAuc) <= kFullScaleBand && std::abs(acc_mean - kFullScaleAcc) <= kFullScaleBand;
  return verdict(ok, fmt::format("auc={:.2f}±{:.2f} acc={:.2f}±{:.2f} time={:.0f}s", auc_mean, auc_std, acc_mean,
                                 acc_std, seconds_since(t0)));
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"G-1", gradient_check_all}, {"G-2", causality},          {"G-3", incremental_inference},
      {"G-4", auc_oracle},         {"G-5", topk_oracle},        {"G-6", concept_map_golden},
      {"G-7", adjacency_normalization}, {"G-8", augmentation_rules}, {"G-9", pipeline_golden},
      {"G-10", overfit_smoke},     {"G-11", learning_signal},   {"G-12", loss_arithmetic},
      {"G-13", ablation_wiring},   {"R-1", full_scale},
  };
  const std::set<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {Outcome::fail, std::string("exception: ") + e.what()};
    }
    const char* status = o.status == Outcome::pass ? "PASS" : o.status == Outcome::skip ? "SKIP" : "FAIL";
    failures += o.status == Outcome::fail;
    std::cout << id << ' ' << status << ' ' << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
