#pragma once

#include "crkt/model.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace crkt::testing {

inline double relu(double x) { return x > 0 ? x : 0; }
inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Sets entry j of the i-th parameter to a fixed, non-trivial value.
inline void deterministic_weights(Model& m) {
  int i = 0;
  for (auto* p : m.parameters()) {
    auto& v = p->value();
    for (Eigen::Index j = 0; j < v.size(); ++j) v.data()[j] = 0.9 * std::sin(1.7 * i + 0.61 * j + 0.3);
    ++i;
  }
}

inline Vocabulary small_vocab(int questions, int concepts, int options, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Vocabulary v;
  v.concept_count = concepts;
  for (int q = 0; q < questions; ++q) {
    v.option_counts.push_back(options);
    v.correct_options.push_back(static_cast<int>(rng() % options));
    v.question_concepts.push_back({static_cast<int>(rng() % concepts)});
  }
  return v;
}

inline std::vector<InteractionRecord> random_sequence(const Vocabulary& v, int length, std::mt19937_64& rng) {
  std::vector<InteractionRecord> out;
  for (int t = 0; t < length; ++t) {
    const int q = static_cast<int>(rng() % v.question_count());
    const int o = static_cast<int>(rng() % v.option_counts[q]);
    out.push_back(InteractionRecord{q, o, o == v.correct_options[q], t});
  }
  return out;
}

// Concept map is the 3-cycle restricted to the first `concepts` concepts.
inline Model make_model(ModelConfig cfg, int questions = 6, int concepts = 3, int options = 4,
                        std::uint64_t seed = 1) {
  auto vocab = small_vocab(questions, concepts, options, seed);
  const std::vector<std::pair<int, int>> edges{{0, 1}, {1, 2}, {2, 0}};
  std::vector<std::pair<int, int>> kept;
  for (auto e : edges)
    if (e.first < concepts && e.second < concepts && e.first != e.second) kept.push_back(e);
  return Model(cfg, vocab, ConceptMap::from_edges(concepts, kept), seed);
}

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.d_q = c.d_c = c.d_g = 4;
  c.gnn_layers = 2;
  c.top_k = 2;
  return c;
}

// Exact comparison of every field; returns false on the first difference
// larger than `tol`.
inline bool same_output(const PredictionOutput& a, const PredictionOutput& b, double tol) {
  auto close = [tol](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    return x.size() == y.size() && (x.size() == 0 || (x - y).cwiseAbs().maxCoeff() <= tol);
  };
  return std::abs(a.y_hat - b.y_hat) <= tol && std::abs(a.ability - b.ability) <= tol &&
         std::abs(a.difficulty - b.difficulty) <= tol && close(a.relevance, b.relevance) &&
         close(a.raw_relevance, b.raw_relevance) && close(a.mastery, b.mastery) && close(a.latent, b.latent) &&
         a.selected_concepts == b.selected_concepts;
}

// ---- Fixed-weight pipeline oracle ---------------------------------------
//
// Every width is 1, so the whole forward pass reduces to scalar arithmetic.

inline double mlp1(const nn::Mlp& f, std::initializer_list<double> x) {
  double h = f.first.bias.value()(0, 0);
  int i = 0;
  for (double v : x) h += v * f.first.weight.value()(i++, 0);
  return f.second.weight.value()(0, 0) * relu(h) + f.second.bias.value()(0, 0);
}

inline double attend_last(double wq, double wk, double wv, const std::vector<double>& qsrc,
                          const std::vector<double>& ksrc, const std::vector<double>& vsrc, std::size_t t,
                          double eta) {
  std::vector<double> s;
  double mx = -1e300;
  for (std::size_t j = 0; j <= t; ++j) {
    s.push_back((wq * qsrc[t]) * (wk * ksrc[j]) * std::exp(-eta * static_cast<double>(t - j)));
    mx = std::max(mx, s.back());
  }
  double out = 0;
  for (std::size_t j = 0; j <= t; ++j) out += std::exp(s[j] - mx) * wv * vsrc[j];
  return out;
}

inline double w11(const nn::Linear& l) { return l.weight.value()(0, 0); }

// Pinned output of the oracle for the case below.
inline constexpr double kPipelineGolden = 0.31935739643885702;

struct PipelineCase {
  Model model;
  std::vector<InteractionRecord> sequence;
  int target;
};

inline PipelineCase pipeline_case() {
  ModelConfig cfg;
  cfg.d_q = cfg.d_c = cfg.d_g = 1;
  cfg.gnn_layers = 1;
  cfg.top_k = 2;
  cfg.lambda = 0.5;
  Vocabulary v;
  v.concept_count = 2;
  v.option_counts = {3, 3};
  v.correct_options = {1, 0};
  v.question_concepts = {{0}, {1}};
  const std::vector<std::pair<int, int>> edges{{0, 1}};
  Model m(cfg, v, ConceptMap::from_edges(2, edges), 0);
  deterministic_weights(m);
  return {std::move(m), {{0, 1, true, 0}, {1, 2, false, 1}}, 1};
}

struct PipelineOracle {
  double h, mastery0, mastery1, theta, y;
};

// Straight-line evaluation of pipeline_case(): q0 answered with its correct
// option 1, q1 with wrong option 2, predicting `target`.
inline PipelineOracle pipeline_oracle(const Model& m, int target) {
  const auto& Q = m.question_emb.value();
  const auto& O = m.option_emb.value();
  const auto& C = m.concept_emb.value();
  const double eta = std::log1p(std::exp(m.attention().eta_raw.value()(0, 0)));
  const std::vector<double> q{Q(0, 0), Q(1, 0)};
  const double c0 = mlp1(m.f_correct, {O(1, 0)});
  const double u0 = mlp1(m.f_unchosen, {(O(0, 0) + O(2, 0)) / 2});
  const double c1 = mlp1(m.f_wrong, {O(3 + 2, 0)});
  const double u1 = mlp1(m.f_unchosen, {(O(3, 0) + O(4, 0)) / 2});
  const std::vector<double> d{c0 - 0.5 * u0, c1 - 0.5 * u1};
  const auto& A = m.attention();
  std::vector<double> qh, dh;
  for (std::size_t t = 0; t < 2; ++t) {
    qh.push_back(attend_last(w11(A.questions.query), w11(A.questions.key), w11(A.questions.value), q, q, q, t, eta));
    dh.push_back(attend_last(w11(A.responses.query), w11(A.responses.key), w11(A.responses.value), d, d, d, t, eta));
  }
  const double h = attend_last(w11(A.knowledge.query), w11(A.knowledge.key), w11(A.knowledge.value), qh, qh, dh, 1, eta);
  const double e = Q(target, 0);
  const double m0 = mlp1(m.f_concept, {h, C(0, 0)});
  const double m1 = mlp1(m.f_concept, {h, C(1, 0)});
  const double w01 = relu(mlp1(m.f_intensity, {e, C(0, 0), C(1, 0)}));
  const double deg0 = 1 + w01, deg1 = 1;
  const double a00 = 1 / deg0, a01 = w01 / std::sqrt(deg0 * deg1), a11 = 1 / deg1;
  const double g = w11(m.gnn[0]);
  const double mh0 = a00 * m0 * g + a01 * m1 * g;
  const double mh1 = a11 * m1 * g;
  const double wr = m.w_r.value()(0, 0);
  const double r0 = sig(e * wr * C(0, 0)), r1 = sig(e * wr * C(1, 0));
  const double p0 = std::exp(r0) / (std::exp(r0) + std::exp(r1));
  const double p1 = 1 - p0;
  const double theta = sig(mlp1(m.f_difficulty, {e}));
  return {h, mh0, mh1, theta, sig(p0 * mh0 + p1 * mh1 - theta)};
}

}  // namespace crkt::testing
