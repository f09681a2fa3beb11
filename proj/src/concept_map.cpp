#include "crkt/concept_map.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace crkt {

ConceptMap ConceptMap::from_edges(int concept_count, std::span<const std::pair<int, int>> edges,
                                  MapSource source, std::vector<std::string>* warnings) {
  if (concept_count < 0) throw std::invalid_argument("concept_count must be non-negative");
  ConceptMap map;
  map.concept_count_ = concept_count;
  map.source_ = source;
  for (const auto& [i, j] : edges) {
    if (i < 0 || j < 0 || i >= concept_count || j >= concept_count) {
      throw DataError("concept edge (" + std::to_string(i) + ", " + std::to_string(j) +
                      ") out of range for " + std::to_string(concept_count) + " concepts");
    }
    if (i == j) {
      const std::string msg = "dropping self-loop on concept " + std::to_string(i);
      spdlog::warn(msg);
      if (warnings) warnings->push_back(msg);
      continue;
    }
    map.edges_.emplace_back(i, j);
  }
  std::sort(map.edges_.begin(), map.edges_.end());
  map.edges_.erase(std::unique(map.edges_.begin(), map.edges_.end()), map.edges_.end());
  return map;
}

bool ConceptMap::has_edge(int from, int to) const {
  return std::binary_search(edges_.begin(), edges_.end(), std::make_pair(from, to));
}

Eigen::MatrixXd ConceptMap::adjacency() const {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(concept_count_, concept_count_);
  for (const auto& [i, j] : edges_) a(i, j) = 1.0;
  return a;
}

CountMatrix transition_counts(const DatasetBundle& bundle, const StatisticalMapOptions& options) {
  const int n = bundle.concept_count;
  CountMatrix counts = CountMatrix::Zero(n, n);
  for (const auto& seq : bundle.sequences) {
    const auto& xs = seq.interactions;
    for (std::size_t t = 0; t + 1 < xs.size(); ++t) {
      if (!xs[t + 1].correct) continue;
      if (options.require_prior_correct && !xs[t].correct) continue;
      for (int i : bundle.questions[xs[t].question].concept_ids) {
        for (int j : bundle.questions[xs[t + 1].question].concept_ids) ++counts(i, j);
      }
    }
  }
  return counts;
}

InferredMap map_from_counts(const CountMatrix& counts) {
  const auto n = static_cast<int>(counts.rows());
  InferredMap out;
  auto& st = out.stats;
  st.counts = counts;
  st.correct_matrix = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const auto total = counts.row(i).sum();
    if (total == 0) continue;
    for (int j = 0; j < n; ++j) {
      st.correct_matrix(i, j) = static_cast<double>(counts(i, j)) / static_cast<double>(total);
    }
  }
  std::vector<std::pair<int, int>> edges;
  if (n == 0) {
    st.degenerate = true;
    st.diagnostic = "no concepts";
  } else {
    const double lo = st.correct_matrix.minCoeff();
    const double hi = st.correct_matrix.maxCoeff();
    if (hi == lo) {
      st.degenerate = true;
      st.diagnostic = counts.sum() == 0 ? "no qualifying transitions: all counts are zero"
                                        : "max(V) == min(V): min-max normalisation undefined";
      st.transition = Eigen::MatrixXd::Zero(n, n);
      st.threshold = 0.0;
      spdlog::warn("statistical concept map: {}", st.diagnostic);
    } else {
      st.transition = (st.correct_matrix.array() - lo) / (hi - lo);
      st.threshold = st.transition.mean();
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          if (st.transition(i, j) > st.threshold) edges.emplace_back(i, j);
        }
      }
    }
  }
  out.map = ConceptMap::from_edges(n, edges, MapSource::inferred);
  return out;
}

InferredMap infer_statistical_map(const DatasetBundle& bundle, const StatisticalMapOptions& options) {
  return map_from_counts(transition_counts(bundle, options));
}

std::string transition_stats_to_json(const InferredMap& inferred) {
  using nlohmann::json;
  const auto& st = inferred.stats;
  auto rows = [](const auto& m) {
    json out = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
      out.push_back(row);
    }
    return out;
  };
  json j;
  j["concept_count"] = inferred.map.concept_count();
  j["counts"] = rows(st.counts);
  j["V"] = rows(st.correct_matrix);
  j["V_prime"] = rows(st.transition);
  j["threshold"] = st.threshold;
  j["degenerate"] = st.degenerate;
  if (!st.diagnostic.empty()) j["diagnostic"] = st.diagnostic;
  json edges = json::array();
  for (const auto& [a, b] : inferred.map.edges()) edges.push_back({a, b});
  j["edges"] = edges;
  return j.dump(2);
}

Eigen::MatrixXd normalize_adjacency(const Eigen::MatrixXd& adjacency) {
  if (adjacency.rows() != adjacency.cols()) throw std::invalid_argument("adjacency must be square");
  if ((adjacency.array() < 0.0).any()) throw std::invalid_argument("adjacency must be non-negative");
  // Shares the exact arithmetic of the differentiable block op.
  return ad::normalize_adjacency_blocks(ad::constant(adjacency), adjacency.rows()).value();
}

ad::Var question_edge_weights(const ad::Var& target_questions, const ad::Var& concept_embeddings,
                              const ConceptMap& map, const nn::Mlp& intensity) {
  const auto blocks = target_questions.rows();
  const auto c = static_cast<ad::Index>(map.concept_count());
  if (concept_embeddings.rows() != c) throw std::invalid_argument("question_edge_weights: concept count mismatch");
  if (intensity.in_features() != target_questions.cols() + 2 * concept_embeddings.cols()) {
    throw std::invalid_argument("question_edge_weights: intensity input width mismatch");
  }
  const auto& edges = map.edges();
  const auto e = static_cast<ad::Index>(edges.size());
  if (e == 0) return ad::constant(Eigen::MatrixXd::Zero(blocks * c, c));
  std::vector<int> q_rows;
  std::vector<int> src;
  std::vector<int> dst;
  q_rows.reserve(static_cast<std::size_t>(blocks * e));
  for (ad::Index b = 0; b < blocks; ++b) {
    for (const auto& [i, j] : edges) {
      q_rows.push_back(static_cast<int>(b));
      src.push_back(i);
      dst.push_back(j);
    }
  }
  ad::Var input = ad::concat_cols({ad::gather_rows(target_questions, q_rows),
                                   ad::gather_rows(concept_embeddings, src),
                                   ad::gather_rows(concept_embeddings, dst)});
  ad::Var weights = ad::relu(intensity(input));
  return ad::scatter_adjacency(weights, edges, blocks, c);
}

std::string to_dot(const ConceptMap& map, const std::vector<int>& nodes,
                   const std::map<int, DotNodeStyle>& styles) {
  std::vector<int> keep = nodes;
  if (keep.empty()) {
    for (int i = 0; i < map.concept_count(); ++i) keep.push_back(i);
  }
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  const auto in_set = [&](int c) { return std::binary_search(keep.begin(), keep.end(), c); };

  std::ostringstream os;
  os << "digraph concept_map {\n  node [shape=circle, style=filled, fillcolor=\"#ffffff\"];\n";
  for (int c : keep) {
    os << "  c" << c;
    auto it = styles.find(c);
    std::vector<std::string> attrs;
    if (it != styles.end()) {
      if (!it->second.label.empty()) attrs.push_back("label=\"" + it->second.label + "\"");
      if (!it->second.fill.empty()) attrs.push_back("fillcolor=\"" + it->second.fill + "\"");
      if (it->second.highlight) attrs.push_back("color=\"#e0a800\", penwidth=3");
    }
    if (!attrs.empty()) {
      os << " [";
      for (std::size_t i = 0; i < attrs.size(); ++i) os << (i ? ", " : "") << attrs[i];
      os << "]";
    }
    os << ";\n";
  }
  for (const auto& [i, j] : map.edges()) {
    if (in_set(i) && in_set(j)) os << "  c" << i << " -> c" << j << ";\n";
  }
  os << "}\n";
  return os.str();
}

}  // namespace crkt
