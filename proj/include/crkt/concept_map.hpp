#pragma once

#include "crkt/autodiff.hpp"
#include "crkt/data.hpp"
#include "crkt/nn.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace crkt {

enum class MapSource { authored, inferred };

// Directed concept graph. Self-connections are never stored; they enter the
// propagation through the +I of the normalised adjacency.
class ConceptMap {
 public:
  ConceptMap() = default;

  // Deduplicates edges and drops self-loops, appending a message to
  // `warnings` (and the log) for each dropped loop. Throws on out-of-range
  // indices.
  static ConceptMap from_edges(int concept_count, std::span<const std::pair<int, int>> edges,
                               MapSource source = MapSource::authored,
                               std::vector<std::string>* warnings = nullptr);

  int concept_count() const { return concept_count_; }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  MapSource source() const { return source_; }
  bool has_edge(int from, int to) const;

  // 0/1 adjacency matrix.
  Eigen::MatrixXd adjacency() const;

 private:
  int concept_count_ = 0;
  std::vector<std::pair<int, int>> edges_;
  MapSource source_ = MapSource::authored;
};

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct TransitionStats {
  CountMatrix counts;              // n_ij
  Eigen::MatrixXd correct_matrix;  // V: row-normalised counts
  Eigen::MatrixXd transition;      // V': global min-max normalised V
  double threshold = 0.0;          // mean of every entry of V'
  bool degenerate = false;
  std::string diagnostic;
};

struct StatisticalMapOptions {
  // Count a transition only when the earlier answer was also correct.
  bool require_prior_correct = false;
};

struct InferredMap {
  ConceptMap map;
  TransitionStats stats;
};

// Counts n_ij over adjacent pairs (t, t+1) where the answer at t+1 is
// correct, for every concept i of question t and j of question t+1.
CountMatrix transition_counts(const DatasetBundle& bundle, const StatisticalMapOptions& options = {});
// V, V', threshold and the surviving edge set (V'_ij > threshold) from counts.
InferredMap map_from_counts(const CountMatrix& counts);
InferredMap infer_statistical_map(const DatasetBundle& bundle, const StatisticalMapOptions& options = {});

std::string transition_stats_to_json(const InferredMap& inferred);

// D^-1/2 (A + I) D^-1/2 with D the row sums of A + I.
Eigen::MatrixXd normalize_adjacency(const Eigen::MatrixXd& adjacency);

// Target-question-specific weights: ReLU(f_intensity([q, c_i, c_j])) on every
// edge of the map, zero elsewhere. `target_questions` is Bxd_q and the result
// stacks B |C|x|C| blocks.
ad::Var question_edge_weights(const ad::Var& target_questions, const ad::Var& concept_embeddings,
                              const ConceptMap& map, const nn::Mlp& intensity);

struct DotNodeStyle {
  std::string label;
  std::string fill;  // "#rrggbb"; empty for default
  bool highlight = false;
};

// Graphviz DOT for the subgraph induced by `nodes` (all concepts when empty).
std::string to_dot(const ConceptMap& map, const std::vector<int>& nodes = {},
                   const std::map<int, DotNodeStyle>& styles = {});

}  // namespace crkt
