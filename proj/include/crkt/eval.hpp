#pragma once

#include "crkt/augment.hpp"
#include "crkt/model.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace crkt {

struct ScoredTarget {
  double y_hat = 0.5;
  int label = 0;
  int question = 0;
};

// Fraction of (y_hat >= threshold) == label. Throws on empty input.
double accuracy(std::span<const double> y_hat, std::span<const int> labels, double threshold = 0.5);
// Mann-Whitney AUC with ties counted one half; nullopt when a class is absent.
std::optional<double> auc(std::span<const double> y_hat, std::span<const int> labels);

struct MetricReport {
  double acc = 0.0;
  std::optional<double> auc;
  std::size_t n = 0;
};

MetricReport compute_metrics(std::span<const ScoredTarget> targets);

struct EvalResult {
  std::vector<ScoredTarget> targets;
  // Summed target BCE per sequence, averaged over sequences.
  double kt_loss = 0.0;
};

// Every target t >= 1 of every sequence, evaluation mode.
EvalResult evaluate(const Model& model, const DatasetBundle& data);

struct Bucket {
  double low = 0.0;
  double high = 0.0;
  std::size_t count = 0;
  std::optional<double> accuracy;
  double share = 0.0;
};

struct BucketReport {
  std::vector<Bucket> buckets;
  std::size_t unassigned = 0;  // targets on questions without a training rate
};

// n equal-width bands over [0, 1].
std::vector<double> uniform_edges(int n);
// Band i is [edges[i], edges[i+1]), the last band also includes its upper edge.
BucketReport bucket_by_correct_rate(std::span<const ScoredTarget> targets, const QuestionStats& stats,
                                    const std::vector<double>& edges);

ModelConfig build_variant(ModelConfig base, Ablation kind);

struct ExplainReport {
  std::string student_id;
  int target_question = 0;  // dense index
  int target_question_id = 0;
  std::size_t prefix_length = 0;
  PredictionOutput prediction;
  std::vector<int> tags;
  std::vector<int> nodes;  // concept neighbourhood: selected, tags and map neighbours of the selected
  std::vector<std::pair<int, int>> edges;
};

ExplainReport explain(const Model& model, std::span<const InteractionRecord> prefix, int target_question);
std::string explain_to_json(const ExplainReport& report);
std::string explain_to_dot(const ExplainReport& report, const ConceptMap& map);
std::string explain_to_svg(const ExplainReport& report);

struct MetricRow {
  std::string model;
  std::string dataset;
  int fold = 0;
  double acc = 0.0;
  double auc = 0.0;
};

// Mean and sample standard deviation.
std::pair<double, double> mean_std(std::span<const double> values);
// `model,dataset,fold,acc,auc` rows followed by one `mean±std` row per model,
// in percent with two decimals.
std::string metric_table_csv(const std::vector<MetricRow>& rows);

struct TTestResult {
  double t = 0.0;
  int df = 0;
  double p_value = 1.0;  // two-sided
};

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

}  // namespace crkt
