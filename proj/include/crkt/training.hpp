#pragma once

#include "crkt/augment.hpp"
#include "crkt/config.hpp"
#include "crkt/eval.hpp"
#include "crkt/model.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace crkt {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- Losses -----------------------------------------------------------------

// Summed BCE of probabilities, clamped to [1e-7, 1 - 1e-7].
double bce_probabilities(std::span<const double> y_hat, std::span<const double> labels);

// Summed BCE of sigmoid(logits) against labels (column of 0/1).
ad::Var loss_kt(const ad::Var& logits, const ad::Matrix& labels);

double topk_positive_weight(int concept_count, int tagged, int k);
// Weighted BCE over every concept of every target row; relevance is
// sigmoid(relevance_logits) and tags[b] lists the concepts of target b.
ad::Var loss_topk(const ad::Var& relevance_logits, const std::vector<std::vector<int>>& tags, int k);

// -log softmax over [cos(h, h+), cos(h, n_1), ...] taken at the positive.
ad::Var loss_cl(const ad::Var& h, const ad::Var& h_pos, const std::vector<ad::Var>& negatives);

double total_loss(double kt, double topk, double cl, const LossConfig& config);

// ---- Optimisation ---------------------------------------------------------

class Adam {
 public:
  Adam(std::vector<ad::Parameter*> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  // Applies one update from the accumulated gradients, then clears them.
  void step();
  int steps() const { return t_; }

 private:
  std::vector<ad::Parameter*> params_;
  std::vector<ad::Matrix> m_;
  std::vector<ad::Matrix> v_;
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
};

// Tracks the best validation loss; stop once `patience` epochs pass without
// a strict improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}
  // Returns true when `loss` is a new best.
  bool update(int epoch, double loss);
  bool should_stop() const { return since_best_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  int patience_;
  int best_epoch_ = -1;
  double best_loss_ = 0.0;
  int since_best_ = 0;
};

struct BatchLoss {
  ad::Var total;  // mean over the batch
  double kt = 0.0;
  double topk = 0.0;
  double cl = 0.0;
  std::size_t targets = 0;
};

// Objective over a batch of augmented sequences (sequences shorter than two
// interactions are skipped).
BatchLoss batch_loss(const Model& model, std::span<const AugmentedTriple> batch, const LossConfig& config);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double val_auc = 0.0;  // NaN when undefined
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  bool stopped_early = false;
};

std::string history_csv(const std::vector<EpochRecord>& history);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Adam on the combined objective with early stopping on the validation KT
// loss; `validation` may be empty, in which case the training data is used.
// The model is left at its best-validation parameters.
TrainResult train(Model& model, const DatasetBundle& train_data, const DatasetBundle& validation,
                  const RunConfig& config, const EpochCallback& on_epoch = {});

struct FoldResult {
  int fold = 0;
  bool ok = false;
  std::string error;
  MetricReport test;
  TrainResult training;
};

struct CvOptions {
  int folds = 5;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::optional<std::filesystem::path> checkpoint_dir;
  std::string model_name = "CRKT";
};

// Trains one model per fold (raw, unwindowed bundle in), evaluates on the
// fold's test students. A failing fold is recorded and the rest continue.
std::vector<FoldResult> run_cv(const DatasetBundle& bundle, const ConceptMap& map, const RunConfig& config,
                               const CvOptions& options);

}  // namespace crkt
