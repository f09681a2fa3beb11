#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace crkt {

// Raised for malformed or inconsistent input data. line is 1-based within the
// offending file, 0 when not tied to a line.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& message, std::size_t line = 0, std::string file = {});
  std::size_t line() const { return line_; }
  const std::string& file() const { return file_; }

 private:
  std::size_t line_;
  std::string file_;
};

struct QuestionMeta {
  int question_id = 0;  // external id as it appears in the files
  int option_count = 0;
  int correct_option = 0;
  std::vector<int> concept_ids;  // sorted, unique, non-empty
};

// question is the dense index into DatasetBundle::questions.
struct InteractionRecord {
  int question = 0;
  int chosen_option = 0;
  bool correct = false;
  int position = 0;
};

struct StudentSequence {
  std::string student_id;
  std::vector<InteractionRecord> interactions;
};

struct DatasetBundle {
  std::vector<QuestionMeta> questions;
  std::vector<StudentSequence> sequences;
  int concept_count = 0;
  std::optional<std::vector<std::pair<int, int>>> concept_edges;

  // Dense index of an external question id, or -1.
  int question_index(int question_id) const;
  std::size_t interaction_count() const;
};

// The option set minus the chosen option, ascending.
std::vector<int> derive_unchosen(const InteractionRecord& record, const QuestionMeta& meta);

// Throws DataError on the first violated invariant.
void validate(const DatasetBundle& bundle);

DatasetBundle load_dataset(const std::filesystem::path& interactions_path,
                           const std::filesystem::path& questions_path);
std::vector<std::pair<int, int>> load_edge_csv(const std::filesystem::path& path);

// Bundle directory layout: interactions.csv, questions.jsonl and, when the
// bundle carries a concept map, concept_map.csv.
void write_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir);
DatasetBundle load_bundle_dir(const std::filesystem::path& dir);
void write_edge_csv(const std::vector<std::pair<int, int>>& edges, const std::filesystem::path& path);

DatasetBundle preprocess(const DatasetBundle& bundle, int max_len = 200, int min_len = 5);

struct Fold {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

struct SplitPlan {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<Fold> folds;
};

// Students are shuffled once under `seed` and dealt into k contiguous test
// folds; validation_fraction of each fold's remaining students are held out
// for early stopping.
SplitPlan make_folds(const DatasetBundle& bundle, int k, std::uint64_t seed,
                     double validation_fraction = 0.1);

// Sequences whose student id is in `students`, in bundle order.
DatasetBundle select_students(const DatasetBundle& bundle, const std::vector<std::string>& students);

struct StatsReport {
  std::size_t students = 0;
  int concepts = 0;
  std::size_t questions = 0;
  std::size_t interactions = 0;
  int min_options = 0;
  int max_options = 0;
  double avg_concepts_per_question = 0.0;
  double correct_rate = 0.0;
  double sparsity = 0.0;
  std::size_t relations = 0;
};

StatsReport dataset_stats(const DatasetBundle& bundle);
std::string stats_to_json(const StatsReport& stats);

struct SynthConfig {
  int students = 50;
  int questions = 40;
  int concepts = 10;
  int options = 4;
  int min_length = 20;
  int max_length = 40;
  int max_concepts_per_question = 2;
  double edge_probability = 0.25;
  double ability_std = 1.5;
  double difficulty_std = 1.0;
  // Weight of the mean prerequisite ability added to a concept's own ability.
  double prerequisite_weight = 0.5;
  // Probability that a wrong answer picks the distractor tied to the weakest
  // relevant concept; otherwise a distractor is drawn uniformly.
  double distractor_informativeness = 0.85;
  // Tie distractors to concepts drawn from the whole concept set instead of
  // the question's concepts and their prerequisites.
  bool distractors_span_all_concepts = false;
  // "weakest_concept": the informative pick is the distractor tied to the
  // weakest concept. "deficit_severity": distractors are ordered from near
  // miss to severe and the informative pick grows more severe as
  // sigmoid(difficulty - ability) grows.
  std::string distractor_rule = "weakest_concept";
  // Standard deviation of a per-student offset shared by every concept.
  double general_ability_std = 0.0;
  // When set, every ability and difficulty is zero (probability 0.5).
  bool flat = false;
};

struct SyntheticTruth {
  std::vector<std::pair<int, int>> edges;
  std::vector<std::vector<double>> abilities;  // student x concept
  std::vector<double> difficulties;            // per question
  // Concept each distractor is tied to, -1 for the correct option.
  std::vector<std::vector<int>> distractor_concepts;
  // Generating probability of each interaction, aligned with sequences.
  std::vector<std::vector<double>> probabilities;
};

struct SyntheticDataset {
  DatasetBundle bundle;
  SyntheticTruth truth;
};

SyntheticDataset generate_synthetic(const SynthConfig& config, std::uint64_t seed);
SynthConfig synth_config_from_json(const std::string& text);

}  // namespace crkt
