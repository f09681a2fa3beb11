#pragma once

#include "crkt/autodiff.hpp"
#include "crkt/concept_map.hpp"
#include "crkt/data.hpp"
#include "crkt/nn.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace crkt {

enum class Ablation { none, no_opt, no_unc, no_map, no_topk };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& name);

struct ModelConfig {
  int d_q = 32;
  int d_c = 32;
  int d_g = 32;
  int gnn_layers = 3;
  int top_k = 10;
  double lambda = 0.5;
  int heads = 1;
  std::string distance = "position_gap";
  // Activation of the last GNN layer: identity keeps mastery unbounded.
  bool sigmoid_final_layer = false;
  double eta_init = 0.05;
  Ablation ablation = Ablation::none;
};

// Throws std::invalid_argument when an invariant of the configuration fails.
void validate(const ModelConfig& config, int concept_count);

// Everything the model needs to know about the item bank.
struct Vocabulary {
  std::vector<int> option_counts;
  std::vector<int> correct_options;
  std::vector<std::vector<int>> question_concepts;
  int concept_count = 0;

  static Vocabulary from_bundle(const DatasetBundle& bundle);
  int question_count() const { return static_cast<int>(option_counts.size()); }
};

// d(query position, key position) for the temporal decay.
using DistanceFn = std::function<double(int, int)>;
DistanceFn distance_function(const std::string& id);

struct AttentionProjection {
  nn::Linear query;
  nn::Linear key;
  nn::Linear value;
};

struct AttentionParams {
  AttentionProjection questions;  // context-aware questions
  AttentionProjection responses;  // context-aware responses
  AttentionProjection knowledge;  // knowledge state h
  ad::Parameter eta_raw;          // eta = softplus(eta_raw) >= 0
  int heads = 1;
  DistanceFn distance;

  ad::Var eta() const;
};

struct PredictionOutput {
  double y_hat = 0.5;
  double ability = 0.0;
  double difficulty = 0.5;
  Eigen::VectorXd relevance;      // top-k normalised, zero off support
  Eigen::VectorXd raw_relevance;  // sigmoid scores before top-k
  Eigen::VectorXd mastery;        // per-concept scalar knowledge state
  Eigen::VectorXd latent;         // aggregated h feeding the concept encoder
  std::vector<int> selected_concepts;
};

// Fills y_hat = sigmoid(ability - theta) and the selected support.
PredictionOutput make_prediction(const Eigen::VectorXd& mastery, const Eigen::VectorXd& relevance_topk,
                                 double theta);

// ---- Differentiable building blocks -------------------------------------

ad::Var encode_chosen(const ad::Var& chosen, const std::vector<bool>& correct, const nn::Mlp& f_correct,
                      const nn::Mlp& f_wrong);
ad::Var encode_unchosen(const ad::Var& unchosen_mean, const nn::Mlp& f_unchosen);
ad::Var disentangle(const ad::Var& chosen_enc, const ad::Var& unchosen_enc, double lambda);

// softmax(scores) / max(softmax(scores)); throws on empty input.
Eigen::VectorXd maxout(std::span<const double> scores);

// Rows of Q attend to rows of K/V under the causal rule key position <=
// query position, with raw scores (q.k / sqrt(d_k)) * exp(-eta * d(dt)) and
// maxout weights. Returns the output and optionally the weights.
ad::Var attention_max(const ad::Var& q, const ad::Var& k, const ad::Var& v,
                      std::span<const int> query_positions, std::span<const int> key_positions,
                      const ad::Var& eta, const DistanceFn& distance, ad::Var* weights = nullptr);
// Same with an explicit mask (true = attend).
ad::Var attention_max(const ad::Var& q, const ad::Var& k, const ad::Var& v,
                      std::span<const int> query_positions, std::span<const int> key_positions,
                      const ad::Var& eta, const DistanceFn& distance, const ad::Mask& mask,
                      ad::Var* weights = nullptr);

struct RetrieverOutput {
  ad::Var context_questions;  // q-hat
  ad::Var context_responses;  // d-hat
  ad::Var knowledge;          // h, row t sees interactions 0..t
};

// Attention over already-projected Q/K/V, split column-wise into heads.
ad::Var multi_head_attention(const ad::Var& q, const ad::Var& k, const ad::Var& v,
                             std::span<const int> query_positions, std::span<const int> key_positions,
                             const AttentionParams& params);

ad::Var project_attention(const AttentionProjection& proj, const ad::Var& query_src, const ad::Var& key_src,
                          const ad::Var& value_src, std::span<const int> query_positions,
                          std::span<const int> key_positions, const AttentionParams& params);

RetrieverOutput knowledge_retriever(const ad::Var& questions, const ad::Var& responses,
                                    std::span<const int> positions, const AttentionParams& params);

// Row (b*|C| + i) = f_concept([h_b, c_i]).
ad::Var concept_states(const ad::Var& knowledge_rows, const ad::Var& concept_embeddings,
                       const nn::Mlp& f_concept);

// L layers of sigma(A M W); ReLU on hidden layers and identity (or sigmoid)
// on the last, whose output width must be 1. Returns (B*|C|)x1.
ad::Var gnn_propagate(const ad::Var& states, const ad::Var& normalized_adjacency,
                      const std::vector<nn::Linear>& layers, int concept_count, bool sigmoid_final_layer);

ad::Var relevance_logits(const ad::Var& target_questions, const ad::Var& concept_embeddings,
                         const ad::Parameter& w_r);
ad::Var question_difficulty(const ad::Var& target_questions, const nn::Mlp& f_difficulty);

// Plain-value top-k relevance for one vector.
Eigen::VectorXd topk_relevance(const Eigen::VectorXd& relevance, int k);

// ---- The model ---------------------------------------------------------

// Quantities that depend on the target question only.
struct TargetContext {
  std::vector<int> targets;
  ad::Var embedding;          // B x d_q
  ad::Var adjacency;          // normalised, (B*|C|) x |C|; undefined for noMap
  ad::Var relevance_logits;   // B x |C|
  ad::Var relevance;          // top-k softmax, B x |C|
  ad::Var difficulty;         // B x 1
};

struct Readout {
  ad::Var states;   // (B*|C|) x d_g
  ad::Var mastery;  // B x |C|
  ad::Var ability;  // B x 1
  ad::Var logits;   // ability - difficulty, B x 1
};

struct SequenceForward {
  RetrieverOutput retrieval;
  TargetContext context;
  Readout readout;
  std::vector<int> target_positions;  // 1..T-1
};

class Model {
 public:
  Model(ModelConfig config, Vocabulary vocab, ConceptMap map, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const ConceptMap& concept_map() const { return map_; }
  int concept_count() const { return vocab_.concept_count; }
  int effective_k() const;

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  ad::Parameter* find_parameter(const std::string& name);

  // Value snapshot of every parameter, and its inverse.
  std::vector<Eigen::MatrixXd> snapshot() const;
  void restore(const std::vector<Eigen::MatrixXd>& values);

  ad::Var question_embeddings(std::span<const int> questions) const;
  // Disentangled responses d_t for every record (T x d_q).
  ad::Var encode_responses(std::span<const InteractionRecord> records) const;
  RetrieverOutput retrieve(std::span<const InteractionRecord> records) const;

  TargetContext target_context(std::span<const int> targets) const;
  Readout readout(const ad::Var& knowledge_rows, const TargetContext& context) const;

  // Predicts record t from records 0..t-1 for every t >= 1.
  SequenceForward forward_sequence(std::span<const InteractionRecord> records) const;
  // Final-step knowledge state h_T (1 x d_q).
  ad::Var final_knowledge(std::span<const InteractionRecord> records) const;

  // Prediction for `target_question` after observing `prefix` (no gradient).
  PredictionOutput predict(std::span<const InteractionRecord> prefix, int target_question) const;

  // Batched outputs for every target of a sequence, evaluation mode.
  std::vector<PredictionOutput> predict_sequence(std::span<const InteractionRecord> records) const;

  const AttentionParams& attention() const { return attention_; }

  // Components, exposed for inspection and hand-set tests.
  ad::Parameter question_emb;
  ad::Parameter option_emb;
  ad::Parameter concept_emb;
  ad::Parameter response_emb;  // binary correct/wrong rows for noOpt
  nn::Mlp f_correct;
  nn::Mlp f_wrong;
  nn::Mlp f_unchosen;
  nn::Mlp f_concept;
  nn::Mlp f_intensity;
  std::vector<nn::Linear> gnn;
  nn::Linear map_head;  // noMap readout
  ad::Parameter w_r;
  nn::Mlp f_difficulty;

 private:
  void check_question(int q) const;
  int option_row(int question, int option) const;

  ModelConfig config_;
  Vocabulary vocab_;
  ConceptMap map_;
  std::vector<int> option_offsets_;
  AttentionParams attention_;
};

std::vector<PredictionOutput> outputs_from(const TargetContext& context, const Readout& readout,
                                           const ad::Var& knowledge_rows);

// Incremental inference for one student: attention keys/values and per-target
// context are cached, so each step costs O(t) attention work plus the
// concept-level readout.
class InferenceSession {
 public:
  explicit InferenceSession(const Model& model);

  void append(const InteractionRecord& record);
  PredictionOutput predict(int target_question);
  // Builds and caches the target-only part of a prediction ahead of time.
  void prepare(int target_question);
  PredictionOutput step(const InteractionRecord& record, int target_question);
  int length() const { return static_cast<int>(positions_.size()); }

 private:
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  static constexpr Eigen::Index kBlockRows = 64;
  // Cached rows live in fixed-size blocks, so appending never moves earlier
  // rows; row i is block i / kBlockRows, row i % kBlockRows.
  struct Stream {
    std::vector<RowMajor> keys;
    std::vector<RowMajor> values;
  };
  Eigen::MatrixXd attend(const AttentionProjection& proj, Stream& stream, const ad::Var& query_src,
                         const ad::Var& key_src, const ad::Var& value_src);
  static void append_row(std::vector<RowMajor>& blocks, Eigen::Index row_index, const Eigen::MatrixXd& row);
  const TargetContext& context_for(int target_question);

  const Model* model_;
  std::vector<int> positions_;
  Stream questions_;
  Stream responses_;
  Stream knowledge_;
  Eigen::MatrixXd latest_h_;
  std::map<int, TargetContext> target_cache_;
};

}  // namespace crkt
