#include "crkt/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>
#include <stdexcept>

namespace crkt {

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::none: return "full";
    case Ablation::no_opt: return "noOpt";
    case Ablation::no_unc: return "noUnc";
    case Ablation::no_map: return "noMap";
    case Ablation::no_topk: return "noTopK";
  }
  return "full";
}

Ablation ablation_from_string(const std::string& name) {
  if (name == "full" || name == "none") return Ablation::none;
  if (name == "noOpt") return Ablation::no_opt;
  if (name == "noUnc") return Ablation::no_unc;
  if (name == "noMap") return Ablation::no_map;
  if (name == "noTopK") return Ablation::no_topk;
  throw std::invalid_argument("unknown ablation '" + name + "' (expected full, noOpt, noUnc, noMap or noTopK)");
}

void validate(const ModelConfig& c, int concept_count) {
  if (c.d_q <= 0 || c.d_c <= 0 || c.d_g <= 0) throw std::invalid_argument("embedding widths must be positive");
  if (c.gnn_layers < 1) throw std::invalid_argument("gnn_layers must be >= 1");
  if (c.heads < 1 || c.d_q % c.heads != 0) {
    throw std::invalid_argument("heads must be >= 1 and divide d_q");
  }
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1]");
  if (concept_count < 1) throw std::invalid_argument("at least one concept is required");
  if (c.ablation != Ablation::no_topk && (c.top_k < 1 || c.top_k > concept_count)) {
    throw std::invalid_argument("top_k must satisfy 1 <= k <= |C| = " + std::to_string(concept_count));
  }
  if (!std::isfinite(c.eta_init) || c.eta_init <= 0.0) throw std::invalid_argument("eta_init must be positive");
  distance_function(c.distance);
}

Vocabulary Vocabulary::from_bundle(const DatasetBundle& bundle) {
  Vocabulary v;
  v.concept_count = bundle.concept_count;
  for (const auto& q : bundle.questions) {
    v.option_counts.push_back(q.option_count);
    v.correct_options.push_back(q.correct_option);
    v.question_concepts.push_back(q.concept_ids);
  }
  return v;
}

DistanceFn distance_function(const std::string& id) {
  if (id == "position_gap") {
    return [](int query, int key) { return static_cast<double>(std::abs(query - key)); };
  }
  if (id == "none") return [](int, int) { return 0.0; };
  throw std::invalid_argument("unknown distance function '" + id + "'");
}

ad::Var AttentionParams::eta() const { return ad::softplus(eta_raw.var()); }

PredictionOutput make_prediction(const Eigen::VectorXd& mastery, const Eigen::VectorXd& relevance_topk,
                                 double theta) {
  if (mastery.size() != relevance_topk.size()) throw std::invalid_argument("make_prediction: size mismatch");
  PredictionOutput out;
  out.mastery = mastery;
  out.relevance = relevance_topk;
  out.difficulty = theta;
  out.ability = relevance_topk.dot(mastery);
  out.y_hat = ad::sigmoid(out.ability - theta);
  for (Eigen::Index i = 0; i < relevance_topk.size(); ++i) {
    if (relevance_topk(i) > 0.0) out.selected_concepts.push_back(static_cast<int>(i));
  }
  return out;
}

ad::Var encode_chosen(const ad::Var& chosen, const std::vector<bool>& correct, const nn::Mlp& f_correct,
                      const nn::Mlp& f_wrong) {
  if (static_cast<std::size_t>(chosen.rows()) != correct.size()) {
    throw std::invalid_argument("encode_chosen: one correctness flag per row is required");
  }
  std::vector<int> right;
  std::vector<int> wrong;
  for (std::size_t t = 0; t < correct.size(); ++t) (correct[t] ? right : wrong).push_back(static_cast<int>(t));
  std::vector<ad::Var> parts;
  std::vector<std::vector<int>> dest;
  if (!right.empty()) {
    parts.push_back(f_correct(ad::gather_rows(chosen, right)));
    dest.push_back(right);
  }
  if (!wrong.empty()) {
    parts.push_back(f_wrong(ad::gather_rows(chosen, wrong)));
    dest.push_back(wrong);
  }
  if (parts.empty()) return ad::constant(Eigen::MatrixXd::Zero(0, f_correct.out_features()));
  return ad::merge_rows(parts, dest, chosen.rows());
}

ad::Var encode_unchosen(const ad::Var& unchosen_mean, const nn::Mlp& f_unchosen) {
  return f_unchosen(unchosen_mean);
}

ad::Var disentangle(const ad::Var& chosen_enc, const ad::Var& unchosen_enc, double lambda) {
  if (lambda == 0.0) return chosen_enc;
  return ad::sub(chosen_enc, ad::scale(unchosen_enc, lambda));
}

Eigen::VectorXd maxout(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("maxout of an empty vector");
  Eigen::MatrixXd row(1, static_cast<Eigen::Index>(scores.size()));
  for (std::size_t i = 0; i < scores.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = scores[i];
  ad::Mask mask = ad::Mask::Constant(1, row.cols(), true);
  return ad::maxout_rows(ad::constant(row), mask).value().row(0).transpose();
}

namespace {

ad::Mask causal_mask(std::span<const int> qpos, std::span<const int> kpos) {
  ad::Mask m(static_cast<Eigen::Index>(qpos.size()), static_cast<Eigen::Index>(kpos.size()));
  for (std::size_t i = 0; i < qpos.size(); ++i) {
    for (std::size_t j = 0; j < kpos.size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = kpos[j] <= qpos[i];
    }
  }
  return m;
}

}  // namespace

ad::Var attention_max(const ad::Var& q, const ad::Var& k, const ad::Var& v, std::span<const int> query_positions,
                      std::span<const int> key_positions, const ad::Var& eta, const DistanceFn& distance,
                      ad::Var* weights) {
  return attention_max(q, k, v, query_positions, key_positions, eta, distance,
                       causal_mask(query_positions, key_positions), weights);
}

ad::Var attention_max(const ad::Var& q, const ad::Var& k, const ad::Var& v, std::span<const int> query_positions,
                      std::span<const int> key_positions, const ad::Var& eta, const DistanceFn& distance,
                      const ad::Mask& mask, ad::Var* weights) {
  if (q.cols() != k.cols()) throw std::invalid_argument("attention: query and key widths differ");
  if (k.rows() != v.rows()) throw std::invalid_argument("attention: key and value counts differ");
  if (static_cast<Eigen::Index>(query_positions.size()) != q.rows() ||
      static_cast<Eigen::Index>(key_positions.size()) != k.rows()) {
    throw std::invalid_argument("attention: one position per row is required");
  }
  if (mask.rows() != q.rows() || mask.cols() != k.rows()) throw std::invalid_argument("attention: mask shape");
  if (eta.rows() != 1 || eta.cols() != 1) throw std::invalid_argument("attention: eta must be a scalar");

  Eigen::MatrixXd gap(q.rows(), k.rows());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    for (Eigen::Index j = 0; j < k.rows(); ++j) {
      gap(i, j) = -distance(query_positions[static_cast<std::size_t>(i)], key_positions[static_cast<std::size_t>(j)]);
    }
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  ad::Var scores = ad::scale(ad::matmul_nt(q, k), inv_sqrt);
  ad::Var decay = ad::exp(ad::mul_scalar(ad::constant(std::move(gap)), eta));
  ad::Var w = ad::maxout_rows(ad::mul(scores, decay), mask);
  if (weights) *weights = w;
  return ad::matmul(w, v);
}

ad::Var multi_head_attention(const ad::Var& q, const ad::Var& k, const ad::Var& v,
                             std::span<const int> query_positions, std::span<const int> key_positions,
                             const AttentionParams& params) {
  const ad::Var eta = params.eta();
  if (params.heads <= 1) {
    return attention_max(q, k, v, query_positions, key_positions, eta, params.distance);
  }
  if (q.cols() % params.heads != 0 || v.cols() % params.heads != 0) {
    throw std::invalid_argument("attention: width not divisible by head count");
  }
  const auto dk = q.cols() / params.heads;
  const auto dv = v.cols() / params.heads;
  const ad::Mask mask = causal_mask(query_positions, key_positions);
  std::vector<ad::Var> heads;
  for (int h = 0; h < params.heads; ++h) {
    heads.push_back(attention_max(ad::slice_cols(q, h * dk, dk), ad::slice_cols(k, h * dk, dk),
                                  ad::slice_cols(v, h * dv, dv), query_positions, key_positions, eta,
                                  params.distance, mask));
  }
  return ad::concat_cols(heads);
}

ad::Var project_attention(const AttentionProjection& proj, const ad::Var& query_src, const ad::Var& key_src,
                          const ad::Var& value_src, std::span<const int> query_positions,
                          std::span<const int> key_positions, const AttentionParams& params) {
  return multi_head_attention(proj.query(query_src), proj.key(key_src), proj.value(value_src), query_positions,
                              key_positions, params);
}

RetrieverOutput knowledge_retriever(const ad::Var& questions, const ad::Var& responses,
                                    std::span<const int> positions, const AttentionParams& params) {
  if (questions.rows() != responses.rows()) throw std::invalid_argument("retriever: sequence length mismatch");
  RetrieverOutput out;
  out.context_questions =
      project_attention(params.questions, questions, questions, questions, positions, positions, params);
  out.context_responses =
      project_attention(params.responses, responses, responses, responses, positions, positions, params);
  out.knowledge = project_attention(params.knowledge, out.context_questions, out.context_questions,
                                    out.context_responses, positions, positions, params);
  return out;
}

ad::Var concept_states(const ad::Var& knowledge_rows, const ad::Var& concept_embeddings, const nn::Mlp& f_concept) {
  return f_concept(ad::pair_concat(knowledge_rows, concept_embeddings));
}

ad::Var gnn_propagate(const ad::Var& states, const ad::Var& normalized_adjacency,
                      const std::vector<nn::Linear>& layers, int concept_count, bool sigmoid_final_layer) {
  if (layers.empty()) throw std::invalid_argument("gnn: at least one layer is required");
  if (normalized_adjacency.rows() != states.rows() || normalized_adjacency.cols() != concept_count) {
    throw std::invalid_argument("gnn: adjacency shape does not match the concept states");
  }
  ad::Var x = states;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].weight.value().rows() != x.cols()) {
      throw std::invalid_argument("gnn: layer " + std::to_string(l) + " expects width " +
                                  std::to_string(layers[l].weight.value().rows()) + ", got " +
                                  std::to_string(x.cols()));
    }
    x = ad::block_matmul(normalized_adjacency, layers[l](x), concept_count);
    const bool last = l + 1 == layers.size();
    if (!last) {
      x = ad::relu(x);
    } else if (sigmoid_final_layer) {
      x = ad::sigmoid(x);
    }
  }
  if (x.cols() != 1) throw std::invalid_argument("gnn: the final layer must have width 1");
  return x;
}

ad::Var relevance_logits(const ad::Var& target_questions, const ad::Var& concept_embeddings,
                         const ad::Parameter& w_r) {
  return ad::matmul_nt(ad::matmul(target_questions, w_r.var()), concept_embeddings);
}

ad::Var question_difficulty(const ad::Var& target_questions, const nn::Mlp& f_difficulty) {
  return ad::sigmoid(f_difficulty(target_questions));
}

Eigen::VectorXd topk_relevance(const Eigen::VectorXd& relevance, int k) {
  if (k < 1 || k > relevance.size()) throw std::invalid_argument("top-k: k must satisfy 1 <= k <= |C|");
  return ad::topk_softmax_rows(ad::constant(relevance.transpose()), k).value().row(0).transpose();
}

// ---- Model ---------------------------------------------------------------

namespace {

ad::Matrix embedding_init(int rows, int cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double a = std::sqrt(3.0 / cols);
  ad::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = a * u(rng);
  return m;
}

AttentionProjection make_projection(const std::string& name, int d, std::mt19937_64& rng) {
  return {nn::Linear(name + ".query", d, d, rng, false), nn::Linear(name + ".key", d, d, rng, false),
          nn::Linear(name + ".value", d, d, rng, false)};
}

}  // namespace

Model::Model(ModelConfig config, Vocabulary vocab, ConceptMap map, std::uint64_t seed)
    : config_(std::move(config)), vocab_(std::move(vocab)), map_(std::move(map)) {
  const int c = vocab_.concept_count;
  validate(config_, c);
  if (map_.concept_count() != c) throw std::invalid_argument("concept map size differs from the vocabulary");
  const int nq = vocab_.question_count();
  for (int q = 0; q < nq; ++q) {
    if (vocab_.option_counts[q] < 2) throw std::invalid_argument("every question needs at least two options");
    for (int k : vocab_.question_concepts[q]) {
      if (k < 0 || k >= c) throw std::invalid_argument("question concept out of range");
    }
  }
  option_offsets_.assign(static_cast<std::size_t>(nq) + 1, 0);
  for (int q = 0; q < nq; ++q) option_offsets_[q + 1] = option_offsets_[q] + vocab_.option_counts[q];

  std::mt19937_64 rng(seed);
  const int dq = config_.d_q;
  const int dc = config_.d_c;
  const int dg = config_.d_g;
  question_emb = ad::Parameter("question_emb", embedding_init(nq, dq, rng));
  option_emb = ad::Parameter("option_emb", embedding_init(option_offsets_.back(), dq, rng));
  concept_emb = ad::Parameter("concept_emb", embedding_init(c, dc, rng));
  response_emb = ad::Parameter("response_emb", embedding_init(2, dq, rng));
  f_correct = nn::Mlp("f_correct", dq, dq, dq, rng);
  f_wrong = nn::Mlp("f_wrong", dq, dq, dq, rng);
  f_unchosen = nn::Mlp("f_unchosen", dq, dq, dq, rng);
  attention_.questions = make_projection("attention.questions", dq, rng);
  attention_.responses = make_projection("attention.responses", dq, rng);
  attention_.knowledge = make_projection("attention.knowledge", dq, rng);
  // Inverse softplus of the initial decay rate.
  attention_.eta_raw = ad::Parameter(
      "attention.eta_raw", ad::Matrix::Constant(1, 1, std::log(std::expm1(config_.eta_init))));
  attention_.heads = config_.heads;
  attention_.distance = distance_function(config_.distance);
  f_concept = nn::Mlp("f_concept", dq + dc, dg, dg, rng);
  f_intensity = nn::Mlp("f_intensity", dq + 2 * dc, dq, 1, rng);
  for (int l = 0; l < config_.gnn_layers; ++l) {
    const int out = l + 1 == config_.gnn_layers ? 1 : dg;
    gnn.emplace_back("gnn." + std::to_string(l), dg, out, rng, false);
  }
  map_head = nn::Linear("map_head", dg, 1, rng, false);
  w_r = ad::Parameter("w_r", nn::glorot(dq, dc, rng));
  f_difficulty = nn::Mlp("f_difficulty", dq, dq, 1, rng);
}

int Model::effective_k() const {
  return config_.ablation == Ablation::no_topk ? vocab_.concept_count : config_.top_k;
}

std::vector<ad::Parameter*> Model::parameters() {
  std::vector<ad::Parameter*> out{&question_emb, &option_emb, &concept_emb, &response_emb};
  f_correct.collect(out);
  f_wrong.collect(out);
  f_unchosen.collect(out);
  for (auto* proj : {&attention_.questions, &attention_.responses, &attention_.knowledge}) {
    proj->query.collect(out);
    proj->key.collect(out);
    proj->value.collect(out);
  }
  out.push_back(&attention_.eta_raw);
  f_concept.collect(out);
  f_intensity.collect(out);
  for (auto& layer : gnn) layer.collect(out);
  map_head.collect(out);
  out.push_back(&w_r);
  f_difficulty.collect(out);
  return out;
}

std::vector<const ad::Parameter*> Model::parameters() const {
  auto mutable_params = const_cast<Model*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

ad::Parameter* Model::find_parameter(const std::string& name) {
  for (auto* p : parameters()) {
    if (p->name() == name) return p;
  }
  return nullptr;
}

std::vector<Eigen::MatrixXd> Model::snapshot() const {
  std::vector<Eigen::MatrixXd> out;
  for (const auto* p : parameters()) out.push_back(p->value());
  return out;
}

void Model::restore(const std::vector<Eigen::MatrixXd>& values) {
  auto params = parameters();
  if (values.size() != params.size()) throw std::invalid_argument("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].rows() != params[i]->value().rows() || values[i].cols() != params[i]->value().cols()) {
      throw std::invalid_argument("restore: shape mismatch for " + params[i]->name());
    }
    params[i]->value() = values[i];
  }
}

void Model::check_question(int q) const {
  if (q < 0 || q >= vocab_.question_count()) {
    throw std::out_of_range("question index " + std::to_string(q) + " is not in the vocabulary");
  }
}

int Model::option_row(int question, int option) const {
  check_question(question);
  if (option < 0 || option >= vocab_.option_counts[question]) {
    throw std::out_of_range("option " + std::to_string(option) + " out of range for question " +
                            std::to_string(question));
  }
  return option_offsets_[question] + option;
}

ad::Var Model::question_embeddings(std::span<const int> questions) const {
  for (int q : questions) check_question(q);
  return ad::gather_rows(question_emb.var(), questions);
}

ad::Var Model::encode_responses(std::span<const InteractionRecord> records) const {
  std::vector<int> qs;
  std::vector<bool> correct;
  for (const auto& r : records) {
    qs.push_back(r.question);
    correct.push_back(r.correct);
  }
  ad::Var chosen;
  if (config_.ablation == Ablation::no_opt) {
    std::vector<int> ys;
    for (const auto& r : records) ys.push_back(r.correct ? 1 : 0);
    chosen = ad::add(question_embeddings(qs), ad::gather_rows(response_emb.var(), ys));
  } else {
    std::vector<int> rows;
    for (const auto& r : records) rows.push_back(option_row(r.question, r.chosen_option));
    chosen = ad::gather_rows(option_emb.var(), rows);
  }
  ad::Var enc = encode_chosen(chosen, correct, f_correct, f_wrong);
  const bool unchosen_path =
      config_.ablation != Ablation::no_opt && config_.ablation != Ablation::no_unc && config_.lambda != 0.0;
  if (!unchosen_path) return enc;
  std::vector<std::vector<int>> groups;
  for (const auto& r : records) {
    std::vector<int> g;
    for (int o = 0; o < vocab_.option_counts[r.question]; ++o) {
      if (o != r.chosen_option) g.push_back(option_offsets_[r.question] + o);
    }
    groups.push_back(std::move(g));
  }
  ad::Var unchosen = encode_unchosen(ad::segment_mean(option_emb.var(), groups), f_unchosen);
  return disentangle(enc, unchosen, config_.lambda);
}

RetrieverOutput Model::retrieve(std::span<const InteractionRecord> records) const {
  if (records.empty()) throw std::invalid_argument("retrieve: empty sequence");
  std::vector<int> qs;
  std::vector<int> pos;
  for (const auto& r : records) {
    qs.push_back(r.question);
    pos.push_back(r.position);
  }
  return knowledge_retriever(question_embeddings(qs), encode_responses(records), pos, attention_);
}

TargetContext Model::target_context(std::span<const int> targets) const {
  TargetContext ctx;
  ctx.targets.assign(targets.begin(), targets.end());
  ctx.embedding = question_embeddings(targets);
  const ad::Var concepts = concept_emb.var();
  if (config_.ablation != Ablation::no_map) {
    ctx.adjacency = ad::normalize_adjacency_blocks(
        question_edge_weights(ctx.embedding, concepts, map_, f_intensity), vocab_.concept_count);
  }
  ctx.relevance_logits = relevance_logits(ctx.embedding, concepts, w_r);
  ctx.relevance = ad::topk_softmax_rows(ad::sigmoid(ctx.relevance_logits), effective_k());
  ctx.difficulty = question_difficulty(ctx.embedding, f_difficulty);
  return ctx;
}

Readout Model::readout(const ad::Var& knowledge_rows, const TargetContext& context) const {
  if (knowledge_rows.rows() != static_cast<Eigen::Index>(context.targets.size())) {
    throw std::invalid_argument("readout: one knowledge row per target is required");
  }
  const int c = vocab_.concept_count;
  const auto blocks = knowledge_rows.rows();
  Readout out;
  out.states = concept_states(knowledge_rows, concept_emb.var(), f_concept);
  ad::Var column = config_.ablation == Ablation::no_map
                       ? map_head(out.states)
                       : gnn_propagate(out.states, context.adjacency, gnn, c, config_.sigmoid_final_layer);
  out.mastery = ad::unstack(column, blocks, c);
  out.ability = ad::row_sum(ad::mul(context.relevance, out.mastery));
  out.logits = ad::sub(out.ability, context.difficulty);
  return out;
}

SequenceForward Model::forward_sequence(std::span<const InteractionRecord> records) const {
  if (records.size() < 2) throw std::invalid_argument("forward_sequence: at least two interactions are required");
  SequenceForward out;
  out.retrieval = retrieve(records);
  const auto t = static_cast<Eigen::Index>(records.size());
  std::vector<int> targets;
  for (Eigen::Index i = 1; i < t; ++i) {
    targets.push_back(records[static_cast<std::size_t>(i)].question);
    out.target_positions.push_back(static_cast<int>(i));
  }
  out.context = target_context(targets);
  out.readout = readout(ad::slice_rows(out.retrieval.knowledge, 0, t - 1), out.context);
  return out;
}

ad::Var Model::final_knowledge(std::span<const InteractionRecord> records) const {
  RetrieverOutput r = retrieve(records);
  return ad::slice_rows(r.knowledge, r.knowledge.rows() - 1, 1);
}

PredictionOutput Model::predict(std::span<const InteractionRecord> prefix, int target_question) const {
  ad::NoGradGuard guard;
  if (prefix.empty()) throw std::invalid_argument("predict: the prefix must contain at least one interaction");
  check_question(target_question);
  const ad::Var h = final_knowledge(prefix);
  const int target[] = {target_question};
  const TargetContext ctx = target_context(target);
  return outputs_from(ctx, readout(h, ctx), h).front();
}

std::vector<PredictionOutput> Model::predict_sequence(std::span<const InteractionRecord> records) const {
  ad::NoGradGuard guard;
  if (records.size() < 2) return {};
  const SequenceForward f = forward_sequence(records);
  return outputs_from(f.context, f.readout,
                      ad::slice_rows(f.retrieval.knowledge, 0, static_cast<Eigen::Index>(records.size()) - 1));
}

std::vector<PredictionOutput> outputs_from(const TargetContext& context, const Readout& readout,
                                           const ad::Var& knowledge_rows) {
  std::vector<PredictionOutput> out;
  const auto& rel = context.relevance.value();
  const auto& logits = context.relevance_logits.value();
  for (Eigen::Index b = 0; b < rel.rows(); ++b) {
    PredictionOutput p;
    p.relevance = rel.row(b).transpose();
    p.raw_relevance = logits.row(b).transpose().unaryExpr([](double x) { return ad::sigmoid(x); });
    p.mastery = readout.mastery.value().row(b).transpose();
    p.latent = knowledge_rows.value().row(b).transpose();
    p.ability = readout.ability.value()(b, 0);
    p.difficulty = context.difficulty.value()(b, 0);
    p.y_hat = ad::sigmoid(p.ability - p.difficulty);
    for (Eigen::Index i = 0; i < p.relevance.size(); ++i) {
      if (p.relevance(i) > 0.0) p.selected_concepts.push_back(static_cast<int>(i));
    }
    out.push_back(std::move(p));
  }
  return out;
}

// ---- InferenceSession ----------------------------------------------------

InferenceSession::InferenceSession(const Model& model) : model_(&model) {}

void InferenceSession::append_row(std::vector<RowMajor>& blocks, Eigen::Index row_index,
                                  const Eigen::MatrixXd& row) {
  if (row_index % kBlockRows == 0) blocks.emplace_back(kBlockRows, row.cols());
  blocks.back().row(row_index % kBlockRows) = row.row(0);
}

// Single-query attention straight over the cached rows, with the arithmetic
// of attention_max: (q.k / sqrt(d_k)) * exp(-eta * d) and maxout weights.
Eigen::MatrixXd InferenceSession::attend(const AttentionProjection& proj, Stream& stream, const ad::Var& query_src,
                                         const ad::Var& key_src, const ad::Var& value_src) {
  const auto n = static_cast<Eigen::Index>(positions_.size());
  append_row(stream.keys, n - 1, proj.key(key_src).value());
  append_row(stream.values, n - 1, proj.value(value_src).value());
  const Eigen::MatrixXd q = proj.query(query_src).value();
  const auto& params = model_->attention();
  const int heads = std::max(1, params.heads);
  const auto width = stream.values.front().cols();
  if (q.cols() % heads != 0 || width % heads != 0) {
    throw std::invalid_argument("attention: width not divisible by head count");
  }
  const double eta = params.eta().item();
  const int now = positions_.back();
  Eigen::VectorXd decay(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    decay(j) = std::exp(-params.distance(now, positions_[static_cast<std::size_t>(j)]) * eta);
  }
  const auto dk = q.cols() / heads;
  const auto dv = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  Eigen::MatrixXd out(1, width);
  Eigen::VectorXd s(n);
  for (int h = 0; h < heads; ++h) {
    const auto qh = q.middleCols(h * dk, dk).transpose();
    for (std::size_t b = 0; b < stream.keys.size(); ++b) {
      const auto start = static_cast<Eigen::Index>(b) * kBlockRows;
      const auto rows = std::min(kBlockRows, n - start);
      s.segment(start, rows) = stream.keys[b].topRows(rows).middleCols(h * dk, dk) * qh;
    }
    s = (s * inv_sqrt).cwiseProduct(decay);
    const Eigen::VectorXd w = (s.array() - s.maxCoeff()).exp();
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(dv);
    for (std::size_t b = 0; b < stream.values.size(); ++b) {
      const auto start = static_cast<Eigen::Index>(b) * kBlockRows;
      const auto rows = std::min(kBlockRows, n - start);
      acc += w.segment(start, rows).transpose() * stream.values[b].topRows(rows).middleCols(h * dv, dv);
    }
    out.middleCols(h * dv, dv) = acc;
  }
  return out;
}

void InferenceSession::append(const InteractionRecord& record) {
  ad::NoGradGuard guard;
  if (!positions_.empty() && record.position <= positions_.back()) {
    throw std::invalid_argument("session: positions must increase");
  }
  const int q[] = {record.question};
  const ad::Var question = model_->question_embeddings(q);
  const ad::Var response = model_->encode_responses(std::span<const InteractionRecord>(&record, 1));
  positions_.push_back(record.position);
  const auto& att = model_->attention();
  const ad::Var q_hat = ad::constant(attend(att.questions, questions_, question, question, question));
  const ad::Var d_hat = ad::constant(attend(att.responses, responses_, response, response, response));
  latest_h_ = attend(att.knowledge, knowledge_, q_hat, q_hat, d_hat);
}

PredictionOutput InferenceSession::predict(int target_question) {
  ad::NoGradGuard guard;
  if (positions_.empty()) throw std::logic_error("session: predict before any interaction");
  const TargetContext& context = context_for(target_question);
  const ad::Var h = ad::constant(latest_h_);
  return outputs_from(context, model_->readout(h, context), h).front();
}

void InferenceSession::prepare(int target_question) {
  ad::NoGradGuard guard;
  context_for(target_question);
}

const TargetContext& InferenceSession::context_for(int target_question) {
  auto it = target_cache_.find(target_question);
  if (it == target_cache_.end()) {
    const int t[] = {target_question};
    it = target_cache_.emplace(target_question, model_->target_context(t)).first;
  }
  return it->second;
}

PredictionOutput InferenceSession::step(const InteractionRecord& record, int target_question) {
  append(record);
  return predict(target_question);
}

}  // namespace crkt
