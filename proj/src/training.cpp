#include "crkt/training.hpp"

#include "crkt/checkpoint.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace crkt {

double bce_probabilities(std::span<const double> y_hat, std::span<const double> labels) {
  if (y_hat.size() != labels.size()) throw std::invalid_argument("bce: size mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < y_hat.size(); ++i) {
    if (!std::isfinite(y_hat[i]) || !std::isfinite(labels[i])) throw std::invalid_argument("bce: non-finite input");
    const double p = std::clamp(y_hat[i], 1e-7, 1.0 - 1e-7);
    loss -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  return loss;
}

ad::Var loss_kt(const ad::Var& logits, const ad::Matrix& labels) {
  if (!logits.value().allFinite()) throw TrainingError("loss_kt: non-finite logits");
  return ad::bce_with_logits(logits, labels);
}

double topk_positive_weight(int concept_count, int tagged, int k) {
  if (k < 1 || tagged < 0 || tagged > concept_count) throw std::invalid_argument("topk weight: invalid sizes");
  return static_cast<double>(concept_count - tagged) / static_cast<double>(k);
}

ad::Var loss_topk(const ad::Var& relevance_logits, const std::vector<std::vector<int>>& tags, int k) {
  const auto rows = relevance_logits.rows();
  const auto c = relevance_logits.cols();
  if (static_cast<Eigen::Index>(tags.size()) != rows) throw std::invalid_argument("loss_topk: one tag set per row");
  ad::Matrix labels = ad::Matrix::Zero(rows, c);
  ad::Matrix weight(rows, c);
  for (Eigen::Index b = 0; b < rows; ++b) {
    for (int i : tags[static_cast<std::size_t>(b)]) labels(b, i) = 1.0;
    weight.row(b).setConstant(
        topk_positive_weight(static_cast<int>(c), static_cast<int>(tags[static_cast<std::size_t>(b)].size()), k));
  }
  return ad::bce_with_logits(relevance_logits, labels, weight);
}

ad::Var loss_cl(const ad::Var& h, const ad::Var& h_pos, const std::vector<ad::Var>& negatives) {
  if (negatives.empty()) throw std::invalid_argument("loss_cl: at least one negative is required");
  std::vector<ad::Var> others{h_pos};
  others.insert(others.end(), negatives.begin(), negatives.end());
  const ad::Var stacked = ad::concat_rows(others);
  if (h.rows() != 1 || stacked.cols() != h.cols()) throw std::invalid_argument("loss_cl: shape mismatch");
  if (h.value().norm() == 0.0 || (stacked.value().rowwise().norm().array() == 0.0).any()) {
    throw std::invalid_argument("loss_cl: zero-norm knowledge state");
  }
  const ad::Var cos = ad::matmul_nt(ad::normalize_rows(h), ad::normalize_rows(stacked));
  return ad::neg_log_softmax_first(cos);
}

double total_loss(double kt, double topk, double cl, const LossConfig& config) {
  if (!std::isfinite(kt) || !std::isfinite(topk) || !std::isfinite(cl)) {
    throw std::invalid_argument("total_loss: non-finite component");
  }
  return kt + config.alpha * topk + config.beta * cl;
}

Adam::Adam(std::vector<ad::Parameter*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  for (auto* p : params_) {
    m_.push_back(ad::Matrix::Zero(p->value().rows(), p->value().cols()));
    v_.push_back(ad::Matrix::Zero(p->value().rows(), p->value().cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, t_);
  const double c2 = 1.0 - std::pow(b2_, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto* p = params_[i];
    const ad::Matrix& g = p->grad();
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
    p->value().array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    p->zero_grad();
  }
}

bool EarlyStopper::update(int epoch, double loss) {
  if (best_epoch_ < 0 || loss < best_loss_) {
    best_epoch_ = epoch;
    best_loss_ = loss;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

BatchLoss batch_loss(const Model& model, std::span<const AugmentedTriple> batch, const LossConfig& config) {
  BatchLoss out;
  std::vector<ad::Var> terms;
  struct ClEntry {
    ad::Var h, pos, neg;
  };
  std::vector<ClEntry> cl;
  std::size_t used = 0;
  const auto& vocab = model.vocabulary();
  for (const auto& triple : batch) {
    const auto& xs = triple.original.interactions;
    if (xs.size() < 2) continue;
    ++used;
    const SequenceForward f = model.forward_sequence(xs);
    ad::Matrix labels(static_cast<Eigen::Index>(xs.size() - 1), 1);
    std::vector<std::vector<int>> tags;
    for (std::size_t t = 1; t < xs.size(); ++t) {
      labels(static_cast<Eigen::Index>(t - 1), 0) = xs[t].correct ? 1.0 : 0.0;
      tags.push_back(vocab.question_concepts[xs[t].question]);
    }
    out.targets += xs.size() - 1;
    const ad::Var kt = loss_kt(f.readout.logits, labels);
    out.kt += kt.item();
    terms.push_back(kt);
    if (config.alpha > 0.0) {
      const ad::Var tk = loss_topk(f.context.relevance_logits, tags, model.effective_k());
      out.topk += tk.item();
      terms.push_back(ad::scale(tk, config.alpha));
    }
    if (config.beta > 0.0 && triple.has_base) {
      const auto& k = f.retrieval.knowledge;
      cl.push_back({ad::slice_rows(k, k.rows() - 1, 1), model.final_knowledge(triple.positive.interactions),
                    model.final_knowledge(triple.negative.interactions)});
    }
  }
  for (std::size_t s = 0; s < cl.size(); ++s) {
    std::vector<ad::Var> negatives{cl[s].neg};
    for (std::size_t j = 0; j < cl.size(); ++j) {
      if (j != s) negatives.push_back(cl[j].neg);
    }
    const ad::Var l = loss_cl(cl[s].h, cl[s].pos, negatives);
    out.cl += l.item();
    terms.push_back(ad::scale(l, config.beta));
  }
  if (used == 0) {
    out.total = ad::scalar(0.0);
    return out;
  }
  ad::Var sum = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) sum = ad::add(sum, terms[i]);
  const double inv = 1.0 / static_cast<double>(used);
  out.total = ad::scale(sum, inv);
  out.kt *= inv;
  out.topk *= inv;
  out.cl *= inv;
  return out;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,train_loss,val_loss,val_acc,val_auc\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_acc << ',';
    if (std::isnan(r.val_auc)) {
      os << "nan";
    } else {
      os << r.val_auc;
    }
    os << '\n';
  }
  return os.str();
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 step over the combined value.
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E5Bull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

void clip_gradients(const std::vector<ad::Parameter*>& params, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (auto* p : params) sq += p->grad().squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    for (auto* p : params) p->grad() *= max_norm / norm;
  }
}

}  // namespace

TrainResult train(Model& model, const DatasetBundle& train_data, const DatasetBundle& validation,
                  const RunConfig& config, const EpochCallback& on_epoch) {
  validate(config.loss);
  validate(config.train);
  const auto& tc = config.train;
  const QuestionStats stats = compute_question_stats(train_data);
  const Vocabulary& vocab = model.vocabulary();
  const DatasetBundle& val = validation.sequences.empty() ? train_data : validation;
  if (validation.sequences.empty()) spdlog::info("no validation students; early stopping monitors the training split");

  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < train_data.sequences.size(); ++i) {
    if (train_data.sequences[i].interactions.size() >= 2) usable.push_back(i);
  }
  if (usable.empty()) throw TrainingError("no training sequence has two or more interactions");

  auto params = model.parameters();
  for (auto* p : params) p->zero_grad();
  Adam adam(params, tc.learning_rate);
  EarlyStopper stopper(tc.patience);
  std::vector<Eigen::MatrixXd> best = model.snapshot();
  TrainResult result;
  const bool augment = config.loss.beta > 0.0;

  for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
    const std::uint64_t aug_seed = mix(tc.seed, tc.freeze_augmentation ? 0 : static_cast<std::uint64_t>(epoch) + 1);
    std::vector<AugmentedTriple> triples;
    triples.reserve(usable.size());
    for (std::size_t i = 0; i < usable.size(); ++i) {
      const auto& seq = train_data.sequences[usable[i]];
      if (augment) {
        triples.push_back(flip_augment(seq, stats, vocab, config.loss, mix(aug_seed, i)));
      } else {
        AugmentedTriple t;
        t.original = seq;
        triples.push_back(std::move(t));
      }
    }
    std::vector<std::size_t> order(triples.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(mix(tc.seed ^ 0x5eedull, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      std::vector<AugmentedTriple> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(triples[order[i]]);
      BatchLoss bl = batch_loss(model, batch, config.loss);
      const double value = bl.total.item();
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch << ", batch " << start / tc.batch_size << ": loss_kt=" << bl.kt
            << " loss_topk=" << bl.topk << " loss_cl=" << bl.cl;
        throw TrainingError(msg.str());
      }
      bl.total.backward();
      clip_gradients(params, tc.grad_clip);
      adam.step();
      epoch_loss += value * static_cast<double>(end - start);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(order.size());
    const EvalResult ev = evaluate(model, val);
    const MetricReport m = compute_metrics(ev.targets);
    rec.val_loss = ev.kt_loss;
    rec.val_acc = m.acc;
    rec.val_auc = m.auc.value_or(std::numeric_limits<double>::quiet_NaN());
    if (!std::isfinite(rec.val_loss)) throw TrainingError("validation loss is not finite at epoch " + std::to_string(epoch));
    result.history.push_back(rec);
    spdlog::debug("epoch {} train_loss {:.5f} val_loss {:.5f} val_acc {:.4f}", epoch, rec.train_loss, rec.val_loss,
                  rec.val_acc);
    if (on_epoch) on_epoch(rec);
    if (stopper.update(epoch, rec.val_loss)) best = model.snapshot();
    if (stopper.should_stop()) {
      result.stopped_early = true;
      break;
    }
  }
  model.restore(best);
  result.best_epoch = stopper.best_epoch();
  result.best_val_loss = stopper.best_loss();
  return result;
}

std::vector<FoldResult> run_cv(const DatasetBundle& bundle, const ConceptMap& map, const RunConfig& config,
                               const CvOptions& options) {
  const SplitPlan plan = make_folds(bundle, options.folds, options.seed, config.train.validation_fraction);
  const Vocabulary vocab = Vocabulary::from_bundle(bundle);
  std::vector<int> question_ids;
  for (const auto& q : bundle.questions) question_ids.push_back(q.question_id);
  std::vector<FoldResult> results(static_cast<std::size_t>(options.folds));

  auto run_fold = [&](int f) {
    FoldResult& out = results[static_cast<std::size_t>(f)];
    out.fold = f;
    try {
      const Fold& fold = plan.folds[static_cast<std::size_t>(f)];
      const auto& tc = config.train;
      const DatasetBundle train_data = preprocess(select_students(bundle, fold.train), tc.max_len, tc.min_len);
      const DatasetBundle val_data = preprocess(select_students(bundle, fold.validation), tc.max_len, tc.min_len);
      const DatasetBundle test_data = preprocess(select_students(bundle, fold.test), tc.max_len, tc.min_len);
      RunConfig fold_config = config;
      fold_config.train.seed = mix(config.train.seed, static_cast<std::uint64_t>(f));
      Model model(config.model, vocab, map, fold_config.train.seed);
      out.training = train(model, train_data, val_data, fold_config);
      out.test = compute_metrics(evaluate(model, test_data).targets);
      if (options.checkpoint_dir) {
        CheckpointExtras extras;
        extras.question_ids = question_ids;
        save_checkpoint(model, *options.checkpoint_dir / ("fold" + std::to_string(f) + "-best"), extras);
      }
      out.ok = true;
      spdlog::info("{} fold {}: acc {:.4f} auc {:.4f} (best epoch {})", options.model_name, f, out.test.acc,
                   out.test.auc.value_or(std::numeric_limits<double>::quiet_NaN()), out.training.best_epoch);
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
      spdlog::error("{} fold {} failed: {}", options.model_name, f, e.what());
    }
  };

  const int jobs = std::max(1, std::min(options.jobs, options.folds));
  if (jobs == 1) {
    for (int f = 0; f < options.folds; ++f) run_fold(f);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) {
      pool.emplace_back([&] {
        for (int f = next++; f < options.folds; f = next++) run_fold(f);
      });
    }
    for (auto& t : pool) t.join();
  }
  return results;
}

}  // namespace crkt
