#pragma once

// Minimal tape-free reverse-mode automatic differentiation over dense
// double-precision matrices. Every op returns a Var holding its value; when
// grad mode is on and an input requires a gradient, the op also records its
// inputs and a backward closure. Var::backward() walks the recorded DAG in
// reverse topological order.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace crkt::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(const Node&)> backward;

  void accumulate(const Matrix& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }

  // Seeds d(this)/d(this) = 1 and propagates. Requires a 1x1 value.
  void backward() const;

 private:
  std::shared_ptr<Node> node_;
};

// A named trainable leaf. The underlying node persists across graphs so its
// gradient accumulates until zero_grad().
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Matrix init);

  const std::string& name() const { return name_; }
  Var var() const { return Var(node_); }
  Matrix& value() { return node_->value; }
  const Matrix& value() const { return node_->value; }
  Matrix& grad();
  void zero_grad();

 private:
  std::string name_;
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

double sigmoid(double x);
double softplus(double x);

Var constant(Matrix value);
Var scalar(double value);

Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
// Broadcast a 1xN row over every row of a.
Var add_row(const Var& a, const Var& row);
// Multiply every entry by a 1x1 Var.
Var mul_scalar(const Var& a, const Var& s);

Var relu(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var softplus(const Var& a);

Var sum(const Var& a);
Var row_sum(const Var& a);

Var slice_rows(const Var& a, Index start, Index count);
Var slice_cols(const Var& a, Index start, Index count);
Var gather_rows(const Var& table, std::span<const int> indices);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
// Row (t * b.rows() + i) of the result is [a_t, b_i].
Var pair_concat(const Var& a, const Var& b);
// Places row r of parts[p] at row destinations[p][r] of a `rows`-row matrix.
Var merge_rows(const std::vector<Var>& parts,
               const std::vector<std::vector<int>>& destinations, Index rows);
// Row g is the mean of table rows groups[g]; an empty group yields zeros.
Var segment_mean(const Var& table, const std::vector<std::vector<int>>& groups);

// Row-wise exp(x - rowmax) over unmasked entries, i.e. softmax divided by its
// maximum. Masked entries are exactly 0. Every row needs one unmasked entry.
Var maxout_rows(const Var& scores, const Mask& mask);

// Row-wise softmax over entries >= the k-th largest value of the row; other
// entries are exactly 0.
Var topk_softmax_rows(const Var& a, int k);

// Builds `blocks` stacked |C|x|C| adjacency matrices. weights is
// (blocks * edges.size()) x 1 with block-major ordering.
Var scatter_adjacency(const Var& weights, std::span<const std::pair<int, int>> edges,
                      Index blocks, Index concept_count);
// Per block: D^-1/2 (A + I) D^-1/2 with D the row sums of A + I.
Var normalize_adjacency_blocks(const Var& stacked, Index concept_count);
// Per block t: A_t * X_t where A is (B*C)xC and X is (B*C)xd.
Var block_matmul(const Var& a, const Var& x, Index concept_count);
// (B*C)x1 column into a BxC matrix (row-major unstack).
Var unstack(const Var& column, Index blocks, Index concept_count);

// Sum over entries of  w*y*softplus(-z) + (1-y)*softplus(z), the binary
// cross-entropy of sigmoid(z) against y with positive-class weight w.
Var bce_with_logits(const Var& logits, const Matrix& labels, const Matrix& positive_weight);
Var bce_with_logits(const Var& logits, const Matrix& labels);

Var normalize_rows(const Var& a);
// -x_0 + log(sum_j exp(x_j)) for a 1xN row.
Var neg_log_softmax_first(const Var& row);

}  // namespace crkt::ad
