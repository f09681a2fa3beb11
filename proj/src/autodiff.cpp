#include "crkt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace crkt::ad {
namespace {

thread_local bool g_grad_enabled = true;

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

Var make(Matrix value, std::vector<Var> inputs, std::function<void(const Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const auto& in : inputs) node->inputs.push_back(in.node());
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

Node& in(const Node& self, std::size_t i) { return *self.inputs[i]; }

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (!requires_grad) return;
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

double Var::item() const {
  require(rows() == 1 && cols() == 1, "item() requires a 1x1 value");
  return node_->value(0, 0);
}

void Var::backward() const {
  require(rows() == 1 && cols() == 1, "backward() requires a scalar root");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

Parameter::Parameter(std::string name, Matrix init) : name_(std::move(name)) {
  node_ = std::make_shared<Node>();
  node_->value = std::move(init);
  node_->requires_grad = true;
}

Matrix& Parameter::grad() {
  if (node_->grad.size() == 0) node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
  return node_->grad;
}

void Parameter::zero_grad() { node_->grad.resize(0, 0); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

Var constant(Matrix value) { return make(std::move(value), {}, nullptr); }

Var scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  return make(a.value() * b.value(), {a, b}, [](const Node& self) {
    Node& a = in(self, 0);
    Node& b = in(self, 1);
    if (a.requires_grad) a.accumulate(self.grad * b.value.transpose());
    if (b.requires_grad) b.accumulate(a.value.transpose() * self.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  return make(a.value() * b.value().transpose(), {a, b}, [](const Node& self) {
    Node& a = in(self, 0);
    Node& b = in(self, 1);
    if (a.requires_grad) a.accumulate(self.grad * b.value);
    if (b.requires_grad) b.accumulate(self.grad.transpose() * a.value);
  });
}

Var transpose(const Var& a) {
  return make(a.value().transpose(), {a}, [](const Node& self) {
    in(self, 0).accumulate(self.grad.transpose());
  });
}

Var add(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return make(a.value() + b.value(), {a, b}, [](const Node& self) {
    in(self, 0).accumulate(self.grad);
    in(self, 1).accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return make(a.value() - b.value(), {a, b}, [](const Node& self) {
    in(self, 0).accumulate(self.grad);
    in(self, 1).accumulate(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  return make(a.value().cwiseProduct(b.value()), {a, b}, [](const Node& self) {
    Node& a = in(self, 0);
    Node& b = in(self, 1);
    if (a.requires_grad) a.accumulate(self.grad.cwiseProduct(b.value));
    if (b.requires_grad) b.accumulate(self.grad.cwiseProduct(a.value));
  });
}

Var scale(const Var& a, double factor) {
  return make(a.value() * factor, {a}, [factor](const Node& self) {
    in(self, 0).accumulate(self.grad * factor);
  });
}

Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape mismatch");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make(std::move(out), {a, row}, [](const Node& self) {
    in(self, 0).accumulate(self.grad);
    Node& r = in(self, 1);
    if (r.requires_grad) r.accumulate(self.grad.colwise().sum());
  });
}

Var mul_scalar(const Var& a, const Var& s) {
  require(s.rows() == 1 && s.cols() == 1, "mul_scalar: scalar must be 1x1");
  return make(a.value() * s.item(), {a, s}, [](const Node& self) {
    Node& a = in(self, 0);
    Node& s = in(self, 1);
    if (a.requires_grad) a.accumulate(self.grad * s.value(0, 0));
    if (s.requires_grad) s.accumulate(Matrix::Constant(1, 1, self.grad.cwiseProduct(a.value).sum()));
  });
}

Var relu(const Var& a) {
  return make(a.value().cwiseMax(0.0), {a}, [](const Node& self) {
    Node& a = in(self, 0);
    a.accumulate((a.value.array() > 0.0).select(self.grad, 0.0));
  });
}

Var sigmoid(const Var& a) {
  Matrix out = a.value().unaryExpr([](double x) { return sigmoid(x); });
  return make(std::move(out), {a}, [](const Node& self) {
    const auto& y = self.value.array();
    in(self, 0).accumulate((self.grad.array() * y * (1.0 - y)).matrix());
  });
}

Var exp(const Var& a) {
  return make(a.value().array().exp().matrix(), {a}, [](const Node& self) {
    in(self, 0).accumulate(self.grad.cwiseProduct(self.value));
  });
}

Var softplus(const Var& a) {
  Matrix out = a.value().unaryExpr([](double x) { return softplus(x); });
  return make(std::move(out), {a}, [](const Node& self) {
    Node& a = in(self, 0);
    Matrix s = a.value.unaryExpr([](double x) { return sigmoid(x); });
    a.accumulate(self.grad.cwiseProduct(s));
  });
}

Var sum(const Var& a) {
  return make(Matrix::Constant(1, 1, a.value().sum()), {a}, [](const Node& self) {
    Node& a = in(self, 0);
    a.accumulate(Matrix::Constant(a.value.rows(), a.value.cols(), self.grad(0, 0)));
  });
}

Var row_sum(const Var& a) {
  return make(a.value().rowwise().sum(), {a}, [](const Node& self) {
    Node& a = in(self, 0);
    a.accumulate(self.grad.replicate(1, a.value.cols()));
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  return make(a.value().middleRows(start, count), {a}, [start, count](const Node& self) {
    Node& a = in(self, 0);
    Matrix g = Matrix::Zero(a.value.rows(), a.value.cols());
    g.middleRows(start, count) = self.grad;
    a.accumulate(g);
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  return make(a.value().middleCols(start, count), {a}, [start, count](const Node& self) {
    Node& a = in(self, 0);
    Matrix g = Matrix::Zero(a.value.rows(), a.value.cols());
    g.middleCols(start, count) = self.grad;
    a.accumulate(g);
  });
}

Var gather_rows(const Var& table, std::span<const int> indices) {
  Matrix out(static_cast<Index>(indices.size()), table.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    require(indices[r] >= 0 && indices[r] < table.rows(), "gather_rows: index out of range");
    out.row(static_cast<Index>(r)) = table.value().row(indices[r]);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return make(std::move(out), {table}, [idx = std::move(idx)](const Node& self) {
    Node& t = in(self, 0);
    Matrix g = Matrix::Zero(t.value.rows(), t.value.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) g.row(idx[r]) += self.grad.row(static_cast<Index>(r));
    t.accumulate(g);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  std::vector<Index> widths;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row mismatch");
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return make(std::move(out), parts, [widths = std::move(widths)](const Node& self) {
    Index offset = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      in(self, i).accumulate(self.grad.middleCols(offset, widths[i]));
      offset += widths[i];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  std::vector<Index> heights;
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows: column mismatch");
    heights.push_back(p.rows());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  return make(std::move(out), parts, [heights = std::move(heights)](const Node& self) {
    Index offset = 0;
    for (std::size_t i = 0; i < heights.size(); ++i) {
      in(self, i).accumulate(self.grad.middleRows(offset, heights[i]));
      offset += heights[i];
    }
  });
}

Var pair_concat(const Var& a, const Var& b) {
  const Index m = a.rows();
  const Index n = b.rows();
  const Index p = a.cols();
  const Index q = b.cols();
  Matrix out(m * n, p + q);
  for (Index t = 0; t < m; ++t) {
    for (Index i = 0; i < n; ++i) {
      out.block(t * n + i, 0, 1, p) = a.value().row(t);
      out.block(t * n + i, p, 1, q) = b.value().row(i);
    }
  }
  return make(std::move(out), {a, b}, [m, n, p, q](const Node& self) {
    Node& a = in(self, 0);
    Node& b = in(self, 1);
    if (a.requires_grad) {
      Matrix g = Matrix::Zero(m, p);
      for (Index t = 0; t < m; ++t) g.row(t) = self.grad.block(t * n, 0, n, p).colwise().sum();
      a.accumulate(g);
    }
    if (b.requires_grad) {
      Matrix g = Matrix::Zero(n, q);
      for (Index t = 0; t < m; ++t) g += self.grad.block(t * n, p, n, q);
      b.accumulate(g);
    }
  });
}

Var merge_rows(const std::vector<Var>& parts, const std::vector<std::vector<int>>& destinations,
               Index rows) {
  require(parts.size() == destinations.size(), "merge_rows: parts/destinations mismatch");
  require(!parts.empty(), "merge_rows: no inputs");
  const Index cols = parts.front().cols();
  Matrix out = Matrix::Zero(rows, cols);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    require(parts[p].rows() == static_cast<Index>(destinations[p].size()), "merge_rows: row count");
    require(parts[p].cols() == cols, "merge_rows: column mismatch");
    for (std::size_t r = 0; r < destinations[p].size(); ++r) {
      out.row(destinations[p][r]) = parts[p].value().row(static_cast<Index>(r));
    }
  }
  return make(std::move(out), parts, [destinations](const Node& self) {
    for (std::size_t p = 0; p < destinations.size(); ++p) {
      Node& part = in(self, p);
      if (!part.requires_grad) continue;
      Matrix g(static_cast<Index>(destinations[p].size()), self.grad.cols());
      for (std::size_t r = 0; r < destinations[p].size(); ++r) {
        g.row(static_cast<Index>(r)) = self.grad.row(destinations[p][r]);
      }
      part.accumulate(g);
    }
  });
}

Var segment_mean(const Var& table, const std::vector<std::vector<int>>& groups) {
  Matrix out = Matrix::Zero(static_cast<Index>(groups.size()), table.cols());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) continue;
    for (int idx : groups[g]) {
      require(idx >= 0 && idx < table.rows(), "segment_mean: index out of range");
      out.row(static_cast<Index>(g)) += table.value().row(idx);
    }
    out.row(static_cast<Index>(g)) /= static_cast<double>(groups[g].size());
  }
  return make(std::move(out), {table}, [groups](const Node& self) {
    Node& t = in(self, 0);
    Matrix grad = Matrix::Zero(t.value.rows(), t.value.cols());
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (groups[g].empty()) continue;
      const double w = 1.0 / static_cast<double>(groups[g].size());
      for (int idx : groups[g]) grad.row(idx) += w * self.grad.row(static_cast<Index>(g));
    }
    t.accumulate(grad);
  });
}

Var maxout_rows(const Var& scores, const Mask& mask) {
  require(mask.rows() == scores.rows() && mask.cols() == scores.cols(), "maxout_rows: mask shape");
  const Index rows = scores.rows();
  const Index cols = scores.cols();
  Matrix out = Matrix::Zero(rows, cols);
  std::vector<Index> argmax(static_cast<std::size_t>(rows), -1);
  for (Index r = 0; r < rows; ++r) {
    double best = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < cols; ++c) {
      if (mask(r, c) && (argmax[r] < 0 || scores.value()(r, c) > best)) {
        best = scores.value()(r, c);
        argmax[r] = c;
      }
    }
    require(argmax[r] >= 0, "maxout_rows: fully masked row");
    for (Index c = 0; c < cols; ++c) {
      if (mask(r, c)) out(r, c) = std::exp(scores.value()(r, c) - best);
    }
    out(r, argmax[r]) = 1.0;
  }
  return make(std::move(out), {scores}, [argmax = std::move(argmax)](const Node& self) {
    // m_i = exp(x_i - x_max): dm_i/dx_j = m_i (delta_ij - delta_j,argmax).
    Matrix g = self.grad.cwiseProduct(self.value);
    for (Index r = 0; r < g.rows(); ++r) {
      const double total = g.row(r).sum();
      g(r, argmax[r]) -= total;
    }
    in(self, 0).accumulate(g);
  });
}

Var topk_softmax_rows(const Var& a, int k) {
  const Index rows = a.rows();
  const Index cols = a.cols();
  require(k >= 1 && k <= cols, "topk_softmax_rows: k out of range");
  Matrix out = Matrix::Zero(rows, cols);
  std::vector<double> buf(static_cast<std::size_t>(cols));
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) buf[c] = a.value()(r, c);
    std::nth_element(buf.begin(), buf.begin() + (k - 1), buf.end(), std::greater<>());
    const double b = buf[k - 1];
    double peak = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < cols; ++c) {
      if (a.value()(r, c) >= b) peak = std::max(peak, a.value()(r, c));
    }
    double z = 0.0;
    for (Index c = 0; c < cols; ++c) {
      if (a.value()(r, c) >= b) {
        out(r, c) = std::exp(a.value()(r, c) - peak);
        z += out(r, c);
      }
    }
    out.row(r) /= z;
  }
  return make(std::move(out), {a}, [](const Node& self) {
    // Softmax Jacobian restricted to the survivors; masked entries have p = 0
    // so they receive no gradient.
    const Matrix& p = self.value;
    Matrix g = p.cwiseProduct(self.grad);
    for (Index r = 0; r < g.rows(); ++r) {
      const double dot = g.row(r).sum();
      g.row(r) -= dot * p.row(r);
    }
    in(self, 0).accumulate(g);
  });
}

Var scatter_adjacency(const Var& weights, std::span<const std::pair<int, int>> edges, Index blocks,
                      Index concept_count) {
  const Index e = static_cast<Index>(edges.size());
  require(weights.rows() == blocks * e && (e == 0 || weights.cols() == 1),
          "scatter_adjacency: weight shape");
  Matrix out = Matrix::Zero(blocks * concept_count, concept_count);
  std::vector<std::pair<int, int>> edge_copy(edges.begin(), edges.end());
  for (Index b = 0; b < blocks; ++b) {
    for (Index k = 0; k < e; ++k) {
      const auto [i, j] = edge_copy[k];
      out(b * concept_count + i, j) += weights.value()(b * e + k, 0);
    }
  }
  return make(std::move(out), {weights},
              [edges = std::move(edge_copy), blocks, concept_count](const Node& self) {
                Node& w = in(self, 0);
                const Index e = static_cast<Index>(edges.size());
                Matrix g(blocks * e, 1);
                for (Index b = 0; b < blocks; ++b) {
                  for (Index k = 0; k < e; ++k) {
                    const auto [i, j] = edges[k];
                    g(b * e + k, 0) = self.grad(b * concept_count + i, j);
                  }
                }
                w.accumulate(g);
              });
}

Var normalize_adjacency_blocks(const Var& stacked, Index concept_count) {
  const Index c = concept_count;
  require(stacked.cols() == c && stacked.rows() % c == 0, "normalize_adjacency_blocks: shape");
  const Index blocks = stacked.rows() / c;
  Matrix out(stacked.rows(), c);
  Matrix inv_sqrt_deg(blocks, c);
  for (Index b = 0; b < blocks; ++b) {
    Matrix hat = stacked.value().middleRows(b * c, c);
    hat.diagonal().array() += 1.0;
    const Eigen::VectorXd s = hat.rowwise().sum().array().rsqrt();
    inv_sqrt_deg.row(b) = s.transpose();
    out.middleRows(b * c, c) = s.asDiagonal() * hat * s.asDiagonal();
  }
  return make(std::move(out), {stacked}, [c, blocks, inv_sqrt_deg](const Node& self) {
    Node& a = in(self, 0);
    Matrix grad(a.value.rows(), c);
    for (Index b = 0; b < blocks; ++b) {
      Matrix hat = a.value.middleRows(b * c, c);
      hat.diagonal().array() += 1.0;
      const Eigen::VectorXd s = inv_sqrt_deg.row(b).transpose();
      const Matrix gb = self.grad.middleRows(b * c, c);
      // out_ij = s_i hat_ij s_j with s_i = deg_i^-1/2, deg_i = sum_l hat_il.
      Matrix g_hat = s.asDiagonal() * gb * s.asDiagonal();
      const Matrix gh = gb.cwiseProduct(hat);
      Eigen::VectorXd g_s = gh * s + gh.transpose() * s;
      Eigen::VectorXd g_deg = g_s.array() * (-0.5) * s.array().cube();
      g_hat.colwise() += g_deg;
      grad.middleRows(b * c, c) = g_hat;
    }
    a.accumulate(grad);
  });
}

Var block_matmul(const Var& a, const Var& x, Index concept_count) {
  const Index c = concept_count;
  require(a.cols() == c && a.rows() % c == 0 && x.rows() == a.rows(), "block_matmul: shape");
  const Index blocks = a.rows() / c;
  Matrix out(x.rows(), x.cols());
  for (Index b = 0; b < blocks; ++b) {
    out.middleRows(b * c, c).noalias() = a.value().middleRows(b * c, c) * x.value().middleRows(b * c, c);
  }
  return make(std::move(out), {a, x}, [c, blocks](const Node& self) {
    Node& a = in(self, 0);
    Node& x = in(self, 1);
    if (a.requires_grad) {
      Matrix g(a.value.rows(), c);
      for (Index b = 0; b < blocks; ++b) {
        g.middleRows(b * c, c).noalias() =
            self.grad.middleRows(b * c, c) * x.value.middleRows(b * c, c).transpose();
      }
      a.accumulate(g);
    }
    if (x.requires_grad) {
      Matrix g(x.value.rows(), x.value.cols());
      for (Index b = 0; b < blocks; ++b) {
        g.middleRows(b * c, c).noalias() =
            a.value.middleRows(b * c, c).transpose() * self.grad.middleRows(b * c, c);
      }
      x.accumulate(g);
    }
  });
}

Var unstack(const Var& column, Index blocks, Index concept_count) {
  require(column.cols() == 1 && column.rows() == blocks * concept_count, "unstack: shape");
  Matrix out(blocks, concept_count);
  for (Index b = 0; b < blocks; ++b) {
    for (Index i = 0; i < concept_count; ++i) out(b, i) = column.value()(b * concept_count + i, 0);
  }
  return make(std::move(out), {column}, [blocks, concept_count](const Node& self) {
    Matrix g(blocks * concept_count, 1);
    for (Index b = 0; b < blocks; ++b) {
      for (Index i = 0; i < concept_count; ++i) g(b * concept_count + i, 0) = self.grad(b, i);
    }
    in(self, 0).accumulate(g);
  });
}

Var bce_with_logits(const Var& logits, const Matrix& labels, const Matrix& positive_weight) {
  require(labels.rows() == logits.rows() && labels.cols() == logits.cols(), "bce: label shape");
  require(positive_weight.rows() == logits.rows() && positive_weight.cols() == logits.cols(),
          "bce: weight shape");
  const Matrix& z = logits.value();
  double total = 0.0;
  for (Index r = 0; r < z.rows(); ++r) {
    for (Index c = 0; c < z.cols(); ++c) {
      const double y = labels(r, c);
      total += positive_weight(r, c) * y * softplus(-z(r, c)) + (1.0 - y) * softplus(z(r, c));
    }
  }
  return make(Matrix::Constant(1, 1, total), {logits}, [labels, positive_weight](const Node& self) {
    Node& z = in(self, 0);
    Matrix g(z.value.rows(), z.value.cols());
    for (Index r = 0; r < g.rows(); ++r) {
      for (Index c = 0; c < g.cols(); ++c) {
        const double s = sigmoid(z.value(r, c));
        const double y = labels(r, c);
        g(r, c) = -positive_weight(r, c) * y * (1.0 - s) + (1.0 - y) * s;
      }
    }
    z.accumulate(g * self.grad(0, 0));
  });
}

Var bce_with_logits(const Var& logits, const Matrix& labels) {
  return bce_with_logits(logits, labels, Matrix::Ones(logits.rows(), logits.cols()));
}

Var normalize_rows(const Var& a) {
  Eigen::VectorXd norms = a.value().rowwise().norm();
  require((norms.array() > 0.0).all(), "normalize_rows: zero-norm row");
  Matrix out = norms.cwiseInverse().asDiagonal() * a.value();
  return make(std::move(out), {a}, [norms](const Node& self) {
    // d(x/|x|) = (g - u (u.g)) / |x|
    const Matrix& u = self.value;
    Matrix g = self.grad;
    Eigen::VectorXd dots = u.cwiseProduct(g).rowwise().sum();
    g -= dots.asDiagonal() * u;
    in(self, 0).accumulate(norms.cwiseInverse().asDiagonal() * g);
  });
}

Var neg_log_softmax_first(const Var& row) {
  require(row.rows() == 1 && row.cols() >= 1, "neg_log_softmax_first: expects a 1xN row");
  const Matrix& x = row.value();
  const double peak = x.maxCoeff();
  const double lse = peak + std::log((x.array() - peak).exp().sum());
  return make(Matrix::Constant(1, 1, lse - x(0, 0)), {row}, [lse](const Node& self) {
    Node& r = in(self, 0);
    Matrix g = (r.value.array() - lse).exp().matrix();
    g(0, 0) -= 1.0;
    r.accumulate(g * self.grad(0, 0));
  });
}

}  // namespace crkt::ad
