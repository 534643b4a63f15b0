#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "noduleclip/common/random.hpp"

// Reverse-mode automatic differentiation over dense row-major matrices.
namespace noduleclip::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Matrix value;
  Matrix grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Matrix& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() > 0; }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Matrix value);
// Leaf with requires_grad set; gradients accumulate until zero_grad().
Var parameter(Matrix value);

// Seeds d(loss)/d(loss) = 1 and accumulates into every reachable leaf.
void backward(const Var& loss);

// While alive on this thread, ops record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

Var matmul(const Var& a, const Var& b);     // a b
Var matmul_nt(const Var& a, const Var& b);  // a b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);        // elementwise
Var add_row(const Var& a, const Var& row);  // broadcast 1 x C row over a
Var scale(const Var& a, double s);
Var mul_scalar(const Var& a, const Var& s);  // s is 1 x 1
Var exp(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var quick_gelu(const Var& a);  // x * sigmoid(1.702 x)
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var transpose(const Var& a);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& a, const std::vector<Eigen::Index>& index);
Var concat_rows(const std::vector<Var>& parts);
Var pick(const Var& a, const std::vector<int>& column_per_row);  // -> rows x 1
Var sum(const Var& a);
Var mean(const Var& a);
Var l2_normalize_rows(const Var& a, double eps = 1e-12);
// Inverted dropout: kept entries scaled by 1 / (1 - rate).
Var dropout(const Var& a, double rate, Rng& rng);

// Softmax over consecutive groups of `group` entries of a column vector.
Var segment_softmax(const Var& scores, Eigen::Index group);
// Row g of the result is sum_i weights[g*group + i] * features[g*group + i].
Var segment_weighted_sum(const Var& weights, const Var& features, Eigen::Index group);

struct Segment {
  Eigen::Index start;
  Eigen::Index length;
};

// Multi-head scaled dot-product attention, independent per segment of rows.
Var attention(const Var& q, const Var& k, const Var& v, const std::vector<Segment>& segments, int heads,
              bool causal);

// Vision token layout: for each of `groups` consecutive blocks of patch rows,
// emit [cls; patches] and add positional rows.
Var assemble_tokens(const Var& patches, const Var& cls, const Var& positional, Eigen::Index groups);

// Adds positional rows 0..length-1 to each segment.
Var add_positional(const Var& x, const Var& positional, const std::vector<Segment>& segments);

}  // namespace noduleclip::ag
