#include "noduleclip/model/autograd.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace noduleclip::ag {
namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;

void check(bool ok, const char* op, const std::string& what) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + what);
}

std::string shape(const Var& v) { return std::to_string(v.rows()) + "x" + std::to_string(v.cols()); }

Var make(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward_fn);
  }
  return Var(std::move(node));
}

template <class Expr>
void accumulate(const NodePtr& n, const Expr& g) {
  if (n->requires_grad) n->grad_buffer() += g;
}

}  // namespace

Matrix& Node::grad_buffer() {
  if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
  return grad;
}

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& loss) {
  check(loss.defined() && loss.rows() == 1 && loss.cols() == 1, "backward", "loss must be 1x1");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer().array() += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() > 0) node->backward(*node);
  }
  // Interior gradients are not needed after the pass.
  for (Node* node : order) {
    if (node->backward) node->grad.resize(0, 0);
  }
}

Var matmul(const Var& a, const Var& b) {
  check(a.cols() == b.rows(), "matmul", shape(a) + " * " + shape(b));
  Matrix out;
  out.noalias() = a.value() * b.value();
  return make(std::move(out), {a, b}, [](Node& self) {
    const auto& A = self.inputs[0];
    const auto& B = self.inputs[1];
    if (A->requires_grad) A->grad_buffer().noalias() += self.grad * B->value.transpose();
    if (B->requires_grad) B->grad_buffer().noalias() += A->value.transpose() * self.grad;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  check(a.cols() == b.cols(), "matmul_nt", shape(a) + " * " + shape(b) + "^T");
  Matrix out;
  out.noalias() = a.value() * b.value().transpose();
  return make(std::move(out), {a, b}, [](Node& self) {
    const auto& A = self.inputs[0];
    const auto& B = self.inputs[1];
    if (A->requires_grad) A->grad_buffer().noalias() += self.grad * B->value;
    if (B->requires_grad) B->grad_buffer().noalias() += self.grad.transpose() * A->value;
  });
}

Var add(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add", shape(a) + " + " + shape(b));
  return make(a.value() + b.value(), {a, b}, [](Node& self) {
    accumulate(self.inputs[0], self.grad);
    accumulate(self.inputs[1], self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "sub", shape(a) + " - " + shape(b));
  return make(a.value() - b.value(), {a, b}, [](Node& self) {
    accumulate(self.inputs[0], self.grad);
    accumulate(self.inputs[1], -self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "mul", shape(a) + " .* " + shape(b));
  return make(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    accumulate(self.inputs[0], self.grad.cwiseProduct(self.inputs[1]->value));
    accumulate(self.inputs[1], self.grad.cwiseProduct(self.inputs[0]->value));
  });
}

Var add_row(const Var& a, const Var& row) {
  check(row.rows() == 1 && row.cols() == a.cols(), "add_row", shape(a) + " + " + shape(row));
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return make(std::move(out), {a, row}, [](Node& self) {
    accumulate(self.inputs[0], self.grad);
    accumulate(self.inputs[1], self.grad.colwise().sum());
  });
}

Var scale(const Var& a, double s) {
  return make(a.value() * s, {a}, [s](Node& self) { accumulate(self.inputs[0], self.grad * s); });
}

Var mul_scalar(const Var& a, const Var& s) {
  check(s.rows() == 1 && s.cols() == 1, "mul_scalar", "scalar operand is " + shape(s));
  return make(a.value() * s.scalar(), {a, s}, [](Node& self) {
    const double sv = self.inputs[1]->value(0, 0);
    accumulate(self.inputs[0], self.grad * sv);
    if (self.inputs[1]->requires_grad) {
      self.inputs[1]->grad_buffer()(0, 0) += self.grad.cwiseProduct(self.inputs[0]->value).sum();
    }
  });
}

Var exp(const Var& a) {
  Matrix out = a.value().array().exp().matrix();
  return make(out, {a}, [](Node& self) { accumulate(self.inputs[0], self.grad.cwiseProduct(self.value)); });
}

Var tanh(const Var& a) {
  Matrix out = a.value().array().tanh().matrix();
  return make(out, {a}, [](Node& self) {
    accumulate(self.inputs[0], (self.grad.array() * (1.0 - self.value.array().square())).matrix());
  });
}

Var sigmoid(const Var& a) {
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return make(out, {a}, [](Node& self) {
    accumulate(self.inputs[0], (self.grad.array() * self.value.array() * (1.0 - self.value.array())).matrix());
  });
}

Var quick_gelu(const Var& a) {
  static constexpr double k = 1.702;
  Matrix s = (1.0 / (1.0 + (-k * a.value().array()).exp())).matrix();
  Matrix out = a.value().cwiseProduct(s);
  return make(std::move(out), {a}, [s = std::move(s)](Node& self) {
    const auto& x = self.inputs[0]->value.array();
    const auto d = s.array() + k * x * s.array() * (1.0 - s.array());
    accumulate(self.inputs[0], (self.grad.array() * d).matrix());
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const auto n = x.cols();
  check(gamma.rows() == 1 && gamma.cols() == n && beta.rows() == 1 && beta.cols() == n, "layer_norm",
        "affine shape mismatch for " + shape(x));
  Matrix xhat(x.rows(), n);
  Eigen::VectorXd inv_sigma(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto row = x.value().row(r).array();
    const double mu = row.mean();
    const double var = (row - mu).square().mean();
    inv_sigma(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = ((row - mu) * inv_sigma(r)).matrix();
  }
  Matrix out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return make(std::move(out), {x, gamma, beta},
              [xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Node& self) {
                const auto& X = self.inputs[0];
                const auto& G = self.inputs[1];
                const auto& B = self.inputs[2];
                if (G->requires_grad) G->grad_buffer() += self.grad.cwiseProduct(xhat).colwise().sum();
                if (B->requires_grad) B->grad_buffer() += self.grad.colwise().sum();
                if (X->requires_grad) {
                  Matrix& gx = X->grad_buffer();
                  const auto gamma_row = G->value.row(0).array();
                  for (Eigen::Index r = 0; r < self.grad.rows(); ++r) {
                    const Eigen::ArrayXd dxhat = (self.grad.row(r).array() * gamma_row).transpose();
                    const Eigen::ArrayXd xh = xhat.row(r).array().transpose();
                    const double m1 = dxhat.mean();
                    const double m2 = (dxhat * xh).mean();
                    gx.row(r).array() += ((dxhat - m1 - xh * m2) * inv_sigma(r)).transpose();
                  }
                }
              });
}

Var softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    out.row(r).array() -= out.row(r).maxCoeff();
    out.row(r) = out.row(r).array().exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return make(std::move(out), {a}, [](Node& self) {
    const auto& y = self.value;
    const Eigen::VectorXd dot = self.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = self.grad;
    g.colwise() -= dot;
    accumulate(self.inputs[0], g.cwiseProduct(y));
  });
}

Var log_softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    const double lse = m + std::log((out.row(r).array() - m).exp().sum());
    out.row(r).array() -= lse;
  }
  return make(std::move(out), {a}, [](Node& self) {
    const Eigen::VectorXd total = self.grad.rowwise().sum();
    Matrix g = self.value.array().exp().matrix();
    g.array().colwise() *= total.array();
    accumulate(self.inputs[0], self.grad - g);
  });
}

Var transpose(const Var& a) {
  Matrix out = a.value().transpose();
  return make(std::move(out), {a}, [](Node& self) { accumulate(self.inputs[0], self.grad.transpose()); });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  check(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows", "range outside " + shape(a));
  Matrix out = a.value().middleRows(start, count);
  return make(std::move(out), {a}, [start, count](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->grad_buffer().middleRows(start, count) += self.grad;
  });
}

Var gather_rows(const Var& a, const std::vector<Eigen::Index>& index) {
  Matrix out(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    check(index[i] >= 0 && index[i] < a.rows(), "gather_rows", "row index out of range for " + shape(a));
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(index[i]);
  }
  return make(std::move(out), {a}, [index](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Matrix& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < index.size(); ++i) g.row(index[i]) += self.grad.row(static_cast<Eigen::Index>(i));
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  check(!parts.empty(), "concat_rows", "no inputs");
  Eigen::Index rows = 0;
  const auto cols = parts.front().cols();
  for (const auto& p : parts) {
    check(p.cols() == cols, "concat_rows", "column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make(std::move(out), parts, [](Node& self) {
    Eigen::Index offset = 0;
    for (const auto& in : self.inputs) {
      if (in->requires_grad) in->grad_buffer() += self.grad.middleRows(offset, in->value.rows());
      offset += in->value.rows();
    }
  });
}

Var pick(const Var& a, const std::vector<int>& column_per_row) {
  check(static_cast<Eigen::Index>(column_per_row.size()) == a.rows(), "pick", "one column per row required");
  Matrix out(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const int c = column_per_row[static_cast<std::size_t>(r)];
    check(c >= 0 && c < a.cols(), "pick", "column out of range");
    out(r, 0) = a.value()(r, c);
  }
  return make(std::move(out), {a}, [column_per_row](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Matrix& g = self.inputs[0]->grad_buffer();
    for (Eigen::Index r = 0; r < self.grad.rows(); ++r) g(r, column_per_row[static_cast<std::size_t>(r)]) += self.grad(r, 0);
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make(std::move(out), {a}, [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->grad_buffer().array() += self.grad(0, 0);
  });
}

Var mean(const Var& a) {
  check(a.value().size() > 0, "mean", "empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var l2_normalize_rows(const Var& a, double eps) {
  Eigen::VectorXd norms = a.value().rowwise().norm().cwiseMax(eps);
  Matrix out = a.value().array().colwise() / norms.array();
  return make(std::move(out), {a}, [norms = std::move(norms)](Node& self) {
    const auto& y = self.value;
    const Eigen::VectorXd dot = self.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = self.grad - (y.array().colwise() * dot.array()).matrix();
    g.array().colwise() /= norms.array();
    accumulate(self.inputs[0], g);
  });
}

Var dropout(const Var& a, double rate, Rng& rng) {
  check(rate >= 0.0 && rate < 1.0, "dropout", "rate must lie in [0, 1)");
  if (rate == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < rate ? 0.0 : keep_scale;
  Matrix out = a.value().cwiseProduct(mask);
  return make(std::move(out), {a}, [mask = std::move(mask)](Node& self) {
    accumulate(self.inputs[0], self.grad.cwiseProduct(mask));
  });
}

Var segment_softmax(const Var& scores, Eigen::Index group) {
  check(scores.cols() == 1 && group > 0 && scores.rows() % group == 0, "segment_softmax",
        "expected a column vector divisible into groups, got " + shape(scores));
  Matrix out = scores.value();
  for (Eigen::Index s = 0; s < out.rows(); s += group) {
    auto seg = out.middleRows(s, group);
    seg.array() -= seg.maxCoeff();
    seg = seg.array().exp().matrix();
    seg /= seg.sum();
  }
  return make(std::move(out), {scores}, [group](Node& self) {
    Matrix g(self.grad.rows(), 1);
    for (Eigen::Index s = 0; s < g.rows(); s += group) {
      const auto y = self.value.middleRows(s, group).array();
      const auto dy = self.grad.middleRows(s, group).array();
      const double dot = (y * dy).sum();
      g.middleRows(s, group) = (y * (dy - dot)).matrix();
    }
    accumulate(self.inputs[0], g);
  });
}

Var segment_weighted_sum(const Var& weights, const Var& features, Eigen::Index group) {
  check(weights.cols() == 1 && weights.rows() == features.rows() && group > 0 && features.rows() % group == 0,
        "segment_weighted_sum", "shape mismatch " + shape(weights) + " vs " + shape(features));
  const auto groups = features.rows() / group;
  Matrix out(groups, features.cols());
  for (Eigen::Index g = 0; g < groups; ++g) {
    out.row(g) = weights.value().middleRows(g * group, group).transpose() * features.value().middleRows(g * group, group);
  }
  return make(std::move(out), {weights, features}, [group, groups](Node& self) {
    const auto& W = self.inputs[0];
    const auto& F = self.inputs[1];
    for (Eigen::Index g = 0; g < groups; ++g) {
      if (W->requires_grad) {
        W->grad_buffer().middleRows(g * group, group).noalias() +=
            F->value.middleRows(g * group, group) * self.grad.row(g).transpose();
      }
      if (F->requires_grad) {
        F->grad_buffer().middleRows(g * group, group).noalias() +=
            W->value.middleRows(g * group, group) * self.grad.row(g);
      }
    }
  });
}

Var attention(const Var& q, const Var& k, const Var& v, const std::vector<Segment>& segments, int heads,
              bool causal) {
  check(q.rows() == k.rows() && q.rows() == v.rows() && q.cols() == k.cols() && q.cols() == v.cols(), "attention",
        "q/k/v shape mismatch");
  check(heads > 0 && q.cols() % heads == 0, "attention", "width not divisible by heads");
  const Eigen::Index d = q.cols() / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix out = Matrix::Zero(q.rows(), q.cols());
  auto probs = std::make_shared<std::vector<Matrix>>();
  probs->reserve(segments.size() * static_cast<std::size_t>(heads));
  for (const auto& seg : segments) {
    check(seg.start >= 0 && seg.length > 0 && seg.start + seg.length <= q.rows(), "attention", "bad segment");
    for (int h = 0; h < heads; ++h) {
      const auto Q = q.value().block(seg.start, h * d, seg.length, d);
      const auto K = k.value().block(seg.start, h * d, seg.length, d);
      const auto V = v.value().block(seg.start, h * d, seg.length, d);
      Matrix P;
      P.noalias() = Q * K.transpose();
      P *= inv_sqrt_d;
      for (Eigen::Index i = 0; i < P.rows(); ++i) {
        if (causal) {
          for (Eigen::Index j = i + 1; j < P.cols(); ++j) P(i, j) = -std::numeric_limits<double>::infinity();
        }
        P.row(i).array() -= P.row(i).maxCoeff();
        P.row(i) = P.row(i).array().exp().matrix();
        P.row(i) /= P.row(i).sum();
      }
      out.block(seg.start, h * d, seg.length, d).noalias() = P * V;
      probs->push_back(std::move(P));
    }
  }
  return make(std::move(out), {q, k, v}, [segments, heads, d, inv_sqrt_d, probs](Node& self) {
    const auto& Qn = self.inputs[0];
    const auto& Kn = self.inputs[1];
    const auto& Vn = self.inputs[2];
    std::size_t at = 0;
    for (const auto& seg : segments) {
      for (int h = 0; h < heads; ++h, ++at) {
        const Matrix& P = (*probs)[at];
        const auto dO = self.grad.block(seg.start, h * d, seg.length, d);
        const auto Q = Qn->value.block(seg.start, h * d, seg.length, d);
        const auto K = Kn->value.block(seg.start, h * d, seg.length, d);
        const auto V = Vn->value.block(seg.start, h * d, seg.length, d);
        if (Vn->requires_grad) Vn->grad_buffer().block(seg.start, h * d, seg.length, d).noalias() += P.transpose() * dO;
        if (!Qn->requires_grad && !Kn->requires_grad) continue;
        Matrix dP;
        dP.noalias() = dO * V.transpose();
        const Eigen::VectorXd dot = dP.cwiseProduct(P).rowwise().sum();
        dP.colwise() -= dot;
        Matrix dS = P.cwiseProduct(dP) * inv_sqrt_d;
        if (Qn->requires_grad) Qn->grad_buffer().block(seg.start, h * d, seg.length, d).noalias() += dS * K;
        if (Kn->requires_grad) Kn->grad_buffer().block(seg.start, h * d, seg.length, d).noalias() += dS.transpose() * Q;
      }
    }
  });
}

Var assemble_tokens(const Var& patches, const Var& cls, const Var& positional, Eigen::Index groups) {
  check(groups > 0 && patches.rows() % groups == 0, "assemble_tokens", "patch rows not divisible into groups");
  const Eigen::Index per = patches.rows() / groups;
  const Eigen::Index width = patches.cols();
  check(cls.rows() == 1 && cls.cols() == width && positional.rows() == per + 1 && positional.cols() == width,
        "assemble_tokens", "class/positional shape mismatch");
  Matrix out(groups * (per + 1), width);
  for (Eigen::Index g = 0; g < groups; ++g) {
    const Eigen::Index base = g * (per + 1);
    out.row(base) = cls.value().row(0);
    out.middleRows(base + 1, per) = patches.value().middleRows(g * per, per);
    out.middleRows(base, per + 1) += positional.value();
  }
  return make(std::move(out), {patches, cls, positional}, [groups, per](Node& self) {
    const auto& Pn = self.inputs[0];
    const auto& Cn = self.inputs[1];
    const auto& Posn = self.inputs[2];
    for (Eigen::Index g = 0; g < groups; ++g) {
      const Eigen::Index base = g * (per + 1);
      if (Pn->requires_grad) Pn->grad_buffer().middleRows(g * per, per) += self.grad.middleRows(base + 1, per);
      if (Cn->requires_grad) Cn->grad_buffer().row(0) += self.grad.row(base);
      if (Posn->requires_grad) Posn->grad_buffer() += self.grad.middleRows(base, per + 1);
    }
  });
}

Var add_positional(const Var& x, const Var& positional, const std::vector<Segment>& segments) {
  check(positional.cols() == x.cols(), "add_positional", "width mismatch");
  Matrix out = x.value();
  for (const auto& seg : segments) {
    check(seg.length <= positional.rows() && seg.start + seg.length <= x.rows(), "add_positional",
          "segment longer than positional table");
    out.middleRows(seg.start, seg.length) += positional.value().topRows(seg.length);
  }
  return make(std::move(out), {x, positional}, [segments](Node& self) {
    accumulate(self.inputs[0], self.grad);
    if (!self.inputs[1]->requires_grad) return;
    Matrix& g = self.inputs[1]->grad_buffer();
    for (const auto& seg : segments) g.topRows(seg.length) += self.grad.middleRows(seg.start, seg.length);
  });
}

}  // namespace noduleclip::ag
