#pragma once

// Minimal reverse-mode differentiation over DenseArray.
//
// A Graph is declared once (inputs, parameters, primitive ops), then evaluated
// with forward() against concrete inputs and a parameter store. backward()
// walks the cached tape in exact reverse order of declaration.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fusedmad/dense_array.hpp"

namespace fusedmad::numgrad {

using NamedArrays = std::map<std::string, DenseArray>;

/// Marks a batch dimension in an input declaration.
inline constexpr std::size_t kAnyDim = 0;

class GraphError : public std::runtime_error {
 public:
  GraphError(std::string node, const std::string& what)
      : std::runtime_error("node '" + node + "': " + what), node_(std::move(node)) {}
  const std::string& node() const { return node_; }

 private:
  std::string node_;
};

enum class Op { Input, Parameter, MatMul, AddBias, Relu, SoftmaxXent, SigmoidBce, Dot, Scale, Add };

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Parameter: return "parameter";
    case Op::MatMul: return "matmul";
    case Op::AddBias: return "add_bias";
    case Op::Relu: return "relu";
    case Op::SoftmaxXent: return "softmax_xent";
    case Op::SigmoidBce: return "sigmoid_bce";
    case Op::Dot: return "dot";
    case Op::Scale: return "scale";
    case Op::Add: return "add";
  }
  return "?";
}

/// Handle to a node of one particular Graph.
struct NodeRef {
  std::size_t index = 0;
  friend bool operator==(NodeRef, NodeRef) = default;
};

namespace detail {

inline double log1p_exp(double x) {
  // log(1 + e^x) without overflow
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace detail

/// Numerically stable logistic function.
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Mean binary cross-entropy of sigmoid(d) against t, in the overflow-free
/// form max(d,0) - d*t + log(1 + exp(-|d|)).
inline double sigmoid_bce_term(double d, double t) {
  return std::max(d, 0.0) - d * t + std::log1p(std::exp(-std::abs(d)));
}

class Graph {
 public:
  NodeRef input(std::string name, Shape shape) {
    Node n{Op::Input, {}, std::move(name)};
    n.declared = std::move(shape);
    return push(std::move(n));
  }

  NodeRef parameter(std::string name, Shape shape) {
    for (const auto& n : nodes_) {
      if (n.op == Op::Parameter && n.name == name) {
        if (n.declared != shape) throw GraphError(name, "parameter redeclared with a different shape");
        return NodeRef{static_cast<std::size_t>(&n - nodes_.data())};
      }
    }
    Node n{Op::Parameter, {}, std::move(name)};
    n.declared = std::move(shape);
    return push(std::move(n));
  }

  /// a[n,k] * b[k,m], or a[n,k] * b[m,k]^T when transpose_b is set.
  NodeRef matmul(NodeRef a, NodeRef b, bool transpose_b = false, std::string name = {}) {
    Node n{Op::MatMul, {a, b}, std::move(name)};
    n.transpose_b = transpose_b;
    return push(std::move(n));
  }
  NodeRef add_bias(NodeRef x, NodeRef bias, std::string name = {}) {
    return push(Node{Op::AddBias, {x, bias}, std::move(name)});
  }
  NodeRef relu(NodeRef x, std::string name = {}) { return push(Node{Op::Relu, {x}, std::move(name)}); }
  /// Mean softmax cross-entropy of logits[n,C] against integer labels[n].
  NodeRef softmax_xent(NodeRef logits, NodeRef labels, std::string name = {}) {
    return push(Node{Op::SoftmaxXent, {logits, labels}, std::move(name)});
  }
  /// Mean binary cross-entropy of sigmoid(d[n]) against targets[n] in {0,1}.
  NodeRef sigmoid_bce(NodeRef d, NodeRef targets, std::string name = {}) {
    return push(Node{Op::SigmoidBce, {d, targets}, std::move(name)});
  }
  /// Row-wise dot product of a[n,k] and b[n,k] giving [n].
  NodeRef dot(NodeRef a, NodeRef b, std::string name = {}) {
    return push(Node{Op::Dot, {a, b}, std::move(name)});
  }
  NodeRef scale(NodeRef x, double factor, std::string name = {}) {
    Node n{Op::Scale, {x}, std::move(name)};
    n.factor = factor;
    return push(std::move(n));
  }
  NodeRef add(NodeRef a, NodeRef b, std::string name = {}) {
    return push(Node{Op::Add, {a, b}, std::move(name)});
  }

  /// Names a node so forward() reports its value.
  void output(const std::string& name, NodeRef node) {
    check_ref(node);
    outputs_.insert_or_assign(name, node);
  }

  std::size_t node_count() const { return nodes_.size(); }
  Op op(NodeRef r) const { return nodes_.at(r.index).op; }
  const std::string& name(NodeRef r) const { return nodes_.at(r.index).name; }

  /// Parameter names and declared shapes, in declaration order.
  std::vector<std::pair<std::string, Shape>> parameters() const {
    std::vector<std::pair<std::string, Shape>> out;
    for (const auto& n : nodes_) {
      if (n.op == Op::Parameter) out.emplace_back(n.name, n.declared);
    }
    return out;
  }

  /// Evaluates every node in declaration order and caches the values for backward().
  NamedArrays forward(const NamedArrays& inputs, const NamedArrays& params) {
    values_.assign(nodes_.size(), DenseArray{});
    for (std::size_t i = 0; i < nodes_.size(); ++i) values_[i] = evaluate(nodes_[i], inputs, params);
    evaluated_ = true;
    NamedArrays out;
    for (const auto& [name, ref] : outputs_) out.emplace(name, values_[ref.index]);
    return out;
  }

  const DenseArray& value(NodeRef r) const {
    if (!evaluated_) throw GraphError(nodes_.at(r.index).name, "value requested before forward");
    return values_.at(r.index);
  }

  /// Gradient of a scalar node with respect to every declared parameter.
  /// Parameters with no path to the loss receive zeros.
  NamedArrays backward(NodeRef loss) const {
    check_ref(loss);
    const Node& ln = nodes_[loss.index];
    if (!evaluated_) throw GraphError(ln.name, "backward before forward");
    if (values_[loss.index].size() != 1) {
      throw GraphError(ln.name, "loss must be scalar, got shape " + shape_string(values_[loss.index].shape()));
    }
    std::vector<std::optional<DenseArray>> adj(nodes_.size());
    adj[loss.index] = DenseArray(values_[loss.index].shape(), 1.0);

    for (std::size_t i = loss.index + 1; i-- > 0;) {
      if (!adj[i]) continue;
      propagate(i, *adj[i], adj);
    }

    NamedArrays grads;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].op != Op::Parameter) continue;
      grads.emplace(nodes_[i].name, adj[i] ? std::move(*adj[i]) : DenseArray(nodes_[i].declared, 0.0));
    }
    return grads;
  }

 private:
  struct Node {
    Op op;
    std::vector<NodeRef> args;
    std::string name;
    Shape declared{};
    bool transpose_b = false;
    double factor = 1.0;
  };

  NodeRef push(Node n) {
    for (NodeRef a : n.args) check_ref(a);
    if (n.name.empty()) n.name = std::string(op_name(n.op)) + "#" + std::to_string(nodes_.size());
    nodes_.push_back(std::move(n));
    evaluated_ = false;
    return NodeRef{nodes_.size() - 1};
  }

  void check_ref(NodeRef r) const {
    if (r.index >= nodes_.size()) throw GraphError("#" + std::to_string(r.index), "reference to unknown node");
  }

  const DenseArray& arg(const Node& n, std::size_t k) const { return values_[n.args[k].index]; }

  static void require(bool ok, const Node& n, const std::string& what) {
    if (!ok) throw GraphError(n.name, what);
  }

  static void require_rank(const DenseArray& a, std::size_t rank, const Node& n, const char* which) {
    require(a.rank() == rank, n,
            std::string(op_name(n.op)) + ": " + which + " must have rank " + std::to_string(rank) + ", got " +
                shape_string(a.shape()));
  }

  static void require_finite(const DenseArray& a, const Node& n) {
    require(a.all_finite(), n, "non-finite value produced");
  }

  DenseArray evaluate(const Node& n, const NamedArrays& inputs, const NamedArrays& params) const {
    switch (n.op) {
      case Op::Input: {
        auto it = inputs.find(n.name);
        require(it != inputs.end(), n, "missing input");
        const DenseArray& v = it->second;
        bool ok = v.rank() == n.declared.size();
        for (std::size_t d = 0; ok && d < n.declared.size(); ++d) {
          ok = n.declared[d] == kAnyDim || n.declared[d] == v.dim(d);
        }
        require(ok, n, "input shape " + shape_string(v.shape()) + " does not match declared " +
                           shape_string(n.declared));
        require_finite(v, n);
        return v;
      }
      case Op::Parameter: {
        auto it = params.find(n.name);
        require(it != params.end(), n, "missing parameter");
        require(it->second.shape() == n.declared, n,
                "parameter shape " + shape_string(it->second.shape()) + " does not match declared " +
                    shape_string(n.declared));
        require_finite(it->second, n);
        return it->second;
      }
      case Op::MatMul: {
        const DenseArray& a = arg(n, 0);
        const DenseArray& b = arg(n, 1);
        require_rank(a, 2, n, "lhs");
        require_rank(b, 2, n, "rhs");
        const std::size_t rows = a.dim(0), inner = a.dim(1);
        const std::size_t cols = n.transpose_b ? b.dim(0) : b.dim(1);
        const std::size_t b_inner = n.transpose_b ? b.dim(1) : b.dim(0);
        require(inner == b_inner, n,
                "matmul: inner dimensions differ " + shape_string(a.shape()) + " * " + shape_string(b.shape()) +
                    (n.transpose_b ? "^T" : ""));
        DenseArray out(Shape{rows, cols}, 0.0);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t k = 0; k < inner; ++k) {
            const double aik = a.at(i, k);
            if (n.transpose_b) {
              for (std::size_t j = 0; j < cols; ++j) out.at(i, j) += aik * b.at(j, k);
            } else {
              for (std::size_t j = 0; j < cols; ++j) out.at(i, j) += aik * b.at(k, j);
            }
          }
        }
        require_finite(out, n);
        return out;
      }
      case Op::AddBias: {
        const DenseArray& x = arg(n, 0);
        const DenseArray& b = arg(n, 1);
        require_rank(x, 2, n, "input");
        require_rank(b, 1, n, "bias");
        require(x.dim(1) == b.dim(0), n,
                "add_bias: bias " + shape_string(b.shape()) + " does not fit " + shape_string(x.shape()));
        DenseArray out = x;
        for (std::size_t i = 0; i < x.dim(0); ++i) {
          for (std::size_t j = 0; j < x.dim(1); ++j) out.at(i, j) += b[j];
        }
        require_finite(out, n);
        return out;
      }
      case Op::Relu: {
        DenseArray out = arg(n, 0);
        for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
        return out;
      }
      case Op::SoftmaxXent: {
        const DenseArray& z = arg(n, 0);
        const DenseArray& y = arg(n, 1);
        require_rank(z, 2, n, "logits");
        require_rank(y, 1, n, "labels");
        require(y.dim(0) == z.dim(0), n, "softmax_xent: batch size of labels and logits differ");
        const std::size_t rows = z.dim(0), classes = z.dim(1);
        double total = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
          const std::size_t label = checked_label(y[i], classes, n);
          total += log_sum_exp_row(z, i) - z.at(i, label);
        }
        return DenseArray::scalar(total / static_cast<double>(rows));
      }
      case Op::SigmoidBce: {
        const DenseArray& d = arg(n, 0);
        const DenseArray& t = arg(n, 1);
        require_rank(d, 1, n, "scores");
        require(t.shape() == d.shape(), n, "sigmoid_bce: targets " + shape_string(t.shape()) +
                                               " do not match scores " + shape_string(d.shape()));
        double total = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) {
          require(t[i] == 0.0 || t[i] == 1.0, n, "sigmoid_bce: target must be 0 or 1");
          total += sigmoid_bce_term(d[i], t[i]);
        }
        return DenseArray::scalar(total / static_cast<double>(d.size()));
      }
      case Op::Dot: {
        const DenseArray& a = arg(n, 0);
        const DenseArray& b = arg(n, 1);
        require_rank(a, 2, n, "lhs");
        require(a.shape() == b.shape(), n,
                "dot: operand shapes differ " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
        DenseArray out(Shape{a.dim(0)}, 0.0);
        for (std::size_t i = 0; i < a.dim(0); ++i) {
          double s = 0.0;
          for (std::size_t k = 0; k < a.dim(1); ++k) s += a.at(i, k) * b.at(i, k);
          out[i] = s;
        }
        require_finite(out, n);
        return out;
      }
      case Op::Scale: {
        DenseArray out = arg(n, 0);
        for (double& v : out.values()) v *= n.factor;
        require_finite(out, n);
        return out;
      }
      case Op::Add: {
        const DenseArray& a = arg(n, 0);
        const DenseArray& b = arg(n, 1);
        require(a.shape() == b.shape(), n,
                "add: operand shapes differ " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
        DenseArray out = a;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
        require_finite(out, n);
        return out;
      }
    }
    throw GraphError(n.name, "unknown op");
  }

  static std::size_t checked_label(double v, std::size_t classes, const Node& n) {
    require(v >= 0.0 && v < static_cast<double>(classes) && v == std::floor(v), n,
            "label " + std::to_string(v) + " outside [0, " + std::to_string(classes) + ")");
    return static_cast<std::size_t>(v);
  }

  static double log_sum_exp_row(const DenseArray& z, std::size_t row) {
    const std::size_t classes = z.dim(1);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < classes; ++j) mx = std::max(mx, z.at(row, j));
    double s = 0.0;
    for (std::size_t j = 0; j < classes; ++j) s += std::exp(z.at(row, j) - mx);
    return mx + std::log(s);
  }

  static void accumulate(std::optional<DenseArray>& slot, DenseArray g) {
    if (!slot) {
      slot = std::move(g);
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
  }

  void propagate(std::size_t idx, const DenseArray& g, std::vector<std::optional<DenseArray>>& adj) const {
    const Node& n = nodes_[idx];
    auto slot = [&](std::size_t k) -> std::optional<DenseArray>& { return adj[n.args[k].index]; };
    switch (n.op) {
      case Op::Input:
      case Op::Parameter:
        return;
      case Op::MatMul: {
        const DenseArray& a = arg(n, 0);
        const DenseArray& b = arg(n, 1);
        const std::size_t rows = a.dim(0), inner = a.dim(1), cols = g.dim(1);
        DenseArray ga(a.shape(), 0.0), gb(b.shape(), 0.0);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t k = 0; k < inner; ++k) {
            const double aik = a.at(i, k);
            double acc = 0.0;
            if (n.transpose_b) {
              for (std::size_t j = 0; j < cols; ++j) {
                acc += g.at(i, j) * b.at(j, k);
                gb.at(j, k) += aik * g.at(i, j);
              }
            } else {
              for (std::size_t j = 0; j < cols; ++j) {
                acc += g.at(i, j) * b.at(k, j);
                gb.at(k, j) += aik * g.at(i, j);
              }
            }
            ga.at(i, k) = acc;
          }
        }
        accumulate(slot(0), std::move(ga));
        accumulate(slot(1), std::move(gb));
        return;
      }
      case Op::AddBias: {
        DenseArray gb(arg(n, 1).shape(), 0.0);
        for (std::size_t i = 0; i < g.dim(0); ++i) {
          for (std::size_t j = 0; j < g.dim(1); ++j) gb[j] += g.at(i, j);
        }
        accumulate(slot(0), g);
        accumulate(slot(1), std::move(gb));
        return;
      }
      case Op::Relu: {
        const DenseArray& x = arg(n, 0);
        DenseArray gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) {
          if (!(x[i] > 0.0)) gx[i] = 0.0;
        }
        accumulate(slot(0), std::move(gx));
        return;
      }
      case Op::SoftmaxXent: {
        const DenseArray& z = arg(n, 0);
        const DenseArray& y = arg(n, 1);
        const std::size_t rows = z.dim(0), classes = z.dim(1);
        const double scale = g.item() / static_cast<double>(rows);
        DenseArray gz(z.shape(), 0.0);
        for (std::size_t i = 0; i < rows; ++i) {
          const double lse = log_sum_exp_row(z, i);
          for (std::size_t j = 0; j < classes; ++j) gz.at(i, j) = std::exp(z.at(i, j) - lse) * scale;
          gz.at(i, static_cast<std::size_t>(y[i])) -= scale;
        }
        accumulate(slot(0), std::move(gz));
        return;
      }
      case Op::SigmoidBce: {
        const DenseArray& d = arg(n, 0);
        const DenseArray& t = arg(n, 1);
        const double scale = g.item() / static_cast<double>(d.size());
        DenseArray gd(d.shape(), 0.0);
        for (std::size_t i = 0; i < d.size(); ++i) gd[i] = (sigmoid(d[i]) - t[i]) * scale;
        accumulate(slot(0), std::move(gd));
        return;
      }
      case Op::Dot: {
        const DenseArray& a = arg(n, 0);
        const DenseArray& b = arg(n, 1);
        DenseArray ga(a.shape(), 0.0), gb(b.shape(), 0.0);
        for (std::size_t i = 0; i < a.dim(0); ++i) {
          for (std::size_t k = 0; k < a.dim(1); ++k) {
            ga.at(i, k) = g[i] * b.at(i, k);
            gb.at(i, k) = g[i] * a.at(i, k);
          }
        }
        accumulate(slot(0), std::move(ga));
        accumulate(slot(1), std::move(gb));
        return;
      }
      case Op::Scale: {
        DenseArray gx = g;
        for (double& v : gx.values()) v *= n.factor;
        accumulate(slot(0), std::move(gx));
        return;
      }
      case Op::Add:
        accumulate(slot(0), g);
        accumulate(slot(1), g);
        return;
    }
  }

  std::vector<Node> nodes_;
  std::map<std::string, NodeRef> outputs_;
  std::vector<DenseArray> values_;
  bool evaluated_ = false;
};

struct ParamCheck {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double epsilon = 0.0;
  double rtol = 0.0;
  bool pass = true;
  double max_relative_error() const {
    double m = 0.0;
    for (const auto& p : params) m = std::max(m, p.max_relative_error);
    return m;
  }
};

/// Compares backward() with central differences for every scalar parameter.
/// Relative error is |analytic - numeric| / max(|analytic|, epsilon).
inline GradCheckReport grad_check(Graph& graph, NodeRef loss, const NamedArrays& inputs, NamedArrays params,
                                  double epsilon, double rtol) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("grad_check: epsilon must be positive");
  GradCheckReport report;
  report.epsilon = epsilon;
  report.rtol = rtol;

  graph.forward(inputs, params);
  const NamedArrays analytic = graph.backward(loss);
  auto eval = [&](const NamedArrays& p) {
    graph.forward(inputs, p);
    return graph.value(loss).item();
  };

  for (const auto& [name, grad] : analytic) {
    ParamCheck check;
    check.name = name;
    DenseArray& theta = params.at(name);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + epsilon;
      const double up = eval(params);
      theta[i] = saved - epsilon;
      const double down = eval(params);
      theta[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double err = std::abs(grad[i] - numeric) / std::max(std::abs(grad[i]), epsilon);
      if (err > check.max_relative_error || i == 0) {
        check.max_relative_error = err;
        check.worst_index = i;
        check.analytic = grad[i];
        check.numeric = numeric;
      }
    }
    check.pass = check.max_relative_error <= rtol;
    report.pass = report.pass && check.pass;
    report.params.push_back(std::move(check));
  }
  graph.forward(inputs, params);
  return report;
}

/// Plain gradient descent: theta <- theta - lr * g for every parameter that has a gradient.
inline void sgd_step(NamedArrays& params, const NamedArrays& grads, double learning_rate) {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("sgd_step: learning rate must be finite and non-negative");
  }
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("sgd_step: no parameter named '" + name + "'");
    if (it->second.shape() != g.shape()) {
      throw std::invalid_argument("sgd_step: gradient shape " + shape_string(g.shape()) + " does not match '" +
                                  name + "' " + shape_string(it->second.shape()));
    }
    auto theta = it->second.values();
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= learning_rate * g[i];
  }
}

}  // namespace fusedmad::numgrad
