#pragma once

// Dense 2-D tensors with reverse-mode automatic differentiation.
//
// A Tensor<S> is a shared handle to a graph node holding a row-major Eigen
// matrix. Operations on tensors that require gradients record their inputs and
// a backward rule; backward() sweeps the recorded graph in reverse topological
// order and accumulates gradients additively into every node that requires
// them. Leaves keep their gradient until zero_grad() is called.
//
// Every model quantity is a matrix (feature maps are HW x c, biases 1 x c,
// scalars 1 x 1), so the engine is two-dimensional; n-d arrays only appear in
// the serialization layer (see data.hpp).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "mgfc/error.hpp"

namespace mgfc {

using Index = Eigen::Index;

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

inline std::string dims_string(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

namespace detail {

template <typename S>
struct Node {
  Matrix<S> value;
  Matrix<S> grad;  // same dims as value iff requires_grad
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return inputs.empty(); }
};

// Test hook: when set, the backward rule of the named op receives a corrupted
// upstream gradient. Used to prove that the gradient checker catches broken
// rules.
inline std::string& injected_fault() {
  static std::string op;
  return op;
}

}  // namespace detail

inline void inject_backward_fault(std::string op) { detail::injected_fault() = std::move(op); }
inline void clear_backward_fault() { detail::injected_fault().clear(); }

template <typename S>
class Tensor {
 public:
  using Scalar = S;
  using NodePtr = std::shared_ptr<detail::Node<S>>;

  Tensor() = default;

  explicit Tensor(Matrix<S> value, bool requires_grad = false) : node_(std::make_shared<detail::Node<S>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->grad = Matrix<S>::Zero(node_->value.rows(), node_->value.cols());
  }

  static Tensor zeros(Index rows, Index cols, bool requires_grad = false) {
    return Tensor(Matrix<S>::Zero(rows, cols), requires_grad);
  }

  static Tensor scalar(S v, bool requires_grad = false) {
    Matrix<S> m(1, 1);
    m(0, 0) = v;
    return Tensor(std::move(m), requires_grad);
  }

  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::array<Index, 2> dims() const { return {rows(), cols()}; }

  const Matrix<S>& value() const { return node_->value; }
  // Direct write access, meant for leaves (optimizer updates, fixtures).
  Matrix<S>& mutable_value() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }

  const Matrix<S>& grad() const {
    if (!node_->requires_grad) throw ContractError("grad() on a tensor that does not require grad");
    return node_->grad;
  }
  Matrix<S>& mutable_grad() {
    if (!node_->requires_grad) throw ContractError("grad() on a tensor that does not require grad");
    return node_->grad;
  }

  void zero_grad() {
    if (node_->requires_grad) node_->grad.setZero();
  }

  S item() const {
    if (size() != 1) throw ContractError("item() on a " + dims_string(rows(), cols()) + " tensor");
    return node_->value(0, 0);
  }

  const char* op() const { return node_->op; }

  // Leaf copy of the value, cut from the graph.
  Tensor detach() const { return Tensor(node_->value, false); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

namespace detail {

template <typename S, typename Backward>
Tensor<S> make_result(Matrix<S> value, const char* op, std::initializer_list<Tensor<S>> inputs, Backward&& rule) {
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  Tensor<S> out(std::move(value), needs);
  auto& node = *out.node();
  node.op = op;
  if (needs) {
    for (const auto& in : inputs) node.inputs.push_back(in.node());
    node.backward = std::forward<Backward>(rule);
  }
  return out;
}

template <typename S, typename Backward>
Tensor<S> make_result_n(Matrix<S> value, const char* op, std::span<const Tensor<S>> inputs, Backward&& rule) {
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  Tensor<S> out(std::move(value), needs);
  auto& node = *out.node();
  node.op = op;
  if (needs) {
    for (const auto& in : inputs) node.inputs.push_back(in.node());
    node.backward = std::forward<Backward>(rule);
  }
  return out;
}

enum class Broadcast { none, row, scalar };

inline Broadcast broadcast_kind(const char* op, Index ar, Index ac, Index br, Index bc) {
  if (ar == br && ac == bc) return Broadcast::none;
  if (br == 1 && bc == 1) return Broadcast::scalar;
  if (br == 1 && bc == ac) return Broadcast::row;
  throw ShapeError(std::string(op) + ": cannot broadcast " + dims_string(br, bc) + " onto " + dims_string(ar, ac));
}

template <typename S>
Matrix<S> expand(const Matrix<S>& b, Broadcast kind, Index rows, Index cols) {
  switch (kind) {
    case Broadcast::none:
      return b;
    case Broadcast::row:
      return b.replicate(rows, 1);
    case Broadcast::scalar:
      return Matrix<S>::Constant(rows, cols, b(0, 0));
  }
  return b;
}

// Sum a full-size gradient back down to the broadcast operand's shape.
template <typename S, typename Derived>
void reduce_into(Matrix<S>& target, const Eigen::MatrixBase<Derived>& g, Broadcast kind) {
  switch (kind) {
    case Broadcast::none:
      target += g;
      break;
    case Broadcast::row:
      target += g.colwise().sum();
      break;
    case Broadcast::scalar:
      target(0, 0) += g.sum();
      break;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + dims_string(a.rows(), a.cols()) + " times " +
                     dims_string(b.rows(), b.cols()) + ")");
  }
  Matrix<S> out = a.value() * b.value();
  return detail::make_result<S>(std::move(out), "matmul", {a, b}, [](detail::Node<S>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) A.grad.noalias() += self.grad * B.value.transpose();
    if (B.requires_grad) B.grad.noalias() += A.value.transpose() * self.grad;
  });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  Matrix<S> out = a.value().transpose();
  return detail::make_result<S>(std::move(out), "transpose", {a}, [](detail::Node<S>& self) {
    self.inputs[0]->grad += self.grad.transpose();
  });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Index rows, Index cols) {
  if (rows * cols != a.size()) {
    throw ShapeError("reshape: " + dims_string(a.rows(), a.cols()) + " has " + std::to_string(a.size()) +
                     " entries, target " + dims_string(rows, cols) + " needs " + std::to_string(rows * cols));
  }
  Matrix<S> out = Eigen::Map<const Matrix<S>>(a.value().data(), rows, cols);
  return detail::make_result<S>(std::move(out), "reshape", {a}, [](detail::Node<S>& self) {
    auto& A = *self.inputs[0];
    A.grad += Eigen::Map<const Matrix<S>>(self.grad.data(), A.value.rows(), A.value.cols());
  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic; the right operand may be a 1 x c row or a 1 x 1
// scalar broadcast over the left operand.

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  const auto kind = detail::broadcast_kind("add", a.rows(), a.cols(), b.rows(), b.cols());
  Matrix<S> out = a.value() + detail::expand(b.value(), kind, a.rows(), a.cols());
  return detail::make_result<S>(std::move(out), "add", {a, b}, [kind](detail::Node<S>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) A.grad += self.grad;
    if (B.requires_grad) detail::reduce_into(B.grad, self.grad, kind);
  });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  const auto kind = detail::broadcast_kind("sub", a.rows(), a.cols(), b.rows(), b.cols());
  Matrix<S> out = a.value() - detail::expand(b.value(), kind, a.rows(), a.cols());
  return detail::make_result<S>(std::move(out), "sub", {a, b}, [kind](detail::Node<S>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) A.grad += self.grad;
    if (B.requires_grad) detail::reduce_into(B.grad, -self.grad, kind);
  });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  const auto kind = detail::broadcast_kind("mul", a.rows(), a.cols(), b.rows(), b.cols());
  Matrix<S> out = a.value().cwiseProduct(detail::expand(b.value(), kind, a.rows(), a.cols()));
  return detail::make_result<S>(std::move(out), "mul", {a, b}, [kind](detail::Node<S>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    const Index r = A.value.rows(), c = A.value.cols();
    if (A.requires_grad) A.grad += self.grad.cwiseProduct(detail::expand(B.value, kind, r, c));
    if (B.requires_grad) detail::reduce_into(B.grad, self.grad.cwiseProduct(A.value), kind);
  });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  const auto kind = detail::broadcast_kind("div", a.rows(), a.cols(), b.rows(), b.cols());
  Matrix<S> out = a.value().cwiseQuotient(detail::expand(b.value(), kind, a.rows(), a.cols()));
  return detail::make_result<S>(std::move(out), "div", {a, b}, [kind](detail::Node<S>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    const Index r = A.value.rows(), c = A.value.cols();
    const Matrix<S> bx = detail::expand(B.value, kind, r, c);
    if (A.requires_grad) A.grad += self.grad.cwiseQuotient(bx);
    if (B.requires_grad) {
      // d(a/b)/db = -(a/b)/b = -out/b
      detail::reduce_into(B.grad, -self.grad.cwiseProduct(self.value).cwiseQuotient(bx), kind);
    }
  });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
  Matrix<S> out = a.value() * factor;
  return detail::make_result<S>(std::move(out), "scale", {a}, [factor](detail::Node<S>& self) {
    self.inputs[0]->grad += self.grad * factor;
  });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S offset) {
  Matrix<S> out = a.value().array() + offset;
  return detail::make_result<S>(std::move(out), "add_scalar", {a}, [](detail::Node<S>& self) {
    self.inputs[0]->grad += self.grad;
  });
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
  return add(a, b);
}

template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
  return sub(a, b);
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

template <typename S>
Tensor<S> sqrt(const Tensor<S>& a) {
  if ((a.value().array() < S(0)).any()) throw NumericError("sqrt: negative input");
  Matrix<S> out = a.value().cwiseSqrt();
  return detail::make_result<S>(std::move(out), "sqrt", {a}, [](detail::Node<S>& self) {
    self.inputs[0]->grad.array() += self.grad.array() / (S(2) * self.value.array());
  });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  Matrix<S> out = a.value().cwiseMax(S(0));
  return detail::make_result<S>(std::move(out), "relu", {a}, [](detail::Node<S>& self) {
    auto& A = *self.inputs[0];
    A.grad.array() += (A.value.array() > S(0)).select(self.grad.array(), S(0));
  });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  Matrix<S> out = (S(1) + (-a.value().array()).exp()).inverse().matrix();
  return detail::make_result<S>(std::move(out), "sigmoid", {a}, [](detail::Node<S>& self) {
    self.inputs[0]->grad.array() += self.grad.array() * self.value.array() * (S(1) - self.value.array());
  });
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
  if ((a.value().array() <= S(0)).any()) throw NumericError("log: non-positive input");
  Matrix<S> out = a.value().array().log().matrix();
  return detail::make_result<S>(std::move(out), "log", {a}, [](detail::Node<S>& self) {
    auto& A = *self.inputs[0];
    A.grad.array() += self.grad.array() / A.value.array();
  });
}

// Row-wise softmax with the row maximum subtracted before exponentiation.
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& a) {
  if (a.value().hasNaN()) throw NumericError("softmax_rows: NaN input");
  Matrix<S> out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const S m = a.value().row(r).maxCoeff();
    out.row(r) = (a.value().row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return detail::make_result<S>(std::move(out), "softmax_rows", {a}, [](detail::Node<S>& self) {
    auto& A = *self.inputs[0];
    const auto& y = self.value;
    const Eigen::Matrix<S, Eigen::Dynamic, 1> dots = self.grad.cwiseProduct(y).rowwise().sum();
    A.grad += y.cwiseProduct(self.grad - dots.replicate(1, y.cols()));
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  Matrix<S> out(1, 1);
  out(0, 0) = a.value().sum();
  return detail::make_result<S>(std::move(out), "sum", {a}, [](detail::Node<S>& self) {
    self.inputs[0]->grad.array() += self.grad(0, 0);
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  return scale(sum(a), S(1) / static_cast<S>(a.size()));
}

// Per-column mean over rows: r x c -> 1 x c.
template <typename S>
Tensor<S> mean_rows(const Tensor<S>& a) {
  if (a.rows() == 0) throw ShapeError("mean_rows: empty input");
  Matrix<S> out = a.value().colwise().mean();
  return detail::make_result<S>(std::move(out), "mean_rows", {a}, [](detail::Node<S>& self) {
    auto& A = *self.inputs[0];
    A.grad.rowwise() += self.grad.row(0) / static_cast<S>(A.value.rows());
  });
}

namespace detail {
template <typename S>
void check_uniform(const char* op, std::span<const Tensor<S>> parts) {
  if (parts.empty()) throw ParameterError(std::string(op) + ": no inputs");
  for (const auto& p : parts) {
    if (p.rows() != parts[0].rows() || p.cols() != parts[0].cols()) {
      throw ShapeError(std::string(op) + ": mixed dims " + dims_string(parts[0].rows(), parts[0].cols()) +
                       " and " + dims_string(p.rows(), p.cols()));
    }
  }
}
}  // namespace detail

// Elementwise maximum across a stack of same-shape tensors (the leading axis).
// Ties route the gradient to the first maximal entry.
template <typename S>
Tensor<S> stack_max(std::span<const Tensor<S>> parts) {
  detail::check_uniform("stack_max", parts);
  const Index r = parts[0].rows(), c = parts[0].cols();
  Matrix<S> out = parts[0].value();
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> arg =
      Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(r, c);
  for (std::size_t k = 1; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j)
        if (v(i, j) > out(i, j)) {
          out(i, j) = v(i, j);
          arg(i, j) = static_cast<int>(k);
        }
  }
  return detail::make_result_n<S>(std::move(out), "stack_max", parts, [arg](detail::Node<S>& self) {
    for (Index i = 0; i < self.grad.rows(); ++i)
      for (Index j = 0; j < self.grad.cols(); ++j) {
        auto& in = *self.inputs[arg(i, j)];
        if (in.requires_grad) in.grad(i, j) += self.grad(i, j);
      }
  });
}

template <typename S>
Tensor<S> stack_mean(std::span<const Tensor<S>> parts) {
  detail::check_uniform("stack_mean", parts);
  Matrix<S> out = parts[0].value();
  for (std::size_t k = 1; k < parts.size(); ++k) out += parts[k].value();
  const S inv = S(1) / static_cast<S>(parts.size());
  out *= inv;
  return detail::make_result_n<S>(std::move(out), "stack_mean", parts, [inv](detail::Node<S>& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) in->grad += self.grad * inv;
  });
}

// ---------------------------------------------------------------------------
// Structural ops

// axis 0 stacks rows, axis 1 joins channels.
template <typename S>
Tensor<S> concat(std::span<const Tensor<S>> parts, int axis) {
  if (parts.empty()) throw ParameterError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ParameterError("concat: axis must be 0 or 1");
  Index rows = 0, cols = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      if (p.cols() != parts[0].cols())
        throw ShapeError("concat(axis=0): column counts differ (" + std::to_string(parts[0].cols()) + " vs " +
                         std::to_string(p.cols()) + ")");
      rows += p.rows();
    } else {
      if (p.rows() != parts[0].rows())
        throw ShapeError("concat(axis=1): row counts differ (" + std::to_string(parts[0].rows()) + " vs " +
                         std::to_string(p.rows()) + ")");
      cols += p.cols();
    }
  }
  if (axis == 0) cols = parts[0].cols();
  else rows = parts[0].rows();
  Matrix<S> out(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      out.middleRows(offset, p.rows()) = p.value();
      offset += p.rows();
    } else {
      out.middleCols(offset, p.cols()) = p.value();
      offset += p.cols();
    }
  }
  return detail::make_result_n<S>(std::move(out), "concat", parts, [axis](detail::Node<S>& self) {
    Index off = 0;
    for (auto& in : self.inputs) {
      const Index extent = axis == 0 ? in->value.rows() : in->value.cols();
      if (in->requires_grad) {
        if (axis == 0) in->grad += self.grad.middleRows(off, extent);
        else in->grad += self.grad.middleCols(off, extent);
      }
      off += extent;
    }
  });
}

template <typename S>
Tensor<S> concat(std::initializer_list<Tensor<S>> parts, int axis) {
  return concat(std::span<const Tensor<S>>(parts.begin(), parts.size()), axis);
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols())
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + std::to_string(a.cols()) + " columns");
  Matrix<S> out = a.value().middleCols(start, count);
  return detail::make_result<S>(std::move(out), "slice_cols", {a}, [start, count](detail::Node<S>& self) {
    self.inputs[0]->grad.middleCols(start, count) += self.grad;
  });
}

// out.row(i) = a.row(index[i]); indices may repeat (gradients accumulate).
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& a, std::vector<Index> index) {
  Matrix<S> out(static_cast<Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= a.rows())
      throw ShapeError("gather_rows: row " + std::to_string(index[i]) + " out of range for " +
                       std::to_string(a.rows()) + " rows");
    out.row(static_cast<Index>(i)) = a.value().row(index[i]);
  }
  return detail::make_result<S>(std::move(out), "gather_rows", {a},
                                [index = std::move(index)](detail::Node<S>& self) {
                                  auto& A = *self.inputs[0];
                                  for (std::size_t i = 0; i < index.size(); ++i)
                                    A.grad.row(index[i]) += self.grad.row(static_cast<Index>(i));
                                });
}

// 3x3 cross-correlation of each column of `a` (an HW x c map laid out row-major
// over an H x W grid) with replicate padding at the borders.
template <typename S>
Tensor<S> conv3x3(const Tensor<S>& a, Index height, Index width, const std::array<S, 9>& kernel) {
  if (height * width != a.rows())
    throw ShapeError("conv3x3: grid " + dims_string(height, width) + " does not cover " + std::to_string(a.rows()) +
                     " rows");
  const Index c = a.cols();
  Matrix<S> out = Matrix<S>::Zero(a.rows(), c);
  auto clampi = [](Index v, Index hi) { return std::clamp<Index>(v, 0, hi - 1); };
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) {
      auto dst = out.row(y * width + x);
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const S w = kernel[(dy + 1) * 3 + (dx + 1)];
          if (w == S(0)) continue;
          dst += w * a.value().row(clampi(y + dy, height) * width + clampi(x + dx, width));
        }
    }
  return detail::make_result<S>(std::move(out), "conv3x3", {a},
                                [height, width, kernel, clampi](detail::Node<S>& self) {
                                  auto& A = *self.inputs[0];
                                  for (Index y = 0; y < height; ++y)
                                    for (Index x = 0; x < width; ++x) {
                                      const auto g = self.grad.row(y * width + x);
                                      for (int dy = -1; dy <= 1; ++dy)
                                        for (int dx = -1; dx <= 1; ++dx) {
                                          const S w = kernel[(dy + 1) * 3 + (dx + 1)];
                                          if (w == S(0)) continue;
                                          A.grad.row(clampi(y + dy, height) * width + clampi(x + dx, width)) += w * g;
                                        }
                                    }
                                });
}

// ---------------------------------------------------------------------------
// Graph traversal

template <typename S>
using Graph = std::vector<detail::Node<S>*>;

// Nodes reachable from `root` through gradient-carrying edges, inputs before
// consumers.
template <typename S>
Graph<S> topological_order(const Tensor<S>& root) {
  Graph<S> order;
  std::unordered_set<const detail::Node<S>*> seen;
  std::vector<std::pair<detail::Node<S>*, std::size_t>> stack;
  if (!root.requires_grad()) return order;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node<S>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <typename S>
void backward(const Tensor<S>& loss) {
  if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got " + dims_string(loss.rows(), loss.cols()));
  if (!loss.requires_grad()) throw ContractError("backward: loss does not depend on any tensor requiring grad");
  const Graph<S> order = topological_order(loss);
  for (auto* node : order)
    if (!node->is_leaf()) node->grad.setZero();
  loss.node()->grad(0, 0) += S(1);
  const std::string& fault = detail::injected_fault();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<S>& node = **it;
    if (!node.backward) continue;
    if (!fault.empty() && fault == node.op) node.grad *= S(1.5);
    node.backward(node);
  }
}

}  // namespace mgfc
