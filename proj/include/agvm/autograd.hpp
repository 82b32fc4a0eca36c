#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A BasicTape owns every node created during one forward evaluation. Nodes are
// appended in creation order, so the node vector is already a topological
// order and the backward sweep is a plain reverse loop. A tape may be
// differentiated exactly once.

#include <Eigen/Dense>

#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace agvm {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

namespace ad {

struct Shape {
  Index rows = 0;
  Index cols = 0;

  Index size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

inline std::string to_string(const Shape& s) {
  return "[" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + "]";
}

template <typename Scalar>
class BasicTape;

/// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
template <typename Scalar>
class BasicTensor {
 public:
  BasicTensor() = default;

  const Matrix<Scalar>& value() const { return node().value; }
  Scalar item() const;
  Shape shape() const { return {node().value.rows(), node().value.cols()}; }
  Index size() const { return node().value.size(); }
  bool requires_grad() const { return node().requires_grad; }
  bool has_grad() const { return node().grad.size() == node().value.size() && node().has_grad; }
  const Matrix<Scalar>& grad() const;

  BasicTape<Scalar>* tape() const { return tape_; }
  Index id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class BasicTape<Scalar>;
  BasicTensor(BasicTape<Scalar>* tape, Index id) : tape_(tape), id_(id) {}

  const auto& node() const;

  BasicTape<Scalar>* tape_ = nullptr;
  Index id_ = -1;
};

template <typename Scalar>
class BasicTape {
 public:
  using Tensor = BasicTensor<Scalar>;
  using Mat = Matrix<Scalar>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  Tensor leaf(Mat value, bool requires_grad = false) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  Tensor constant(Mat value) { return leaf(std::move(value), false); }

  Tensor row(std::initializer_list<Scalar> values, bool requires_grad = false) {
    Mat m(1, static_cast<Index>(values.size()));
    Index k = 0;
    for (Scalar v : values) m(0, k++) = v;
    return leaf(std::move(m), requires_grad);
  }

  // -- primitives ----------------------------------------------------------

  Tensor matmul(Tensor a, Tensor b) {
    check_owner(a, "matmul");
    check_owner(b, "matmul");
    const Shape sa = a.shape(), sb = b.shape();
    if (sa.cols != sb.rows) shape_error("matmul", sa, sb);
    Node n;
    n.op = Op::MatMul;
    n.a = a.id();
    n.b = b.id();
    n.value.noalias() = value(a) * value(b);
    return push_derived(std::move(n));
  }

  // Elementwise sum. `b` may be a single row broadcast over the rows of `a`.
  Tensor add(Tensor a, Tensor b) {
    check_owner(a, "add");
    check_owner(b, "add");
    return broadcast_binary(Op::Add, a, b, "add");
  }

  Tensor subtract(Tensor a, Tensor b) {
    check_owner(a, "subtract");
    check_owner(b, "subtract");
    return broadcast_binary(Op::Sub, a, b, "subtract");
  }

  // Elementwise (Hadamard) product with the same broadcast rule as add.
  Tensor multiply(Tensor a, Tensor b) {
    check_owner(a, "multiply");
    check_owner(b, "multiply");
    return broadcast_binary(Op::Mul, a, b, "multiply");
  }

  Tensor scale(Tensor a, Scalar factor) {
    check_owner(a, "scale");
    Node n;
    n.op = Op::Scale;
    n.a = a.id();
    n.scalar = factor;
    n.value = value(a) * factor;
    return push_derived(std::move(n));
  }

  Tensor relu(Tensor a) {
    check_owner(a, "relu");
    Node n;
    n.op = Op::Relu;
    n.a = a.id();
    n.value = value(a).cwiseMax(Scalar(0));
    return push_derived(std::move(n));
  }

  Tensor sum(Tensor a) {
    check_owner(a, "sum");
    Node n;
    n.op = Op::Sum;
    n.a = a.id();
    n.value = Mat::Constant(1, 1, ordered_sum(value(a)));
    return push_derived(std::move(n));
  }

  Tensor mean(Tensor a) {
    check_owner(a, "mean");
    Node n;
    n.op = Op::Mean;
    n.a = a.id();
    n.value = Mat::Constant(1, 1, ordered_sum(value(a)) / static_cast<Scalar>(value(a).size()));
    return push_derived(std::move(n));
  }

  // Zeroes every element whose `keep` entry is false.
  Tensor mask(Tensor a, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& keep) {
    check_owner(a, "mask");
    const Shape sa = a.shape();
    if (keep.rows() != sa.rows || keep.cols() != sa.cols) shape_error("mask", sa, {keep.rows(), keep.cols()});
    Node n;
    n.op = Op::Mask;
    n.a = a.id();
    n.aux = keep.template cast<Scalar>().matrix();
    n.value = value(a).cwiseProduct(n.aux);
    return push_derived(std::move(n));
  }

  // Mean of (prediction - target)^2 over all elements. Target is not differentiated.
  Tensor squared_error(Tensor prediction, const Mat& target) {
    check_owner(prediction, "squared_error");
    const Shape sp = prediction.shape();
    if (target.rows() != sp.rows || target.cols() != sp.cols)
      shape_error("squared_error", sp, {target.rows(), target.cols()});
    return masked_squared_error_impl(prediction, target, Mat::Ones(sp.rows, sp.cols), sp.size());
  }

  // Mean of (prediction - target)^2 over the elements where keep is true.
  Tensor masked_squared_error(Tensor prediction, const Mat& target,
                              const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& keep) {
    check_owner(prediction, "masked_squared_error");
    const Shape sp = prediction.shape();
    if (target.rows() != sp.rows || target.cols() != sp.cols)
      shape_error("masked_squared_error", sp, {target.rows(), target.cols()});
    if (keep.rows() != sp.rows || keep.cols() != sp.cols)
      shape_error("masked_squared_error", sp, {keep.rows(), keep.cols()});
    const Index kept = keep.count();
    if (kept == 0) throw std::invalid_argument("masked_squared_error: every element is masked out");
    return masked_squared_error_impl(prediction, target, keep.template cast<Scalar>().matrix(), kept);
  }

  // Row-major reinterpretation; the element order is unchanged.
  Tensor reshape(Tensor a, Index rows, Index cols) {
    check_owner(a, "reshape");
    const Shape sa = a.shape();
    if (rows * cols != sa.size()) shape_error("reshape", sa, {rows, cols});
    Node n;
    n.op = Op::Reshape;
    n.a = a.id();
    n.value = Eigen::Map<const Mat>(value(a).data(), rows, cols);
    return push_derived(std::move(n));
  }

  // Column-wise concatenation of tensors with equal row counts.
  Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const Index rows = parts.front().shape().rows;
    Index cols = 0;
    for (const auto& p : parts) {
      check_owner(p, "concat_cols");
      if (p.shape().rows != rows) shape_error("concat_cols", parts.front().shape(), p.shape());
      cols += p.shape().cols;
    }
    Node n;
    n.op = Op::Concat;
    n.value.resize(rows, cols);
    Index c = 0;
    for (const auto& p : parts) {
      n.value.middleCols(c, p.shape().cols) = value(p);
      n.inputs.push_back(p.id());
      c += p.shape().cols;
    }
    return push_derived(std::move(n));
  }

  // -- differentiation -----------------------------------------------------

  void backward(Tensor loss) {
    check_owner(loss, "backward");
    if (loss.size() != 1)
      throw std::invalid_argument("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
    consumed_ = true;

    for (auto& n : nodes_) n.has_grad = false;
    Node& root = nodes_[static_cast<std::size_t>(loss.id())];
    if (root.requires_grad) {
      root.grad = Mat::Ones(1, 1);
      root.has_grad = true;
      for (Index i = loss.id(); i >= 0; --i) {
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        // a node no gradient reached contributes nothing upstream
        if (n.has_grad && n.op != Op::Leaf) propagate(n);
      }
    }
    for (auto& n : nodes_) {
      if (n.requires_grad && !n.has_grad) {
        n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        n.has_grad = true;
      }
    }
  }

  bool consumed() const { return consumed_; }
  Index size() const { return static_cast<Index>(nodes_.size()); }

  // Sign pattern (-1, 0, +1) of every relu input on the tape, in tape order.
  std::vector<signed char> relu_signature() const {
    std::vector<signed char> sig;
    for (const auto& n : nodes_) {
      if (n.op != Op::Relu) continue;
      const Mat& x = nodes_[static_cast<std::size_t>(n.a)].value;
      for (Index k = 0; k < x.size(); ++k) {
        const Scalar v = x.data()[k];
        sig.push_back(static_cast<signed char>((v > 0) - (v < 0)));
      }
    }
    return sig;
  }

 private:
  friend class BasicTensor<Scalar>;

  enum class Op { Leaf, MatMul, Add, Sub, Mul, Scale, Relu, Sum, Mean, Mask, MaskedSquaredError, Reshape, Concat };

  struct Node {
    Op op = Op::Leaf;
    Index a = -1;
    Index b = -1;
    std::vector<Index> inputs;
    Mat value;
    Mat grad;
    Mat aux;
    Mat aux2;
    Scalar scalar = Scalar(0);
    bool requires_grad = false;
    bool has_grad = false;
    bool broadcast = false;
  };

  static Scalar ordered_sum(const Mat& m) {
    Scalar s(0);
    for (Index k = 0; k < m.size(); ++k) s += m.data()[k];
    return s;
  }

  [[noreturn]] static void shape_error(const char* op, const Shape& a, const Shape& b) {
    std::ostringstream os;
    os << op << ": shape mismatch " << to_string(a) << " vs " << to_string(b);
    throw std::invalid_argument(os.str());
  }

  void check_owner(const Tensor& t, const char* op) const {
    if (t.tape_ != this) throw std::invalid_argument(std::string(op) + ": tensor belongs to a different tape");
    if (consumed_)
      throw std::logic_error(std::string(op) + ": tape has already been consumed by a backward pass");
  }

  const Mat& value(const Tensor& t) const { return nodes_[static_cast<std::size_t>(t.id())].value; }

  Tensor push(Node n) {
    nodes_.push_back(std::move(n));
    return Tensor(this, static_cast<Index>(nodes_.size()) - 1);
  }

  Tensor push_derived(Node n) {
    bool rg = false;
    if (n.a >= 0) rg = rg || nodes_[static_cast<std::size_t>(n.a)].requires_grad;
    if (n.b >= 0) rg = rg || nodes_[static_cast<std::size_t>(n.b)].requires_grad;
    for (Index in : n.inputs) rg = rg || nodes_[static_cast<std::size_t>(in)].requires_grad;
    n.requires_grad = rg;
    return push(std::move(n));
  }

  Tensor broadcast_binary(Op op, Tensor a, Tensor b, const char* name) {
    const Shape sa = a.shape(), sb = b.shape();
    const bool same = sa == sb;
    const bool row_broadcast = !same && sb.rows == 1 && sb.cols == sa.cols;
    if (!same && !row_broadcast) shape_error(name, sa, sb);
    Node n;
    n.op = op;
    n.a = a.id();
    n.b = b.id();
    n.broadcast = row_broadcast;
    const Mat& va = value(a);
    const Mat& vb = value(b);
    if (same) {
      if (op == Op::Add) n.value = va + vb;
      else if (op == Op::Sub) n.value = va - vb;
      else n.value = va.cwiseProduct(vb);
    } else {
      const auto rowv = vb.row(0);
      if (op == Op::Add) n.value = va.rowwise() + rowv;
      else if (op == Op::Sub) n.value = va.rowwise() - rowv;
      else n.value = va.array().rowwise() * rowv.array();
    }
    return push_derived(std::move(n));
  }

  Tensor masked_squared_error_impl(Tensor prediction, const Mat& target, Mat weights, Index kept) {
    Node n;
    n.op = Op::MaskedSquaredError;
    n.a = prediction.id();
    n.aux = (value(prediction) - target).cwiseProduct(weights);  // masked residual
    n.aux2 = std::move(weights);
    n.scalar = static_cast<Scalar>(kept);
    Scalar s(0);
    for (Index k = 0; k < n.aux.size(); ++k) s += n.aux.data()[k] * n.aux.data()[k];
    n.value = Mat::Constant(1, 1, s / n.scalar);
    return push_derived(std::move(n));
  }

  // The first contribution assigns, later ones add.
  template <typename Expr>
  void accumulate(Index id, const Expr& g) {
    Node& in = nodes_[static_cast<std::size_t>(id)];
    if (!in.requires_grad) return;
    if (in.has_grad) {
      in.grad += g;
    } else {
      in.grad = g;
      in.has_grad = true;
    }
  }

  template <typename Lhs, typename Rhs>
  void accumulate_product(Index id, const Lhs& lhs, const Rhs& rhs) {
    Node& in = nodes_[static_cast<std::size_t>(id)];
    if (in.has_grad) {
      in.grad.noalias() += lhs * rhs;
    } else {
      in.grad.noalias() = lhs * rhs;
      in.has_grad = true;
    }
  }

  bool needs(Index id) const { return id >= 0 && nodes_[static_cast<std::size_t>(id)].requires_grad; }

  void propagate(const Node& n) {
    const Mat& g = n.grad;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::MatMul: {
        const Mat& va = nodes_[static_cast<std::size_t>(n.a)].value;
        const Mat& vb = nodes_[static_cast<std::size_t>(n.b)].value;
        if (needs(n.a)) accumulate_product(n.a, g, vb.transpose());
        if (needs(n.b)) accumulate_product(n.b, va.transpose(), g);
        break;
      }
      case Op::Add:
      case Op::Sub: {
        const Scalar sign = n.op == Op::Add ? Scalar(1) : Scalar(-1);
        if (needs(n.a)) accumulate(n.a, g);
        if (needs(n.b)) {
          if (n.broadcast) accumulate(n.b, sign * g.colwise().sum());
          else accumulate(n.b, sign * g);
        }
        break;
      }
      case Op::Mul: {
        const Mat& va = nodes_[static_cast<std::size_t>(n.a)].value;
        const Mat& vb = nodes_[static_cast<std::size_t>(n.b)].value;
        if (n.broadcast) {
          if (needs(n.a)) accumulate(n.a, (g.array().rowwise() * vb.row(0).array()).matrix());
          if (needs(n.b)) accumulate(n.b, g.cwiseProduct(va).colwise().sum());
        } else {
          if (needs(n.a)) accumulate(n.a, g.cwiseProduct(vb));
          if (needs(n.b)) accumulate(n.b, g.cwiseProduct(va));
        }
        break;
      }
      case Op::Scale:
        accumulate(n.a, g * n.scalar);
        break;
      case Op::Relu: {
        // derivative at 0 is taken to be 0
        const Mat& x = nodes_[static_cast<std::size_t>(n.a)].value;
        accumulate(n.a, (x.array() > Scalar(0)).select(g.array(), Scalar(0)).matrix());
        break;
      }
      case Op::Sum: {
        const Mat& x = nodes_[static_cast<std::size_t>(n.a)].value;
        accumulate(n.a, Mat::Constant(x.rows(), x.cols(), g(0, 0)));
        break;
      }
      case Op::Mean: {
        const Mat& x = nodes_[static_cast<std::size_t>(n.a)].value;
        accumulate(n.a, Mat::Constant(x.rows(), x.cols(), g(0, 0) / static_cast<Scalar>(x.size())));
        break;
      }
      case Op::Mask:
        accumulate(n.a, g.cwiseProduct(n.aux));
        break;
      case Op::MaskedSquaredError:
        accumulate(n.a, n.aux * (Scalar(2) * g(0, 0) / n.scalar));
        break;
      case Op::Reshape: {
        const Mat& x = nodes_[static_cast<std::size_t>(n.a)].value;
        accumulate(n.a, Eigen::Map<const Mat>(g.data(), x.rows(), x.cols()));
        break;
      }
      case Op::Concat: {
        Index c = 0;
        for (Index in : n.inputs) {
          const Index w = nodes_[static_cast<std::size_t>(in)].value.cols();
          if (needs(in)) accumulate(in, g.middleCols(c, w));
          c += w;
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

template <typename Scalar>
const auto& BasicTensor<Scalar>::node() const {
  if (tape_ == nullptr) throw std::logic_error("tensor handle is not attached to a tape");
  return tape_->nodes_[static_cast<std::size_t>(id_)];
}

template <typename Scalar>
Scalar BasicTensor<Scalar>::item() const {
  if (size() != 1) throw std::invalid_argument("item: tensor of shape " + to_string(shape()) + " is not a scalar");
  return value()(0, 0);
}

template <typename Scalar>
const Matrix<Scalar>& BasicTensor<Scalar>::grad() const {
  if (!has_grad()) throw std::logic_error("grad: no gradient has been computed for this tensor");
  return node().grad;
}

// Free-function spellings of the tape primitives.

template <typename Scalar>
BasicTensor<Scalar> matmul(BasicTensor<Scalar> a, BasicTensor<Scalar> b) { return a.tape()->matmul(a, b); }
template <typename Scalar>
BasicTensor<Scalar> add(BasicTensor<Scalar> a, BasicTensor<Scalar> b) { return a.tape()->add(a, b); }
template <typename Scalar>
BasicTensor<Scalar> subtract(BasicTensor<Scalar> a, BasicTensor<Scalar> b) { return a.tape()->subtract(a, b); }
template <typename Scalar>
BasicTensor<Scalar> multiply(BasicTensor<Scalar> a, BasicTensor<Scalar> b) { return a.tape()->multiply(a, b); }
template <typename Scalar>
BasicTensor<Scalar> scale(BasicTensor<Scalar> a, Scalar s) { return a.tape()->scale(a, s); }
template <typename Scalar>
BasicTensor<Scalar> relu(BasicTensor<Scalar> a) { return a.tape()->relu(a); }
template <typename Scalar>
BasicTensor<Scalar> sum(BasicTensor<Scalar> a) { return a.tape()->sum(a); }
template <typename Scalar>
BasicTensor<Scalar> mean(BasicTensor<Scalar> a) { return a.tape()->mean(a); }

template <typename Scalar>
BasicTensor<Scalar> operator+(BasicTensor<Scalar> a, BasicTensor<Scalar> b) { return add(a, b); }
template <typename Scalar>
BasicTensor<Scalar> operator-(BasicTensor<Scalar> a, BasicTensor<Scalar> b) { return subtract(a, b); }

using Tape = BasicTape<double>;
using Tensor = BasicTensor<double>;
using BoolMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace ad
}  // namespace agvm
