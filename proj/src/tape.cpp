#include "copt/tape.hpp"

#include <cmath>

namespace copt {

std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

namespace {

Tape* same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape)
    throw ContractError("operands must live on the same tape");
  return a.tape;
}

// Applies f to each distribution slice of m per axis (0: columns, 1: rows).
template <typename F>
void for_each_slice(int axis, Eigen::Index rows, Eigen::Index cols, F&& f) {
  if (axis == 0) {
    for (Eigen::Index c = 0; c < cols; ++c) f(c);
  } else {
    for (Eigen::Index r = 0; r < rows; ++r) f(r);
  }
}

Vec softmax_vec(const Vec& x) {
  const double m = x.maxCoeff();
  Vec e = (x.array() - m).exp();
  return e / e.sum();
}

}  // namespace

Var Tape::push(Node&& n) {
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Mat value, bool requires_grad) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::leaf_view(const Mat* value, bool requires_grad, int param_index) {
  Node n;
  n.op = Op::Leaf;
  n.external = value;
  n.requires_grad = requires_grad;
  n.param_index = param_index;
  return push(std::move(n));
}

const Mat& Tape::val(int id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.value;
}

Mat Tape::grad_of(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.size() == 0) return Mat::Zero(val(v.id).rows(), val(v.id).cols());
  return n.grad;
}

namespace {

void touch_grad(Tape::Node& n, const Mat& like) {
  if (n.grad.size() == 0) n.grad = Mat::Zero(like.rows(), like.cols());
}

}  // namespace

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss lives on a different tape");
  const Mat& lv = val(loss.id);
  if (lv.rows() != 1 || lv.cols() != 1)
    throw ContractError("backward: loss must be a scalar, got " + shape_str(lv));

  for (Node& n : nodes_) n.grad.resize(0, 0);
  nodes_[loss.id].grad = Mat::Ones(1, 1);

  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0 || n.op == Op::Leaf) continue;
    const Mat& g = n.grad;
    const Mat& y = val(id);

    auto in_val = [&](int k) -> const Mat& { return val(n.in[k]); };
    auto in_grad = [&](int k) -> Mat& {
      Node& m = nodes_[n.in[k]];
      touch_grad(m, in_val(k));
      return m.grad;
    };
    auto wants = [&](int k) { return nodes_[n.in[k]].requires_grad; };

    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Matmul:
        if (wants(0)) in_grad(0) += g * in_val(1).transpose();
        if (wants(1)) in_grad(1) += in_val(0).transpose() * g;
        break;
      case Op::Transpose:
        if (wants(0)) in_grad(0) += g.transpose();
        break;
      case Op::Add:
        if (wants(0)) in_grad(0) += g;
        if (wants(1)) in_grad(1) += g;
        break;
      case Op::Sub:
        if (wants(0)) in_grad(0) += g;
        if (wants(1)) in_grad(1) -= g;
        break;
      case Op::CMul:
        if (wants(0)) in_grad(0).array() += g.array() * in_val(1).array();
        if (wants(1)) in_grad(1).array() += g.array() * in_val(0).array();
        break;
      case Op::ScaleConst:
        if (wants(0)) in_grad(0) += n.da * g;
        break;
      case Op::Tanh:
        if (wants(0)) in_grad(0).array() += g.array() * (1.0 - y.array().square());
        break;
      case Op::Sigmoid:
        if (wants(0)) in_grad(0).array() += g.array() * y.array() * (1.0 - y.array());
        break;
      case Op::Exp:
        if (wants(0)) in_grad(0).array() += g.array() * y.array();
        break;
      case Op::Log:
        if (wants(0)) in_grad(0).array() += g.array() / in_val(0).array();
        break;
      case Op::Softplus:
        if (wants(0))
          in_grad(0).array() += g.array() / (1.0 + (-in_val(0).array()).exp());
        break;
      case Op::ConcatRows: {
        Eigen::Index r = 0;
        for (std::size_t k = 0; k < n.in.size(); ++k) {
          const Eigen::Index nk = in_val(static_cast<int>(k)).rows();
          if (wants(static_cast<int>(k)))
            in_grad(static_cast<int>(k)) += g.middleRows(r, nk);
          r += nk;
        }
        break;
      }
      case Op::SliceRows:
        if (wants(0)) in_grad(0).middleRows(n.ia, n.ib) += g;
        break;
      case Op::Softmax: {
        if (!wants(0)) break;
        Mat& gi = in_grad(0);
        for_each_slice(n.ia, y.rows(), y.cols(), [&](Eigen::Index s) {
          if (n.ia == 0) {
            const double dot = (g.col(s).array() * y.col(s).array()).sum();
            gi.col(s).array() += y.col(s).array() * (g.col(s).array() - dot);
          } else {
            const double dot = (g.row(s).array() * y.row(s).array()).sum();
            gi.row(s).array() += y.row(s).array() * (g.row(s).array() - dot);
          }
        });
        break;
      }
      case Op::LogSoftmax: {
        if (!wants(0)) break;
        Mat& gi = in_grad(0);
        for_each_slice(n.ia, y.rows(), y.cols(), [&](Eigen::Index s) {
          if (n.ia == 0) {
            const double tot = g.col(s).sum();
            gi.col(s).array() += g.col(s).array() - y.col(s).array().exp() * tot;
          } else {
            const double tot = g.row(s).sum();
            gi.row(s).array() += g.row(s).array() - y.row(s).array().exp() * tot;
          }
        });
        break;
      }
      case Op::PickRow:
        if (wants(0)) in_grad(0).row(n.ia) += g.transpose();
        break;
      case Op::Pick:
        if (wants(0)) in_grad(0)(n.ia, 0) += g(0, 0);
        break;
      case Op::Sum:
        if (wants(0)) in_grad(0).array() += g(0, 0);
        break;
      case Op::CrossEntropy:
        if (wants(0)) in_grad(0)(n.ia, 0) -= g(0, 0);
        break;
    }
  }
}

void Tape::collect_param_grads(std::vector<Mat>& sink) const {
  for (const Node& n : nodes_) {
    if (n.param_index < 0 || n.grad.size() == 0) continue;
    Mat& dst = sink.at(n.param_index);
    if (dst.size() == 0)
      dst = n.grad;
    else
      dst += n.grad;
  }
}

namespace {

Var unary(Var a, Op op, Mat value, int ia = 0, int ib = 0, double da = 0.0) {
  Tape::Node n;
  n.op = op;
  n.in = {a.id};
  n.ia = ia;
  n.ib = ib;
  n.da = da;
  n.value = std::move(value);
  n.requires_grad = a.tape->node(a.id).requires_grad;
  return a.tape->push(std::move(n));
}

Var binary(Var a, Var b, Op op, Mat value) {
  Tape* t = same_tape(a, b);
  Tape::Node n;
  n.op = op;
  n.in = {a.id, b.id};
  n.value = std::move(value);
  n.requires_grad =
      t->node(a.id).requires_grad || t->node(b.id).requires_grad;
  return t->push(std::move(n));
}

void require_same_shape(const Mat& x, const Mat& y, const char* opname) {
  if (x.rows() != y.rows() || x.cols() != y.cols())
    throw ShapeError(std::string(opname) + ": shapes " + shape_str(x) + " and " +
                     shape_str(y) + " differ");
}

}  // namespace

Var matmul(Var a, Var b) {
  same_tape(a, b);
  const Mat& x = a.tape->val(a);
  const Mat& y = b.tape->val(b);
  if (x.cols() != y.rows())
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(x) +
                     " * " + shape_str(y));
  return binary(a, b, Op::Matmul, x * y);
}

Var transpose(Var a) { return unary(a, Op::Transpose, a.tape->val(a).transpose()); }

Var add(Var a, Var b) {
  same_tape(a, b);
  require_same_shape(a.tape->val(a), b.tape->val(b), "add");
  return binary(a, b, Op::Add, a.tape->val(a) + b.tape->val(b));
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  require_same_shape(a.tape->val(a), b.tape->val(b), "sub");
  return binary(a, b, Op::Sub, a.tape->val(a) - b.tape->val(b));
}

Var cmul(Var a, Var b) {
  same_tape(a, b);
  require_same_shape(a.tape->val(a), b.tape->val(b), "mul");
  return binary(a, b, Op::CMul, a.tape->val(a).cwiseProduct(b.tape->val(b)));
}

Var scale(Var a, double c) {
  return unary(a, Op::ScaleConst, c * a.tape->val(a), 0, 0, c);
}

Var tanh(Var a) { return unary(a, Op::Tanh, a.tape->val(a).array().tanh()); }

Var sigmoid(Var a) {
  const auto& x = a.tape->val(a).array();
  // Branch on sign for stability at large |x|.
  Mat y = x.unaryExpr([](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return unary(a, Op::Sigmoid, std::move(y));
}

Var exp(Var a) { return unary(a, Op::Exp, a.tape->val(a).array().exp()); }

Var log(Var a) {
  const Mat& x = a.tape->val(a);
  if ((x.array() <= 0.0).any())
    throw DomainError("log: input has non-positive entries");
  return unary(a, Op::Log, x.array().log());
}

Var softplus(Var a) {
  Mat y = a.tape->val(a).unaryExpr(
      [](double v) { return std::fmax(v, 0.0) + std::log1p(std::exp(-std::fabs(v))); });
  return unary(a, Op::Softplus, std::move(y));
}

Var concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw ContractError("concat: needs at least one input");
  Tape* t = xs[0].tape;
  Eigen::Index rows = 0;
  const Eigen::Index cols = t->val(xs[0]).cols();
  bool rg = false;
  for (Var v : xs) {
    same_tape(xs[0], v);
    const Mat& m = t->val(v);
    if (m.cols() != cols)
      throw ShapeError("concat: inputs must share the non-joined axis, got " +
                       shape_str(t->val(xs[0])) + " vs " + shape_str(m));
    rows += m.rows();
    rg = rg || t->node(v.id).requires_grad;
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (Var v : xs) {
    const Mat& m = t->val(v);
    out.middleRows(r, m.rows()) = m;
    r += m.rows();
  }
  Tape::Node n;
  n.op = Op::ConcatRows;
  for (Var v : xs) n.in.push_back(v.id);
  n.value = std::move(out);
  n.requires_grad = rg;
  return t->push(std::move(n));
}

Var slice_rows(Var a, int first_row, int n_rows) {
  const Mat& x = a.tape->val(a);
  if (first_row < 0 || n_rows < 0 || first_row + n_rows > x.rows())
    throw ShapeError("slice_rows: range [" + std::to_string(first_row) + ", " +
                     std::to_string(first_row + n_rows) + ") out of " + shape_str(x));
  return unary(a, Op::SliceRows, x.middleRows(first_row, n_rows), first_row, n_rows);
}

Var softmax(Var a, int axis) {
  const Mat& x = a.tape->val(a);
  if (!x.allFinite()) throw DomainError("softmax: non-finite logits");
  Mat y(x.rows(), x.cols());
  for_each_slice(axis, x.rows(), x.cols(), [&](Eigen::Index s) {
    if (axis == 0)
      y.col(s) = softmax_vec(x.col(s));
    else
      y.row(s) = softmax_vec(x.row(s).transpose()).transpose();
  });
  return unary(a, Op::Softmax, std::move(y), axis);
}

Var log_softmax(Var a, int axis) {
  const Mat& x = a.tape->val(a);
  if (!x.allFinite()) throw DomainError("log_softmax: non-finite logits");
  Mat y(x.rows(), x.cols());
  auto one = [&](const Vec& v) -> Vec {
    const double m = v.maxCoeff();
    const double lse = m + std::log((v.array() - m).exp().sum());
    return v.array() - lse;
  };
  for_each_slice(axis, x.rows(), x.cols(), [&](Eigen::Index s) {
    if (axis == 0)
      y.col(s) = one(x.col(s));
    else
      y.row(s) = one(x.row(s).transpose()).transpose();
  });
  return unary(a, Op::LogSoftmax, std::move(y), axis);
}

Var pick_row(Var m, int row) {
  const Mat& x = m.tape->val(m);
  if (row < 0 || row >= x.rows())
    throw std::out_of_range("pick_row: row " + std::to_string(row) + " out of " +
                            shape_str(x));
  return unary(m, Op::PickRow, x.row(row).transpose(), row);
}

Var pick(Var v, int index) {
  const Mat& x = v.tape->val(v);
  if (x.cols() != 1) throw ShapeError("pick: expected a column vector, got " + shape_str(x));
  if (index < 0 || index >= x.rows())
    throw std::out_of_range("pick: index " + std::to_string(index) + " out of " +
                            shape_str(x));
  return unary(v, Op::Pick, Mat::Constant(1, 1, x(index, 0)), index);
}

Var sum(Var a) {
  return unary(a, Op::Sum, Mat::Constant(1, 1, a.tape->val(a).sum()));
}

Var cross_entropy(Var log_probs, int target) {
  const Mat& x = log_probs.tape->val(log_probs);
  if (x.cols() != 1)
    throw ShapeError("cross_entropy: expected a column vector, got " + shape_str(x));
  if (target < 0 || target >= x.rows())
    throw std::out_of_range("cross_entropy: target id " + std::to_string(target) +
                            " outside vocabulary of size " + std::to_string(x.rows()));
  return unary(log_probs, Op::CrossEntropy, Mat::Constant(1, 1, -x(target, 0)), target);
}

}  // namespace copt
