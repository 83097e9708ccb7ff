#ifndef COPT_TAPE_HPP
#define COPT_TAPE_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "copt/errors.hpp"

namespace copt {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

std::string shape_str(const Mat& m);

enum class Op {
  Leaf,
  Matmul,
  Transpose,
  Add,
  Sub,
  CMul,
  ScaleConst,
  Tanh,
  Sigmoid,
  Exp,
  Log,
  Softplus,
  ConcatRows,
  SliceRows,
  Softmax,
  LogSoftmax,
  PickRow,
  Pick,
  Sum,
  CrossEntropy,
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

/// Define-by-run computation record. Nodes are appended in evaluation order,
/// which is by construction a topological order; backward() walks it once in
/// reverse. One tape per forward pass; rebuild rather than reuse.
class Tape {
 public:
  struct Node {
    Op op = Op::Leaf;
    std::vector<int> in;
    int ia = 0;
    int ib = 0;
    double da = 0.0;
    Mat value;
    const Mat* external = nullptr;  // leaf view, not owned
    Mat grad;                       // sized on first touch during backward
    bool requires_grad = false;
    int param_index = -1;
  };

  Var leaf(Mat value, bool requires_grad = false);

  /// Leaf whose storage lives outside the tape (parameter values). The pointee
  /// must outlive the tape. param_index tags the leaf for grad collection.
  Var leaf_view(const Mat* value, bool requires_grad, int param_index = -1);

  const Mat& val(int id) const;
  const Mat& val(Var v) const { return val(v.id); }

  /// Gradient of the last backward() w.r.t. node v; zeros if v was untouched.
  Mat grad_of(Var v) const;

  /// Reverse-mode sweep from a scalar loss. Each node is visited exactly once,
  /// in reverse insertion order. Repeated calls on the same tape re-seed from
  /// scratch and produce bit-identical gradients.
  void backward(Var loss);

  /// Adds every parameter leaf's gradient into sink[param_index]. Entries the
  /// tape never touched are left alone (their gradient is exactly zero).
  void collect_param_grads(std::vector<Mat>& sink) const;

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[id]; }

  // Internal: used by the free-function ops below.
  Var push(Node&& n);

 private:
  std::vector<Node> nodes_;
};

// Graph-building free functions. All register their result on the inputs'
// tape and propagate requires_grad.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var cmul(Var a, Var b);           // elementwise product
Var scale(Var a, double c);
Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
Var concat_rows(const std::vector<Var>& xs);
Var slice_rows(Var a, int first_row, int n_rows);
Var softmax(Var a, int axis = 0);      // axis 0: each column sums to 1
Var log_softmax(Var a, int axis = 0);
Var pick_row(Var m, int row);          // row of a matrix as a column vector
Var pick(Var v, int index);            // element of a column vector, 1x1
Var sum(Var a);                        // sum of all entries, 1x1
Var cross_entropy(Var log_probs, int target);  // -log_probs[target], 1x1

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

}  // namespace copt

#endif
