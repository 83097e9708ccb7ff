#include "copt/adam.hpp"

#include <cmath>

namespace copt {

AdamState::AdamState(const ParamSet& ps, double learning_rate) : lr(learning_rate) {
  bind(ps);
}

void AdamState::bind(const ParamSet& ps) {
  m_.clear();
  v_.clear();
  for (int i = 0; i < ps.size(); ++i) {
    m_.push_back(Mat::Zero(ps.value(i).rows(), ps.value(i).cols()));
    v_.push_back(Mat::Zero(ps.value(i).rows(), ps.value(i).cols()));
  }
  t_ = 0;
}

void adam_step(ParamSet& params, const GradBuffer& grads, AdamState& state) {
  if (static_cast<int>(state.m_.size()) != params.size())
    throw ShapeError("adam_step: state not bound to this parameter set");
  if (static_cast<int>(grads.g.size()) != params.size())
    throw ShapeError("adam_step: gradient buffer size mismatch");

  state.t_ += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t_));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t_));

  for (int i = 0; i < params.size(); ++i) {
    Mat& p = params.value(i);
    Mat& m = state.m_[i];
    Mat& v = state.v_[i];
    if (m.rows() != p.rows() || m.cols() != p.cols())
      throw ShapeError("adam_step: moment/parameter shape mismatch for " + params.name(i));

    if (grads.g[i].size() != 0) {
      const Mat& g = grads.g[i];
      if (g.rows() != p.rows() || g.cols() != p.cols())
        throw ShapeError("adam_step: gradient shape " + shape_str(g) +
                         " mismatches parameter " + params.name(i) + " " + shape_str(p));
      m = state.beta1 * m + (1.0 - state.beta1) * g;
      v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    } else {
      m *= state.beta1;
      v *= state.beta2;
    }
    const Mat m_hat = m / bc1;
    const Mat v_hat = v / bc2;
    p.array() -= state.lr * m_hat.array() / (v_hat.array().sqrt() + state.eps);
  }
}

}  // namespace copt
