#ifndef COPT_ADAM_HPP
#define COPT_ADAM_HPP

#include "copt/params.hpp"

namespace copt {

/// ADAM with bias correction. Moment accumulators are shaped like their
/// parameters; the step counter increases by one per step.
class AdamState {
 public:
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(const ParamSet& ps, double learning_rate);

  long long step_count() const { return t_; }
  void bind(const ParamSet& ps);  // (re)size moments to match ps

  friend void adam_step(ParamSet& params, const GradBuffer& grads, AdamState& state);

 private:
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  long long t_ = 0;
};

/// One ADAM update of params in place. Empty gradient entries are exact
/// zeros: moments still decay for them.
void adam_step(ParamSet& params, const GradBuffer& grads, AdamState& state);

}  // namespace copt

#endif
