#ifndef COPT_PARAMS_HPP
#define COPT_PARAMS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "copt/tape.hpp"

namespace copt {

/// Named trainable matrices. Owned by the training loop; tapes reference them
/// through leaf views without copying.
class ParamSet {
 public:
  int add(std::string name, Mat init);
  int find(const std::string& name) const;  // -1 if absent

  int size() const { return static_cast<int>(values_.size()); }
  Mat& value(int i) { return values_.at(i); }
  const Mat& value(int i) const { return values_.at(i); }
  const std::string& name(int i) const { return names_.at(i); }

  /// FNV-1a over raw parameter bytes in declaration order. Any single-bit
  /// change to any value changes the checksum.
  std::uint64_t checksum() const;

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
};

/// Per-parameter gradient accumulator aligned with a ParamSet. Entries stay
/// empty (zero-sized) until touched; an empty entry means an exactly-zero
/// gradient.
struct GradBuffer {
  std::vector<Mat> g;

  explicit GradBuffer(int n_params = 0) : g(n_params) {}

  void resize(int n_params) { g.assign(n_params, Mat()); }
  void clear();
  void add(const GradBuffer& other, double weight = 1.0);
  void scale(double s);
  double global_norm() const;
};

/// Parameter leaf on a tape; gradients flow back into GradBuffer slot `index`
/// via Tape::collect_param_grads.
Var param(Tape& t, const ParamSet& ps, int index);

/// Scales gradients so their global L2 norm is at most max_norm. Returns the
/// pre-clip norm. max_norm <= 0 disables clipping.
double clip_global_norm(GradBuffer& grads, double max_norm);

}  // namespace copt

#endif
