#include "copt/params.hpp"

#include <cmath>

#include "copt/rng.hpp"

namespace copt {

int ParamSet::add(std::string name, Mat init) {
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return static_cast<int>(values_.size()) - 1;
}

int ParamSet::find(const std::string& name) const {
  for (int i = 0; i < size(); ++i)
    if (names_[i] == name) return i;
  return -1;
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Mat& m : values_)
    h = fnv1a(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()), h);
  return h;
}

void GradBuffer::clear() {
  for (Mat& m : g) m.resize(0, 0);
}

void GradBuffer::add(const GradBuffer& other, double weight) {
  if (other.g.size() != g.size()) throw ShapeError("GradBuffer::add: size mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (other.g[i].size() == 0) continue;
    if (g[i].size() == 0)
      g[i] = weight * other.g[i];
    else
      g[i] += weight * other.g[i];
  }
}

void GradBuffer::scale(double s) {
  for (Mat& m : g)
    if (m.size() != 0) m *= s;
}

double GradBuffer::global_norm() const {
  double sq = 0.0;
  for (const Mat& m : g)
    if (m.size() != 0) sq += m.squaredNorm();
  return std::sqrt(sq);
}

Var param(Tape& t, const ParamSet& ps, int index) {
  return t.leaf_view(&ps.value(index), true, index);
}

double clip_global_norm(GradBuffer& grads, double max_norm) {
  const double norm = grads.global_norm();
  if (max_norm > 0.0 && norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

}  // namespace copt
