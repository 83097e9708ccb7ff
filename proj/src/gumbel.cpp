#include "copt/gumbel.hpp"

#include <cmath>

#include "copt/errors.hpp"

namespace copt {

namespace {

constexpr double kUniformClamp = 1e-12;

void require_normalized(const Vec& log_probs, const char* where) {
  const double lse = logsumexp(log_probs);
  if (!(std::fabs(lse) <= 1e-9))
    throw ContractError(std::string(where) + ": log-probs not normalized, logsumexp = " +
                        std::to_string(lse));
}

double logaddexp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::fmax(a, b);
  return hi + std::log1p(std::exp(-std::fabs(a - b)));
}

}  // namespace

double logsumexp(const Vec& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

const Vec& Scenario::step(int j, int vocab_size, RngStream& rng) {
  while (static_cast<int>(steps.size()) <= j)
    steps.push_back(sample_standard_gumbel(vocab_size, rng));
  return steps[j];
}

double sample_standard_gumbel(RngStream& rng) {
  double v = rng.uniform01();
  v = std::fmin(std::fmax(v, kUniformClamp), 1.0 - kUniformClamp);
  return -std::log(-std::log(v));
}

Vec sample_standard_gumbel(int n, RngStream& rng) {
  if (n < 1) throw ContractError("sample_standard_gumbel: n must be >= 1");
  Vec g(n);
  for (int i = 0; i < n; ++i) g[i] = sample_standard_gumbel(rng);
  return g;
}

int gumbel_argmax(const Vec& log_probs, const Vec& u) {
  if (log_probs.size() != u.size())
    throw ShapeError("gumbel_argmax: log-probs length " + std::to_string(log_probs.size()) +
                     " vs noise length " + std::to_string(u.size()));
  require_normalized(log_probs, "gumbel_argmax");
  int best = 0;
  double best_v = log_probs[0] + u[0];
  for (int i = 1; i < log_probs.size(); ++i) {
    const double v = log_probs[i] + u[i];
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  return best;
}

double truncated_gumbel(double location, double bound, RngStream& rng) {
  if (!std::isfinite(bound)) throw ContractError("truncated_gumbel: bound must be finite");
  const double g = sample_standard_gumbel(rng);
  return -logaddexp(-bound, -(location + g));
}

Vec posterior_scenario_step(const Vec& log_probs_mu, int observed, RngStream& rng) {
  require_normalized(log_probs_mu, "posterior_scenario_step");
  if (observed < 0 || observed >= log_probs_mu.size())
    throw ContractError("posterior_scenario_step: observed token out of range");

  // logsumexp(log p) = 0, so the maximum of the shifted Gumbels is a plain
  // standard Gumbel draw.
  const double top = sample_standard_gumbel(rng);
  Vec g(log_probs_mu.size());
  g[observed] = top;
  for (int i = 0; i < log_probs_mu.size(); ++i) {
    if (i == observed) continue;
    g[i] = truncated_gumbel(log_probs_mu[i], top, rng);
  }
  return g - log_probs_mu;
}

Vec rejection_posterior(const Vec& log_probs_mu, int observed, RngStream& rng,
                        int max_tries, int* tries_out) {
  require_normalized(log_probs_mu, "rejection_posterior");
  if (observed < 0 || observed >= log_probs_mu.size())
    throw ContractError("rejection_posterior: observed token out of range");
  if (!std::isfinite(log_probs_mu[observed]))
    throw ContractError("rejection_posterior: observed token has zero probability");

  for (int t = 1; t <= max_tries; ++t) {
    Vec u = sample_standard_gumbel(static_cast<int>(log_probs_mu.size()), rng);
    if (gumbel_argmax(log_probs_mu, u) == observed) {
      if (tries_out) *tries_out = t;
      return u;
    }
  }
  throw OracleTimeout("rejection_posterior: no accepted draw in " +
                      std::to_string(max_tries) + " tries");
}

Scenario infer_scenario(const StepLogProbFn& behavior_log_probs,
                        std::span<const int> observed_response, RngStream& rng) {
  Scenario sc;
  sc.origin = Scenario::Origin::inferred;
  sc.source_length = static_cast<int>(observed_response.size());
  sc.steps.reserve(observed_response.size());
  for (int j = 0; j < static_cast<int>(observed_response.size()); ++j) {
    const Vec lp = behavior_log_probs(j, observed_response.subspan(0, j));
    sc.steps.push_back(posterior_scenario_step(lp, observed_response[j], rng));
  }
  return sc;
}

}  // namespace copt
