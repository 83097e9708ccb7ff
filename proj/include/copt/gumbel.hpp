#ifndef COPT_GUMBEL_HPP
#define COPT_GUMBEL_HPP

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <vector>

#include "copt/rng.hpp"

namespace copt {

using Vec = Eigen::VectorXd;

/// The exogenous noise of the generation process: one Gumbel vector per
/// decoding step. A scenario is either drawn fresh or inferred in hindsight
/// from an observed response; for inferred steps j < source_length, the
/// argmax of (behavior log-probs + steps[j]) equals the observed token.
struct Scenario {
  enum class Origin { fresh, inferred };

  std::vector<Vec> steps;
  Origin origin = Origin::fresh;
  int source_length = 0;

  static Scenario fresh() { return Scenario{}; }

  /// Noise vector for step j (0-based), drawing fresh vectors on demand once
  /// j runs past the inferred prefix.
  const Vec& step(int j, int vocab_size, RngStream& rng);
};

/// n independent standard Gumbel draws, g = -ln(-ln(v)) with v uniform,
/// clamped to [1e-12, 1 - 1e-12] before the double log.
Vec sample_standard_gumbel(int n, RngStream& rng);
double sample_standard_gumbel(RngStream& rng);

/// The causal mechanism: argmax of (log_probs + u), ties broken by lowest
/// index. log_probs must be normalized (|logsumexp| <= 1e-9).
int gumbel_argmax(const Vec& log_probs, const Vec& u);

/// Gumbel(location) conditioned to lie at or below bound; always <= bound.
double truncated_gumbel(double location, double bound, RngStream& rng);

/// Hindsight noise for one step: sample the shifted-Gumbel maximum at the
/// observed token, sample every other coordinate truncated at that maximum,
/// and subtract the behavior log-probs. The returned u always satisfies
/// gumbel_argmax(log_probs_mu, u) == observed.
Vec posterior_scenario_step(const Vec& log_probs_mu, int observed, RngStream& rng);

/// Rejection-sampling posterior: draws fresh Gumbel vectors until the argmax
/// condition holds. Retained as a verification oracle; the truncated-Gumbel
/// construction above is the production path. tries_out, when non-null,
/// receives the number of draws used.
Vec rejection_posterior(const Vec& log_probs_mu, int observed, RngStream& rng,
                        int max_tries = 100000, int* tries_out = nullptr);

/// Behavior policy's log-distribution at step j given the observed prefix
/// y_{1:j} (teacher-forced). Called with j = 0, 1, ... in order.
using StepLogProbFn = std::function<Vec(int step, std::span<const int> observed_prefix)>;

/// Infers the full scenario of an observed response (one vector per token,
/// the terminal EOS included if the caller appended it).
Scenario infer_scenario(const StepLogProbFn& behavior_log_probs,
                        std::span<const int> observed_response, RngStream& rng);

/// log(sum(exp(v))), overflow-safe.
double logsumexp(const Vec& v);

}  // namespace copt

#endif
