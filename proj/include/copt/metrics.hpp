#ifndef COPT_METRICS_HPP
#define COPT_METRICS_HPP

#include <array>
#include <string>
#include <vector>

namespace copt {

/// distinct-k: unique k-grams across the whole response set divided by the
/// total word count. Responses shorter than k contribute words but no
/// k-grams.
double distinct_k(const std::vector<std::vector<std::string>>& responses, int k);

/// Corpus-level BLEU-k in percent: clipped modified n-gram precisions for
/// orders 1..k (geometric mean, zero precisions floored at 1e-9) times a
/// brevity penalty against the closest-length reference (ties favor the
/// shorter reference).
double bleu_k(const std::vector<std::vector<std::string>>& hypotheses,
              const std::vector<std::vector<std::vector<std::string>>>& reference_sets,
              int k);

/// Reward histogram over [0.00, 0.33], (0.33, 0.66], (0.66, 1.00].
struct RewardHistogram {
  std::array<double, 3> shares{};  // percentages, sum to 100
  double mean = 0.0;
  int count = 0;
};

RewardHistogram reward_histogram(const std::vector<double>& rewards);

struct EvalReport {
  double distinct1 = 0.0;
  double distinct2 = 0.0;
  std::array<double, 4> bleu{};  // BLEU-1..4, percent
  int n_hypotheses = 0;
  bool has_rewards = false;
  RewardHistogram counterfactual;
  RewardHistogram standard;

  std::string to_json() const;
};

}  // namespace copt

#endif
