#include "copt/metrics.hpp"

#include <cmath>
#include <cstdlib>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "copt/errors.hpp"

namespace copt {

namespace {

std::string ngram_key(const std::vector<std::string>& toks, std::size_t start, int n) {
  std::string key;
  for (int i = 0; i < n; ++i) {
    if (i) key.push_back('\x1f');
    key += toks[start + i];
  }
  return key;
}

std::map<std::string, long long> ngram_counts(const std::vector<std::string>& toks, int n) {
  std::map<std::string, long long> counts;
  if (static_cast<int>(toks.size()) >= n)
    for (std::size_t s = 0; s + n <= toks.size(); ++s) ++counts[ngram_key(toks, s, n)];
  return counts;
}

}  // namespace

double distinct_k(const std::vector<std::vector<std::string>>& responses, int k) {
  if (k < 1) throw ContractError("distinct_k: k must be >= 1");
  if (responses.empty()) throw ContractError("distinct_k: empty response set");

  std::set<std::string> grams;
  long long words = 0;
  for (const auto& r : responses) {
    words += static_cast<long long>(r.size());
    if (static_cast<int>(r.size()) >= k)
      for (std::size_t s = 0; s + k <= r.size(); ++s) grams.insert(ngram_key(r, s, k));
  }
  if (words == 0) throw ContractError("distinct_k: no words in response set");
  return static_cast<double>(grams.size()) / static_cast<double>(words);
}

double bleu_k(const std::vector<std::vector<std::string>>& hypotheses,
              const std::vector<std::vector<std::vector<std::string>>>& reference_sets,
              int k) {
  if (k < 1 || k > 9) throw ContractError("bleu_k: order out of range");
  if (hypotheses.size() != reference_sets.size())
    throw ContractError("bleu_k: hypothesis/reference count mismatch");
  if (hypotheses.empty()) throw ContractError("bleu_k: empty corpus");

  std::vector<long long> matched(k, 0), total(k, 0);
  long long hyp_len = 0, ref_len = 0;

  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto& hyp = hypotheses[i];
    const auto& refs = reference_sets[i];
    if (refs.empty()) throw ContractError("bleu_k: hypothesis without references");

    hyp_len += static_cast<long long>(hyp.size());
    long long best_ref = static_cast<long long>(refs[0].size());
    for (const auto& r : refs) {
      const long long len = static_cast<long long>(r.size());
      const long long d_new = std::llabs(len - static_cast<long long>(hyp.size()));
      const long long d_old = std::llabs(best_ref - static_cast<long long>(hyp.size()));
      if (d_new < d_old || (d_new == d_old && len < best_ref)) best_ref = len;
    }
    ref_len += best_ref;

    for (int n = 1; n <= k; ++n) {
      const auto hyp_counts = ngram_counts(hyp, n);
      std::map<std::string, long long> max_ref;
      for (const auto& r : refs)
        for (const auto& [g, c] : ngram_counts(r, n))
          max_ref[g] = std::max(max_ref[g], c);
      for (const auto& [g, c] : hyp_counts) {
        total[n - 1] += c;
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[n - 1] += std::min(c, it->second);
      }
    }
  }

  double log_prec = 0.0;
  for (int n = 0; n < k; ++n) {
    double p = total[n] > 0 ? static_cast<double>(matched[n]) / static_cast<double>(total[n])
                            : 0.0;
    if (p <= 0.0) p = 1e-9;
    log_prec += std::log(p);
  }
  log_prec /= k;

  double bp = 1.0;
  if (hyp_len == 0) return 0.0;
  if (hyp_len < ref_len)
    bp = std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));

  return 100.0 * bp * std::exp(log_prec);
}

RewardHistogram reward_histogram(const std::vector<double>& rewards) {
  if (rewards.empty()) throw ContractError("reward_histogram: empty reward list");
  RewardHistogram h;
  std::array<long long, 3> counts{0, 0, 0};
  double sum = 0.0;
  for (double r : rewards) {
    if (!(r >= 0.0 && r <= 1.0))
      throw ContractError("reward_histogram: reward " + std::to_string(r) +
                          " outside [0, 1]");
    sum += r;
    if (r <= 0.33)
      ++counts[0];
    else if (r <= 0.66)
      ++counts[1];
    else
      ++counts[2];
  }
  h.count = static_cast<int>(rewards.size());
  h.mean = sum / static_cast<double>(rewards.size());
  for (int b = 0; b < 3; ++b)
    h.shares[b] = 100.0 * static_cast<double>(counts[b]) / static_cast<double>(rewards.size());
  return h;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["distinct1"] = distinct1;
  j["distinct2"] = distinct2;
  j["bleu"] = bleu;
  j["n_hypotheses"] = n_hypotheses;
  if (has_rewards) {
    auto hist = [](const RewardHistogram& h) {
      return nlohmann::json{{"low", h.shares[0]},
                            {"middle", h.shares[1]},
                            {"high", h.shares[2]},
                            {"mean", h.mean},
                            {"count", h.count}};
    };
    j["rewards"] = {{"counterfactual", hist(counterfactual)}, {"standard", hist(standard)}};
  }
  return j.dump(2);
}

}  // namespace copt
