#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "copt/errors.hpp"
#include "copt/metrics.hpp"
#include "copt/rng.hpp"

using namespace copt;

namespace {

std::vector<std::string> toks(std::initializer_list<const char*> xs) {
  std::vector<std::string> out;
  for (const char* x : xs) out.emplace_back(x);
  return out;
}

}  // namespace

TEST_CASE("distinct_k: hand counts on 'a b a'") {
  const std::vector<std::vector<std::string>> one{toks({"a", "b", "a"})};
  CHECK(distinct_k(one, 1) == doctest::Approx(2.0 / 3.0));  // {a, b} over 3 words
  CHECK(distinct_k(one, 2) == doctest::Approx(2.0 / 3.0));  // {a b, b a} over 3 words
}

TEST_CASE("distinct_k: duplicates deduplicate across responses") {
  const std::vector<std::vector<std::string>> two{toks({"a", "b"}), toks({"a", "b"})};
  CHECK(distinct_k(two, 1) == doctest::Approx(0.5));  // 2 unique over 4 words
}

TEST_CASE("distinct_k: short responses contribute words but no k-grams") {
  const std::vector<std::vector<std::string>> rs{toks({"a"}), toks({"b", "c"})};
  CHECK(distinct_k(rs, 2) == doctest::Approx(1.0 / 3.0));  // only "b c"
}

TEST_CASE("distinct_k: empty response set and bad k are errors") {
  CHECK_THROWS_AS(distinct_k({}, 1), ContractError);
  CHECK_THROWS_AS(distinct_k({toks({"a"})}, 0), ContractError);
}

TEST_CASE("distinct_k: invariant under response reordering") {
  RngStream rng(5, 0);
  std::vector<std::vector<std::string>> rs;
  for (int i = 0; i < 30; ++i) {
    std::vector<std::string> r;
    for (int j = 0; j < 1 + static_cast<int>(rng.uniform_int(6)); ++j)
      r.push_back("w" + std::to_string(rng.uniform_int(8)));
    rs.push_back(r);
  }
  const double d1 = distinct_k(rs, 2);
  for (std::size_t i = rs.size(); i > 1; --i) std::swap(rs[i - 1], rs[rng.uniform_int(i)]);
  CHECK(distinct_k(rs, 2) == doctest::Approx(d1).epsilon(1e-15));
}

TEST_CASE("bleu_k: identical hypothesis scores 100 for every order up to its length") {
  const auto h = toks({"the", "cat", "sat", "down"});
  for (int k = 1; k <= 4; ++k) CHECK(bleu_k({h}, {{h}}, k) == doctest::Approx(100.0));
}

TEST_CASE("bleu_k: zero overlap scores about zero") {
  const auto h = toks({"x", "y"});
  const auto r = toks({"a", "b"});
  CHECK(bleu_k({h}, {{r}}, 1) <= 0.01);
}

TEST_CASE("bleu_k: hand-evaluated brevity penalty case") {
  // "the cat" vs reference "the cat sat": p1 = 1, BP = exp(1 - 3/2).
  const double expected = 100.0 * std::exp(1.0 - 3.0 / 2.0);
  const double got = bleu_k({toks({"the", "cat"})}, {{toks({"the", "cat", "sat"})}}, 1);
  CHECK(std::fabs(got - 60.65) <= 0.01);
  CHECK(got == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("bleu_k: clipping caps repeated n-grams at the reference count") {
  // "the the the" vs "the cat": clipped unigram count is 1 of 3.
  const double got = bleu_k({toks({"the", "the", "the"})}, {{toks({"the", "cat"})}}, 1);
  CHECK(got == doctest::Approx(100.0 / 3.0).epsilon(1e-9));  // BP = 1 (hyp longer)
}

TEST_CASE("bleu_k: closest-length reference drives the brevity penalty") {
  // len(hyp) = 2; refs of lengths 2 and 5: BP = 1.
  const auto h = toks({"a", "b"});
  const double got = bleu_k({h}, {{toks({"a", "b"}), toks({"a", "b", "c", "d", "e"})}}, 1);
  CHECK(got == doctest::Approx(100.0));
  // Tie between lengths 1 and 3 favors the shorter: BP = 1 (hyp not shorter).
  const double tie = bleu_k({h}, {{toks({"a"}), toks({"a", "b", "c"})}}, 1);
  CHECK(tie == doctest::Approx(100.0));
}

TEST_CASE("bleu_k: multi-reference clipping takes the max count over references") {
  const auto h = toks({"a", "a", "b"});
  const auto r1 = toks({"a", "a"});
  const auto r2 = toks({"b", "c", "d"});
  // unigram matches: a clipped at 2 (r1), b clipped at 1 (r2) => 3/3; BP = 1.
  CHECK(bleu_k({h}, {{r1, r2}}, 1) == doctest::Approx(100.0));
}

TEST_CASE("bleu_k: duplicating an identical pair never lowers the corpus score") {
  const auto h = toks({"a", "b", "c"});
  std::vector<std::vector<std::string>> hyps{h};
  std::vector<std::vector<std::vector<std::string>>> refs{{h}};
  const double base = bleu_k(hyps, refs, 2);
  hyps.push_back(h);
  refs.push_back({h});
  CHECK(bleu_k(hyps, refs, 2) >= base - 1e-12);
  CHECK(bleu_k(hyps, refs, 2) == doctest::Approx(100.0));
}

TEST_CASE("bleu_k: contract errors") {
  CHECK_THROWS_AS(bleu_k({}, {}, 1), ContractError);
  CHECK_THROWS_AS(bleu_k({toks({"a"})}, {}, 1), ContractError);
  CHECK_THROWS_AS(bleu_k({toks({"a"})}, {{toks({"a"})}}, 0), ContractError);
  CHECK_THROWS_AS(bleu_k({toks({"a"})}, {{}}, 1), ContractError);
}

TEST_CASE("reward_histogram: 0.33 falls in the low bin; bins follow the quoted intervals") {
  const RewardHistogram low = reward_histogram({0.33});
  CHECK(low.shares[0] == doctest::Approx(100.0));
  const RewardHistogram mid = reward_histogram({0.34, 0.66});
  CHECK(mid.shares[1] == doctest::Approx(100.0));
  const RewardHistogram high = reward_histogram({0.67, 1.0});
  CHECK(high.shares[2] == doctest::Approx(100.0));
  const RewardHistogram zero = reward_histogram({0.0});
  CHECK(zero.shares[0] == doctest::Approx(100.0));
}

TEST_CASE("reward_histogram: thirds split evenly with mean 0.5") {
  const RewardHistogram h = reward_histogram({0.1, 0.5, 0.9});
  CHECK(h.shares[0] == doctest::Approx(100.0 / 3.0));
  CHECK(h.shares[1] == doctest::Approx(100.0 / 3.0));
  CHECK(h.shares[2] == doctest::Approx(100.0 / 3.0));
  CHECK(h.mean == doctest::Approx(0.5));
  CHECK(h.count == 3);
}

TEST_CASE("reward_histogram: shares always sum to 100") {
  RngStream rng(9, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> rewards;
    for (int i = 0; i < 1 + static_cast<int>(rng.uniform_int(40)); ++i)
      rewards.push_back(rng.uniform01());
    const RewardHistogram h = reward_histogram(rewards);
    CHECK(std::fabs(h.shares[0] + h.shares[1] + h.shares[2] - 100.0) <= 1e-9);
  }
}

TEST_CASE("reward_histogram: empty input and out-of-range rewards are errors") {
  CHECK_THROWS_AS(reward_histogram({}), ContractError);
  CHECK_THROWS_AS(reward_histogram({1.2}), ContractError);
  CHECK_THROWS_AS(reward_histogram({-0.1}), ContractError);
}

TEST_CASE("EvalReport: serializes all populated sections") {
  EvalReport r;
  r.distinct1 = 0.5;
  r.distinct2 = 0.25;
  r.bleu = {60.0, 30.0, 10.0, 5.0};
  r.n_hypotheses = 4;
  r.has_rewards = true;
  r.counterfactual = reward_histogram({0.7, 0.8});
  r.standard = reward_histogram({0.2, 0.3});
  const std::string j = r.to_json();
  CHECK(j.find("\"distinct1\"") != std::string::npos);
  CHECK(j.find("\"counterfactual\"") != std::string::npos);
  CHECK(j.find("\"standard\"") != std::string::npos);
}
