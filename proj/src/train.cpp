#include "copt/train.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "copt/errors.hpp"

namespace copt {

namespace {

// Fixed stream ids per purpose; every draw in a run derives from
// (config seed, one of these, split path).
namespace stream {
constexpr std::uint64_t pi_init = 1;
constexpr std::uint64_t mu_init = 2;
constexpr std::uint64_t d_init = 3;
constexpr std::uint64_t pretrain_pi = 4;
constexpr std::uint64_t pretrain_mu = 5;
constexpr std::uint64_t pretrain_d = 6;
constexpr std::uint64_t adv_data = 7;
constexpr std::uint64_t adv_g = 8;
constexpr std::uint64_t adv_d = 9;
constexpr std::uint64_t analyze = 10;
}  // namespace stream

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Static-chunk parallel map. Results must be written to index-addressed
/// slots; the caller reduces them in index order, so the reduction is
/// independent of scheduling.
void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  for (int t = 0; t < threads; ++t) {
    const int lo = static_cast<int>(static_cast<long long>(n) * t / threads);
    const int hi = static_cast<int>(static_cast<long long>(n) * (t + 1) / threads);
    pool.emplace_back([&, lo, hi] {
      try {
        for (int i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v))
    throw NumericalError(std::string(what) + " is not finite (" + std::to_string(v) + ")");
}

EncodedInstance batch_instance(const Batch& batch, int row) {
  return EncodedInstance{batch.history_row(row), batch.response_row(row)};
}

std::vector<int> generated_steps(const Rollout& r) {
  std::vector<int> seq = r.tokens;
  if (r.hit_eos) seq.push_back(Vocab::kEos);
  return seq;
}

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace

void TrainConfig::validate() const {
  if (pretrain_epochs < 0 || d_pretrain_epochs < 0 || adversarial_epochs < 0)
    throw ContractError("TrainConfig: epoch counts must be >= 0");
  if (g_steps < 1 || d_steps < 1 || batch_size < 1)
    throw ContractError("TrainConfig: g_steps, d_steps and batch_size must be >= 1");
  if (!(gen_lr > 0.0) || !(disc_lr > 0.0) || !(pretrain_lr > 0.0))
    throw ContractError("TrainConfig: learning rates must be > 0");
  if (beam_width < 1) throw ContractError("TrainConfig: beam width must be >= 1");
  if (hidden < 1 || emb_dim < 1 || layers < 1 || disc_hidden < 1 || disc_emb < 1 ||
      disc_mlp_hidden < 1)
    throw ContractError("TrainConfig: model dimensions must be >= 1");
  if (max_len_floor < 1 || max_len_factor < 1)
    throw ContractError("TrainConfig: rollout length caps must be >= 1");
  if (analyze_sample < 1) throw ContractError("TrainConfig: analyze_sample must be >= 1");
}

int TrainConfig::rollout_max_len(int observed_len) const {
  return std::max(max_len_floor, max_len_factor * observed_len);
}

std::string EpochMetrics::to_json_line() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["mean_cf_reward"] = mean_cf_reward;
  j["mean_std_reward"] = mean_std_reward;
  j["gen_loss"] = gen_loss;
  j["disc_loss"] = disc_loss;
  j["cf_bins"] = cf_bins;
  j["std_bins"] = std_bins;
  return j.dump();
}

TrainState init_state(int vocab_size, const TrainConfig& cfg) {
  cfg.validate();
  GeneratorConfig gc{vocab_size, cfg.emb_dim, cfg.hidden, cfg.layers};
  DiscConfig dc{vocab_size, cfg.disc_emb, cfg.disc_hidden, cfg.disc_mlp_hidden};
  RngStream pi_rng(cfg.seed, stream::pi_init);
  RngStream mu_rng(cfg.seed, stream::mu_init);
  RngStream d_rng(cfg.seed, stream::d_init);

  TrainState st{GeneratorParams::init(gc, pi_rng), GeneratorParams::init(gc, mu_rng),
                DiscriminatorParams::init(dc, d_rng)};
  st.opt_pi = AdamState(st.pi.ps, cfg.gen_lr);
  st.opt_disc = AdamState(st.disc.ps, cfg.disc_lr);
  st.mode = cfg.mode;
  return st;
}

double pretrain_mle(const std::vector<EncodedInstance>& corpus, GeneratorParams& params,
                    const TrainConfig& cfg, RngStream rng, int epochs, double lr) {
  if (corpus.empty()) throw ContractError("pretrain_mle: empty corpus");
  const int threads = resolve_threads(cfg.threads);
  AdamState opt(params.ps, lr);

  double last_epoch_loss = 0.0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const std::vector<Batch> batches = split_and_batch(corpus, cfg.batch_size, rng);
    double epoch_loss = 0.0;
    long long epoch_steps = 0;
    for (const Batch& batch : batches) {
      const int b = batch.size();
      std::vector<GradBuffer> grads(b, GradBuffer(params.ps.size()));
      std::vector<double> losses(b, 0.0);
      std::vector<int> steps(b, 0);
      parallel_for(b, threads, [&](int k) {
        const EncodedInstance inst = batch_instance(batch, k);
        Tape t;
        const std::vector<Var> lp =
            score_steps(t, params, inst.history, inst.response, true, Vocab::kEos);
        Var loss = scale(sum(concat_rows(lp)), -1.0);
        t.backward(loss);
        t.collect_param_grads(grads[k].g);
        losses[k] = t.val(loss)(0, 0);
        steps[k] = static_cast<int>(lp.size());
      });

      GradBuffer total(params.ps.size());
      double batch_loss = 0.0;
      long long batch_steps = 0;
      for (int k = 0; k < b; ++k) {
        total.add(grads[k]);
        batch_loss += losses[k];
        batch_steps += steps[k];
      }
      require_finite(batch_loss, "pretrain_mle: batch loss");
      total.scale(1.0 / static_cast<double>(batch_steps));
      clip_global_norm(total, cfg.clip_norm);
      adam_step(params.ps, total, opt);
      epoch_loss += batch_loss;
      epoch_steps += batch_steps;
    }
    last_epoch_loss = epoch_loss / static_cast<double>(epoch_steps);
  }
  return last_epoch_loss;
}

double pretrain_discriminator(const std::vector<EncodedInstance>& corpus,
                              const GeneratorParams& pi, DiscriminatorParams& disc,
                              const TrainConfig& cfg, RngStream rng) {
  if (corpus.empty()) throw ContractError("pretrain_discriminator: empty corpus");
  const int threads = resolve_threads(cfg.threads);
  const int n = static_cast<int>(corpus.size());

  // Negatives come from the frozen pre-trained pi; generate once.
  std::vector<std::vector<int>> negatives(n);
  parallel_for(n, threads, [&](int i) {
    negatives[i] = generate(pi, corpus[i].history, GenMode{1, true},
                            cfg.rollout_max_len(static_cast<int>(corpus[i].response.size())),
                            Vocab::kEos);
  });

  AdamState opt(disc.ps, cfg.pretrain_lr);
  double last_epoch_loss = 0.0;
  for (int epoch = 0; epoch < cfg.d_pretrain_epochs; ++epoch) {
    const std::vector<Batch> batches = split_and_batch(corpus, cfg.batch_size, rng);
    double epoch_loss = 0.0;
    long long epoch_examples = 0;
    for (const Batch& batch : batches) {
      const int b = batch.size();
      std::vector<int> pos_len(b), neg_len(b, 0);
      for (int k = 0; k < b; ++k) {
        pos_len[k] = 1 + static_cast<int>(rng.uniform_int(batch.response_len[k]));
        const auto& neg = negatives[batch.instance_ids[k]];
        if (!neg.empty()) neg_len[k] = 1 + static_cast<int>(rng.uniform_int(neg.size()));
      }

      std::vector<GradBuffer> grads(b, GradBuffer(disc.ps.size()));
      std::vector<double> losses(b, 0.0);
      std::vector<int> examples(b, 0);
      parallel_for(b, threads, [&](int k) {
        const EncodedInstance inst = batch_instance(batch, k);
        Tape t;
        std::vector<Var> terms;
        std::span<const int> pos(inst.response.data(), pos_len[k]);
        terms.push_back(softplus(scale(disc_prefix_logits(t, disc, inst.history, pos).back(), -1.0)));
        if (neg_len[k] > 0) {
          const auto& neg = negatives[batch.instance_ids[k]];
          std::span<const int> np(neg.data(), neg_len[k]);
          terms.push_back(softplus(disc_prefix_logits(t, disc, inst.history, np).back()));
        }
        Var loss = sum(concat_rows(terms));
        t.backward(loss);
        t.collect_param_grads(grads[k].g);
        losses[k] = t.val(loss)(0, 0);
        examples[k] = static_cast<int>(terms.size());
      });

      GradBuffer total(disc.ps.size());
      double batch_loss = 0.0;
      long long batch_examples = 0;
      for (int k = 0; k < b; ++k) {
        total.add(grads[k]);
        batch_loss += losses[k];
        batch_examples += examples[k];
      }
      require_finite(batch_loss, "pretrain_discriminator: batch loss");
      total.scale(1.0 / static_cast<double>(batch_examples));
      clip_global_norm(total, cfg.clip_norm);
      adam_step(disc.ps, total, opt);
      epoch_loss += batch_loss;
      epoch_examples += batch_examples;
    }
    last_epoch_loss = epoch_loss / static_cast<double>(epoch_examples);
  }
  return last_epoch_loss;
}

TrainState pretrain(const std::vector<EncodedInstance>& corpus, int vocab_size,
                    const TrainConfig& cfg) {
  TrainState state = init_state(vocab_size, cfg);
  pretrain_mle(corpus, state.pi, cfg, RngStream(cfg.seed, stream::pretrain_pi),
               cfg.pretrain_epochs, cfg.pretrain_lr);
  pretrain_mle(corpus, state.mu, cfg, RngStream(cfg.seed, stream::pretrain_mu),
               cfg.pretrain_epochs, cfg.pretrain_lr);
  pretrain_discriminator(corpus, state.pi, state.disc, cfg,
                         RngStream(cfg.seed, stream::pretrain_d));
  return state;
}

Rollout counterfactual_rollout(const EncodedInstance& inst, const GeneratorParams& mu,
                               const GeneratorParams& pi, int max_len, RngStream& rng) {
  std::vector<int> observed = inst.response;
  observed.push_back(Vocab::kEos);

  // Teacher-forced incremental pass under mu; infer_scenario calls steps in
  // order.
  Tape t;
  EncodeResult enc = encode(t, mu, inst.history);
  DecoderState st = decoder_start(t, mu);
  int next_step = 0;
  StepLogProbFn log_probs = [&](int j, std::span<const int> prefix) -> Vec {
    if (j != next_step)
      throw ContractError("counterfactual_rollout: scenario steps must be inferred in order");
    const int prev = j == 0 ? Vocab::kBos : observed[j - 1];
    (void)prefix;
    DecodeStep step = decode_step(t, mu, prev, st, enc.states);
    st = step.state;
    ++next_step;
    return t.val(step.log_probs).col(0);
  };

  RngStream posterior_rng = rng.split(0);
  Scenario scenario = infer_scenario(log_probs, observed, posterior_rng);
  RngStream fresh_rng = rng.split(1);
  return rollout_with_scenario(pi, inst.history, scenario, max_len, Vocab::kEos, fresh_rng);
}

Rollout standard_rollout(std::span<const int> history, const GeneratorParams& pi,
                         int max_len, RngStream& rng) {
  Scenario scenario = Scenario::fresh();
  return rollout_with_scenario(pi, history, scenario, max_len, Vocab::kEos, rng);
}

InstanceUpdate instance_policy_gradient(const EncodedInstance& inst, const TrainState& state,
                                        const TrainConfig& cfg, int max_len, RngStream& rng,
                                        GradBuffer& grads, const RewardFn& reward_fn) {
  Rollout roll = cfg.mode == TrainMode::copt
                     ? counterfactual_rollout(inst, state.mu, state.pi, max_len, rng)
                     : standard_rollout(inst.history, state.pi, max_len, rng);
  const std::vector<int> seq = generated_steps(roll);

  std::vector<double> rewards =
      reward_fn ? reward_fn(inst.history, seq)
                : disc_prefix_rewards(state.disc, inst.history, seq);
  if (rewards.size() != seq.size())
    throw ContractError("instance_policy_gradient: one reward per generated step required");

  InstanceUpdate result;
  result.steps = static_cast<int>(seq.size());
  result.reward_sum = std::accumulate(rewards.begin(), rewards.end(), 0.0);

  std::vector<double> adjusted = rewards;
  if (cfg.baseline && state.baseline_primed)
    for (double& r : adjusted) r -= state.reward_baseline;

  Mat weights(seq.size(), 1);
  if (cfg.weighting == RewardWeighting::to_go) {
    double suffix = 0.0;
    for (int j = static_cast<int>(seq.size()) - 1; j >= 0; --j) {
      suffix += adjusted[j];
      weights(j, 0) = suffix;
    }
  } else {
    for (std::size_t j = 0; j < seq.size(); ++j) weights(j, 0) = adjusted[j];
  }

  Tape t;
  const std::vector<Var> lp =
      score_steps(t, state.pi, inst.history, roll.tokens, roll.hit_eos, Vocab::kEos);
  Var loss = scale(sum(cmul(concat_rows(lp), t.leaf(weights))), -1.0);
  t.backward(loss);
  t.collect_param_grads(grads.g);
  result.surrogate_loss = t.val(loss)(0, 0);
  return result;
}

GeneratorUpdateResult generator_update(const Batch& batch,
                                       const std::vector<EncodedInstance>& corpus,
                                       TrainState& state, const TrainConfig& cfg,
                                       RngStream rng, const RewardFn& reward_fn) {
  (void)corpus;
  const int b = batch.size();
  if (b == 0) throw ContractError("generator_update: empty batch");
  const int threads = resolve_threads(cfg.threads);

  std::vector<RngStream> rngs;
  rngs.reserve(b);
  for (int k = 0; k < b; ++k) rngs.push_back(rng.split(k));

  std::vector<GradBuffer> grads(b, GradBuffer(state.pi.ps.size()));
  std::vector<InstanceUpdate> updates(b);
  parallel_for(b, threads, [&](int k) {
    const EncodedInstance inst = batch_instance(batch, k);
    const int max_len = cfg.rollout_max_len(static_cast<int>(inst.response.size()));
    updates[k] =
        instance_policy_gradient(inst, state, cfg, max_len, rngs[k], grads[k], reward_fn);
  });

  GradBuffer total(state.pi.ps.size());
  double reward_sum = 0.0, loss_sum = 0.0;
  long long steps = 0;
  for (int k = 0; k < b; ++k) {
    total.add(grads[k]);
    reward_sum += updates[k].reward_sum;
    loss_sum += updates[k].surrogate_loss;
    steps += updates[k].steps;
  }
  require_finite(loss_sum, "generator_update: batch loss");
  total.scale(1.0 / static_cast<double>(b));
  clip_global_norm(total, cfg.clip_norm);
  adam_step(state.pi.ps, total, state.opt_pi);

  const double mean_reward = reward_sum / static_cast<double>(std::max<long long>(1, steps));
  if (cfg.baseline) {
    state.reward_baseline = state.baseline_primed
                                ? 0.95 * state.reward_baseline + 0.05 * mean_reward
                                : mean_reward;
    state.baseline_primed = true;
  }
  return {mean_reward, loss_sum / static_cast<double>(b)};
}

double discriminator_update(const Batch& batch, const std::vector<EncodedInstance>& corpus,
                            TrainState& state, const TrainConfig& cfg, RngStream rng) {
  (void)corpus;
  const int b = batch.size();
  if (b == 0) throw ContractError("discriminator_update: empty batch");
  const int threads = resolve_threads(cfg.threads);

  std::vector<int> pos_len(b);
  std::vector<RngStream> roll_rngs, len_rngs;
  for (int k = 0; k < b; ++k) {
    pos_len[k] = 1 + static_cast<int>(rng.uniform_int(batch.response_len[k]));
    roll_rngs.push_back(rng.split(2 * k));
    len_rngs.push_back(rng.split(2 * k + 1));
  }

  std::vector<GradBuffer> grads(b, GradBuffer(state.disc.ps.size()));
  std::vector<double> losses(b, 0.0);
  std::vector<int> examples(b, 0);
  parallel_for(b, threads, [&](int k) {
    const EncodedInstance inst = batch_instance(batch, k);
    Tape t;
    std::vector<Var> terms;
    std::span<const int> pos(inst.response.data(), pos_len[k]);
    terms.push_back(
        softplus(scale(disc_prefix_logits(t, state.disc, inst.history, pos).back(), -1.0)));

    // Negatives are standard responses by contract, never counterfactual.
    const int max_len = cfg.rollout_max_len(static_cast<int>(inst.response.size()));
    Rollout roll = standard_rollout(inst.history, state.pi, max_len, roll_rngs[k]);
    if (!roll.tokens.empty()) {
      const int neg_len = 1 + static_cast<int>(len_rngs[k].uniform_int(roll.tokens.size()));
      std::span<const int> neg(roll.tokens.data(), neg_len);
      terms.push_back(softplus(disc_prefix_logits(t, state.disc, inst.history, neg).back()));
    }
    Var loss = sum(concat_rows(terms));
    t.backward(loss);
    t.collect_param_grads(grads[k].g);
    losses[k] = t.val(loss)(0, 0);
    examples[k] = static_cast<int>(terms.size());
  });

  GradBuffer total(state.disc.ps.size());
  double loss_sum = 0.0;
  long long n_examples = 0;
  for (int k = 0; k < b; ++k) {
    total.add(grads[k]);
    loss_sum += losses[k];
    n_examples += examples[k];
  }
  require_finite(loss_sum, "discriminator_update: batch loss");
  total.scale(1.0 / static_cast<double>(n_examples));
  clip_global_norm(total, cfg.clip_norm);
  adam_step(state.disc.ps, total, state.opt_disc);
  return loss_sum / static_cast<double>(n_examples);
}

RewardAnalysis analyze_rewards(const GeneratorParams& pi, const GeneratorParams& mu,
                               const DiscriminatorParams& disc,
                               const std::vector<EncodedInstance>& instances,
                               const TrainConfig& cfg, RngStream rng) {
  if (instances.empty()) throw ContractError("analyze_rewards: empty instance set");
  const int n = static_cast<int>(instances.size());
  const int threads = resolve_threads(cfg.threads);

  std::vector<RngStream> rngs;
  rngs.reserve(n);
  for (int i = 0; i < n; ++i) rngs.push_back(rng.split(i));

  RewardAnalysis out;
  out.cf_scores.resize(n);
  out.std_scores.resize(n);
  parallel_for(n, threads, [&](int i) {
    const EncodedInstance& inst = instances[i];
    const int max_len = cfg.rollout_max_len(static_cast<int>(inst.response.size()));
    RngStream cf_rng = rngs[i].split(0);
    RngStream std_rng = rngs[i].split(1);

    Rollout cf = counterfactual_rollout(inst, mu, pi, max_len, cf_rng);
    Rollout st = standard_rollout(inst.history, pi, max_len, std_rng);
    out.cf_scores[i] = mean_of(disc_prefix_rewards(disc, inst.history, generated_steps(cf)));
    out.std_scores[i] = mean_of(disc_prefix_rewards(disc, inst.history, generated_steps(st)));
  });

  out.counterfactual = reward_histogram(out.cf_scores);
  out.standard = reward_histogram(out.std_scores);
  return out;
}

void train_adversarial(const std::vector<EncodedInstance>& corpus, TrainState& state,
                       const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (corpus.empty()) throw ContractError("train_adversarial: empty corpus");

  const std::uint64_t mu_checksum = state.mu.ps.checksum();
  RngStream data_rng(cfg.seed, stream::adv_data);
  std::vector<Batch> batches;
  std::size_t cursor = 0;
  auto next_batch = [&]() -> const Batch& {
    if (cursor >= batches.size()) {
      batches = split_and_batch(corpus, cfg.batch_size, data_rng);
      cursor = 0;
    }
    return batches[cursor++];
  };

  RngStream g_rng(cfg.seed, stream::adv_g);
  RngStream d_rng(cfg.seed, stream::adv_d);
  RngStream an_rng(cfg.seed, stream::analyze);

  for (int epoch = 1; epoch <= cfg.adversarial_epochs; ++epoch) {
    double gen_loss = 0.0, disc_loss = 0.0;
    for (int g = 0; g < cfg.g_steps; ++g) {
      const GeneratorUpdateResult res =
          generator_update(next_batch(), corpus, state, cfg, g_rng.split(epoch).split(g));
      gen_loss += res.mean_loss;
    }
    for (int d = 0; d < cfg.d_steps; ++d)
      disc_loss += discriminator_update(next_batch(), corpus, state, cfg,
                                        d_rng.split(epoch).split(d));

    // Reward bins of both response kinds under the current D (the mean
    // counterfactual/standard rewards of the epoch's metrics record).
    RngStream sample_rng = an_rng.split(epoch);
    const int n_sample = std::min<int>(cfg.analyze_sample, static_cast<int>(corpus.size()));
    std::vector<int> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[sample_rng.uniform_int(i)]);
    std::vector<EncodedInstance> sample;
    sample.reserve(n_sample);
    for (int i = 0; i < n_sample; ++i) sample.push_back(corpus[order[i]]);

    const RewardAnalysis analysis = analyze_rewards(state.pi, state.mu, state.disc, sample,
                                                    cfg, sample_rng.split(0));

    EpochMetrics m;
    m.epoch = epoch;
    m.mean_cf_reward = analysis.counterfactual.mean;
    m.mean_std_reward = analysis.standard.mean;
    m.gen_loss = gen_loss / cfg.g_steps;
    m.disc_loss = disc_loss / cfg.d_steps;
    m.cf_bins = analysis.counterfactual.shares;
    m.std_bins = analysis.standard.shares;
    state.log.push_back(m);
    if (on_epoch) on_epoch(m, state);

    if (state.mu.ps.checksum() != mu_checksum)
      throw ContractError("train_adversarial: behavior policy changed during training");
  }
}

}  // namespace copt
