#ifndef COPT_TRAIN_HPP
#define COPT_TRAIN_HPP

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "copt/adam.hpp"
#include "copt/corpus.hpp"
#include "copt/metrics.hpp"
#include "copt/seq_models.hpp"

namespace copt {

enum class TrainMode { copt, standard };

/// How per-step discriminator rewards weight each step's log-probability in
/// the policy-gradient update. to_go sums the step's own and all later
/// rewards (matches the enumerated gradient of the expected total reward);
/// own_step uses only the step's own reward.
enum class RewardWeighting { to_go, own_step };

struct TrainConfig {
  int pretrain_epochs = 10;
  int d_pretrain_epochs = 3;
  int adversarial_epochs = 10;
  int g_steps = 1;
  int d_steps = 5;
  int batch_size = 64;
  double gen_lr = 1e-5;
  double disc_lr = 1e-5;
  double pretrain_lr = 1e-3;
  int beam_width = 4;
  std::uint64_t seed = 1;
  TrainMode mode = TrainMode::copt;
  RewardWeighting weighting = RewardWeighting::to_go;
  bool baseline = false;     // moving-average reward baseline
  double clip_norm = 0.0;    // global-norm gradient clip; 0 disables
  int hidden = 64;
  int emb_dim = 64;
  int layers = 1;
  int disc_hidden = 64;
  int disc_emb = 64;
  int disc_mlp_hidden = 64;
  int max_len_floor = 20;    // rollout cap = max(floor, factor * |y|)
  int max_len_factor = 2;
  int analyze_sample = 256;  // instances scored for per-epoch reward bins
  int threads = 1;

  void validate() const;
  int rollout_max_len(int observed_len) const;
};

struct EpochMetrics {
  int epoch = 0;
  double mean_cf_reward = 0.0;
  double mean_std_reward = 0.0;
  double gen_loss = 0.0;
  double disc_loss = 0.0;
  std::array<double, 3> cf_bins{};
  std::array<double, 3> std_bins{};

  std::string to_json_line() const;
};

struct TrainState {
  GeneratorParams pi;
  GeneratorParams mu;  // frozen after pretraining
  DiscriminatorParams disc;
  AdamState opt_pi;
  AdamState opt_disc;
  TrainMode mode = TrainMode::copt;
  double reward_baseline = 0.0;
  bool baseline_primed = false;
  std::vector<EpochMetrics> log;
};

/// Freshly initialized pi, mu (different random initializations) and D.
TrainState init_state(int vocab_size, const TrainConfig& cfg);

/// Teacher-forced MLE pre-training with ADAM; returns the mean loss in
/// nats/token of the last epoch.
double pretrain_mle(const std::vector<EncodedInstance>& corpus, GeneratorParams& params,
                    const TrainConfig& cfg, RngStream rng, int epochs, double lr);

/// Binary cross-entropy pre-training of D: positive prefixes from observed
/// responses, negative prefixes from greedy generations of the pre-trained
/// pi. Returns the last epoch's mean loss.
double pretrain_discriminator(const std::vector<EncodedInstance>& corpus,
                              const GeneratorParams& pi, DiscriminatorParams& disc,
                              const TrainConfig& cfg, RngStream rng);

/// Full pre-training per the adversarial recipe: pi, mu, then D.
TrainState pretrain(const std::vector<EncodedInstance>& corpus, int vocab_size,
                    const TrainConfig& cfg);

/// Infers the observed response's scenario under mu (teacher-forced, EOS step
/// included) and regenerates under pi inside it.
Rollout counterfactual_rollout(const EncodedInstance& inst, const GeneratorParams& mu,
                               const GeneratorParams& pi, int max_len, RngStream& rng);

/// Fresh-scenario sampling from pi (conventional adversarial rollout).
Rollout standard_rollout(std::span<const int> history, const GeneratorParams& pi,
                         int max_len, RngStream& rng);

/// Per-step rewards for a generated sequence; the default implementation
/// scores every prefix with the discriminator.
using RewardFn = std::function<std::vector<double>(
    std::span<const int> history, std::span<const int> generated_steps)>;

/// One instance's policy-gradient contribution: rolls out per mode, scores
/// the generated steps, and backpropagates -sum_k w_k log pi(step_k) into
/// grads (unnormalized). Exposed for estimator verification.
struct InstanceUpdate {
  double reward_sum = 0.0;
  int steps = 0;
  double surrogate_loss = 0.0;
};
InstanceUpdate instance_policy_gradient(const EncodedInstance& inst, const TrainState& state,
                                        const TrainConfig& cfg, int max_len, RngStream& rng,
                                        GradBuffer& grads, const RewardFn& reward_fn);

struct GeneratorUpdateResult {
  double mean_reward = 0.0;
  double mean_loss = 0.0;
};

/// Eq-style generator step over a batch: ADAM on pi, D treated as constant.
GeneratorUpdateResult generator_update(const Batch& batch,
                                       const std::vector<EncodedInstance>& corpus,
                                       TrainState& state, const TrainConfig& cfg,
                                       RngStream rng, const RewardFn& reward_fn = nullptr);

/// Discriminator step: positives are random prefixes of observed responses,
/// negatives random prefixes of standard (never counterfactual) rollouts.
double discriminator_update(const Batch& batch, const std::vector<EncodedInstance>& corpus,
                            TrainState& state, const TrainConfig& cfg, RngStream rng);

struct RewardAnalysis {
  RewardHistogram counterfactual;
  RewardHistogram standard;
  std::vector<double> cf_scores;   // per-instance mean per-step rewards
  std::vector<double> std_scores;  // paired with cf_scores by instance
};

/// Scores one counterfactual and one standard response per instance with the
/// same discriminator; each response's score is its mean per-step reward.
RewardAnalysis analyze_rewards(const GeneratorParams& pi, const GeneratorParams& mu,
                               const DiscriminatorParams& disc,
                               const std::vector<EncodedInstance>& instances,
                               const TrainConfig& cfg, RngStream rng);

using EpochCallback = std::function<void(const EpochMetrics&, const TrainState&)>;

/// Adversarial epochs per the alternating schedule (g_steps then d_steps,
/// defaults 1:5); mu stays frozen. Appends one EpochMetrics per epoch to
/// state.log and invokes the callback after each epoch.
void train_adversarial(const std::vector<EncodedInstance>& corpus, TrainState& state,
                       const TrainConfig& cfg, const EpochCallback& on_epoch = nullptr);

}  // namespace copt

#endif
