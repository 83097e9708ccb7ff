#ifndef COPT_SEQ_MODELS_HPP
#define COPT_SEQ_MODELS_HPP

#include <span>
#include <vector>

#include "copt/gumbel.hpp"
#include "copt/params.hpp"
#include "copt/rng.hpp"
#include "copt/tape.hpp"

namespace copt {

struct LstmLayerIds {
  int wx = -1;  // 4h x in
  int wh = -1;  // 4h x h
  int b = -1;   // 4h x 1
};

struct LstmVars {
  Var h;
  Var c;
};

/// One LSTM cell step; gate order i, f, g, o.
LstmVars lstm_step(Var x, const LstmVars& prev, Var wx, Var wh, Var b, int hidden);

struct GeneratorConfig {
  int vocab = 0;
  int emb_dim = 64;
  int hidden = 64;
  int layers = 1;
};

/// All trainable weights of a policy (target pi or behavior mu): embedding
/// table, encoder and decoder recurrent stacks, multiplicative attention
/// matrix, and the output matrix mapping decoder states to vocabulary logits.
struct GeneratorParams {
  ParamSet ps;
  GeneratorConfig cfg;
  int emb = -1;   // vocab x emb_dim
  std::vector<LstmLayerIds> enc;
  std::vector<LstmLayerIds> dec;
  int attn = -1;  // hidden x hidden
  int out = -1;   // hidden x vocab

  static GeneratorParams init(const GeneratorConfig& cfg, RngStream& rng);
};

/// Encoder output: source hidden states stacked as rows (positions x hidden).
struct EncodeResult {
  Var states;
  int length = 0;
};

/// Runs the encoder over a non-empty token history.
EncodeResult encode(Tape& t, const GeneratorParams& g, std::span<const int> history);

struct AttendResult {
  Var context;  // hidden x 1
  Var weights;  // positions x 1, non-negative, sums to 1
};

/// Scaled multiplicative attention of the previous decoder state over the
/// encoder states.
AttendResult attend(Tape& t, const GeneratorParams& g, Var enc_states, Var s_prev);

/// Decoder state: recurrent hidden/cell per layer, the last attention
/// context, and the step index (increments by one per decode_step).
struct DecoderState {
  std::vector<LstmVars> layers;
  Var context;
  int step = 0;
};

DecoderState decoder_start(Tape& t, const GeneratorParams& g);

struct DecodeStep {
  DecoderState state;
  Var log_probs;  // vocab x 1, logsumexp == 0
};

/// One decoder step: attend with the previous top-layer state, feed the
/// concatenated [embedding, context] through the stack, and emit the
/// log-distribution of the next token.
DecodeStep decode_step(Tape& t, const GeneratorParams& g, int prev_token,
                       const DecoderState& state, Var enc_states);

struct Rollout {
  std::vector<int> tokens;  // emitted tokens, EOS excluded
  bool hit_eos = false;
  int steps = 0;            // decode steps taken (EOS step included)
};

/// Free-running decoding driven by a scenario: step j emits the noised argmax
/// under the scenario's j-th vector, extending the scenario with fresh noise
/// past its inferred prefix. Stops at EOS or after max_len emitted tokens.
Rollout rollout_with_scenario(const GeneratorParams& g, std::span<const int> history,
                              Scenario& scenario, int max_len, int eos_id,
                              RngStream& fresh_rng);

struct GenMode {
  int beam_width = 1;
  bool length_normalize = true;
};

/// Deterministic inference: greedy when beam_width is 1, otherwise beam
/// search over total (optionally length-normalized) log-probability.
std::vector<int> generate(const GeneratorParams& g, std::span<const int> history,
                          const GenMode& mode, int max_len, int eos_id);

/// Teacher-forced per-step log-probabilities of a target sequence; when
/// append_eos is set a final step predicting eos_id is included. Returned
/// Vars are 1x1 log-probabilities, one per step.
std::vector<Var> score_steps(Tape& t, const GeneratorParams& g,
                             std::span<const int> history, std::span<const int> targets,
                             bool append_eos, int eos_id);

struct DiscConfig {
  int vocab = 0;
  int emb_dim = 64;
  int hidden = 64;
  int mlp_hidden = 64;
};

/// Discriminator: single-layer encoder-decoder reader plus a scoring MLP on
/// the decoder state.
struct DiscriminatorParams {
  ParamSet ps;
  DiscConfig cfg;
  int emb = -1;
  LstmLayerIds enc;
  LstmLayerIds dec;
  int mlp_w1 = -1;  // mlp_hidden x hidden
  int mlp_b1 = -1;
  int mlp_w2 = -1;  // 1 x mlp_hidden
  int mlp_b2 = -1;  // 1 x 1

  static DiscriminatorParams init(const DiscConfig& cfg, RngStream& rng);
};

/// Pre-sigmoid score of each response prefix (one logit per position):
/// element j scores the prefix response[0..j].
std::vector<Var> disc_prefix_logits(Tape& t, const DiscriminatorParams& d,
                                    std::span<const int> history,
                                    std::span<const int> response);

/// Probability in (0, 1) that the prefix is human-generated.
double disc_step_reward(const DiscriminatorParams& d, std::span<const int> history,
                        std::span<const int> prefix);

/// Rewards of every prefix of the response in one decoder pass.
std::vector<double> disc_prefix_rewards(const DiscriminatorParams& d,
                                        std::span<const int> history,
                                        std::span<const int> response);

}  // namespace copt

#endif
