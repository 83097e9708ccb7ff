#include "copt/seq_models.hpp"

#include <algorithm>
#include <cmath>

#include "copt/errors.hpp"
#include "copt/vocab.hpp"

namespace copt {

namespace {

Mat uniform_mat(int rows, int cols, double lo, double hi, RngStream& rng) {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = lo + (hi - lo) * rng.uniform01();
  return m;
}

Mat xavier(int rows, int cols, RngStream& rng) {
  const double r = std::sqrt(6.0 / static_cast<double>(rows + cols));
  return uniform_mat(rows, cols, -r, r, rng);
}

Mat lstm_bias(int hidden) {
  Mat b = Mat::Zero(4 * hidden, 1);
  b.middleRows(hidden, hidden).setOnes();  // forget gate
  return b;
}

LstmLayerIds add_lstm(ParamSet& ps, const std::string& prefix, int in_dim, int hidden,
                      RngStream& rng) {
  LstmLayerIds ids;
  ids.wx = ps.add(prefix + ".wx", xavier(4 * hidden, in_dim, rng));
  ids.wh = ps.add(prefix + ".wh", xavier(4 * hidden, hidden, rng));
  ids.b = ps.add(prefix + ".b", lstm_bias(hidden));
  return ids;
}

}  // namespace

LstmVars lstm_step(Var x, const LstmVars& prev, Var wx, Var wh, Var b, int hidden) {
  Var pre = matmul(wx, x) + matmul(wh, prev.h) + b;
  Var i = sigmoid(slice_rows(pre, 0, hidden));
  Var f = sigmoid(slice_rows(pre, hidden, hidden));
  Var g = tanh(slice_rows(pre, 2 * hidden, hidden));
  Var o = sigmoid(slice_rows(pre, 3 * hidden, hidden));
  Var c = add(cmul(f, prev.c), cmul(i, g));
  Var h = cmul(o, tanh(c));
  return {h, c};
}

GeneratorParams GeneratorParams::init(const GeneratorConfig& cfg, RngStream& rng) {
  if (cfg.vocab < 2 || cfg.emb_dim < 1 || cfg.hidden < 1 || cfg.layers < 1)
    throw ContractError("GeneratorParams::init: invalid configuration");
  GeneratorParams g;
  g.cfg = cfg;
  g.emb = g.ps.add("emb", uniform_mat(cfg.vocab, cfg.emb_dim, -0.08, 0.08, rng));
  for (int l = 0; l < cfg.layers; ++l) {
    const int enc_in = l == 0 ? cfg.emb_dim : cfg.hidden;
    const int dec_in = l == 0 ? cfg.emb_dim + cfg.hidden : cfg.hidden;
    g.enc.push_back(add_lstm(g.ps, "enc" + std::to_string(l), enc_in, cfg.hidden, rng));
    g.dec.push_back(add_lstm(g.ps, "dec" + std::to_string(l), dec_in, cfg.hidden, rng));
  }
  g.attn = g.ps.add("attn", xavier(cfg.hidden, cfg.hidden, rng));
  g.out = g.ps.add("out", xavier(cfg.hidden, cfg.vocab, rng));
  return g;
}

EncodeResult encode(Tape& t, const GeneratorParams& g, std::span<const int> history) {
  if (history.empty()) throw ContractError("encode: history must be non-empty");
  Var emb = param(t, g.ps, g.emb);

  std::vector<Var> wx(g.cfg.layers), wh(g.cfg.layers), b(g.cfg.layers);
  std::vector<LstmVars> state(g.cfg.layers);
  Var zero = t.leaf(Mat::Zero(g.cfg.hidden, 1));
  for (int l = 0; l < g.cfg.layers; ++l) {
    wx[l] = param(t, g.ps, g.enc[l].wx);
    wh[l] = param(t, g.ps, g.enc[l].wh);
    b[l] = param(t, g.ps, g.enc[l].b);
    state[l] = {zero, zero};
  }

  std::vector<Var> rows;
  rows.reserve(history.size());
  for (int tok : history) {
    Var x = pick_row(emb, tok);
    for (int l = 0; l < g.cfg.layers; ++l) {
      state[l] = lstm_step(x, state[l], wx[l], wh[l], b[l], g.cfg.hidden);
      x = state[l].h;
    }
    rows.push_back(transpose(x));
  }
  return {concat_rows(rows), static_cast<int>(history.size())};
}

AttendResult attend(Tape& t, const GeneratorParams& g, Var enc_states, Var s_prev) {
  Var w = param(t, g.ps, g.attn);
  Var scores = scale(matmul(enc_states, matmul(w, s_prev)),
                     1.0 / std::sqrt(static_cast<double>(g.cfg.hidden)));
  Var alpha = softmax(scores, 0);
  return {matmul(transpose(enc_states), alpha), alpha};
}

DecoderState decoder_start(Tape& t, const GeneratorParams& g) {
  DecoderState s;
  Var zero_h = t.leaf(Mat::Zero(g.cfg.hidden, 1));
  for (int l = 0; l < g.cfg.layers; ++l) s.layers.push_back({zero_h, zero_h});
  s.context = zero_h;
  s.step = 0;
  return s;
}

DecodeStep decode_step(Tape& t, const GeneratorParams& g, int prev_token,
                       const DecoderState& state, Var enc_states) {
  Var emb = param(t, g.ps, g.emb);
  DecoderState next;
  next.step = state.step + 1;

  AttendResult att = attend(t, g, enc_states, state.layers.back().h);
  next.context = att.context;

  Var x = concat_rows({pick_row(emb, prev_token), att.context});
  next.layers.resize(g.cfg.layers);
  for (int l = 0; l < g.cfg.layers; ++l) {
    Var wx = param(t, g.ps, g.dec[l].wx);
    Var wh = param(t, g.ps, g.dec[l].wh);
    Var b = param(t, g.ps, g.dec[l].b);
    next.layers[l] = lstm_step(x, state.layers[l], wx, wh, b, g.cfg.hidden);
    x = next.layers[l].h;
  }

  Var out = param(t, g.ps, g.out);
  Var logits = transpose(matmul(transpose(x), out));
  return {std::move(next), log_softmax(logits, 0)};
}

Rollout rollout_with_scenario(const GeneratorParams& g, std::span<const int> history,
                              Scenario& scenario, int max_len, int eos_id,
                              RngStream& fresh_rng) {
  if (max_len < 1) throw ContractError("rollout_with_scenario: max_len must be >= 1");

  Tape t;
  EncodeResult enc = encode(t, g, history);
  DecoderState state = decoder_start(t, g);

  Rollout r;
  int prev = Vocab::kBos;
  for (int j = 0;; ++j) {
    DecodeStep step = decode_step(t, g, prev, state, enc.states);
    state = step.state;
    const Vec log_probs = t.val(step.log_probs).col(0);
    const Vec& u = scenario.step(j, g.cfg.vocab, fresh_rng);
    const int tok = gumbel_argmax(log_probs, u);
    ++r.steps;
    if (tok == eos_id) {
      r.hit_eos = true;
      break;
    }
    r.tokens.push_back(tok);
    if (static_cast<int>(r.tokens.size()) >= max_len) break;
    prev = tok;
  }
  return r;
}

namespace {

struct BeamHyp {
  std::vector<int> tokens;
  double log_prob = 0.0;
  DecoderState state;
  bool finished = false;
  int steps = 0;
};

double beam_score(const BeamHyp& h, bool length_normalize) {
  if (!length_normalize) return h.log_prob;
  return h.log_prob / std::max(1, h.steps);
}

}  // namespace

std::vector<int> generate(const GeneratorParams& g, std::span<const int> history,
                          const GenMode& mode, int max_len, int eos_id) {
  if (mode.beam_width < 1) throw ContractError("generate: beam width must be >= 1");
  Tape t;
  EncodeResult enc = encode(t, g, history);

  if (mode.beam_width == 1) {
    DecoderState state = decoder_start(t, g);
    std::vector<int> out;
    int prev = Vocab::kBos;
    while (static_cast<int>(out.size()) < max_len) {
      DecodeStep step = decode_step(t, g, prev, state, enc.states);
      state = step.state;
      int tok = 0;
      t.val(step.log_probs).col(0).maxCoeff(&tok);
      if (tok == eos_id) break;
      out.push_back(tok);
      prev = tok;
    }
    return out;
  }

  std::vector<BeamHyp> live;
  live.push_back({{}, 0.0, decoder_start(t, g), false, 0});
  std::vector<BeamHyp> finished;

  for (int depth = 0; depth < max_len + 1 && !live.empty(); ++depth) {
    struct Cand {
      int hyp;
      int tok;
      double log_prob;
    };
    std::vector<Cand> cands;
    std::vector<DecoderState> next_states(live.size());
    for (std::size_t h = 0; h < live.size(); ++h) {
      const int prev = live[h].tokens.empty() ? Vocab::kBos : live[h].tokens.back();
      DecodeStep step = decode_step(t, g, prev, live[h].state, enc.states);
      next_states[h] = step.state;
      const Vec lp = t.val(step.log_probs).col(0);
      for (int v = 0; v < lp.size(); ++v)
        cands.push_back({static_cast<int>(h), v, live[h].log_prob + lp[v]});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      if (a.tok != b.tok) return a.tok < b.tok;
      return a.hyp < b.hyp;
    });

    std::vector<BeamHyp> next;
    for (const Cand& c : cands) {
      if (static_cast<int>(next.size()) >= mode.beam_width) break;
      BeamHyp hyp = live[c.hyp];
      hyp.state = next_states[c.hyp];
      hyp.log_prob = c.log_prob;
      hyp.steps += 1;
      if (c.tok == eos_id) {
        hyp.finished = true;
        finished.push_back(hyp);
      } else {
        hyp.tokens.push_back(c.tok);
        if (static_cast<int>(hyp.tokens.size()) >= max_len) {
          hyp.finished = true;
          finished.push_back(hyp);
        } else {
          next.push_back(std::move(hyp));
        }
      }
    }
    live = std::move(next);
    if (static_cast<int>(finished.size()) >= mode.beam_width) break;
  }

  for (BeamHyp& h : live) finished.push_back(std::move(h));
  if (finished.empty()) return {};
  const BeamHyp* best = &finished[0];
  for (const BeamHyp& h : finished)
    if (beam_score(h, mode.length_normalize) > beam_score(*best, mode.length_normalize))
      best = &h;
  return best->tokens;
}

std::vector<Var> score_steps(Tape& t, const GeneratorParams& g,
                             std::span<const int> history, std::span<const int> targets,
                             bool append_eos, int eos_id) {
  EncodeResult enc = encode(t, g, history);
  DecoderState state = decoder_start(t, g);

  std::vector<int> steps(targets.begin(), targets.end());
  if (append_eos) steps.push_back(eos_id);

  std::vector<Var> out;
  out.reserve(steps.size());
  int prev = Vocab::kBos;
  for (int tok : steps) {
    DecodeStep step = decode_step(t, g, prev, state, enc.states);
    state = step.state;
    out.push_back(pick(step.log_probs, tok));
    prev = tok;
  }
  return out;
}

DiscriminatorParams DiscriminatorParams::init(const DiscConfig& cfg, RngStream& rng) {
  if (cfg.vocab < 2 || cfg.emb_dim < 1 || cfg.hidden < 1 || cfg.mlp_hidden < 1)
    throw ContractError("DiscriminatorParams::init: invalid configuration");
  DiscriminatorParams d;
  d.cfg = cfg;
  d.emb = d.ps.add("emb", uniform_mat(cfg.vocab, cfg.emb_dim, -0.08, 0.08, rng));
  d.enc = add_lstm(d.ps, "enc", cfg.emb_dim, cfg.hidden, rng);
  d.dec = add_lstm(d.ps, "dec", cfg.emb_dim, cfg.hidden, rng);
  d.mlp_w1 = d.ps.add("mlp.w1", xavier(cfg.mlp_hidden, cfg.hidden, rng));
  d.mlp_b1 = d.ps.add("mlp.b1", Mat::Zero(cfg.mlp_hidden, 1));
  d.mlp_w2 = d.ps.add("mlp.w2", xavier(1, cfg.mlp_hidden, rng));
  d.mlp_b2 = d.ps.add("mlp.b2", Mat::Zero(1, 1));
  return d;
}

std::vector<Var> disc_prefix_logits(Tape& t, const DiscriminatorParams& d,
                                    std::span<const int> history,
                                    std::span<const int> response) {
  if (history.empty()) throw ContractError("discriminator: history must be non-empty");
  if (response.empty()) throw ContractError("discriminator: prefix must be non-empty");

  Var emb = param(t, d.ps, d.emb);
  Var enc_wx = param(t, d.ps, d.enc.wx);
  Var enc_wh = param(t, d.ps, d.enc.wh);
  Var enc_b = param(t, d.ps, d.enc.b);
  Var zero = t.leaf(Mat::Zero(d.cfg.hidden, 1));

  LstmVars s{zero, zero};
  for (int tok : history)
    s = lstm_step(pick_row(emb, tok), s, enc_wx, enc_wh, enc_b, d.cfg.hidden);

  Var dec_wx = param(t, d.ps, d.dec.wx);
  Var dec_wh = param(t, d.ps, d.dec.wh);
  Var dec_b = param(t, d.ps, d.dec.b);
  Var w1 = param(t, d.ps, d.mlp_w1);
  Var b1 = param(t, d.ps, d.mlp_b1);
  Var w2 = param(t, d.ps, d.mlp_w2);
  Var b2 = param(t, d.ps, d.mlp_b2);

  std::vector<Var> logits;
  logits.reserve(response.size());
  for (int tok : response) {
    s = lstm_step(pick_row(emb, tok), s, dec_wx, dec_wh, dec_b, d.cfg.hidden);
    Var hidden = tanh(add(matmul(w1, s.h), b1));
    logits.push_back(add(matmul(w2, hidden), b2));
  }
  return logits;
}

double disc_step_reward(const DiscriminatorParams& d, std::span<const int> history,
                        std::span<const int> prefix) {
  Tape t;
  std::vector<Var> logits = disc_prefix_logits(t, d, history, prefix);
  const double z = t.val(logits.back())(0, 0);
  return 1.0 / (1.0 + std::exp(-z));
}

std::vector<double> disc_prefix_rewards(const DiscriminatorParams& d,
                                        std::span<const int> history,
                                        std::span<const int> response) {
  Tape t;
  std::vector<Var> logits = disc_prefix_logits(t, d, history, response);
  std::vector<double> out;
  out.reserve(logits.size());
  for (Var v : logits) out.push_back(1.0 / (1.0 + std::exp(-t.val(v)(0, 0))));
  return out;
}

}  // namespace copt
