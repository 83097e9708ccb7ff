#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "copt/checkpoint.hpp"
#include "copt/errors.hpp"
#include "copt/metrics.hpp"
#include "copt/runner.hpp"

namespace fs = std::filesystem;
using namespace copt;

namespace {

struct TrainFlags {
  std::string corpus;
  std::string out;
  std::string config_file;
  std::string mode = "copt";
  std::string weighting = "to_go";
  std::uint64_t seed = 1;
  int batch_size = 64;
  int pretrain_epochs = 10;
  int d_pretrain_epochs = 3;
  int adversarial_epochs = 10;
  int g_steps = 1;
  int d_steps = 5;
  double gen_lr = 1e-5;
  double disc_lr = 1e-5;
  double pretrain_lr = 1e-3;
  int beam_width = 4;
  int hidden = 64;
  int emb_dim = 64;
  int layers = 1;
  int disc_hidden = 64;
  int disc_emb = 64;
  int disc_mlp_hidden = 64;
  bool baseline = false;
  double clip_norm = 0.0;
  int analyze_sample = 256;
  int threads = 0;
  int vocab_max = 10000;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--corpus", f.corpus, "training corpus file")->required();
  cmd->add_option("--out", f.out, "run directory (or set COPT_RUN_DIR)");
  cmd->add_option("--config", f.config_file, "key = value config file; flags override");
  cmd->add_option("--mode", f.mode, "copt | standard");
  cmd->add_option("--weighting", f.weighting, "to_go | own_step");
  cmd->add_option("--seed", f.seed);
  cmd->add_option("--batch-size", f.batch_size);
  cmd->add_option("--pretrain-epochs", f.pretrain_epochs);
  cmd->add_option("--d-pretrain-epochs", f.d_pretrain_epochs);
  cmd->add_option("--adversarial-epochs", f.adversarial_epochs);
  cmd->add_option("--g-steps", f.g_steps);
  cmd->add_option("--d-steps", f.d_steps);
  cmd->add_option("--gen-lr", f.gen_lr);
  cmd->add_option("--disc-lr", f.disc_lr);
  cmd->add_option("--pretrain-lr", f.pretrain_lr);
  cmd->add_option("--beam", f.beam_width);
  cmd->add_option("--hidden", f.hidden);
  cmd->add_option("--emb-dim", f.emb_dim);
  cmd->add_option("--layers", f.layers);
  cmd->add_option("--disc-hidden", f.disc_hidden);
  cmd->add_option("--disc-emb", f.disc_emb);
  cmd->add_option("--disc-mlp-hidden", f.disc_mlp_hidden);
  cmd->add_flag("--baseline", f.baseline, "subtract a moving-average reward baseline");
  cmd->add_option("--clip-norm", f.clip_norm, "global gradient-norm clip (0 = off)");
  cmd->add_option("--analyze-sample", f.analyze_sample);
  cmd->add_option("--threads", f.threads, "worker cap (0 = hardware)");
  cmd->add_option("--vocab-max", f.vocab_max);
}

RunOptions build_run_options(const CLI::App* cmd, const TrainFlags& f) {
  RunOptions opt;
  opt.corpus_path = f.corpus;

  // Precedence: defaults < config file < command-line flags.
  if (!f.config_file.empty())
    apply_config(parse_config_file(f.config_file), opt.cfg, opt.vocab_max);

  auto passed = [&](const std::string& name) { return cmd->count(name) > 0; };
  TrainConfig& c = opt.cfg;
  if (passed("--mode")) c.mode = parse_mode(f.mode);
  if (passed("--weighting")) c.weighting = parse_weighting(f.weighting);
  if (passed("--seed")) c.seed = f.seed;
  if (passed("--batch-size")) c.batch_size = f.batch_size;
  if (passed("--pretrain-epochs")) c.pretrain_epochs = f.pretrain_epochs;
  if (passed("--d-pretrain-epochs")) c.d_pretrain_epochs = f.d_pretrain_epochs;
  if (passed("--adversarial-epochs")) c.adversarial_epochs = f.adversarial_epochs;
  if (passed("--g-steps")) c.g_steps = f.g_steps;
  if (passed("--d-steps")) c.d_steps = f.d_steps;
  if (passed("--gen-lr")) c.gen_lr = f.gen_lr;
  if (passed("--disc-lr")) c.disc_lr = f.disc_lr;
  if (passed("--pretrain-lr")) c.pretrain_lr = f.pretrain_lr;
  if (passed("--beam")) c.beam_width = f.beam_width;
  if (passed("--hidden")) c.hidden = f.hidden;
  if (passed("--emb-dim")) c.emb_dim = f.emb_dim;
  if (passed("--layers")) c.layers = f.layers;
  if (passed("--disc-hidden")) c.disc_hidden = f.disc_hidden;
  if (passed("--disc-emb")) c.disc_emb = f.disc_emb;
  if (passed("--disc-mlp-hidden")) c.disc_mlp_hidden = f.disc_mlp_hidden;
  if (passed("--baseline")) c.baseline = f.baseline;
  if (passed("--clip-norm")) c.clip_norm = f.clip_norm;
  if (passed("--analyze-sample")) c.analyze_sample = f.analyze_sample;
  if (passed("--threads")) c.threads = f.threads;
  if (passed("--vocab-max")) opt.vocab_max = f.vocab_max;

  opt.run_dir = f.out;
  if (opt.run_dir.empty()) {
    const char* env = std::getenv("COPT_RUN_DIR");
    if (env) opt.run_dir = env;
  }
  if (opt.run_dir.empty())
    throw ContractError("no run directory: pass --out or set COPT_RUN_DIR");
  return opt;
}

int cmd_gen_synthetic(const SyntheticSpec& spec, int size, const std::string& out_dir) {
  SyntheticCorpus corpus = gen_synthetic(spec, size);
  fs::create_directories(out_dir);
  write_corpus(corpus.instances, (fs::path(out_dir) / "corpus.txt").string());
  corpus.policy.save((fs::path(out_dir) / "policy.json").string());
  std::cout << "wrote " << corpus.instances.size() << " instances to " << out_dir
            << " (templates: " << corpus.policy.templates.size() << ")\n";
  return 0;
}

std::vector<std::vector<std::string>> read_reference_file(const std::string& path,
                                                          std::size_t expected_lines) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("eval: cannot open reference file " + path);
  std::vector<std::vector<std::string>> refs;
  std::string line;
  while (std::getline(in, line)) refs.push_back(tokenize(line));
  if (refs.size() != expected_lines)
    throw ContractError("eval: reference file " + path + " has " +
                        std::to_string(refs.size()) + " lines, expected " +
                        std::to_string(expected_lines));
  return refs;
}

int cmd_eval(const std::string& ckpt, const std::string& vocab_path,
             const std::string& corpus_path, const std::vector<std::string>& ref_files,
             int beam, int max_len, const std::string& out_path) {
  const Vocab vocab = Vocab::load(vocab_path);
  const GeneratorParams pi = load_generator(ckpt, vocab.hash());

  const LoadResult loaded = load_dialogues(corpus_path);
  if (loaded.instances.empty()) throw ContractError("eval: corpus has no instances");
  const std::vector<EncodedInstance> corpus = encode_instances(loaded.instances, vocab);

  std::vector<std::vector<std::string>> hyps(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::vector<int> toks =
        generate(pi, corpus[i].history, GenMode{beam, true}, max_len, Vocab::kEos);
    for (int id : toks) hyps[i].push_back(vocab.token(id));
  }

  std::vector<std::vector<std::vector<std::string>>> refs(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i)
    refs[i].push_back(loaded.instances[i].response);
  for (const std::string& rf : ref_files) {
    const auto extra = read_reference_file(rf, corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i)
      if (!extra[i].empty()) refs[i].push_back(extra[i]);
  }

  EvalReport report;
  report.n_hypotheses = static_cast<int>(hyps.size());
  report.distinct1 = distinct_k(hyps, 1);
  report.distinct2 = distinct_k(hyps, 2);
  for (int k = 1; k <= 4; ++k) report.bleu[k - 1] = bleu_k(hyps, refs, k);

  const std::string json = report.to_json();
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::binary);
    out << json << "\n";
  }
  std::cout << json << "\n";
  return 0;
}

int cmd_analyze(const std::string& pi_path, const std::string& mu_path,
                const std::string& disc_path, const std::string& vocab_path,
                const std::string& corpus_path, int n, std::uint64_t seed, int threads,
                const std::string& out_path) {
  if (n < 1) throw ContractError("analyze-rewards: --n must be >= 1");
  const Vocab vocab = Vocab::load(vocab_path);
  const std::uint64_t vh = vocab.hash();
  const GeneratorParams pi = load_generator(pi_path, vh);
  const GeneratorParams mu = load_generator(mu_path, vh);
  const DiscriminatorParams disc = load_discriminator(disc_path, vh);

  const LoadResult loaded = load_dialogues(corpus_path);
  if (loaded.instances.empty())
    throw ContractError("analyze-rewards: corpus has no instances");
  std::vector<EncodedInstance> corpus = encode_instances(loaded.instances, vocab);

  RngStream rng(seed, 0xA11);
  std::vector<int> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(i)]);
  const int take = std::min<int>(n, static_cast<int>(corpus.size()));
  std::vector<EncodedInstance> sample;
  for (int i = 0; i < take; ++i) sample.push_back(corpus[order[i]]);

  TrainConfig cfg;
  cfg.threads = threads;
  const RewardAnalysis analysis = analyze_rewards(pi, mu, disc, sample, cfg, rng.split(1));

  auto line = [](const char* kind, const RewardHistogram& h) {
    std::printf("%-15s low %6.2f%%  middle %6.2f%%  high %6.2f%%  mean %.4f  (n=%d)\n", kind,
                h.shares[0], h.shares[1], h.shares[2], h.mean, h.count);
  };
  line("counterfactual", analysis.counterfactual);
  line("standard", analysis.standard);

  EvalReport report;
  report.has_rewards = true;
  report.counterfactual = analysis.counterfactual;
  report.standard = analysis.standard;
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::binary);
    out << report.to_json() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"counterfactual off-policy training for dialogue generation"};
  app.require_subcommand(1);

  // gen-synthetic
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "generate a synthetic corpus");
  SyntheticSpec spec;
  int gen_size = 0;
  std::string gen_out;
  gen_cmd->add_option("--vocab", spec.vocab_size, "vocabulary size incl. reserved ids");
  gen_cmd->add_option("--templates", spec.num_templates);
  gen_cmd->add_option("--len-min", spec.len_min);
  gen_cmd->add_option("--len-max", spec.len_max);
  gen_cmd->add_option("--temperature", spec.temperature);
  gen_cmd->add_option("--seed", spec.seed);
  gen_cmd->add_option("--size", gen_size, "number of instances")->required();
  gen_cmd->add_option("--out", gen_out, "output directory")->required();

  // train / pretrain
  auto* train_cmd = app.add_subcommand("train", "pre-train and run adversarial epochs");
  TrainFlags train_flags;
  add_train_flags(train_cmd, train_flags);

  auto* pre_cmd = app.add_subcommand("pretrain", "pre-training only (no adversarial epochs)");
  TrainFlags pre_flags;
  add_train_flags(pre_cmd, pre_flags);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "generate with beam search and score");
  std::string ev_pi, ev_vocab, ev_corpus, ev_out;
  std::vector<std::string> ev_refs;
  int ev_beam = 4, ev_max_len = 30;
  eval_cmd->add_option("--pi", ev_pi, "generator checkpoint")->required();
  eval_cmd->add_option("--vocab", ev_vocab, "vocab file from the run directory")->required();
  eval_cmd->add_option("--corpus", ev_corpus, "test corpus")->required();
  eval_cmd->add_option("--refs", ev_refs, "extra reference files, parallel to instances");
  eval_cmd->add_option("--beam", ev_beam);
  eval_cmd->add_option("--max-len", ev_max_len);
  eval_cmd->add_option("--out", ev_out, "report path (JSON)");

  // analyze-rewards
  auto* an_cmd = app.add_subcommand("analyze-rewards",
                                    "reward bins of counterfactual vs standard responses");
  std::string an_pi, an_mu, an_disc, an_vocab, an_corpus, an_out;
  int an_n = 0, an_threads = 0;
  std::uint64_t an_seed = 1;
  an_cmd->add_option("--pi", an_pi)->required();
  an_cmd->add_option("--mu", an_mu)->required();
  an_cmd->add_option("--disc", an_disc)->required();
  an_cmd->add_option("--vocab", an_vocab)->required();
  an_cmd->add_option("--corpus", an_corpus)->required();
  an_cmd->add_option("--n", an_n, "instances to sample")->required();
  an_cmd->add_option("--seed", an_seed);
  an_cmd->add_option("--threads", an_threads);
  an_cmd->add_option("--out", an_out, "report path (JSON)");

  try {
    app.parse(argc, argv);

    if (app.got_subcommand(gen_cmd)) return cmd_gen_synthetic(spec, gen_size, gen_out);
    if (app.got_subcommand(train_cmd)) {
      run_training(build_run_options(train_cmd, train_flags));
      return 0;
    }
    if (app.got_subcommand(pre_cmd)) {
      RunOptions opt = build_run_options(pre_cmd, pre_flags);
      opt.cfg.adversarial_epochs = 0;
      run_training(opt);
      return 0;
    }
    if (app.got_subcommand(eval_cmd))
      return cmd_eval(ev_pi, ev_vocab, ev_corpus, ev_refs, ev_beam, ev_max_len, ev_out);
    if (app.got_subcommand(an_cmd))
      return cmd_analyze(an_pi, an_mu, an_disc, an_vocab, an_corpus, an_n, an_seed,
                         an_threads, an_out);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int r = app.exit(e);
    return r == 0 ? 0 : 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const DomainError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const OracleTimeout& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
