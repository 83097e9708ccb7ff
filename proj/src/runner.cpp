#include "copt/runner.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "copt/checkpoint.hpp"
#include "copt/errors.hpp"

namespace copt {

namespace fs = std::filesystem;

namespace {

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

long long to_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ContractError("config: key '" + key + "' wants an integer, got '" + value + "'");
  }
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ContractError("config: key '" + key + "' wants a number, got '" + value + "'");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw ContractError("config: key '" + key + "' wants a boolean, got '" + value + "'");
}

}  // namespace

std::string mode_name(TrainMode mode) {
  return mode == TrainMode::copt ? "copt" : "standard";
}

TrainMode parse_mode(const std::string& name) {
  if (name == "copt") return TrainMode::copt;
  if (name == "standard") return TrainMode::standard;
  throw ContractError("mode must be 'copt' or 'standard', got '" + name + "'");
}

std::string weighting_name(RewardWeighting w) {
  return w == RewardWeighting::to_go ? "to_go" : "own_step";
}

RewardWeighting parse_weighting(const std::string& name) {
  if (name == "to_go") return RewardWeighting::to_go;
  if (name == "own_step") return RewardWeighting::own_step;
  throw ContractError("weighting must be 'to_go' or 'own_step', got '" + name + "'");
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("config: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::string trimmed;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c)) || !trimmed.empty()) trimmed += c;
    while (!trimmed.empty() && std::isspace(static_cast<unsigned char>(trimmed.back())))
      trimmed.pop_back();
    if (trimmed.empty()) continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos)
      throw ContractError("config: line " + std::to_string(line_no) +
                          " is not 'key = value': " + trimmed);
    auto strip = [](std::string s) {
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(0, 1);
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
      return s;
    };
    kv[strip(trimmed.substr(0, eq))] = strip(trimmed.substr(eq + 1));
  }
  return kv;
}

void apply_config(const std::map<std::string, std::string>& kv, TrainConfig& cfg,
                  int& vocab_max) {
  for (const auto& [key, value] : kv) {
    if (key == "mode")
      cfg.mode = parse_mode(value);
    else if (key == "weighting")
      cfg.weighting = parse_weighting(value);
    else if (key == "seed")
      cfg.seed = static_cast<std::uint64_t>(to_int(key, value));
    else if (key == "batch_size")
      cfg.batch_size = static_cast<int>(to_int(key, value));
    else if (key == "pretrain_epochs")
      cfg.pretrain_epochs = static_cast<int>(to_int(key, value));
    else if (key == "d_pretrain_epochs")
      cfg.d_pretrain_epochs = static_cast<int>(to_int(key, value));
    else if (key == "adversarial_epochs")
      cfg.adversarial_epochs = static_cast<int>(to_int(key, value));
    else if (key == "g_steps")
      cfg.g_steps = static_cast<int>(to_int(key, value));
    else if (key == "d_steps")
      cfg.d_steps = static_cast<int>(to_int(key, value));
    else if (key == "gen_lr")
      cfg.gen_lr = to_double(key, value);
    else if (key == "disc_lr")
      cfg.disc_lr = to_double(key, value);
    else if (key == "pretrain_lr")
      cfg.pretrain_lr = to_double(key, value);
    else if (key == "beam_width")
      cfg.beam_width = static_cast<int>(to_int(key, value));
    else if (key == "hidden")
      cfg.hidden = static_cast<int>(to_int(key, value));
    else if (key == "emb_dim")
      cfg.emb_dim = static_cast<int>(to_int(key, value));
    else if (key == "layers")
      cfg.layers = static_cast<int>(to_int(key, value));
    else if (key == "disc_hidden")
      cfg.disc_hidden = static_cast<int>(to_int(key, value));
    else if (key == "disc_emb")
      cfg.disc_emb = static_cast<int>(to_int(key, value));
    else if (key == "disc_mlp_hidden")
      cfg.disc_mlp_hidden = static_cast<int>(to_int(key, value));
    else if (key == "baseline")
      cfg.baseline = to_bool(key, value);
    else if (key == "clip_norm")
      cfg.clip_norm = to_double(key, value);
    else if (key == "max_len_floor")
      cfg.max_len_floor = static_cast<int>(to_int(key, value));
    else if (key == "max_len_factor")
      cfg.max_len_factor = static_cast<int>(to_int(key, value));
    else if (key == "analyze_sample")
      cfg.analyze_sample = static_cast<int>(to_int(key, value));
    else if (key == "threads")
      cfg.threads = static_cast<int>(to_int(key, value));
    else if (key == "vocab_max")
      vocab_max = static_cast<int>(to_int(key, value));
    else
      throw ContractError("config: unknown key '" + key + "'");
  }
}

std::uint64_t file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("checksum: cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  return h;
}

namespace {

nlohmann::json config_json(const TrainConfig& c, int vocab_max) {
  return {{"mode", mode_name(c.mode)},
          {"weighting", weighting_name(c.weighting)},
          {"seed", c.seed},
          {"batch_size", c.batch_size},
          {"pretrain_epochs", c.pretrain_epochs},
          {"d_pretrain_epochs", c.d_pretrain_epochs},
          {"adversarial_epochs", c.adversarial_epochs},
          {"g_steps", c.g_steps},
          {"d_steps", c.d_steps},
          {"gen_lr", c.gen_lr},
          {"disc_lr", c.disc_lr},
          {"pretrain_lr", c.pretrain_lr},
          {"beam_width", c.beam_width},
          {"hidden", c.hidden},
          {"emb_dim", c.emb_dim},
          {"layers", c.layers},
          {"disc_hidden", c.disc_hidden},
          {"disc_emb", c.disc_emb},
          {"disc_mlp_hidden", c.disc_mlp_hidden},
          {"baseline", c.baseline},
          {"clip_norm", c.clip_norm},
          {"max_len_floor", c.max_len_floor},
          {"max_len_factor", c.max_len_factor},
          {"analyze_sample", c.analyze_sample},
          {"threads", c.threads},
          {"vocab_max", vocab_max}};
}

}  // namespace

std::string manifest_json(const RunOptions& opt, std::uint64_t corpus_checksum,
                          const std::string& started_at, const std::string& finished_at) {
  nlohmann::json j;
  j["tool_version"] = kToolVersion;
  j["corpus_path"] = opt.corpus_path;
  j["corpus_fnv1a"] = corpus_checksum;
  j["config"] = config_json(opt.cfg, opt.vocab_max);
  j["started_at"] = started_at;
  j["finished_at"] = finished_at.empty() ? nlohmann::json() : nlohmann::json(finished_at);
  j["outputs"] = {{"manifest", "manifest.json"},
                  {"metrics", "metrics.jsonl"},
                  {"vocab", "vocab.txt"},
                  {"checkpoints", "ckpt"}};
  return j.dump(2);
}

TrainState run_training(const RunOptions& opt) {
  opt.cfg.validate();
  fs::create_directories(opt.run_dir);
  fs::create_directories(fs::path(opt.run_dir) / "ckpt");

  const std::uint64_t corpus_sum = file_checksum(opt.corpus_path);
  const std::string started = now_iso8601();
  {
    std::ofstream mf(fs::path(opt.run_dir) / "manifest.json", std::ios::binary);
    mf << manifest_json(opt, corpus_sum, started, "") << "\n";
  }

  const LoadResult loaded = load_dialogues(opt.corpus_path);
  if (loaded.instances.empty()) throw ContractError("run_training: corpus has no instances");
  const Vocab vocab = build_vocab(loaded.instances, opt.vocab_max);
  vocab.save((fs::path(opt.run_dir) / "vocab.txt").string());
  const std::vector<EncodedInstance> corpus = encode_instances(loaded.instances, vocab);
  const std::uint64_t vh = vocab.hash();

  TrainState state = pretrain(corpus, vocab.size(), opt.cfg);
  const fs::path ckpt = fs::path(opt.run_dir) / "ckpt";
  save_generator((ckpt / "pi_pretrain.bin").string(), state.pi, vh);
  save_generator((ckpt / "mu.bin").string(), state.mu, vh);
  save_discriminator((ckpt / "disc_pretrain.bin").string(), state.disc, vh);

  std::ofstream metrics(fs::path(opt.run_dir) / "metrics.jsonl", std::ios::binary);
  if (!metrics) throw ContractError("run_training: cannot write metrics log");

  train_adversarial(corpus, state, opt.cfg,
                    [&](const EpochMetrics& m, const TrainState& st) {
                      metrics << m.to_json_line() << "\n";
                      metrics.flush();
                      char tag[16];
                      std::snprintf(tag, sizeof(tag), "%03d", m.epoch);
                      save_generator((ckpt / ("pi_epoch_" + std::string(tag) + ".bin")).string(),
                                     st.pi, vh);
                      save_generator((ckpt / ("mu_epoch_" + std::string(tag) + ".bin")).string(),
                                     st.mu, vh);
                      save_discriminator(
                          (ckpt / ("disc_epoch_" + std::string(tag) + ".bin")).string(),
                          st.disc, vh);
                    });

  save_generator((ckpt / "pi_final.bin").string(), state.pi, vh);
  save_discriminator((ckpt / "disc_final.bin").string(), state.disc, vh);

  {
    std::ofstream mf(fs::path(opt.run_dir) / "manifest.json", std::ios::binary);
    mf << manifest_json(opt, corpus_sum, started, now_iso8601()) << "\n";
  }
  return state;
}

}  // namespace copt
