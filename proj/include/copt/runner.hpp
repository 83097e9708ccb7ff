#ifndef COPT_RUNNER_HPP
#define COPT_RUNNER_HPP

#include <map>
#include <string>

#include "copt/train.hpp"

namespace copt {

inline constexpr const char* kToolVersion = "copt 0.1.0";

/// Flat key = value configuration text; '#' starts a comment. Unknown keys
/// are an error.
std::map<std::string, std::string> parse_config_file(const std::string& path);
void apply_config(const std::map<std::string, std::string>& kv, TrainConfig& cfg,
                  int& vocab_max);

std::string mode_name(TrainMode mode);
TrainMode parse_mode(const std::string& name);
std::string weighting_name(RewardWeighting w);
RewardWeighting parse_weighting(const std::string& name);

struct RunOptions {
  std::string corpus_path;
  std::string run_dir;
  TrainConfig cfg;
  int vocab_max = 10000;
};

/// Effective-config snapshot plus provenance; written to manifest.json before
/// training starts and finalized with the end timestamp afterwards.
std::string manifest_json(const RunOptions& opt, std::uint64_t corpus_checksum,
                          const std::string& started_at, const std::string& finished_at);

/// Full pipeline: load + vocab + pretrain + adversarial epochs, with
/// per-epoch checkpoints for all three policies and a line-delimited metrics
/// log. Returns the final state.
TrainState run_training(const RunOptions& opt);

std::uint64_t file_checksum(const std::string& path);

}  // namespace copt

#endif
