#ifndef COPT_CORPUS_HPP
#define COPT_CORPUS_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "copt/rng.hpp"
#include "copt/vocab.hpp"

namespace copt {

/// One training instance: up to three history utterances and the observed
/// response, as whitespace tokens.
struct DialogueInstance {
  std::vector<std::vector<std::string>> history;
  std::vector<std::string> response;
};

struct LoadResult {
  std::vector<DialogueInstance> instances;
  int skipped_dialogues = 0;  // dialogues with fewer than two utterances
};

/// Reads a corpus file: one dialogue per line, utterances separated by the
/// literal token __eou__. A K-utterance dialogue yields K-1 instances; the
/// i-th instance responds with utterance i+1 and keeps at most the three
/// preceding utterances as history. Tokens are lowercased.
LoadResult load_dialogues(const std::string& path);

/// Keeps the most frequent tokens up to max_size total entries (reserved ids
/// included); frequency ties are broken lexicographically (smaller kept).
Vocab build_vocab(const std::vector<DialogueInstance>& instances, int max_size);

/// Id-mapped instance. The history utterances are flattened with the EOS id
/// between consecutive utterances; unknown tokens map to UNK.
struct EncodedInstance {
  std::vector<int> history;
  std::vector<int> response;
};

EncodedInstance encode_instance(const DialogueInstance& inst, const Vocab& vocab);
std::vector<EncodedInstance> encode_instances(const std::vector<DialogueInstance>& instances,
                                              const Vocab& vocab);

/// Known ground-truth response policy behind a synthetic corpus: each history
/// utterance selects a template whose candidate responses carry softmax
/// weights.
struct GroundTruthPolicy {
  struct Template {
    std::vector<std::string> history;
    std::vector<std::vector<std::string>> candidates;
    std::vector<double> weights;  // sums to 1
  };
  std::vector<Template> templates;

  /// Index of the template whose history equals the given utterance; -1 if
  /// none matches.
  int find_template(const std::vector<std::string>& history) const;

  /// Exact next-token probabilities under the template given a response
  /// prefix; "<eos>" carries the mass of candidates equal to the prefix.
  std::vector<std::pair<std::string, double>> next_token_distribution(
      int template_index, const std::vector<std::string>& prefix) const;

  void save(const std::string& path) const;
  static GroundTruthPolicy load(const std::string& path);
};

struct SyntheticSpec {
  int vocab_size = 200;     // reserved ids included; must be >= 8
  int num_templates = 20;
  int len_min = 3;
  int len_max = 8;
  double temperature = 1.0;
  std::uint64_t seed = 1;
};

struct SyntheticCorpus {
  std::vector<DialogueInstance> instances;
  GroundTruthPolicy policy;
};

/// Deterministic synthetic corpus of (spec, n) single-turn dialogues with an
/// exported ground-truth policy for oracle tests.
SyntheticCorpus gen_synthetic(const SyntheticSpec& spec, int n_instances);

/// Writes instances in the load_dialogues line format.
void write_corpus(const std::vector<DialogueInstance>& instances, const std::string& path);

/// PAD-padded minibatch. Models read each row up to its length; padding never
/// reaches a loss.
struct Batch {
  std::vector<int> instance_ids;
  Eigen::MatrixXi history;   // rows = batch, PAD-padded
  Eigen::MatrixXi response;  // rows = batch, PAD-padded
  std::vector<int> history_len;
  std::vector<int> response_len;

  int size() const { return static_cast<int>(instance_ids.size()); }
  std::vector<int> history_row(int r) const;
  std::vector<int> response_row(int r) const;
};

/// One epoch of shuffled, padded batches.
std::vector<Batch> split_and_batch(const std::vector<EncodedInstance>& instances,
                                   int batch_size, RngStream& rng);

std::vector<std::string> tokenize(const std::string& text);

}  // namespace copt

#endif
