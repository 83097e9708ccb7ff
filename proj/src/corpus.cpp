#include "copt/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "copt/errors.hpp"

namespace copt {

namespace {

constexpr const char* kUtteranceDelim = "__eou__";

std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(lowercase(tok));
  return out;
}

LoadResult load_dialogues(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("load_dialogues: cannot open " + path);

  LoadResult result;
  std::string line;
  while (std::getline(in, line)) {
    const std::vector<std::string> tokens = tokenize(line);
    std::vector<std::vector<std::string>> utterances;
    std::vector<std::string> current;
    for (const std::string& t : tokens) {
      if (t == kUtteranceDelim) {
        if (!current.empty()) utterances.push_back(std::move(current));
        current.clear();
      } else {
        current.push_back(t);
      }
    }
    if (!current.empty()) utterances.push_back(std::move(current));

    if (utterances.empty()) continue;  // blank line
    if (utterances.size() < 2) {
      ++result.skipped_dialogues;
      continue;
    }
    for (std::size_t i = 1; i < utterances.size(); ++i) {
      DialogueInstance inst;
      const std::size_t first = i >= 3 ? i - 3 : 0;
      for (std::size_t h = first; h < i; ++h) inst.history.push_back(utterances[h]);
      inst.response = utterances[i];
      result.instances.push_back(std::move(inst));
    }
  }
  return result;
}

Vocab build_vocab(const std::vector<DialogueInstance>& instances, int max_size) {
  if (max_size <= Vocab::kReserved)
    throw ContractError("build_vocab: max_size must exceed the reserved id count");

  std::map<std::string, long long> counts;
  for (const DialogueInstance& inst : instances) {
    for (const auto& utt : inst.history)
      for (const std::string& t : utt) ++counts[t];
    for (const std::string& t : inst.response) ++counts[t];
  }

  std::vector<std::pair<std::string, long long>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab vocab;
  const int budget = max_size - Vocab::kReserved;
  for (int i = 0; i < static_cast<int>(ranked.size()) && i < budget; ++i)
    vocab.add(ranked[i].first);
  return vocab;
}

EncodedInstance encode_instance(const DialogueInstance& inst, const Vocab& vocab) {
  if (inst.history.empty()) throw ContractError("encode_instance: empty history");
  if (inst.response.empty()) throw ContractError("encode_instance: empty response");
  EncodedInstance out;
  for (std::size_t h = 0; h < inst.history.size(); ++h) {
    if (h > 0) out.history.push_back(Vocab::kEos);
    for (const std::string& t : inst.history[h]) out.history.push_back(vocab.id(t));
  }
  for (const std::string& t : inst.response) out.response.push_back(vocab.id(t));
  return out;
}

std::vector<EncodedInstance> encode_instances(const std::vector<DialogueInstance>& instances,
                                              const Vocab& vocab) {
  std::vector<EncodedInstance> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.push_back(encode_instance(inst, vocab));
  return out;
}

int GroundTruthPolicy::find_template(const std::vector<std::string>& history) const {
  for (std::size_t t = 0; t < templates.size(); ++t)
    if (templates[t].history == history) return static_cast<int>(t);
  return -1;
}

std::vector<std::pair<std::string, double>> GroundTruthPolicy::next_token_distribution(
    int template_index, const std::vector<std::string>& prefix) const {
  const Template& tpl = templates.at(template_index);
  std::map<std::string, double> mass;
  double total = 0.0;
  for (std::size_t c = 0; c < tpl.candidates.size(); ++c) {
    const auto& cand = tpl.candidates[c];
    if (cand.size() < prefix.size()) continue;
    if (!std::equal(prefix.begin(), prefix.end(), cand.begin())) continue;
    total += tpl.weights[c];
    if (cand.size() == prefix.size())
      mass["<eos>"] += tpl.weights[c];
    else
      mass[cand[prefix.size()]] += tpl.weights[c];
  }
  std::vector<std::pair<std::string, double>> out;
  if (total <= 0.0) return out;
  out.reserve(mass.size());
  for (const auto& [tok, w] : mass) out.emplace_back(tok, w / total);
  return out;
}

void GroundTruthPolicy::save(const std::string& path) const {
  nlohmann::json j;
  j["templates"] = nlohmann::json::array();
  for (const Template& t : templates) {
    nlohmann::json jt;
    jt["history"] = t.history;
    jt["candidates"] = t.candidates;
    jt["weights"] = t.weights;
    j["templates"].push_back(jt);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("GroundTruthPolicy::save: cannot open " + path);
  out << j.dump(2) << "\n";
}

GroundTruthPolicy GroundTruthPolicy::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("GroundTruthPolicy::load: cannot open " + path);
  nlohmann::json j;
  in >> j;
  GroundTruthPolicy p;
  for (const auto& jt : j.at("templates")) {
    Template t;
    t.history = jt.at("history").get<std::vector<std::string>>();
    t.candidates = jt.at("candidates").get<std::vector<std::vector<std::string>>>();
    t.weights = jt.at("weights").get<std::vector<double>>();
    p.templates.push_back(std::move(t));
  }
  return p;
}

SyntheticCorpus gen_synthetic(const SyntheticSpec& spec, int n_instances) {
  if (spec.vocab_size < 8)
    throw ContractError("gen_synthetic: vocab_size must be >= 8");
  if (spec.num_templates < 1 || spec.len_min < 1 || spec.len_max < spec.len_min)
    throw ContractError("gen_synthetic: invalid template configuration");
  const int n_content = spec.vocab_size - Vocab::kReserved;
  if (spec.num_templates > n_content)
    throw ContractError("gen_synthetic: more templates than content words");

  std::vector<std::string> words(n_content);
  for (int i = 0; i < n_content; ++i) words[i] = "w" + std::to_string(i);

  RngStream rng(spec.seed, 0x5e7);
  constexpr int kCandidates = 4;

  auto random_seq = [&](int forced_first) {
    const int len = spec.len_min +
                    static_cast<int>(rng.uniform_int(
                        static_cast<std::uint64_t>(spec.len_max - spec.len_min + 1)));
    std::vector<std::string> seq(len);
    for (int i = 0; i < len; ++i) {
      const int w = (i == 0 && forced_first >= 0)
                        ? forced_first
                        : static_cast<int>(rng.uniform_int(n_content));
      seq[i] = words[w];
    }
    return seq;
  };

  GroundTruthPolicy policy;
  for (int t = 0; t < spec.num_templates; ++t) {
    GroundTruthPolicy::Template tpl;
    tpl.history = random_seq(t);  // unique leading word identifies the template
    for (int c = 0; c < kCandidates; ++c) {
      std::vector<std::string> cand;
      do {
        cand = random_seq(-1);
      } while (std::find(tpl.candidates.begin(), tpl.candidates.end(), cand) !=
               tpl.candidates.end());
      tpl.candidates.push_back(std::move(cand));
    }
    Eigen::VectorXd z(kCandidates);
    for (int c = 0; c < kCandidates; ++c) z[c] = rng.normal();
    z /= std::max(spec.temperature, 1e-6);
    const double m = z.maxCoeff();
    Eigen::VectorXd w = (z.array() - m).exp();
    w /= w.sum();
    tpl.weights.assign(w.data(), w.data() + kCandidates);
    policy.templates.push_back(std::move(tpl));
  }

  SyntheticCorpus corpus;
  corpus.policy = policy;
  corpus.instances.reserve(n_instances);
  for (int i = 0; i < n_instances; ++i) {
    const int t = static_cast<int>(rng.uniform_int(spec.num_templates));
    const auto& tpl = policy.templates[t];
    double r = rng.uniform01();
    int pick = kCandidates - 1;
    for (int c = 0; c < kCandidates; ++c) {
      if (r < tpl.weights[c]) {
        pick = c;
        break;
      }
      r -= tpl.weights[c];
    }
    DialogueInstance inst;
    inst.history.push_back(tpl.history);
    inst.response = tpl.candidates[pick];
    corpus.instances.push_back(std::move(inst));
  }
  return corpus;
}

void write_corpus(const std::vector<DialogueInstance>& instances, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("write_corpus: cannot open " + path);
  for (const DialogueInstance& inst : instances) {
    bool first = true;
    auto emit = [&](const std::vector<std::string>& utt) {
      if (!first) out << " " << kUtteranceDelim << " ";
      first = false;
      for (std::size_t i = 0; i < utt.size(); ++i) out << (i ? " " : "") << utt[i];
    };
    for (const auto& utt : inst.history) emit(utt);
    emit(inst.response);
    out << "\n";
  }
}

std::vector<int> Batch::history_row(int r) const {
  std::vector<int> out(history_len.at(r));
  for (int i = 0; i < history_len[r]; ++i) out[i] = history(r, i);
  return out;
}

std::vector<int> Batch::response_row(int r) const {
  std::vector<int> out(response_len.at(r));
  for (int i = 0; i < response_len[r]; ++i) out[i] = response(r, i);
  return out;
}

std::vector<Batch> split_and_batch(const std::vector<EncodedInstance>& instances,
                                   int batch_size, RngStream& rng) {
  if (batch_size < 1) throw ContractError("split_and_batch: batch_size must be >= 1");

  std::vector<int> order(instances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(i)]);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const int b = static_cast<int>(std::min<std::size_t>(batch_size, order.size() - start));
    Batch batch;
    int max_h = 0, max_r = 0;
    for (int k = 0; k < b; ++k) {
      const EncodedInstance& inst = instances[order[start + k]];
      batch.instance_ids.push_back(order[start + k]);
      batch.history_len.push_back(static_cast<int>(inst.history.size()));
      batch.response_len.push_back(static_cast<int>(inst.response.size()));
      max_h = std::max(max_h, batch.history_len.back());
      max_r = std::max(max_r, batch.response_len.back());
    }
    batch.history = Eigen::MatrixXi::Constant(b, max_h, Vocab::kPad);
    batch.response = Eigen::MatrixXi::Constant(b, max_r, Vocab::kPad);
    for (int k = 0; k < b; ++k) {
      const EncodedInstance& inst = instances[batch.instance_ids[k]];
      for (std::size_t i = 0; i < inst.history.size(); ++i)
        batch.history(k, static_cast<int>(i)) = inst.history[i];
      for (std::size_t i = 0; i < inst.response.size(); ++i)
        batch.response(k, static_cast<int>(i)) = inst.response[i];
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace copt
