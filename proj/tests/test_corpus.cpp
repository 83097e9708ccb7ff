#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "copt/corpus.hpp"
#include "copt/errors.hpp"
#include "test_util.hpp"

using namespace copt;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  const std::string path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream out(path, std::ios::binary);
  out << content;
  return path;
}

}  // namespace

TEST_CASE("load_dialogues: a K-utterance dialogue yields K-1 instances") {
  const std::string path = write_temp(
      "copt_corpus_k.txt", "a b __eou__ c d __eou__ e __eou__ f g h\n");
  const LoadResult r = load_dialogues(path);
  REQUIRE(r.instances.size() == 3);  // 4 utterances
  CHECK(r.skipped_dialogues == 0);
  CHECK(r.instances[0].history.size() == 1);
  CHECK(r.instances[0].response == std::vector<std::string>{"c", "d"});
  CHECK(r.instances[1].history.size() == 2);
  CHECK(r.instances[2].history.size() == 3);
  CHECK(r.instances[2].response == std::vector<std::string>{"f", "g", "h"});
}

TEST_CASE("load_dialogues: two-utterance dialogue gives one instance with one history turn") {
  const std::string path = write_temp("copt_corpus_2.txt", "hi there __eou__ hello\n");
  const LoadResult r = load_dialogues(path);
  REQUIRE(r.instances.size() == 1);
  CHECK(r.instances[0].history.size() == 1);
  CHECK(r.instances[0].history[0] == std::vector<std::string>{"hi", "there"});
  CHECK(r.instances[0].response == std::vector<std::string>{"hello"});
}

TEST_CASE("load_dialogues: history window caps at three utterances") {
  const std::string path = write_temp(
      "copt_corpus_6.txt", "u1 __eou__ u2 __eou__ u3 __eou__ u4 __eou__ u5 __eou__ u6\n");
  const LoadResult r = load_dialogues(path);
  REQUIRE(r.instances.size() == 5);
  const auto& fifth = r.instances[4];
  REQUIRE(fifth.history.size() == 3);
  CHECK(fifth.history[0] == std::vector<std::string>{"u3"});
  CHECK(fifth.history[2] == std::vector<std::string>{"u5"});
  CHECK(fifth.response == std::vector<std::string>{"u6"});
}

TEST_CASE("load_dialogues: dialogues with fewer than two utterances are skipped and counted") {
  const std::string path = write_temp(
      "copt_corpus_skip.txt", "lonely utterance\n\na __eou__ b\nanother single\n");
  const LoadResult r = load_dialogues(path);
  CHECK(r.instances.size() == 1);
  CHECK(r.skipped_dialogues == 2);
  CHECK_THROWS_AS(load_dialogues("/nonexistent/copt.txt"), ContractError);
}

TEST_CASE("load_dialogues: tokens are lowercased") {
  const std::string path = write_temp("copt_corpus_case.txt", "Hello World __eou__ BYE\n");
  const LoadResult r = load_dialogues(path);
  CHECK(r.instances[0].history[0] == std::vector<std::string>{"hello", "world"});
  CHECK(r.instances[0].response == std::vector<std::string>{"bye"});
}

TEST_CASE("build_vocab: three distinct tokens with room to spare gives size 7") {
  DialogueInstance inst;
  inst.history = {{"a", "b"}};
  inst.response = {"c", "a"};
  const Vocab v = build_vocab({inst}, 10);
  CHECK(v.size() == 7);  // 3 content + 4 reserved
  CHECK(v.id("a") >= Vocab::kReserved);
  CHECK(v.id("zzz") == Vocab::kUnk);
}

TEST_CASE("build_vocab: truncation keeps the most frequent tokens") {
  DialogueInstance inst;
  inst.history = {{"rare"}};
  inst.response = {"hot", "hot", "hot", "warm", "warm"};
  const Vocab v = build_vocab({inst}, 6);  // room for 2 content tokens
  CHECK(v.size() == 6);
  CHECK(v.id("hot") != Vocab::kUnk);
  CHECK(v.id("warm") != Vocab::kUnk);
  CHECK(v.id("rare") == Vocab::kUnk);
}

TEST_CASE("build_vocab: frequency ties at the cutoff break lexicographically") {
  DialogueInstance inst;
  inst.history = {{"c", "c"}};
  inst.response = {"b", "a"};  // 'a' and 'b' tied at 1
  const Vocab v = build_vocab({inst}, 6);  // c plus one of {a, b}
  CHECK(v.id("c") != Vocab::kUnk);
  CHECK(v.id("a") != Vocab::kUnk);
  CHECK(v.id("b") == Vocab::kUnk);
  CHECK_THROWS_AS(build_vocab({inst}, 4), ContractError);
}

TEST_CASE("encode_instance: history utterances join on the EOS separator, unknowns to UNK") {
  DialogueInstance inst;
  inst.history = {{"a"}, {"b"}};
  inst.response = {"a", "mystery"};
  const Vocab v = build_vocab({DialogueInstance{{{"a"}, {"b"}}, {"a"}}}, 10);
  const EncodedInstance enc = encode_instance(inst, v);
  REQUIRE(enc.history.size() == 3);
  CHECK(enc.history[1] == Vocab::kEos);
  CHECK(enc.history[0] == v.id("a"));
  CHECK(enc.history[2] == v.id("b"));
  REQUIRE(enc.response.size() == 2);
  CHECK(enc.response[1] == Vocab::kUnk);
}

TEST_CASE("gen_synthetic: identical spec and seed give identical corpora") {
  SyntheticSpec spec;
  spec.vocab_size = 40;
  spec.num_templates = 6;
  spec.seed = 99;
  const SyntheticCorpus a = gen_synthetic(spec, 50);
  const SyntheticCorpus b = gen_synthetic(spec, 50);
  REQUIRE(a.instances.size() == 50);
  bool equal = a.instances.size() == b.instances.size();
  for (std::size_t i = 0; equal && i < a.instances.size(); ++i)
    equal = a.instances[i].history == b.instances[i].history &&
            a.instances[i].response == b.instances[i].response;
  CHECK(equal);
  CHECK(a.policy.templates.size() == 6);
}

TEST_CASE("gen_synthetic: every response token is inside the vocabulary") {
  SyntheticSpec spec;
  spec.vocab_size = 24;
  spec.num_templates = 5;
  spec.seed = 3;
  const SyntheticCorpus c = gen_synthetic(spec, 300);
  const Vocab v = build_vocab(c.instances, spec.vocab_size);
  for (const auto& inst : c.instances)
    for (const auto& tok : inst.response) CHECK(v.id(tok) != Vocab::kUnk);
  CHECK_THROWS_AS(gen_synthetic(SyntheticSpec{4, 1, 1, 1, 1.0, 1}, 5), ContractError);
}

TEST_CASE("gen_synthetic: response frequencies for a fixed history match the exported policy") {
  SyntheticSpec spec;
  spec.vocab_size = 30;
  spec.num_templates = 1;  // single template pins the history
  spec.seed = 12;
  const SyntheticCorpus c = gen_synthetic(spec, 10000);

  std::map<std::string, long long> counts;
  auto key = [](const std::vector<std::string>& toks) {
    std::string k;
    for (const auto& t : toks) k += t + " ";
    return k;
  };
  for (const auto& inst : c.instances) ++counts[key(inst.response)];

  std::map<std::string, double> probs;
  const auto& tpl = c.policy.templates[0];
  for (std::size_t i = 0; i < tpl.candidates.size(); ++i)
    probs[key(tpl.candidates[i])] += tpl.weights[i];
  CHECK(testutil::tv_discrete(counts, 10000, probs) <= 0.03);
}

TEST_CASE("ground-truth policy: per-step distributions and serialization round-trip") {
  GroundTruthPolicy p;
  GroundTruthPolicy::Template t;
  t.history = {"h"};
  t.candidates = {{"a", "b"}, {"a", "c"}, {"d"}};
  t.weights = {0.5, 0.3, 0.2};
  p.templates.push_back(t);

  const auto d0 = p.next_token_distribution(0, {});
  std::map<std::string, double> d0m(d0.begin(), d0.end());
  CHECK(d0m["a"] == doctest::Approx(0.8));
  CHECK(d0m["d"] == doctest::Approx(0.2));

  const auto d1 = p.next_token_distribution(0, {"a"});
  std::map<std::string, double> d1m(d1.begin(), d1.end());
  CHECK(d1m["b"] == doctest::Approx(0.5 / 0.8));
  CHECK(d1m["c"] == doctest::Approx(0.3 / 0.8));

  const auto d2 = p.next_token_distribution(0, {"d"});
  std::map<std::string, double> d2m(d2.begin(), d2.end());
  CHECK(d2m["<eos>"] == doctest::Approx(1.0));

  const std::string path =
      (std::filesystem::temp_directory_path() / "copt_policy.json").string();
  p.save(path);
  const GroundTruthPolicy q = GroundTruthPolicy::load(path);
  REQUIRE(q.templates.size() == 1);
  CHECK(q.templates[0].candidates == t.candidates);
  CHECK(q.templates[0].weights[0] == doctest::Approx(0.5));
  CHECK(p.find_template({"h"}) == 0);
  CHECK(p.find_template({"nope"}) == -1);
}

TEST_CASE("write_corpus round-trips through load_dialogues") {
  SyntheticSpec spec;
  spec.vocab_size = 20;
  spec.num_templates = 4;
  spec.seed = 8;
  const SyntheticCorpus c = gen_synthetic(spec, 40);
  const std::string path =
      (std::filesystem::temp_directory_path() / "copt_roundtrip.txt").string();
  write_corpus(c.instances, path);
  const LoadResult r = load_dialogues(path);
  REQUIRE(r.instances.size() == c.instances.size());
  for (std::size_t i = 0; i < r.instances.size(); ++i) {
    CHECK(r.instances[i].history == c.instances[i].history);
    CHECK(r.instances[i].response == c.instances[i].response);
  }
}

TEST_CASE("split_and_batch: 10 instances at batch 4 give batches of 4/4/2") {
  std::vector<EncodedInstance> instances(10);
  for (int i = 0; i < 10; ++i) {
    instances[i].history = {4, 5};
    instances[i].response = std::vector<int>(1 + i % 3, 6);
  }
  RngStream rng(1, 1);
  const std::vector<Batch> batches = split_and_batch(instances, 4, rng);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 4);
  CHECK(batches[1].size() == 4);
  CHECK(batches[2].size() == 2);
  CHECK_THROWS_AS(split_and_batch(instances, 0, rng), ContractError);
}

TEST_CASE("split_and_batch: identical seeds give identical shuffles") {
  std::vector<EncodedInstance> instances(25);
  for (int i = 0; i < 25; ++i) {
    instances[i].history = {4};
    instances[i].response = {5, 6};
  }
  RngStream r1(9, 2), r2(9, 2);
  const auto b1 = split_and_batch(instances, 7, r1);
  const auto b2 = split_and_batch(instances, 7, r2);
  REQUIRE(b1.size() == b2.size());
  for (std::size_t i = 0; i < b1.size(); ++i) CHECK(b1[i].instance_ids == b2[i].instance_ids);
}

TEST_CASE("split_and_batch: rows are PAD-padded and recover the original ids") {
  std::vector<EncodedInstance> instances;
  instances.push_back({{4, 5, 6}, {7}});
  instances.push_back({{4}, {7, 8, 9}});
  RngStream rng(2, 3);
  const auto batches = split_and_batch(instances, 2, rng);
  REQUIRE(batches.size() == 1);
  const Batch& b = batches[0];
  CHECK(b.history.cols() == 3);
  CHECK(b.response.cols() == 3);
  for (int k = 0; k < 2; ++k) {
    const EncodedInstance& inst = instances[b.instance_ids[k]];
    CHECK(b.history_row(k) == inst.history);
    CHECK(b.response_row(k) == inst.response);
    for (int j = b.history_len[k]; j < b.history.cols(); ++j)
      CHECK(b.history(k, j) == Vocab::kPad);
    for (int j = b.response_len[k]; j < b.response.cols(); ++j)
      CHECK(b.response(k, j) == Vocab::kPad);
  }
}

TEST_CASE("vocab: save/load round-trip preserves ids and hash") {
  DialogueInstance inst;
  inst.history = {{"alpha", "beta"}};
  inst.response = {"gamma"};
  const Vocab v = build_vocab({inst}, 10);
  const std::string path = (std::filesystem::temp_directory_path() / "copt_vocab.txt").string();
  v.save(path);
  const Vocab w = Vocab::load(path);
  CHECK(w.size() == v.size());
  CHECK(w.hash() == v.hash());
  CHECK(w.id("alpha") == v.id("alpha"));
  CHECK(w.token(Vocab::kEos) == "<eos>");
}
