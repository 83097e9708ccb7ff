#include "copt/vocab.hpp"

#include <fstream>

#include "copt/errors.hpp"
#include "copt/rng.hpp"

namespace copt {

Vocab::Vocab() {
  for (const char* t : {"<pad>", "<unk>", "<bos>", "<eos>"}) add(t);
}

int Vocab::add(const std::string& token) {
  if (index_.count(token))
    throw ContractError("Vocab::add: duplicate token '" + token + "'");
  tokens_.push_back(token);
  index_[token] = static_cast<int>(tokens_.size()) - 1;
  return index_[token];
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size())
    throw std::out_of_range("Vocab::token: id " + std::to_string(id) +
                            " out of range [0, " + std::to_string(size()) + ")");
  return tokens_[id];
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const std::string& t : tokens_) {
    h = fnv1a(t.data(), t.size(), h);
    h = fnv1a("\n", 1, h);
  }
  return h;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("Vocab::save: cannot open " + path);
  for (const std::string& t : tokens_) out << t << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("Vocab::load: cannot open " + path);
  Vocab v;
  std::string line;
  int i = 0;
  while (std::getline(in, line)) {
    if (i >= Vocab::kReserved) v.add(line);
    ++i;
  }
  if (i < Vocab::kReserved) throw ContractError("Vocab::load: truncated file " + path);
  return v;
}

}  // namespace copt
