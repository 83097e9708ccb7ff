#ifndef COPT_VOCAB_HPP
#define COPT_VOCAB_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace copt {

/// Token table with fixed reserved ids. EOS doubles as the utterance
/// separator when a multi-utterance history is flattened for the encoder.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kReserved = 4;

  Vocab();

  /// Appends a non-reserved token; returns its id. The token must be new.
  int add(const std::string& token);

  int id(const std::string& token) const;  // kUnk if absent
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }

  bool is_reserved(int id) const { return id >= 0 && id < kReserved; }

  /// FNV-1a over "token\n" in id order; checkpoints embed this to detect
  /// model/vocab mismatches.
  std::uint64_t hash() const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace copt

#endif
