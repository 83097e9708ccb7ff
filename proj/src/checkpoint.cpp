#include "copt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "copt/errors.hpp"

namespace copt {

namespace {

constexpr char kMagic[8] = {'C', 'O', 'P', 'T', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms unsupported");

template <typename T>
void write_le(std::ofstream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(buf, buf + sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) throw ContractError("checkpoint: truncated file");
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

void write_params(const std::string& path, const ParamSet& ps,
                  const nlohmann::json& meta, std::uint64_t vocab_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(out, kCheckpointVersion);
  write_le<std::uint64_t>(out, vocab_hash);

  const std::string meta_s = meta.dump();
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(meta_s.size()));
  out.write(meta_s.data(), static_cast<std::streamsize>(meta_s.size()));

  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ps.size()));
  for (int i = 0; i < ps.size(); ++i) {
    const std::string& name = ps.name(i);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ps.value(i).rows()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ps.value(i).cols()));
  }
  for (int i = 0; i < ps.size(); ++i) {
    const Mat& m = ps.value(i);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) write_le<double>(out, m(r, c));
  }
  if (!out) throw ContractError("checkpoint: write failed for " + path);
}

struct RawCheckpoint {
  nlohmann::json meta;
  std::uint64_t vocab_hash = 0;
  std::vector<std::pair<std::string, Mat>> entries;
};

RawCheckpoint read_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ContractError("checkpoint: bad magic in " + path);
  const auto version = read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw ContractError("checkpoint: unsupported format version " + std::to_string(version));

  RawCheckpoint ck;
  ck.vocab_hash = read_le<std::uint64_t>(in);
  const auto meta_len = read_le<std::uint32_t>(in);
  std::string meta_s(meta_len, '\0');
  in.read(meta_s.data(), meta_len);
  if (!in) throw ContractError("checkpoint: truncated header in " + path);
  ck.meta = nlohmann::json::parse(meta_s);

  const auto n = read_le<std::uint32_t>(in);
  std::vector<std::pair<std::string, std::pair<std::uint32_t, std::uint32_t>>> manifest;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto name_len = read_le<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = read_le<std::uint32_t>(in);
    const auto cols = read_le<std::uint32_t>(in);
    if (!in) throw ContractError("checkpoint: truncated manifest in " + path);
    manifest.emplace_back(std::move(name), std::make_pair(rows, cols));
  }
  for (const auto& [name, shape] : manifest) {
    Mat m(shape.first, shape.second);
    for (std::uint32_t r = 0; r < shape.first; ++r)
      for (std::uint32_t c = 0; c < shape.second; ++c) m(r, c) = read_le<double>(in);
    ck.entries.emplace_back(name, std::move(m));
  }
  return ck;
}

void fill_params(ParamSet& ps, const RawCheckpoint& ck, const std::string& path) {
  if (static_cast<int>(ck.entries.size()) != ps.size())
    throw ContractError("checkpoint: " + path + " has " +
                        std::to_string(ck.entries.size()) + " parameters, expected " +
                        std::to_string(ps.size()));
  for (const auto& [name, m] : ck.entries) {
    const int i = ps.find(name);
    if (i < 0) throw ContractError("checkpoint: unknown parameter '" + name + "' in " + path);
    if (m.rows() != ps.value(i).rows() || m.cols() != ps.value(i).cols())
      throw ContractError("checkpoint: shape mismatch for '" + name + "' in " + path +
                          ": file has " + shape_str(m) + ", model wants " +
                          shape_str(ps.value(i)));
    ps.value(i) = m;
  }
}

void check_hash(const RawCheckpoint& ck, std::uint64_t expected, const std::string& path) {
  if (expected != 0 && ck.vocab_hash != expected)
    throw ContractError("checkpoint: vocab hash mismatch for " + path);
}

}  // namespace

void save_generator(const std::string& path, const GeneratorParams& g,
                    std::uint64_t vocab_hash) {
  nlohmann::json meta = {{"kind", "generator"},
                         {"vocab", g.cfg.vocab},
                         {"emb_dim", g.cfg.emb_dim},
                         {"hidden", g.cfg.hidden},
                         {"layers", g.cfg.layers}};
  write_params(path, g.ps, meta, vocab_hash);
}

void save_discriminator(const std::string& path, const DiscriminatorParams& d,
                        std::uint64_t vocab_hash) {
  nlohmann::json meta = {{"kind", "discriminator"},
                         {"vocab", d.cfg.vocab},
                         {"emb_dim", d.cfg.emb_dim},
                         {"hidden", d.cfg.hidden},
                         {"mlp_hidden", d.cfg.mlp_hidden}};
  write_params(path, d.ps, meta, vocab_hash);
}

GeneratorParams load_generator(const std::string& path, std::uint64_t expected_vocab_hash) {
  RawCheckpoint ck = read_params(path);
  check_hash(ck, expected_vocab_hash, path);
  if (ck.meta.value("kind", "") != "generator")
    throw ContractError("checkpoint: " + path + " is not a generator checkpoint");
  GeneratorConfig cfg;
  cfg.vocab = ck.meta.at("vocab");
  cfg.emb_dim = ck.meta.at("emb_dim");
  cfg.hidden = ck.meta.at("hidden");
  cfg.layers = ck.meta.at("layers");
  RngStream scratch(0, 0);
  GeneratorParams g = GeneratorParams::init(cfg, scratch);
  fill_params(g.ps, ck, path);
  return g;
}

DiscriminatorParams load_discriminator(const std::string& path,
                                       std::uint64_t expected_vocab_hash) {
  RawCheckpoint ck = read_params(path);
  check_hash(ck, expected_vocab_hash, path);
  if (ck.meta.value("kind", "") != "discriminator")
    throw ContractError("checkpoint: " + path + " is not a discriminator checkpoint");
  DiscConfig cfg;
  cfg.vocab = ck.meta.at("vocab");
  cfg.emb_dim = ck.meta.at("emb_dim");
  cfg.hidden = ck.meta.at("hidden");
  cfg.mlp_hidden = ck.meta.at("mlp_hidden");
  RngStream scratch(0, 0);
  DiscriminatorParams d = DiscriminatorParams::init(cfg, scratch);
  fill_params(d.ps, ck, path);
  return d;
}

std::uint64_t checkpoint_vocab_hash(const std::string& path) {
  return read_params(path).vocab_hash;
}

}  // namespace copt
