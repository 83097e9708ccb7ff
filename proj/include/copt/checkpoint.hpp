#ifndef COPT_CHECKPOINT_HPP
#define COPT_CHECKPOINT_HPP

#include <cstdint>
#include <string>

#include "copt/params.hpp"
#include "copt/seq_models.hpp"

namespace copt {

/// Checkpoint container: magic + format version + vocab hash + a JSON model
/// header + a shape manifest, followed by the parameter blocks as
/// little-endian doubles in row-major order, in manifest order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_generator(const std::string& path, const GeneratorParams& g,
                    std::uint64_t vocab_hash);
void save_discriminator(const std::string& path, const DiscriminatorParams& d,
                        std::uint64_t vocab_hash);

/// Loaders verify the magic, version, every parameter's shape against the
/// header configuration, and (when expected_vocab_hash != 0) the vocab hash.
GeneratorParams load_generator(const std::string& path, std::uint64_t expected_vocab_hash);
DiscriminatorParams load_discriminator(const std::string& path,
                                       std::uint64_t expected_vocab_hash);

std::uint64_t checkpoint_vocab_hash(const std::string& path);

}  // namespace copt

#endif
