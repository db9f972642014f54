#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "im2markup/param.hpp"

namespace im2markup {

// 64-bit FNV-1a, used for the checkpoint config digest.
uint64_t fnv1a64(std::string_view s);

// Versioned binary container: magic, format version, scalar width, config
// digest, then named blocks (name, shape, raw little-endian scalars).
template <class S>
void save_checkpoint(const std::string& path, uint64_t config_digest,
                     const ParamListT<S>& params);

// Restores into an already-built parameter list. Rejects a file whose config
// digest does not match, and any block name/shape disagreement.
template <class S>
void load_checkpoint(const std::string& path, uint64_t config_digest,
                     ParamListT<S>& params);

// Digest stored in a checkpoint file, without loading the blocks.
uint64_t peek_checkpoint_digest(const std::string& path);

}  // namespace im2markup
