#pragma once

#include <cstdint>
#include <vector>

#include "im2markup/attention.hpp"
#include "im2markup/image.hpp"
#include "im2markup/model.hpp"

namespace im2markup {

struct DecodeResult {
  std::vector<int> token_ids;  // no <bos>; ends with <eos> unless truncated
  double log_prob = 0.0;       // total log-probability of the sequence
  AttentionTrace trace;        // one alpha row per emitted token
};

// Breadth-limited search maximizing total log-probability. Finished
// hypotheses collect in a pool; live ones that reach max_len are
// force-finished. Score ties break toward the lexicographically smaller
// token-id sequence.
template <class S>
DecodeResult beam_search(ModelT<S>& model, const Image& image, int beam_width,
                         int max_len);

// Per-step argmax fed back autoregressively; the cheap training-time decode.
template <class S>
DecodeResult bestpath_decode(ModelT<S>& model, const Image& image,
                             int max_len);

// Ancestral sampling from p_t, deterministic for a fixed seed.
template <class S>
DecodeResult sample_sequence(ModelT<S>& model, const Image& image,
                             uint64_t seed, int max_len);

}  // namespace im2markup
