#pragma once

#include <span>

#include "im2markup/tensor.hpp"

namespace im2markup {

// Softmax classes cover every vocabulary entry except <pad>: class j is
// vocabulary id j+1.
inline int class_of_token_id(int token_id) { return token_id - 1; }
inline int token_id_of_class(int cls) { return cls + 1; }

// Token embedding plus the deep output MLP. The head sees the recurrent
// activation, the attention context and the previous word's embedding, so
// the image and language signals skip past the LSTM.
template <class S>
struct OutputHeadParamsT {
  TensorT<S> embedding;  // [vocab_total, m], row 0 is the unused <pad> row
  TensorT<S> w1, b1;     // (n + D + m) -> max(358, K), tanh
  TensorT<S> w2, b2;     // -> max(358, K), tanh
  TensorT<S> w3, b3;     // -> K, softmax
};

// Row lookup: ids are vocabulary ids. -> [B, m]
template <class S>
TensorT<S> embed(const OutputHeadParamsT<S>& params, std::span<const int> ids);

// h_top: [B, n], z: [B, D], prev_embed: [B, m] -> p: [B, K]
template <class S>
TensorT<S> deep_output(const TensorT<S>& h_top, const TensorT<S>& z,
                       const TensorT<S>& prev_embed,
                       const OutputHeadParamsT<S>& params);

}  // namespace im2markup
