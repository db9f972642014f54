#include "im2markup/output_head.hpp"

namespace im2markup {

template <class S>
TensorT<S> embed(const OutputHeadParamsT<S>& params, std::span<const int> ids) {
  return embedding_lookup(params.embedding, ids);
}

template <class S>
TensorT<S> deep_output(const TensorT<S>& h_top, const TensorT<S>& z,
                       const TensorT<S>& prev_embed,
                       const OutputHeadParamsT<S>& params) {
  auto x = concat<S>({h_top, z, prev_embed}, 1);
  auto h1 = im2markup::tanh(add(matmul(x, params.w1), params.b1));
  auto h2 = im2markup::tanh(add(matmul(h1, params.w2), params.b2));
  return softmax(add(matmul(h2, params.w3), params.b3));
}

#define IM2MARKUP_INSTANTIATE(S)                                       \
  template struct OutputHeadParamsT<S>;                                \
  template TensorT<S> embed<S>(const OutputHeadParamsT<S>&,            \
                               std::span<const int>);                  \
  template TensorT<S> deep_output<S>(const TensorT<S>&, const TensorT<S>&, \
                                     const TensorT<S>&,                \
                                     const OutputHeadParamsT<S>&);

IM2MARKUP_INSTANTIATE(float)
IM2MARKUP_INSTANTIATE(double)

#undef IM2MARKUP_INSTANTIATE

}  // namespace im2markup
