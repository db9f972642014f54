#pragma once

#include <string>
#include <vector>

#include "im2markup/tensor.hpp"

namespace im2markup {

// Per-step attention weights recorded while decoding one sample. Serialized
// as lines-of-JSON {step, token, alpha:[L]}.
struct AttentionTrace {
  std::vector<std::vector<double>> steps;  // one row of L weights per token
  std::vector<std::string> tokens;         // annotation, same length as steps

  size_t length() const { return steps.size(); }
  // alpha_l summed over steps
  std::vector<double> cumulative() const;

  void save(const std::string& path) const;
  static AttentionTrace load(const std::string& path);
};

// Three-layer MLP over the whole encoded image plus the previous recurrent
// activation; softmax output, one weight per image location.
template <class S>
struct AttentionParamsT {
  TensorT<S> w1, b1;  // (L*D + n) -> max(256, L), tanh
  TensorT<S> w2, b2;  // -> max(128, L), tanh
  TensorT<S> w3, b3;  // -> L, softmax
};

// a_flat: [B, L*D], h_prev: [B, n] -> alpha: [B, L]
template <class S>
TensorT<S> attend(const TensorT<S>& a_flat, const TensorT<S>& h_prev,
                  const AttentionParamsT<S>& params);

// a: [B, L, D], alpha: [B, L] -> z: [B, D], the alpha-weighted feature sum.
template <class S>
TensorT<S> context(const TensorT<S>& a, const TensorT<S>& alpha);

// Cells carrying more than this weight count as the focal region; softmax
// never yields exact zeros so "positive weight" needs a working cutoff.
double focal_threshold(int num_locations);

}  // namespace im2markup
