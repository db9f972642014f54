#pragma once

#include <string>
#include <vector>

#include "im2markup/rng.hpp"
#include "im2markup/tensor.hpp"

namespace im2markup {

// A named trainable tensor. Models keep their parameters in a flat ordered
// list so the optimizer, checkpointer and gradient checker can walk them.
template <class S>
struct ParamT {
  std::string name;
  TensorT<S> tensor;
};

template <class S>
using ParamListT = std::vector<ParamT<S>>;

template <class S>
void fill_uniform(TensorT<S>& t, Rng& rng, double lo, double hi) {
  for (S& v : t.raw_values()) v = static_cast<S>(rng.uniform(lo, hi));
}

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
template <class S>
void glorot_fill(TensorT<S>& t, Rng& rng, int fan_in, int fan_out) {
  const double r = std::sqrt(6.0 / (fan_in + fan_out));
  fill_uniform(t, rng, -r, r);
}

template <class S>
int64_t total_param_count(const ParamListT<S>& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

template <class S>
void zero_all_grads(ParamListT<S>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

}  // namespace im2markup
