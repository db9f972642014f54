#pragma once

#include <cstdint>
#include <vector>

#include "im2markup/param.hpp"

namespace im2markup {

// ADAM with bias correction. One moment slot per parameter block, in the same
// order as the parameter list it was initialized from.
template <class S>
struct AdamStateT {
  struct Slot {
    std::vector<S> m1;
    std::vector<S> m2;
  };

  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
  int64_t step = 0;
  std::vector<Slot> slots;

  static AdamStateT init(const ParamListT<S>& params, double lr, double beta1,
                         double beta2, double eps = 1e-8);
};

// In-place update from the accumulated gradients; increments the step counter.
// Parameters whose gradient was never touched this step are treated as having
// a zero gradient.
template <class S>
void adam_step(ParamListT<S>& params, AdamStateT<S>& state);

using AdamState32 = AdamStateT<float>;
using AdamState64 = AdamStateT<double>;

}  // namespace im2markup
