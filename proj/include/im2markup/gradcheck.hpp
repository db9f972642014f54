#pragma once

#include <functional>
#include <string>
#include <vector>

#include "im2markup/param.hpp"
#include "im2markup/tensor.hpp"

namespace im2markup {

struct GradCheckOptions {
  double tolerance = 1e-5;
  double fd_step = 1e-5;
  // Random entries probed per block (all entries when the block is smaller).
  int probes_per_block = 8;
  uint64_t seed = 0x9c0ffee;
  // Relative error uses max(|fd|, |analytic|, magnitude_floor) as the
  // denominator, so magnitudes at finite-difference noise level compare
  // absolutely instead of blowing up.
  double magnitude_floor = 1e-3;
};

struct GradCheckBlock {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckBlock> blocks;
  double max_rel_err = 0.0;
  std::string worst_block;
  bool passed = false;

  std::string summary() const;
};

// Compares reverse-mode gradients against central finite differences, block
// by block. build_loss must rebuild the loss graph from the current parameter
// values and be deterministic; two evaluations that disagree bitwise raise a
// ContractError. 64-bit only: float gradients drown in rounding noise.
GradCheckReport gradient_check(TapeT<double>& tape,
                               ParamListT<double>& params,
                               const std::function<TensorT<double>()>& build_loss,
                               const GradCheckOptions& opts = {});

}  // namespace im2markup
