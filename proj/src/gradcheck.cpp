#include "im2markup/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "im2markup/error.hpp"
#include "im2markup/rng.hpp"

namespace im2markup {

namespace {

double eval_value(TapeT<double>& tape,
                  const std::function<TensorT<double>()>& build_loss) {
  typename TapeT<double>::NoGrad guard(tape);
  return build_loss().scalar_value();
}

}  // namespace

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " max_rel_err=" << max_rel_err
     << " worst_block=" << worst_block;
  return os.str();
}

GradCheckReport gradient_check(
    TapeT<double>& tape, ParamListT<double>& params,
    const std::function<TensorT<double>()>& build_loss,
    const GradCheckOptions& opts) {
  // Determinism gate: two evaluations must agree bitwise.
  const double v1 = eval_value(tape, build_loss);
  const double v2 = eval_value(tape, build_loss);
  if (std::memcmp(&v1, &v2, sizeof(double)) != 0) {
    throw ContractError("gradient_check: closure is not deterministic (" +
                        std::to_string(v1) + " vs " + std::to_string(v2) + ")");
  }

  // Analytic gradients in one reverse sweep.
  zero_all_grads(params);
  tape.clear();
  {
    TensorT<double> loss = build_loss();
    backward(loss);
  }
  tape.clear();
  std::vector<std::vector<double>> analytic(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    const auto g = params[i].tensor.grad();
    analytic[i].assign(g.begin(), g.end());
    if (analytic[i].empty()) {
      analytic[i].assign(static_cast<size_t>(params[i].tensor.size()), 0.0);
    }
  }

  Rng rng(opts.seed);
  GradCheckReport report;
  report.blocks.reserve(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    auto vals = params[i].tensor.raw_values();
    const size_t n = vals.size();
    std::vector<size_t> probes;
    if (n <= static_cast<size_t>(opts.probes_per_block)) {
      probes.resize(n);
      for (size_t k = 0; k < n; ++k) probes[k] = k;
    } else {
      std::unordered_set<size_t> seen;
      while (seen.size() < static_cast<size_t>(opts.probes_per_block)) {
        seen.insert(static_cast<size_t>(rng.below(n)));
      }
      probes.assign(seen.begin(), seen.end());
      std::sort(probes.begin(), probes.end());
    }
    GradCheckBlock block{params[i].name, 0.0};
    for (const size_t k : probes) {
      const double saved = vals[k];
      vals[k] = saved + opts.fd_step;
      const double f_plus = eval_value(tape, build_loss);
      vals[k] = saved - opts.fd_step;
      const double f_minus = eval_value(tape, build_loss);
      vals[k] = saved;
      const double fd = (f_plus - f_minus) / (2.0 * opts.fd_step);
      const double g = analytic[i][k];
      const double denom =
          std::max({std::abs(fd), std::abs(g), opts.magnitude_floor});
      const double err = std::abs(fd - g) / denom;
      block.max_rel_err = std::max(block.max_rel_err, err);
    }
    if (block.max_rel_err > report.max_rel_err) {
      report.max_rel_err = block.max_rel_err;
      report.worst_block = block.name;
    }
    report.blocks.push_back(std::move(block));
  }
  report.passed = report.max_rel_err < opts.tolerance;
  return report;
}

}  // namespace im2markup
