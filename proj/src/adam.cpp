#include "im2markup/adam.hpp"

#include <cmath>

#include "im2markup/error.hpp"

namespace im2markup {

template <class S>
AdamStateT<S> AdamStateT<S>::init(const ParamListT<S>& params, double lr,
                                  double beta1, double beta2, double eps) {
  AdamStateT<S> st;
  st.lr = lr;
  st.beta1 = beta1;
  st.beta2 = beta2;
  st.eps = eps;
  st.slots.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    const size_t n = static_cast<size_t>(params[i].tensor.size());
    st.slots[i].m1.assign(n, S{0});
    st.slots[i].m2.assign(n, S{0});
  }
  return st;
}

template <class S>
void adam_step(ParamListT<S>& params, AdamStateT<S>& state) {
  if (state.slots.size() != params.size()) {
    throw ContractError("adam_step: state has " +
                        std::to_string(state.slots.size()) +
                        " slots for " + std::to_string(params.size()) +
                        " parameters");
  }
  state.step += 1;
  const S b1 = static_cast<S>(state.beta1);
  const S b2 = static_cast<S>(state.beta2);
  const S corr1 =
      static_cast<S>(1.0 - std::pow(state.beta1, static_cast<double>(state.step)));
  const S corr2 =
      static_cast<S>(1.0 - std::pow(state.beta2, static_cast<double>(state.step)));
  const S lr = static_cast<S>(state.lr);
  const S eps = static_cast<S>(state.eps);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& slot = state.slots[i];
    auto vals = params[i].tensor.raw_values();
    if (slot.m1.size() != vals.size()) {
      throw ContractError("adam_step: moment shape mismatch for block " +
                          params[i].name);
    }
    const auto grad = params[i].tensor.grad();
    const bool has_grad = !grad.empty();
    for (size_t k = 0; k < vals.size(); ++k) {
      const S g = has_grad ? grad[k] : S{0};
      slot.m1[k] = b1 * slot.m1[k] + (S{1} - b1) * g;
      slot.m2[k] = b2 * slot.m2[k] + (S{1} - b2) * g * g;
      const S m_hat = slot.m1[k] / corr1;
      const S v_hat = slot.m2[k] / corr2;
      vals[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template struct AdamStateT<float>;
template struct AdamStateT<double>;
template void adam_step<float>(ParamListT<float>&, AdamStateT<float>&);
template void adam_step<double>(ParamListT<double>&, AdamStateT<double>&);

}  // namespace im2markup
