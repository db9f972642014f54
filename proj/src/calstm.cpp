#include "im2markup/calstm.hpp"

#include "im2markup/error.hpp"

namespace im2markup {

template <class S>
LstmStateT<S> lstm_cell_step(const TensorT<S>& x, const LstmStateT<S>& prev,
                             const LstmCellParamsT<S>& params) {
  auto gate_in = sigmoid(add(
      add(add(matmul(x, params.wx_in), matmul(prev.h, params.wh_in)),
          mul(prev.c, params.peep_in)),
      params.b_in));
  auto gate_forget = sigmoid(add(
      add(add(matmul(x, params.wx_forget), matmul(prev.h, params.wh_forget)),
          mul(prev.c, params.peep_forget)),
      params.b_forget));
  auto candidate = im2markup::tanh(add(
      add(matmul(x, params.wx_cell), matmul(prev.h, params.wh_cell)),
      params.b_cell));
  auto c = add(mul(gate_forget, prev.c), mul(gate_in, candidate));
  auto gate_out = sigmoid(add(
      add(add(matmul(x, params.wx_out), matmul(prev.h, params.wh_out)),
          mul(c, params.peep_out)),
      params.b_out));
  auto h = mul(gate_out, im2markup::tanh(c));
  return {h, c};
}

template <class S>
StackStateT<S> stack_step(const TensorT<S>& z, const TensorT<S>& prev_embed,
                          const StackStateT<S>& prev,
                          std::span<const LstmCellParamsT<S>> cells) {
  if (prev.layers.size() != cells.size() || cells.empty()) {
    throw ContractError("stack_step: state holds " +
                        std::to_string(prev.layers.size()) +
                        " layers for " + std::to_string(cells.size()) +
                        " cells");
  }
  StackStateT<S> next;
  next.layers.reserve(cells.size());
  TensorT<S> x = concat<S>({z, prev_embed}, 1);
  for (size_t q = 0; q < cells.size(); ++q) {
    next.layers.push_back(lstm_cell_step(x, prev.layers[q], cells[q]));
    x = next.layers.back().h;
  }
  return next;
}

template <class S>
StackStateT<S> learned_init_state(const TensorT<S>& a_flat,
                                  const InitModelParamsT<S>& params,
                                  int num_layers) {
  if (params.w_out.size() != static_cast<size_t>(2 * num_layers)) {
    throw ContractError("init_state: expected " +
                        std::to_string(2 * num_layers) + " output layers, got " +
                        std::to_string(params.w_out.size()));
  }
  auto hidden =
      im2markup::tanh(add(matmul(a_flat, params.w_hidden), params.b_hidden));
  // output order: c1..cQ, then h1..hQ
  std::vector<TensorT<S>> outs;
  outs.reserve(params.w_out.size());
  for (size_t j = 0; j < params.w_out.size(); ++j) {
    outs.push_back(im2markup::tanh(
        add(matmul(hidden, params.w_out[j]), params.b_out[j])));
  }
  StackStateT<S> state;
  state.layers.resize(static_cast<size_t>(num_layers));
  for (int q = 0; q < num_layers; ++q) {
    state.layers[static_cast<size_t>(q)].c = outs[static_cast<size_t>(q)];
    state.layers[static_cast<size_t>(q)].h =
        outs[static_cast<size_t>(num_layers + q)];
  }
  return state;
}

template <class S>
StackStateT<S> zeros_init_state(TapeT<S>& tape, int batch, int num_layers,
                                int units) {
  StackStateT<S> state;
  state.layers.resize(static_cast<size_t>(num_layers));
  for (auto& layer : state.layers) {
    layer.h = TensorT<S>::zeros(tape, {batch, units});
    layer.c = TensorT<S>::zeros(tape, {batch, units});
  }
  return state;
}

int64_t init_model_param_count(int num_locations, int feat_dim,
                               int init_hidden, int num_layers, int units) {
  const int64_t in_dim = static_cast<int64_t>(num_locations) * feat_dim;
  const int64_t hidden = in_dim * init_hidden + init_hidden;
  const int64_t outputs =
      2LL * num_layers * (static_cast<int64_t>(init_hidden) * units + units);
  return hidden + outputs;
}

#define IM2MARKUP_INSTANTIATE(S)                                             \
  template struct LstmCellParamsT<S>;                                       \
  template struct LstmStateT<S>;                                            \
  template struct StackStateT<S>;                                           \
  template struct InitModelParamsT<S>;                                      \
  template LstmStateT<S> lstm_cell_step<S>(const TensorT<S>&,               \
                                           const LstmStateT<S>&,            \
                                           const LstmCellParamsT<S>&);      \
  template StackStateT<S> stack_step<S>(const TensorT<S>&, const TensorT<S>&, \
                                        const StackStateT<S>&,              \
                                        std::span<const LstmCellParamsT<S>>); \
  template StackStateT<S> learned_init_state<S>(const TensorT<S>&,          \
                                                const InitModelParamsT<S>&, \
                                                int);                       \
  template StackStateT<S> zeros_init_state<S>(TapeT<S>&, int, int, int);

IM2MARKUP_INSTANTIATE(float)
IM2MARKUP_INSTANTIATE(double)

#undef IM2MARKUP_INSTANTIATE

}  // namespace im2markup
