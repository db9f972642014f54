#pragma once

#include <span>
#include <vector>

#include "im2markup/tensor.hpp"

namespace im2markup {

// Peephole LSTM cell weights. The input and forget gates peek at the
// previous cell state, the output gate at the current one; peephole weights
// are diagonal, stored as vectors and applied elementwise.
template <class S>
struct LstmCellParamsT {
  TensorT<S> wx_in, wh_in, peep_in, b_in;      // input gate
  TensorT<S> wx_forget, wh_forget, peep_forget, b_forget;
  TensorT<S> wx_cell, wh_cell, b_cell;         // candidate, no peephole
  TensorT<S> wx_out, wh_out, peep_out, b_out;  // output gate
};

template <class S>
struct LstmStateT {
  TensorT<S> h;
  TensorT<S> c;
};

template <class S>
LstmStateT<S> lstm_cell_step(const TensorT<S>& x, const LstmStateT<S>& prev,
                             const LstmCellParamsT<S>& params);

// State of the whole stack: Q (h, c) pairs; the stack activation is the top
// cell's h.
template <class S>
struct StackStateT {
  std::vector<LstmStateT<S>> layers;

  const TensorT<S>& top_h() const { return layers.back().h; }
};

// Layer 1 consumes {z_t ; E y_(t-1)}; layer q > 1 consumes the activation of
// layer q-1. No skip or residual connections between cells.
template <class S>
StackStateT<S> stack_step(const TensorT<S>& z, const TensorT<S>& prev_embed,
                          const StackStateT<S>& prev,
                          std::span<const LstmCellParamsT<S>> cells);

// MLP producing the initial stack state from the full feature sequence: one
// shared tanh hidden layer, then 2Q distinct tanh output layers, one per
// state element (c1..cQ then h1..hQ).
template <class S>
struct InitModelParamsT {
  TensorT<S> w_hidden, b_hidden;
  std::vector<TensorT<S>> w_out;  // 2Q entries
  std::vector<TensorT<S>> b_out;
};

template <class S>
StackStateT<S> learned_init_state(const TensorT<S>& a_flat,
                                  const InitModelParamsT<S>& params,
                                  int num_layers);

template <class S>
StackStateT<S> zeros_init_state(TapeT<S>& tape, int batch, int num_layers,
                                int units);

// Weight count of the learned init model for a given geometry.
int64_t init_model_param_count(int num_locations, int feat_dim,
                               int init_hidden, int num_layers, int units);

}  // namespace im2markup
