#pragma once

#include <span>
#include <string>
#include <vector>

#include "im2markup/attention.hpp"
#include "im2markup/calstm.hpp"
#include "im2markup/config.hpp"
#include "im2markup/encoder.hpp"
#include "im2markup/image.hpp"
#include "im2markup/output_head.hpp"
#include "im2markup/param.hpp"

namespace im2markup {

// The assembled transducer: encoder CNN, attention, LSTM stack, init model
// and deep output head, with one tape and one flat parameter list.
template <class S>
class ModelT {
 public:
  explicit ModelT(ModelConfig config);

  void init_params(uint64_t seed);

  const ModelConfig& config() const { return config_; }
  TapeT<S>& tape() { return tape_; }
  ParamListT<S>& params() { return params_; }
  const ParamListT<S>& params() const { return params_; }
  GridGeometry grid() const { return {config_.grid_h(), config_.grid_w()}; }

  struct Encoded {
    TensorT<S> a;       // [B, L, D]
    TensorT<S> a_flat;  // [B, L*D]
    int batch = 0;
  };
  // Centers raw images on the canvas, whitens, and encodes.
  Encoded encode(const std::vector<Image>& images);

  StackStateT<S> initial_state(const Encoded& enc);

  struct StepResult {
    TensorT<S> probs;  // [B, K]
    TensorT<S> alpha;  // [B, L]
    StackStateT<S> state;
  };
  // One decoder step; prev_token_ids are vocabulary ids (<bos> first).
  StepResult decode_step(const Encoded& enc,
                         std::span<const int> prev_token_ids,
                         const StackStateT<S>& state);

  const std::vector<ConvStageParamsT<S>>& cnn_stages() const { return cnn_; }
  const AttentionParamsT<S>& attention_params() const { return att_; }
  const OutputHeadParamsT<S>& head_params() const { return head_; }
  std::span<const LstmCellParamsT<S>> cell_params() const { return cells_; }

 private:
  TensorT<S> add_param(const std::string& name, Shape shape);

  ModelConfig config_;
  TapeT<S> tape_;
  ParamListT<S> params_;
  std::vector<ConvStageParamsT<S>> cnn_;
  AttentionParamsT<S> att_;
  std::vector<LstmCellParamsT<S>> cells_;
  InitModelParamsT<S> init_;
  OutputHeadParamsT<S> head_;
};

using Model32 = ModelT<float>;
using Model64 = ModelT<double>;

}  // namespace im2markup
