#include "im2markup/model.hpp"

#include "im2markup/error.hpp"

namespace im2markup {

template <class S>
ModelT<S>::ModelT(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const int feat = config_.feat_dim();
  const int locations = config_.num_locations();
  const int units = config_.lstm_units;
  const int embed_dim = config_.embed_dim;
  const int classes = config_.num_classes();

  // encoder CNN
  int c_in = 1;
  for (size_t i = 0; i < config_.cnn_channels.size(); ++i) {
    const int c_out = config_.cnn_channels[i];
    const std::string prefix = "cnn.conv" + std::to_string(i + 1);
    ConvStageParamsT<S> stage;
    stage.kernel = add_param(prefix + ".kernel", {c_out, c_in, 3, 3});
    stage.bias = add_param(prefix + ".bias", {c_out});
    cnn_.push_back(stage);
    c_in = c_out;
  }

  // attention MLP
  const int att_in = locations * feat + units;
  att_.w1 = add_param("att.fc1.weight", {att_in, config_.att_hidden1()});
  att_.b1 = add_param("att.fc1.bias", {config_.att_hidden1()});
  att_.w2 = add_param("att.fc2.weight",
                      {config_.att_hidden1(), config_.att_hidden2()});
  att_.b2 = add_param("att.fc2.bias", {config_.att_hidden2()});
  att_.w3 = add_param("att.fc3.weight", {config_.att_hidden2(), locations});
  att_.b3 = add_param("att.fc3.bias", {locations});

  // LSTM stack
  for (int q = 0; q < config_.lstm_layers; ++q) {
    const int in_dim = (q == 0) ? feat + embed_dim : units;
    const std::string prefix = "calstm.lstm" + std::to_string(q + 1);
    LstmCellParamsT<S> cell;
    cell.wx_in = add_param(prefix + ".input_gate.wx", {in_dim, units});
    cell.wh_in = add_param(prefix + ".input_gate.wh", {units, units});
    cell.peep_in = add_param(prefix + ".input_gate.peep", {units});
    cell.b_in = add_param(prefix + ".input_gate.bias", {units});
    cell.wx_forget = add_param(prefix + ".forget_gate.wx", {in_dim, units});
    cell.wh_forget = add_param(prefix + ".forget_gate.wh", {units, units});
    cell.peep_forget = add_param(prefix + ".forget_gate.peep", {units});
    cell.b_forget = add_param(prefix + ".forget_gate.bias", {units});
    cell.wx_cell = add_param(prefix + ".cell.wx", {in_dim, units});
    cell.wh_cell = add_param(prefix + ".cell.wh", {units, units});
    cell.b_cell = add_param(prefix + ".cell.bias", {units});
    cell.wx_out = add_param(prefix + ".output_gate.wx", {in_dim, units});
    cell.wh_out = add_param(prefix + ".output_gate.wh", {units, units});
    cell.peep_out = add_param(prefix + ".output_gate.peep", {units});
    cell.b_out = add_param(prefix + ".output_gate.bias", {units});
    cells_.push_back(cell);
  }

  // init model
  if (config_.init_mode == "learned") {
    init_.w_hidden = add_param("init.hidden.weight",
                               {locations * feat, config_.init_hidden});
    init_.b_hidden = add_param("init.hidden.bias", {config_.init_hidden});
    for (int j = 0; j < 2 * config_.lstm_layers; ++j) {
      const std::string kind = (j < config_.lstm_layers)
                                   ? "c" + std::to_string(j + 1)
                                   : "h" + std::to_string(j - config_.lstm_layers + 1);
      init_.w_out.push_back(add_param("init." + kind + ".weight",
                                      {config_.init_hidden, units}));
      init_.b_out.push_back(add_param("init." + kind + ".bias", {units}));
    }
  }

  // embedding and deep output head
  head_.embedding =
      add_param("head.embedding", {config_.vocab_total, embed_dim});
  const int out_in = units + feat + embed_dim;
  head_.w1 = add_param("head.fc1.weight", {out_in, config_.out_hidden()});
  head_.b1 = add_param("head.fc1.bias", {config_.out_hidden()});
  head_.w2 = add_param("head.fc2.weight",
                       {config_.out_hidden(), config_.out_hidden()});
  head_.b2 = add_param("head.fc2.bias", {config_.out_hidden()});
  head_.w3 = add_param("head.fc3.weight", {config_.out_hidden(), classes});
  head_.b3 = add_param("head.fc3.bias", {classes});
}

template <class S>
TensorT<S> ModelT<S>::add_param(const std::string& name, Shape shape) {
  auto t = TensorT<S>::zeros(tape_, std::move(shape), /*requires_grad=*/true);
  params_.push_back({name, t});
  return t;
}

template <class S>
void ModelT<S>::init_params(uint64_t seed) {
  Rng rng(seed);
  for (auto& p : params_) {
    const Shape& shape = p.tensor.shape();
    const bool is_bias = p.name.ends_with(".bias");
    if (is_bias) {
      std::fill(p.tensor.raw_values().begin(), p.tensor.raw_values().end(),
                S{0});
      if (p.name.find("forget_gate") != std::string::npos) {
        // open the forget gates at the start
        std::fill(p.tensor.raw_values().begin(), p.tensor.raw_values().end(),
                  S{1});
      }
      continue;
    }
    int fan_in = 0, fan_out = 0;
    if (shape.size() == 4) {  // conv kernel [F, C, 3, 3]
      fan_in = shape[1] * 9;
      fan_out = shape[0] * 9;
    } else if (shape.size() == 2) {
      fan_in = shape[0];
      fan_out = shape[1];
    } else {  // peephole vectors
      fan_in = shape[0];
      fan_out = shape[0];
    }
    glorot_fill(p.tensor, rng, fan_in, fan_out);
  }
}

template <class S>
typename ModelT<S>::Encoded ModelT<S>::encode(const std::vector<Image>& images) {
  if (images.empty()) throw ContractError("encode: empty batch");
  std::vector<Image> canvases;
  canvases.reserve(images.size());
  for (const Image& img : images) {
    canvases.push_back(
        center_on_canvas(img, config_.canvas_w, config_.canvas_h));
  }
  auto x = whiten_batch<S>(tape_, canvases, config_.canvas_w, config_.canvas_h);
  auto grid = cnn_encode(x, cnn_);
  auto pooled =
      pool_features(grid, config_.pool_stride_h, config_.pool_stride_w);
  Encoded enc;
  enc.a = flatten_grid(pooled);
  enc.batch = static_cast<int>(images.size());
  enc.a_flat = reshape(
      enc.a, {enc.batch, config_.num_locations() * config_.feat_dim()});
  return enc;
}

template <class S>
StackStateT<S> ModelT<S>::initial_state(const Encoded& enc) {
  if (config_.init_mode == "learned") {
    return learned_init_state(enc.a_flat, init_, config_.lstm_layers);
  }
  return zeros_init_state(tape_, enc.batch, config_.lstm_layers,
                          config_.lstm_units);
}

template <class S>
typename ModelT<S>::StepResult ModelT<S>::decode_step(
    const Encoded& enc, std::span<const int> prev_token_ids,
    const StackStateT<S>& state) {
  if (static_cast<int>(prev_token_ids.size()) != enc.batch) {
    throw ContractError("decode_step: " +
                        std::to_string(prev_token_ids.size()) +
                        " previous tokens for a batch of " +
                        std::to_string(enc.batch));
  }
  StepResult out;
  out.alpha = attend(enc.a_flat, state.top_h(), att_);
  auto z = context(enc.a, out.alpha);
  auto prev_embed = embed(head_, prev_token_ids);
  out.state = stack_step(z, prev_embed, state, cell_params());
  out.probs = deep_output(out.state.top_h(), z, prev_embed, head_);
  return out;
}

template class ModelT<float>;
template class ModelT<double>;

}  // namespace im2markup
