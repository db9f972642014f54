#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace im2markup {

// Geometry and capacity of the network. Everything downstream (parameter
// shapes, checkpoint digest, heat-map cell windows) derives from this.
struct ModelConfig {
  int canvas_h = 128;
  int canvas_w = 1088;
  std::vector<int> cnn_channels = {64, 128, 256, 512, 512};
  int pool_stride_h = 4;
  int pool_stride_w = 1;
  int lstm_layers = 2;   // stacked cells
  int lstm_units = 1500; // per-cell state width
  int embed_dim = 512;
  std::string init_mode = "learned";  // "learned" | "zeros"
  int init_hidden = 100;
  int vocab_total = 0;  // includes <pad>; set from the vocabulary

  int conv_depth() const { return static_cast<int>(cnn_channels.size()); }
  int raw_grid_h() const { return canvas_h >> conv_depth(); }
  int raw_grid_w() const { return canvas_w >> conv_depth(); }
  int raw_feat_dim() const { return cnn_channels.back(); }
  int grid_h() const { return raw_grid_h() / pool_stride_h; }
  int grid_w() const { return raw_grid_w() / pool_stride_w; }
  int feat_dim() const {
    return raw_feat_dim() * pool_stride_h * pool_stride_w;
  }
  int num_locations() const { return grid_h() * grid_w(); }
  int num_classes() const { return vocab_total - 1; }  // excludes <pad>

  // layer widths follow the built-in sizing rules
  int att_hidden1() const { return std::max(256, num_locations()); }
  int att_hidden2() const { return std::max(128, num_locations()); }
  int out_hidden() const { return std::max(358, num_classes()); }

  void validate() const;
  std::string canonical() const;
  uint64_t digest() const;

  static ModelConfig tiny();
  static ModelConfig i2l_strips();
  static ModelConfig i2l_nopool();
  static ModelConfig preset(const std::string& name);
};

// Training hyperparameters and loop control.
struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double adam_eps = 1e-8;
  double lambda_r = 5e-5;   // L2 weight
  double lambda_a = 0.0;    // attention-spread penalty weight
  double ase_target = 0.0;  // desired normalized attention spread, in [0,100]
  int batch_size = 56;
  int max_steps = 0;  // 0 = bounded by max_epochs only
  int max_epochs = 50;
  int eval_period = 100;  // optimizer steps between validation cycles
  double valid_fraction = 0.05;
  int beam_width = 10;
  int max_decode_len = 160;
  int bleu_window = 100;  // batches in the rolling training-BLEU window
  // early stop once both thresholds are met at an eval point; < 0 disables
  double stop_exact_match = -1.0;
  double stop_train_bleu = -1.0;
  uint64_t seed = 1;

  void validate() const;
};

// Reads {"model": {...}, "train": {...}} from a JSON file. Unknown fields are
// rejected so typos surface instead of silently using defaults.
struct RunFileConfig {
  ModelConfig model;
  TrainConfig train;
};
RunFileConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunFileConfig& config);

}  // namespace im2markup
