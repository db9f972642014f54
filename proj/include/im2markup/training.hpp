#pragma once

#include <span>
#include <string>
#include <vector>

#include "im2markup/config.hpp"
#include "im2markup/dataset.hpp"
#include "im2markup/model.hpp"
#include "im2markup/param.hpp"
#include "im2markup/tensor.hpp"

namespace im2markup {

struct LossBreakdown {
  double per_word_nll = 0.0;
  double l2_term = 0.0;      // R, before weighting
  double ase_penalty = 0.0;  // A = ASE_N - ASE_T averaged over the batch
  double total = 0.0;        // J
  double mean_ase_n = 0.0;
  long clamp_warnings = 0;
};

// Mean over steps of -log p_t(y_t), per sample: [B]. Padded positions are
// excluded; probabilities below 1e-30 are clamped there and counted.
template <class S>
TensorT<S> sequence_nll(const std::vector<TensorT<S>>& step_probs,
                        std::span<const int> target_classes,
                        std::span<const int> lengths, long* clamp_counter);

// A = ASE_N - ase_target per sample: [B]. ASE_N rescales the squared
// deviation of cumulative attention from uniform into [0, 100].
template <class S>
TensorT<S> ase_penalty(const std::vector<TensorT<S>>& step_alphas,
                       std::span<const int> lengths, double ase_target);

// R = half the sum of squares of every weight and bias.
template <class S>
TensorT<S> l2_reg(const ParamListT<S>& params);

// Value-level ASE_N of a finished trace.
double ase_normalized(const std::vector<std::vector<double>>& alpha_steps);

template <class S>
struct TeacherForcedOutput {
  TensorT<S> loss;  // scalar J
  LossBreakdown breakdown;
  // argmax class per decode step, [tau_max][B]; the cheap training decode
  std::vector<std::vector<int>> step_argmax;
};

template <class S>
TeacherForcedOutput<S> teacher_forced_loss(ModelT<S>& model, const Batch& batch,
                                           double lambda_r, double lambda_a,
                                           double ase_target,
                                           long* clamp_counter = nullptr);

struct TrainSummary {
  int steps = 0;
  int epochs = 0;
  bool nan_abort = false;
  bool early_stopped = false;
  double best_valid_bleu = -1.0;
  double final_train_bleu = 0.0;
  double final_exact_match = -1.0;
  long clamp_warnings = 0;
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::vector<size_t> train_indices;
  std::vector<size_t> valid_indices;
  std::vector<std::string> metric_lines;  // the JSONL metric log
};

// End-to-end loop: length-bucketed batches, teacher forcing, ADAM steps,
// periodic validation with snapshot-on-improvement. out_dir may be empty to
// keep everything in memory.
TrainSummary train_model(ModelT<float>& model, const TrainConfig& config,
                         const Manifest& manifest,
                         const std::string& image_root, const Vocab& vocab,
                         const std::string& out_dir);

}  // namespace im2markup
