#include "im2markup/training.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>

#include "im2markup/adam.hpp"
#include "im2markup/checkpoint.hpp"
#include "im2markup/decoding.hpp"
#include "im2markup/error.hpp"
#include "im2markup/metrics.hpp"
#include "im2markup/output_head.hpp"
#include "json.hpp"

namespace im2markup {

namespace {
constexpr double kProbFloor = 1e-30;
}

template <class S>
TensorT<S> sequence_nll(const std::vector<TensorT<S>>& step_probs,
                        std::span<const int> target_classes,
                        std::span<const int> lengths, long* clamp_counter) {
  if (step_probs.empty()) throw ContractError("sequence_nll: no steps");
  const int batch = step_probs[0].dim(0);
  const int tau_max = static_cast<int>(step_probs.size());
  if (static_cast<int>(target_classes.size()) != batch * tau_max ||
      static_cast<int>(lengths.size()) != batch) {
    throw ContractError("sequence_nll: targets/lengths do not match the "
                        "probability steps");
  }
  TapeT<S>& tape = step_probs[0].tape();
  TensorT<S> acc = TensorT<S>::zeros(tape, {batch});
  for (int t = 0; t < tau_max; ++t) {
    std::vector<int> ids(static_cast<size_t>(batch), 0);
    std::vector<S> mask(static_cast<size_t>(batch), S{0});
    for (int b = 0; b < batch; ++b) {
      if (t < lengths[static_cast<size_t>(b)]) {
        ids[static_cast<size_t>(b)] =
            target_classes[static_cast<size_t>(b) * tau_max + t];
        mask[static_cast<size_t>(b)] = S{1};
      }
    }
    auto selected = pick(step_probs[static_cast<size_t>(t)], ids);
    if (clamp_counter) {
      const auto vals = selected.values();
      for (int b = 0; b < batch; ++b) {
        if (mask[static_cast<size_t>(b)] != S{0} &&
            static_cast<double>(vals[static_cast<size_t>(b)]) < kProbFloor) {
          ++*clamp_counter;
        }
      }
    }
    auto logp = im2markup::log(clamp_min(selected, static_cast<S>(kProbFloor)));
    auto masked = mul(logp, TensorT<S>::leaf(tape, {batch}, mask));
    acc = add(acc, masked);
  }
  std::vector<S> neg_inv_len(static_cast<size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    neg_inv_len[static_cast<size_t>(b)] =
        S{-1} / static_cast<S>(lengths[static_cast<size_t>(b)]);
  }
  return mul(acc, TensorT<S>::leaf(tape, {batch}, std::move(neg_inv_len)));
}

template <class S>
TensorT<S> ase_penalty(const std::vector<TensorT<S>>& step_alphas,
                       std::span<const int> lengths, double ase_target) {
  if (step_alphas.empty()) throw ContractError("ase_penalty: no steps");
  const int batch = step_alphas[0].dim(0);
  const int locations = step_alphas[0].dim(1);
  if (locations < 2) {
    throw ConfigError("ase_penalty: needs at least 2 locations, got " +
                      std::to_string(locations));
  }
  TapeT<S>& tape = step_alphas[0].tape();
  const int tau_max = static_cast<int>(step_alphas.size());
  TensorT<S> cumulative = TensorT<S>::zeros(tape, {batch, locations});
  for (int t = 0; t < tau_max; ++t) {
    std::vector<S> mask(static_cast<size_t>(batch), S{0});
    for (int b = 0; b < batch; ++b) {
      if (t < lengths[static_cast<size_t>(b)]) mask[static_cast<size_t>(b)] = S{1};
    }
    auto masked = scale_rows(step_alphas[static_cast<size_t>(t)],
                             TensorT<S>::leaf(tape, {batch}, std::move(mask)));
    cumulative = add(cumulative, masked);
  }
  // per-sample uniform level tau/L and normalizer 100 / (tau^2 (L-1)/L)
  std::vector<S> uniform(static_cast<size_t>(batch) * locations);
  std::vector<S> norm(static_cast<size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    const double tau = lengths[static_cast<size_t>(b)];
    for (int l = 0; l < locations; ++l) {
      uniform[static_cast<size_t>(b) * locations + l] =
          static_cast<S>(tau / locations);
    }
    norm[static_cast<size_t>(b)] = static_cast<S>(
        100.0 / (tau * tau * (static_cast<double>(locations - 1) / locations)));
  }
  auto centered = sub(cumulative, TensorT<S>::leaf(tape, {batch, locations},
                                                   std::move(uniform)));
  auto ase = sum_last(mul(centered, centered));
  auto ase_n = mul(ase, TensorT<S>::leaf(tape, {batch}, std::move(norm)));
  return sub(ase_n, TensorT<S>::scalar(tape, static_cast<S>(ase_target)));
}

template <class S>
TensorT<S> l2_reg(const ParamListT<S>& params) {
  if (params.empty()) throw ContractError("l2_reg: no parameters");
  TapeT<S>& tape = params[0].tensor.tape();
  TensorT<S> acc = TensorT<S>::zeros(tape, {});
  for (const auto& p : params) {
    acc = add(acc, sum(mul(p.tensor, p.tensor)));
  }
  return mul(acc, TensorT<S>::scalar(tape, S{0.5}));
}

double ase_normalized(const std::vector<std::vector<double>>& alpha_steps) {
  if (alpha_steps.empty()) throw ContractError("ase_normalized: empty trace");
  const size_t locations = alpha_steps[0].size();
  if (locations < 2) {
    throw ConfigError("ase_normalized: needs at least 2 locations");
  }
  const double tau = static_cast<double>(alpha_steps.size());
  std::vector<double> cumulative(locations, 0.0);
  for (const auto& row : alpha_steps) {
    if (row.size() != locations) {
      throw ContractError("ase_normalized: ragged trace");
    }
    for (size_t l = 0; l < locations; ++l) cumulative[l] += row[l];
  }
  const double mean = tau / static_cast<double>(locations);
  double ase = 0.0;
  for (double v : cumulative) ase += (v - mean) * (v - mean);
  const double denom =
      tau * tau * (static_cast<double>(locations - 1) / locations);
  return 100.0 * ase / denom;
}

template <class S>
TeacherForcedOutput<S> teacher_forced_loss(ModelT<S>& model, const Batch& batch,
                                           double lambda_r, double lambda_a,
                                           double ase_target,
                                           long* clamp_counter) {
  if (batch.size() == 0) throw ContractError("teacher_forced_loss: empty batch");
  TapeT<S>& tape = model.tape();
  auto enc = model.encode(batch.images);
  auto state = model.initial_state(enc);

  const int rows = batch.size();
  std::vector<TensorT<S>> probs, alphas;
  std::vector<int> target_classes(static_cast<size_t>(rows) * batch.tau_max, 0);
  TeacherForcedOutput<S> out;
  for (int t = 0; t < batch.tau_max; ++t) {
    // inputs are <bos>, y_1 .. y_(tau-1); padded rows feed <pad>
    std::vector<int> prev(static_cast<size_t>(rows), Vocab::kBos);
    if (t > 0) {
      for (int b = 0; b < rows; ++b) {
        prev[static_cast<size_t>(b)] = batch.target_at(b, t - 1);
      }
    }
    auto step = model.decode_step(enc, prev, state);
    state = step.state;
    probs.push_back(step.probs);
    alphas.push_back(step.alpha);
    out.step_argmax.push_back(argmax_last(step.probs));
    for (int b = 0; b < rows; ++b) {
      const int id = batch.target_at(b, t);
      target_classes[static_cast<size_t>(b) * batch.tau_max + t] =
          id == Vocab::kPad ? 0 : class_of_token_id(id);
    }
  }

  long clamps = 0;
  auto nll = sequence_nll(probs, target_classes, batch.lengths, &clamps);
  auto nll_mean = mean(nll);
  auto penalty = ase_penalty(alphas, batch.lengths, ase_target);
  auto penalty_mean = mean(penalty);
  auto reg = l2_reg(model.params());
  auto loss = add(nll_mean,
                  add(mul(reg, TensorT<S>::scalar(tape, static_cast<S>(lambda_r))),
                      mul(penalty_mean,
                          TensorT<S>::scalar(tape, static_cast<S>(lambda_a)))));
  out.loss = loss;
  out.breakdown.per_word_nll = static_cast<double>(nll_mean.scalar_value());
  out.breakdown.l2_term = static_cast<double>(reg.scalar_value());
  out.breakdown.ase_penalty = static_cast<double>(penalty_mean.scalar_value());
  out.breakdown.mean_ase_n = out.breakdown.ase_penalty + ase_target;
  out.breakdown.total = static_cast<double>(loss.scalar_value());
  out.breakdown.clamp_warnings = clamps;
  if (clamp_counter) *clamp_counter += clamps;
  return out;
}

namespace {

using nlohmann::json;

TokenSeq tokens_of_record(const ManifestRecord& rec) {
  return split_tokens(rec.tokens);
}

// teacher-forced argmax classes -> predicted tokens, cut at the first <eos>
TokenSeq argmax_to_tokens(const std::vector<std::vector<int>>& step_argmax,
                          int row, int length, const Vocab& vocab) {
  TokenSeq out;
  for (int t = 0; t < length && t < static_cast<int>(step_argmax.size()); ++t) {
    const int id = token_id_of_class(step_argmax[static_cast<size_t>(t)]
                                                [static_cast<size_t>(row)]);
    if (id == Vocab::kEos) break;
    out.push_back(vocab.token(id));
  }
  return out;
}

struct EvalSets {
  std::vector<size_t> train;
  std::vector<size_t> valid;
};

EvalSets split_validation(size_t n, double valid_fraction, Rng& rng) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  EvalSets sets;
  size_t n_valid = 0;
  if (valid_fraction > 0 && n >= 2) {
    n_valid = std::max<size_t>(
        1, static_cast<size_t>(std::floor(valid_fraction * n)));
    n_valid = std::min(n_valid, n - 1);
  }
  sets.valid.assign(order.begin(), order.begin() + static_cast<ptrdiff_t>(n_valid));
  sets.train.assign(order.begin() + static_cast<ptrdiff_t>(n_valid), order.end());
  return sets;
}

}  // namespace

TrainSummary train_model(ModelT<float>& model, const TrainConfig& config,
                         const Manifest& manifest,
                         const std::string& image_root, const Vocab& vocab,
                         const std::string& out_dir) {
  config.validate();
  if (manifest.records.empty()) throw ContractError("train: empty manifest");
  namespace fs = std::filesystem;
  const bool persist = !out_dir.empty();
  if (persist) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("train: cannot create " + out_dir);
  }

  Rng rng(config.seed);
  TrainSummary summary;
  const EvalSets sets =
      split_validation(manifest.size(), config.valid_fraction, rng);
  summary.train_indices = sets.train;
  summary.valid_indices = sets.valid;

  std::vector<int> train_lengths;
  train_lengths.reserve(sets.train.size());
  for (size_t idx : sets.train) {
    train_lengths.push_back(
        static_cast<int>(split_tokens(manifest.records[idx].tokens).size()) + 1);
  }

  auto adam = AdamState32::init(model.params(), config.lr, config.beta1,
                                config.beta2, config.adam_eps);

  std::ofstream log_file;
  if (persist) {
    log_file.open(fs::path(out_dir) / "metrics.jsonl", std::ios::trunc);
    if (!log_file) throw IoError("train: cannot write metrics log");
  }
  auto emit_log = [&](const json& j) {
    summary.metric_lines.push_back(j.dump());
    if (persist) log_file << summary.metric_lines.back() << "\n";
  };

  // rolling training-BLEU window over the last bleu_window batches
  std::deque<std::pair<std::vector<TokenSeq>, std::vector<TokenSeq>>> window;
  auto window_bleu = [&]() {
    std::vector<TokenSeq> hyps, refs;
    for (const auto& [h, r] : window) {
      hyps.insert(hyps.end(), h.begin(), h.end());
      refs.insert(refs.end(), r.begin(), r.end());
    }
    return hyps.empty() ? 0.0 : corpus_bleu(hyps, refs);
  };

  auto decode_eval = [&](const std::vector<size_t>& indices, bool use_beam) {
    std::vector<TokenSeq> hyps, refs;
    size_t exact = 0;
    for (size_t idx : indices) {
      const auto& rec = manifest.records[idx];
      const Image img = load_image(join_path(image_root, rec.image));
      const DecodeResult result =
          use_beam ? beam_search(model, img, config.beam_width,
                                 config.max_decode_len)
                   : bestpath_decode(model, img, config.max_decode_len);
      hyps.push_back(vocab.decode(result.token_ids));
      refs.push_back(tokens_of_record(rec));
      if (hyps.back() == refs.back()) ++exact;
    }
    struct Outcome {
      double bleu;
      double exact_match;
    };
    return Outcome{hyps.empty() ? 0.0 : corpus_bleu(hyps, refs),
                   indices.empty()
                       ? 0.0
                       : static_cast<double>(exact) / indices.size()};
  };

  const std::string best_path =
      persist ? (fs::path(out_dir) / "best.ckpt").string() : "";
  const std::string last_path =
      persist ? (fs::path(out_dir) / "last.ckpt").string() : "";

  int step = 0;
  bool stop = false;
  const bool want_early_stop =
      config.stop_exact_match >= 0 || config.stop_train_bleu >= 0;
  for (int epoch = 0; epoch < config.max_epochs && !stop; ++epoch) {
    summary.epochs = epoch + 1;
    Rng epoch_rng = rng.fork(static_cast<uint64_t>(epoch));
    const auto batches =
        make_buckets(train_lengths, config.batch_size, epoch_rng);
    for (const auto& batch_members : batches) {
      std::vector<size_t> record_indices;
      record_indices.reserve(batch_members.size());
      for (size_t member : batch_members) {
        record_indices.push_back(sets.train[member]);
      }
      const Batch batch =
          assemble_batch(manifest, image_root, vocab, record_indices);

      zero_all_grads(model.params());
      model.tape().clear();
      json line;
      try {
        auto forward = teacher_forced_loss(model, batch, config.lambda_r,
                                           config.lambda_a, config.ase_target,
                                           &summary.clamp_warnings);
        if (!std::isfinite(forward.breakdown.total)) {
          throw NumericError("train: loss is not finite");
        }
        backward(forward.loss);
        adam_step(model.params(), adam);
        model.tape().clear();
        ++step;
        summary.steps = step;

        std::vector<TokenSeq> hyps, refs;
        for (int b = 0; b < batch.size(); ++b) {
          hyps.push_back(argmax_to_tokens(forward.step_argmax, b,
                                          batch.lengths[static_cast<size_t>(b)],
                                          vocab));
          refs.push_back(
              tokens_of_record(manifest.records[record_indices[static_cast<size_t>(b)]]));
        }
        window.emplace_back(std::move(hyps), std::move(refs));
        while (window.size() > static_cast<size_t>(config.bleu_window)) {
          window.pop_front();
        }

        line["step"] = step;
        line["epoch"] = epoch + 1;
        line["J"] = forward.breakdown.total;
        line["nll"] = forward.breakdown.per_word_nll;
        line["ase_n"] = forward.breakdown.mean_ase_n;
      } catch (const NumericError&) {
        summary.nan_abort = true;
        stop = true;
        break;
      }

      const bool eval_now = (step % config.eval_period == 0);
      if (eval_now) {
        const double train_bleu = window_bleu();
        summary.final_train_bleu = train_bleu;
        line["train_bleu"] = train_bleu;
        double select_metric = train_bleu;
        if (!sets.valid.empty()) {
          const auto valid = decode_eval(sets.valid, /*use_beam=*/true);
          line["valid_bleu"] = valid.bleu;
          select_metric = valid.bleu;
        }
        if (persist) {
          save_checkpoint(last_path, model.config().digest(), model.params());
          summary.last_checkpoint = last_path;
        }
        if (select_metric > summary.best_valid_bleu) {
          summary.best_valid_bleu = select_metric;
          if (persist) {
            save_checkpoint(best_path, model.config().digest(), model.params());
            summary.best_checkpoint = best_path;
          }
        }
        if (want_early_stop) {
          bool met = true;
          if (config.stop_train_bleu >= 0) {
            met = met && train_bleu >= config.stop_train_bleu;
          }
          if (config.stop_exact_match >= 0) {
            const auto train_eval = decode_eval(sets.train, /*use_beam=*/false);
            summary.final_exact_match = train_eval.exact_match;
            met = met && train_eval.exact_match >= config.stop_exact_match;
          }
          if (met) {
            summary.early_stopped = true;
            stop = true;
          }
        }
      }
      emit_log(line);
      if (stop || (config.max_steps > 0 && step >= config.max_steps)) {
        stop = true;
        break;
      }
    }
  }

  summary.final_train_bleu = window_bleu();
  if (summary.final_exact_match < 0 && !summary.nan_abort) {
    const auto train_eval = decode_eval(sets.train, /*use_beam=*/false);
    summary.final_exact_match = train_eval.exact_match;
  }
  if (persist && !summary.nan_abort) {
    save_checkpoint(last_path, model.config().digest(), model.params());
    summary.last_checkpoint = last_path;
    if (summary.best_checkpoint.empty()) {
      save_checkpoint(best_path, model.config().digest(), model.params());
      summary.best_checkpoint = best_path;
    }
  }
  return summary;
}

#define IM2MARKUP_INSTANTIATE(S)                                             \
  template TensorT<S> sequence_nll<S>(const std::vector<TensorT<S>>&,        \
                                      std::span<const int>,                  \
                                      std::span<const int>, long*);          \
  template TensorT<S> ase_penalty<S>(const std::vector<TensorT<S>>&,         \
                                     std::span<const int>, double);          \
  template TensorT<S> l2_reg<S>(const ParamListT<S>&);                       \
  template struct TeacherForcedOutput<S>;                                    \
  template TeacherForcedOutput<S> teacher_forced_loss<S>(                    \
      ModelT<S>&, const Batch&, double, double, double, long*);

IM2MARKUP_INSTANTIATE(float)
IM2MARKUP_INSTANTIATE(double)

#undef IM2MARKUP_INSTANTIATE

}  // namespace im2markup
