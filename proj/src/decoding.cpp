#include "im2markup/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "im2markup/error.hpp"
#include "im2markup/rng.hpp"
#include "im2markup/vocab.hpp"

namespace im2markup {

namespace {

template <class S>
struct Hyp {
  std::vector<int> ids;  // emitted token ids
  double logp = 0.0;
  // value-level stack state, one (h, c) pair per layer
  std::vector<std::vector<S>> h, c;
  std::vector<std::vector<double>> alphas;
};

// Higher total log-probability wins; ties go to the lexicographically
// smaller token-id sequence.
template <class S>
bool hyp_better(const Hyp<S>& a, const Hyp<S>& b) {
  if (a.logp != b.logp) return a.logp > b.logp;
  return a.ids < b.ids;
}

template <class S>
std::vector<std::vector<S>> state_rows(const StackStateT<S>& state,
                                       bool cell_part, int layers) {
  std::vector<std::vector<S>> out;
  out.reserve(static_cast<size_t>(layers));
  for (int q = 0; q < layers; ++q) {
    const auto& t = cell_part ? state.layers[static_cast<size_t>(q)].c
                              : state.layers[static_cast<size_t>(q)].h;
    out.emplace_back(t.values().begin(), t.values().end());
  }
  return out;
}

template <class S>
typename ModelT<S>::Encoded replicate_encoded(ModelT<S>& model,
                                              const std::vector<S>& a_values,
                                              int batch) {
  const int locations = model.config().num_locations();
  const int feat = model.config().feat_dim();
  std::vector<S> rep;
  rep.reserve(a_values.size() * static_cast<size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    rep.insert(rep.end(), a_values.begin(), a_values.end());
  }
  typename ModelT<S>::Encoded enc;
  enc.batch = batch;
  enc.a = TensorT<S>::leaf(model.tape(), {batch, locations, feat}, rep);
  enc.a_flat = reshape(enc.a, {batch, locations * feat});
  return enc;
}

template <class S>
StackStateT<S> pack_state(ModelT<S>& model,
                          const std::vector<const Hyp<S>*>& hyps) {
  const int units = model.config().lstm_units;
  const int layers = model.config().lstm_layers;
  const int batch = static_cast<int>(hyps.size());
  StackStateT<S> state;
  state.layers.resize(static_cast<size_t>(layers));
  for (int q = 0; q < layers; ++q) {
    std::vector<S> hv, cv;
    hv.reserve(static_cast<size_t>(batch) * units);
    cv.reserve(static_cast<size_t>(batch) * units);
    for (const Hyp<S>* hyp : hyps) {
      hv.insert(hv.end(), hyp->h[static_cast<size_t>(q)].begin(),
                hyp->h[static_cast<size_t>(q)].end());
      cv.insert(cv.end(), hyp->c[static_cast<size_t>(q)].begin(),
                hyp->c[static_cast<size_t>(q)].end());
    }
    state.layers[static_cast<size_t>(q)].h =
        TensorT<S>::leaf(model.tape(), {batch, units}, std::move(hv));
    state.layers[static_cast<size_t>(q)].c =
        TensorT<S>::leaf(model.tape(), {batch, units}, std::move(cv));
  }
  return state;
}

template <class S>
Hyp<S> make_root(ModelT<S>& model, const Image& image,
                 std::vector<S>& a_values_out) {
  auto enc = model.encode({image});
  a_values_out.assign(enc.a.values().begin(), enc.a.values().end());
  auto state = model.initial_state(enc);
  Hyp<S> root;
  root.h = state_rows(state, /*cell_part=*/false, model.config().lstm_layers);
  root.c = state_rows(state, /*cell_part=*/true, model.config().lstm_layers);
  return root;
}

template <class S>
DecodeResult finish(const Hyp<S>& best) {
  DecodeResult out;
  out.token_ids = best.ids;
  out.log_prob = best.logp;
  out.trace.steps = best.alphas;
  return out;
}

}  // namespace

template <class S>
DecodeResult beam_search(ModelT<S>& model, const Image& image, int beam_width,
                         int max_len) {
  if (beam_width < 1) throw ContractError("beam_search: beam_width < 1");
  if (max_len < 1) throw ContractError("beam_search: max_len < 1");
  typename TapeT<S>::NoGrad guard(model.tape());
  const int classes = model.config().num_classes();
  const int eos_class = class_of_token_id(Vocab::kEos);

  std::vector<S> a_values;
  std::vector<Hyp<S>> live{make_root(model, image, a_values)};
  std::vector<Hyp<S>> pool;

  for (int t = 0; t < max_len && !live.empty(); ++t) {
    const int batch = static_cast<int>(live.size());
    std::vector<const Hyp<S>*> refs;
    refs.reserve(live.size());
    for (const auto& hyp : live) refs.push_back(&hyp);
    auto enc = replicate_encoded(model, a_values, batch);
    auto state = pack_state(model, refs);
    std::vector<int> prev(static_cast<size_t>(batch), Vocab::kBos);
    for (int b = 0; b < batch; ++b) {
      if (!live[static_cast<size_t>(b)].ids.empty()) {
        prev[static_cast<size_t>(b)] = live[static_cast<size_t>(b)].ids.back();
      }
    }
    auto step = model.decode_step(enc, prev, state);
    const auto probs = step.probs.values();
    const auto alpha = step.alpha.values();

    struct Candidate {
      int parent;
      int cls;
      double logp;
      std::vector<int> ids;
    };
    std::vector<Candidate> candidates;
    const int expand = std::min(beam_width, classes);
    for (int b = 0; b < batch; ++b) {
      std::vector<int> order(static_cast<size_t>(classes));
      for (int k = 0; k < classes; ++k) order[static_cast<size_t>(k)] = k;
      std::partial_sort(
          order.begin(), order.begin() + expand, order.end(),
          [&](int x, int y) {
            const double px = probs[static_cast<size_t>(b) * classes + x];
            const double py = probs[static_cast<size_t>(b) * classes + y];
            if (px != py) return px > py;
            return x < y;
          });
      for (int r = 0; r < expand; ++r) {
        const int cls = order[static_cast<size_t>(r)];
        Candidate cand;
        cand.parent = b;
        cand.cls = cls;
        cand.logp =
            live[static_cast<size_t>(b)].logp +
            std::log(static_cast<double>(
                probs[static_cast<size_t>(b) * classes + cls]));
        cand.ids = live[static_cast<size_t>(b)].ids;
        cand.ids.push_back(token_id_of_class(cls));
        candidates.push_back(std::move(cand));
      }
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const Candidate& x, const Candidate& y) {
                if (x.logp != y.logp) return x.logp > y.logp;
                return x.ids < y.ids;
              });
    if (static_cast<int>(candidates.size()) > beam_width) {
      candidates.resize(static_cast<size_t>(beam_width));
    }

    std::vector<Hyp<S>> next_live;
    for (const Candidate& cand : candidates) {
      const Hyp<S>& parent = live[static_cast<size_t>(cand.parent)];
      Hyp<S> hyp;
      hyp.ids = cand.ids;
      hyp.logp = cand.logp;
      hyp.alphas = parent.alphas;
      hyp.alphas.emplace_back();
      auto& row = hyp.alphas.back();
      row.resize(static_cast<size_t>(model.config().num_locations()));
      for (size_t l = 0; l < row.size(); ++l) {
        row[l] = static_cast<double>(
            alpha[static_cast<size_t>(cand.parent) * row.size() + l]);
      }
      if (cand.cls == eos_class) {
        pool.push_back(std::move(hyp));
        continue;
      }
      // carry the stepped state rows of the parent
      hyp.h.resize(static_cast<size_t>(model.config().lstm_layers));
      hyp.c.resize(static_cast<size_t>(model.config().lstm_layers));
      const int units = model.config().lstm_units;
      for (int q = 0; q < model.config().lstm_layers; ++q) {
        const auto hv = step.state.layers[static_cast<size_t>(q)].h.values();
        const auto cv = step.state.layers[static_cast<size_t>(q)].c.values();
        hyp.h[static_cast<size_t>(q)].assign(
            hv.begin() + static_cast<ptrdiff_t>(cand.parent) * units,
            hv.begin() + static_cast<ptrdiff_t>(cand.parent + 1) * units);
        hyp.c[static_cast<size_t>(q)].assign(
            cv.begin() + static_cast<ptrdiff_t>(cand.parent) * units,
            cv.begin() + static_cast<ptrdiff_t>(cand.parent + 1) * units);
      }
      next_live.push_back(std::move(hyp));
    }
    live = std::move(next_live);
  }
  // anything still alive ran out of steps; force-finish as-is
  for (auto& hyp : live) pool.push_back(std::move(hyp));

  const Hyp<S>* best = &pool.front();
  for (const auto& hyp : pool) {
    if (hyp_better(hyp, *best)) best = &hyp;
  }
  return finish(*best);
}

namespace {

template <class S>
DecodeResult rollout(ModelT<S>& model, const Image& image, int max_len,
                     const std::function<int(std::span<const S>)>& choose) {
  typename TapeT<S>::NoGrad guard(model.tape());
  const int classes = model.config().num_classes();
  std::vector<S> a_values;
  Hyp<S> hyp = make_root(model, image, a_values);
  for (int t = 0; t < max_len; ++t) {
    auto enc = replicate_encoded(model, a_values, 1);
    std::vector<const Hyp<S>*> refs{&hyp};
    auto state = pack_state(model, refs);
    const std::vector<int> prev{hyp.ids.empty() ? Vocab::kBos
                                                : hyp.ids.back()};
    auto step = model.decode_step(enc, prev, state);
    const auto probs = step.probs.values();
    const int cls = choose(probs);
    if (cls < 0 || cls >= classes) {
      throw ContractError("decode: chose class " + std::to_string(cls));
    }
    hyp.logp += std::log(static_cast<double>(probs[static_cast<size_t>(cls)]));
    hyp.ids.push_back(token_id_of_class(cls));
    hyp.alphas.emplace_back(step.alpha.values().begin(),
                            step.alpha.values().end());
    if (token_id_of_class(cls) == Vocab::kEos) break;
    hyp.h = state_rows(step.state, false, model.config().lstm_layers);
    hyp.c = state_rows(step.state, true, model.config().lstm_layers);
  }
  return finish(hyp);
}

}  // namespace

template <class S>
DecodeResult bestpath_decode(ModelT<S>& model, const Image& image,
                             int max_len) {
  if (max_len < 1) throw ContractError("bestpath_decode: max_len < 1");
  return rollout<S>(model, image, max_len, [](std::span<const S> probs) {
    int best = 0;
    for (int k = 1; k < static_cast<int>(probs.size()); ++k) {
      if (probs[static_cast<size_t>(k)] > probs[static_cast<size_t>(best)]) {
        best = k;
      }
    }
    return best;
  });
}

template <class S>
DecodeResult sample_sequence(ModelT<S>& model, const Image& image,
                             uint64_t seed, int max_len) {
  if (max_len < 1) throw ContractError("sample_sequence: max_len < 1");
  Rng rng(seed);
  return rollout<S>(model, image, max_len, [&rng](std::span<const S> probs) {
    const double r = rng.uniform();
    double cum = 0.0;
    for (int k = 0; k < static_cast<int>(probs.size()); ++k) {
      cum += static_cast<double>(probs[static_cast<size_t>(k)]);
      if (r < cum) return k;
    }
    return static_cast<int>(probs.size()) - 1;
  });
}

#define IM2MARKUP_INSTANTIATE(S)                                          \
  template DecodeResult beam_search<S>(ModelT<S>&, const Image&, int, int); \
  template DecodeResult bestpath_decode<S>(ModelT<S>&, const Image&, int); \
  template DecodeResult sample_sequence<S>(ModelT<S>&, const Image&,      \
                                           uint64_t, int);

IM2MARKUP_INSTANTIATE(float)
IM2MARKUP_INSTANTIATE(double)

#undef IM2MARKUP_INSTANTIATE

}  // namespace im2markup
