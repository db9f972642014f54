#include <algorithm>
#include <cmath>
#include <map>

#include "doctest.h"
#include "im2markup/decoding.hpp"
#include "im2markup/error.hpp"
#include "im2markup/metrics.hpp"
#include "im2markup/synth.hpp"
#include "im2markup/training.hpp"
#include "im2markup/vocab.hpp"
#include "test_util.hpp"

using namespace im2markup;

namespace {

// micro geometry: 16x16 canvas, two conv stages, 1x4 pooled grid
ModelConfig micro_config(int vocab_total) {
  ModelConfig c;
  c.canvas_h = 16;
  c.canvas_w = 16;
  c.cnn_channels = {2, 2};
  c.pool_stride_h = 4;
  c.pool_stride_w = 1;
  c.lstm_layers = 1;
  c.lstm_units = 3;
  c.embed_dim = 2;
  c.init_mode = "zeros";
  c.vocab_total = vocab_total;
  return c;
}

Image noise_image(Rng& rng, int w, int h) {
  Image img = Image::blank(w, h);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.below(256));
  return img;
}

// Test-side exhaustive decoder: walks every token sequence up to max_len,
// re-running the model prefix by prefix, and keeps the argmax under the
// same (log-prob, lexicographic) order the beam uses.
template <class S>
struct ExhaustiveOracle {
  ModelT<S>& model;
  int max_len;
  std::vector<int> best_ids;
  double best_logp = -std::numeric_limits<double>::infinity();
  bool has_best = false;

  void consider(const std::vector<int>& ids, double logp) {
    if (!has_best || logp > best_logp ||
        (logp == best_logp && ids < best_ids)) {
      best_ids = ids;
      best_logp = logp;
      has_best = true;
    }
  }

  void walk(const typename ModelT<S>::Encoded& enc,
            const StackStateT<S>& state, std::vector<int>& prefix,
            double logp) {
    if (static_cast<int>(prefix.size()) == max_len) {
      consider(prefix, logp);
      return;
    }
    const std::vector<int> prev{prefix.empty() ? Vocab::kBos : prefix.back()};
    auto step = model.decode_step(enc, prev, state);
    const auto probs = step.probs.values();
    for (int cls = 0; cls < model.config().num_classes(); ++cls) {
      const int token = token_id_of_class(cls);
      prefix.push_back(token);
      const double lp =
          logp + std::log(static_cast<double>(probs[static_cast<size_t>(cls)]));
      if (token == Vocab::kEos) {
        consider(prefix, lp);
      } else {
        walk(enc, step.state, prefix, lp);
      }
      prefix.pop_back();
    }
  }

  void run(const Image& image) {
    typename TapeT<S>::NoGrad guard(model.tape());
    auto enc = model.encode({image});
    auto state = model.initial_state(enc);
    std::vector<int> prefix;
    walk(enc, state, prefix, 0.0);
  }
};

}  // namespace

TEST_CASE("beam width one reproduces greedy decoding") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    ModelT<double> model(micro_config(5));
    model.init_params(500 + static_cast<uint64_t>(trial));
    const Image img = noise_image(rng, 12, 10);
    const auto greedy = bestpath_decode(model, img, 6);
    const auto beam = beam_search(model, img, 1, 6);
    CHECK(greedy.token_ids == beam.token_ids);
    CHECK(greedy.log_prob == beam.log_prob);
  }
}

TEST_CASE("a head pinned to <eos> emits it immediately") {
  ModelT<double> model(micro_config(5));
  // zero weights everywhere; a huge bias makes the eos class certain
  for (auto& p : model.params()) {
    if (p.name == "head.fc3.bias") {
      p.tensor.raw_values()[static_cast<size_t>(
          class_of_token_id(Vocab::kEos))] = 50.0;
    }
  }
  Rng rng(42);
  const Image img = noise_image(rng, 10, 10);
  const auto greedy = bestpath_decode(model, img, 8);
  CHECK(greedy.token_ids == std::vector<int>{Vocab::kEos});
  CHECK(greedy.log_prob == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(greedy.trace.length() == 1);
  // near-deterministic distribution: sampling ignores the seed
  const auto s1 = sample_sequence(model, img, 1, 8);
  const auto s2 = sample_sequence(model, img, 999, 8);
  CHECK(s1.token_ids == greedy.token_ids);
  CHECK(s2.token_ids == greedy.token_ids);
}

TEST_CASE("wide beams on tiny vocabularies equal exhaustive search") {
  Rng rng(43);
  int finished_with_eos = 0;
  for (int trial = 0; trial < 25; ++trial) {
    ModelT<double> model(micro_config(4));  // K = 3
    model.init_params(900 + static_cast<uint64_t>(trial));
    const Image img = noise_image(rng, 14, 12);
    ExhaustiveOracle<double> oracle{model, 3};
    oracle.run(img);
    const auto beam = beam_search(model, img, 27, 3);
    CHECK(beam.token_ids == oracle.best_ids);
    CHECK(beam.log_prob == oracle.best_logp);  // bitwise equal
    if (!beam.token_ids.empty() && beam.token_ids.back() == Vocab::kEos) {
      ++finished_with_eos;
    }
  }
  CHECK(finished_with_eos > 0);
}

TEST_CASE("wider beams never return a worse sequence score") {
  Rng rng(44);
  for (int trial = 0; trial < 8; ++trial) {
    ModelT<double> model(micro_config(6));
    model.init_params(1200 + static_cast<uint64_t>(trial));
    const Image img = noise_image(rng, 16, 12);
    double prev = -std::numeric_limits<double>::infinity();
    for (int width = 1; width <= 5; ++width) {
      const auto result = beam_search(model, img, width, 5);
      CHECK(result.log_prob >= prev);
      prev = result.log_prob;
    }
  }
}

TEST_CASE("decoded sequences end with <eos> or hit the length cap") {
  Rng rng(45);
  for (int trial = 0; trial < 10; ++trial) {
    ModelT<double> model(micro_config(5));
    model.init_params(1500 + static_cast<uint64_t>(trial));
    const Image img = noise_image(rng, 16, 16);
    for (int width : {1, 3}) {
      const auto result = beam_search(model, img, width, 4);
      const bool ends_eos =
          !result.token_ids.empty() && result.token_ids.back() == Vocab::kEos;
      CHECK((ends_eos || result.token_ids.size() == 4));
      CHECK(result.trace.length() == result.token_ids.size());
    }
  }
}

TEST_CASE("decode log-probability matches the loss-path recomputation") {
  Rng rng(46);
  for (int trial = 0; trial < 6; ++trial) {
    ModelT<double> model(micro_config(5));
    model.init_params(1700 + static_cast<uint64_t>(trial));
    const Image img = noise_image(rng, 14, 14);
    const auto result = beam_search(model, img, 3, 5);
    REQUIRE(!result.token_ids.empty());
    // teacher-force the decoded sequence back through the loss path
    Batch batch;
    batch.images = {img};
    batch.tau_max = static_cast<int>(result.token_ids.size());
    batch.lengths = {batch.tau_max};
    batch.targets = result.token_ids;
    auto out = teacher_forced_loss(model, batch, 0.0, 0.0, 0.0);
    const double recomputed =
        -out.breakdown.per_word_nll * static_cast<double>(batch.tau_max);
    CHECK(std::abs(recomputed - result.log_prob) < 1e-6);
  }
}

TEST_CASE("sampling is seed-deterministic and follows p_1") {
  ModelT<double> model(micro_config(5));
  model.init_params(60);
  Rng rng(47);
  const Image img = noise_image(rng, 12, 12);
  const auto a = sample_sequence(model, img, 123, 6);
  const auto b = sample_sequence(model, img, 123, 6);
  CHECK(a.token_ids == b.token_ids);
  CHECK(a.log_prob == b.log_prob);

  // empirical first-token frequencies against p_1 within 3 sigma
  std::vector<double> p1;
  {
    TapeT<double>::NoGrad guard(model.tape());
    auto enc = model.encode({img});
    auto state = model.initial_state(enc);
    const std::vector<int> prev{Vocab::kBos};
    auto step = model.decode_step(enc, prev, state);
    p1.assign(step.probs.values().begin(), step.probs.values().end());
  }
  const int n = 10000;
  std::vector<int> counts(p1.size(), 0);
  for (int s = 0; s < n; ++s) {
    const auto r = sample_sequence(model, img, 10000 + s, 1);
    ++counts[static_cast<size_t>(class_of_token_id(r.token_ids[0]))];
  }
  for (size_t k = 0; k < p1.size(); ++k) {
    const double expect = n * p1[k];
    const double sigma = std::sqrt(n * p1[k] * (1.0 - p1[k]));
    CHECK(std::abs(counts[k] - expect) <= 3.0 * sigma + 1e-9);
  }
}

// ---- metrics ----

namespace {

// Independent reference BLEU written the long way around: per-sentence
// map-based n-gram clipping, then the corpus-level geometric mean.
double reference_bleu(const std::vector<TokenSeq>& hyps,
                      const std::vector<TokenSeq>& refs) {
  double log_sum = 0.0;
  long long c_total = 0, r_total = 0;
  for (int n = 1; n <= 4; ++n) {
    long long clipped = 0, total = 0;
    for (size_t s = 0; s < hyps.size(); ++s) {
      std::map<std::vector<std::string>, long long> hyp_grams, ref_grams;
      const auto& hyp = hyps[s];
      const auto& ref = refs[s];
      for (size_t i = 0; i + n <= hyp.size(); ++i) {
        hyp_grams[std::vector<std::string>(hyp.begin() + i,
                                           hyp.begin() + i + n)]++;
      }
      for (size_t i = 0; i + n <= ref.size(); ++i) {
        ref_grams[std::vector<std::string>(ref.begin() + i,
                                           ref.begin() + i + n)]++;
      }
      for (const auto& [gram, count] : hyp_grams) {
        total += count;
        auto it = ref_grams.find(gram);
        if (it != ref_grams.end()) clipped += std::min(count, it->second);
      }
    }
    if (clipped == 0) return 0.0;
    log_sum += 0.25 * std::log(static_cast<double>(clipped) /
                               static_cast<double>(total));
  }
  for (size_t s = 0; s < hyps.size(); ++s) {
    c_total += static_cast<long long>(hyps[s].size());
    r_total += static_cast<long long>(refs[s].size());
  }
  if (c_total == 0) return 0.0;
  const double bp = c_total >= r_total
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(r_total) /
                                             static_cast<double>(c_total));
  return bp * std::exp(log_sum);
}

TokenSeq random_seq(Rng& rng, int max_len, int alphabet) {
  TokenSeq seq;
  const int n = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(max_len)));
  for (int i = 0; i < n; ++i) {
    seq.push_back(std::string(1, static_cast<char>('a' + rng.below(alphabet))));
  }
  return seq;
}

long editdist_oracle(const TokenSeq& a, const TokenSeq& b) {
  // full-matrix textbook DP
  std::vector<std::vector<long>> d(a.size() + 1,
                                   std::vector<long>(b.size() + 1));
  for (size_t i = 0; i <= a.size(); ++i) d[i][0] = static_cast<long>(i);
  for (size_t j = 0; j <= b.size(); ++j) d[0][j] = static_cast<long>(j);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
  }
  return d[a.size()][b.size()];
}

}  // namespace

TEST_CASE("bleu is one on a perfect corpus and zero on empty output") {
  std::vector<TokenSeq> refs{{"a", "b", "c", "d"}, {"x", "y", "z", "w"}};
  CHECK(corpus_bleu(refs, refs) == doctest::Approx(1.0));
  std::vector<TokenSeq> empty{{}, {}};
  CHECK(corpus_bleu(empty, refs) == 0.0);
  CHECK_THROWS_AS(corpus_bleu(refs, std::vector<TokenSeq>{{}, {}}),
                  ContractError);
  CHECK_THROWS_AS(corpus_bleu(refs, std::vector<TokenSeq>{{"a", "b"}}),
                  ContractError);
}

TEST_CASE("bleu matches an independent implementation on random corpora") {
  Rng rng(48);
  for (int trial = 0; trial < 50; ++trial) {
    const size_t corpus = 1 + rng.below(12);
    std::vector<TokenSeq> hyps, refs;
    for (size_t s = 0; s < corpus; ++s) {
      refs.push_back(random_seq(rng, 12, 4));
      if (rng.below(4) == 0) {
        hyps.push_back(refs.back());  // some perfect matches
      } else {
        hyps.push_back(random_seq(rng, 12, 4));
      }
    }
    const double mine = corpus_bleu(hyps, refs);
    const double ref = reference_bleu(hyps, refs);
    CHECK(std::abs(mine - ref) < 1e-9);
  }
}

TEST_CASE("bleu ignores corpus order") {
  Rng rng(49);
  std::vector<TokenSeq> hyps, refs;
  for (int s = 0; s < 10; ++s) {
    refs.push_back(random_seq(rng, 10, 3));
    hyps.push_back(random_seq(rng, 10, 3));
  }
  const double base = corpus_bleu(hyps, refs);
  std::vector<size_t> order{9, 3, 1, 7, 5, 0, 8, 2, 6, 4};
  std::vector<TokenSeq> hyps2, refs2;
  for (size_t i : order) {
    hyps2.push_back(hyps[i]);
    refs2.push_back(refs[i]);
  }
  CHECK(corpus_bleu(hyps2, refs2) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("edit distance follows the worked examples") {
  CHECK(edit_distance({"a", "b", "c"}, {"a", "b", "c"}) == 0.0);
  CHECK(edit_distance({"a", "b", "c"}, {"a", "x", "c"}) ==
        doctest::Approx(1.0 / 3));
  CHECK(edit_distance({}, {"p", "q", "r", "s"}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(edit_distance({"a"}, {}), ContractError);
}

TEST_CASE("edit distance agrees with the DP oracle and metric laws") {
  Rng rng(50);
  for (int trial = 0; trial < 300; ++trial) {
    const TokenSeq a = random_seq(rng, 10, 3);
    const TokenSeq b = random_seq(rng, 10, 3);
    const TokenSeq c = random_seq(rng, 10, 3);
    const long raw_ab = editdist_oracle(a, b);
    CHECK(edit_distance(a, b) ==
          doctest::Approx(static_cast<double>(raw_ab) / b.size()));
    // un-normalized counts are symmetric and satisfy the triangle law
    CHECK(raw_ab == editdist_oracle(b, a));
    CHECK(editdist_oracle(a, c) <= raw_ab + editdist_oracle(b, c));
  }
}

// ---- visual match ----

namespace {

Image canvas_with_bar_and_dot(int w, int h, int dot_x, int dot_y) {
  Image img = Image::blank(w, h);
  for (int x = 0; x < w; ++x) img.set(x, h / 2, 0);  // bar fills every column
  img.set(dot_x, dot_y, 0);
  return img;
}

Image shifted(const Image& img, int dx, int dy) {
  Image out = Image::blank(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (img.at(x, y) < 128 && out.in_bounds(x + dx, y + dy)) {
        out.set(x + dx, y + dy, 0);
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("identical images match; blank pairs follow the blank rules") {
  Rng rng(51);
  Image img = Image::blank(20, 12);
  img.set(3, 4, 0);
  img.set(11, 9, 0);
  CHECK(visual_match(img, img));
  const Image blank_a = Image::blank(5, 5);
  const Image blank_b = Image::blank(9, 3);
  CHECK(visual_match(blank_a, blank_b));
  CHECK_FALSE(visual_match(blank_a, img));
}

TEST_CASE("column stripping absorbs pure horizontal shifts") {
  Image img = Image::blank(40, 16);
  for (int x = 10; x < 18; ++x) {
    for (int y = 5; y < 9; ++y) img.set(x, y, 0);
  }
  img.set(12, 11, 0);
  for (int dx : {1, 5, 6, 13}) {
    CHECK(visual_match(img, shifted(img, dx, 0)));
  }
}

TEST_CASE("vertical translation is tolerated up to five pixels") {
  Image img = Image::blank(30, 24);
  for (int x = 4; x < 20; ++x) img.set(x, 10, 0);
  img.set(7, 6, 0);
  for (int dy = 0; dy <= 5; ++dy) {
    CHECK(visual_match(img, shifted(img, 0, dy)));
    CHECK(visual_match(shifted(img, 0, dy), img));
  }
  CHECK_FALSE(visual_match(img, shifted(img, 0, 6)));
  CHECK_FALSE(visual_match(shifted(img, 0, 6), img));
}

TEST_CASE("a six-pixel relative shift past stripping is a mismatch") {
  // the bar pins every column, so stripping cannot absorb the dot's slide
  const Image base = canvas_with_bar_and_dot(32, 16, 10, 4);
  const Image five = canvas_with_bar_and_dot(32, 16, 15, 4);
  const Image six = canvas_with_bar_and_dot(32, 16, 16, 4);
  CHECK_FALSE(visual_match(base, five));  // bar fixes the alignment
  CHECK_FALSE(visual_match(base, six));
  CHECK(visual_match(base, base));
}

TEST_CASE("partial overlap is a non-match however close") {
  Image a = Image::blank(20, 10);
  for (int x = 2; x < 12; ++x) a.set(x, 5, 0);
  Image b = a;
  b.set(15, 5, 0);  // one extra ink pixel
  CHECK_FALSE(visual_match(a, b));
  CHECK_FALSE(visual_match(b, a));
}

TEST_CASE("visual match is symmetric and reflexive on random rasters") {
  Rng rng(52);
  for (int trial = 0; trial < 30; ++trial) {
    Image a = Image::blank(16, 12);
    Image b = Image::blank(16, 12);
    for (int i = 0; i < 10; ++i) {
      a.set(static_cast<int>(rng.below(16)), static_cast<int>(rng.below(12)), 0);
      b.set(static_cast<int>(rng.below(16)), static_cast<int>(rng.below(12)), 0);
    }
    CHECK(visual_match(a, a));
    CHECK(visual_match(b, b));
    CHECK(visual_match(a, b) == visual_match(b, a));
  }
}
