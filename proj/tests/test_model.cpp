#include <cmath>

#include "doctest.h"
#include "im2markup/attention.hpp"
#include "im2markup/calstm.hpp"
#include "im2markup/encoder.hpp"
#include "im2markup/error.hpp"
#include "im2markup/model.hpp"
#include "im2markup/output_head.hpp"
#include "im2markup/synth.hpp"
#include "test_util.hpp"

using namespace im2markup;
using testutil::max_grad_err;
using testutil::rand_vals;

namespace {

ModelConfig tiny_config() {
  ModelConfig c = ModelConfig::tiny();
  c.vocab_total = 13;  // ten glyphs plus the specials
  return c;
}

}  // namespace

// ---- standardize / whiten ----

TEST_CASE("standardize maps white to +0.5 and black to -0.5") {
  Tape64 tape;
  const Image white = Image::blank(8, 8, 255);
  auto t = standardize_whiten<double>(tape, white, 8, 8);
  for (double v : t.values()) CHECK(v == doctest::Approx(0.5));

  const Image black = Image::blank(4, 4, 0);
  auto padded = standardize_whiten<double>(tape, black, 8, 8);
  CHECK(padded.shape() == Shape{1, 1, 8, 8});
  int lows = 0, highs = 0;
  for (double v : padded.values()) {
    if (v == doctest::Approx(-0.5)) ++lows;
    if (v == doctest::Approx(0.5)) ++highs;
  }
  CHECK(lows == 16);
  CHECK(highs == 48);
}

TEST_CASE("paper-limit images center with one-pixel margins") {
  const CenterOffset off = centering_offset(1086, 126, 1088, 128);
  CHECK(off.dx == 1);
  CHECK(off.dy == 1);
  // odd leftover goes right/bottom: ties toward the top-left
  const CenterOffset odd = centering_offset(5, 5, 8, 8);
  CHECK(odd.dx == 1);
  CHECK(odd.dy == 1);
  Image img = Image::blank(4, 4, 0);
  const Image canvas = center_on_canvas(img, 8, 8);
  CHECK(canvas.at(2, 2) == 0);
  CHECK(canvas.at(1, 1) == 255);
  CHECK_THROWS_AS(center_on_canvas(Image::blank(9, 2), 8, 8), ContractError);
}

// ---- encoder geometry ----

TEST_CASE("paper config walks the published shape chain") {
  ModelConfig c = ModelConfig::i2l_strips();
  c.vocab_total = 340;
  const auto chain = encoder_shape_chain(c);
  struct Row {
    const char* layer;
    int h, w, ch;
  };
  const Row expect[] = {
      {"input", 128, 1088, 1},   {"conv", 128, 1088, 64},
      {"maxpool", 64, 544, 64},  {"conv", 64, 544, 128},
      {"maxpool", 32, 272, 128}, {"conv", 32, 272, 256},
      {"maxpool", 16, 136, 256}, {"conv", 16, 136, 512},
      {"maxpool", 8, 68, 512},   {"conv", 8, 68, 512},
      {"maxpool", 4, 34, 512},   {"pooled-features", 1, 34, 2048},
  };
  REQUIRE(chain.size() == std::size(expect));
  for (size_t i = 0; i < chain.size(); ++i) {
    CHECK(chain[i].layer == expect[i].layer);
    CHECK(chain[i].h == expect[i].h);
    CHECK(chain[i].w == expect[i].w);
    CHECK(chain[i].channels == expect[i].ch);
  }
  CHECK(c.num_locations() == 34);
  CHECK(c.feat_dim() == 2048);
}

TEST_CASE("five halvings shrink a 32x64 canvas to 1x2") {
  ModelConfig c;
  c.canvas_h = 32;
  c.canvas_w = 64;
  c.cnn_channels = {4, 4, 4, 4, 4};
  c.pool_stride_h = 1;
  c.pool_stride_w = 1;
  c.vocab_total = 13;
  c.lstm_units = 4;
  c.embed_dim = 4;
  CHECK(c.raw_grid_h() == 1);
  CHECK(c.raw_grid_w() == 2);
  const auto chain = encoder_shape_chain(c);
  CHECK(chain[chain.size() - 2].h == 1);
  CHECK(chain[chain.size() - 2].w == 2);
}

TEST_CASE("indivisible canvas is rejected at config time") {
  ModelConfig c = tiny_config();
  c.canvas_w = 60;  // 3 halvings need a multiple of 8
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("all-zero encoder weights give all-zero features") {
  ModelT<double> model(tiny_config());  // parameters start at zero
  GrammarConfig g;
  Rng rng(31);
  const auto tokens = sample_formula(g, rng);
  const auto rendered = render_formula(tokens, g);
  auto enc = model.encode({rendered.image});
  for (double v : enc.a.values()) CHECK(v == 0.0);
}

TEST_CASE("pool_features concatenates window vectors in scan order") {
  Tape64 tape;
  // C=2, H=2, W=2 with distinguishable values: v = 100*c + 10*y + x
  std::vector<double> vals;
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y < 2; ++y) {
      for (int x = 0; x < 2; ++x) vals.push_back(100.0 * c + 10.0 * y + x);
    }
  }
  auto grid = Tensor64::leaf(tape, {1, 2, 2, 2}, vals);
  auto pooled = pool_features(grid, 2, 2);
  CHECK(pooled.shape() == Shape{1, 8, 1, 1});
  // window scan (0,0),(0,1),(1,0),(1,1); each contributes its channel pair
  const std::vector<double> expect{0, 100, 1, 101, 10, 110, 11, 111};
  for (size_t i = 0; i < expect.size(); ++i) {
    CHECK(pooled.values()[i] == doctest::Approx(expect[i]));
  }

  // [1,1] stride leaves the grid untouched
  auto untouched = pool_features(grid, 1, 1);
  CHECK(untouched.shape() == grid.shape());
  for (size_t i = 0; i < vals.size(); ++i) {
    CHECK(untouched.values()[i] == doctest::Approx(vals[i]));
  }
  CHECK_THROWS_AS(pool_features(grid, 3, 1), ConfigError);
}

TEST_CASE("pooling preserves the total scalar count") {
  Tape64 tape;
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const int c = 1 + static_cast<int>(rng.below(4));
    const int h = 2 * (1 + static_cast<int>(rng.below(3)));
    const int w = 2 * (1 + static_cast<int>(rng.below(4)));
    auto grid = Tensor64::leaf(
        tape, {2, c, h, w},
        rand_vals(rng, static_cast<size_t>(2 * c * h * w)));
    auto pooled = pool_features(grid, 2, 2);
    CHECK(pooled.size() == grid.size());
  }
}

TEST_CASE("grid flattening is row-major and invertible") {
  // single row: any convention agrees
  GridGeometry row{1, 8};
  CHECK(row.to_linear(0, 4) == 4);
  // 4x34 grid: zero-based (1,2) is linear 36, i.e. one-based l = 37
  GridGeometry grid{4, 34};
  CHECK(grid.to_linear(1, 2) == 36);
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    GridGeometry g{1 + static_cast<int>(rng.below(6)),
                   1 + static_cast<int>(rng.below(40))};
    const int l = static_cast<int>(rng.below(static_cast<uint64_t>(g.locations())));
    const auto [r, c] = g.to_grid(l);
    CHECK(g.to_linear(r, c) == l);
  }
}

TEST_CASE("flatten_grid lays features out as locations x depth") {
  Tape64 tape;
  std::vector<double> vals;
  for (int d = 0; d < 3; ++d) {
    for (int y = 0; y < 2; ++y) {
      for (int x = 0; x < 2; ++x) vals.push_back(100.0 * d + 10.0 * y + x);
    }
  }
  auto grid = Tensor64::leaf(tape, {1, 3, 2, 2}, vals);
  auto flat = flatten_grid(grid);
  CHECK(flat.shape() == Shape{1, 4, 3});
  // location l = y*W + x, each carrying its 3 channel values
  const std::vector<double> expect{0,  100, 200, 1,  101, 201,
                                   10, 110, 210, 11, 111, 211};
  for (size_t i = 0; i < expect.size(); ++i) {
    CHECK(flat.values()[i] == doctest::Approx(expect[i]));
  }
}

TEST_CASE("far-away glyphs cannot change a cell's features") {
  ModelT<double> model(tiny_config());
  model.init_params(2024);
  GrammarConfig g;
  // full-width formulas so centering shifts nothing
  const auto base = render_formula({"1", "2", "3", "4", "5", "6", "7", "0"}, g);
  const auto changed =
      render_formula({"9", "2", "3", "4", "5", "6", "7", "0"}, g);
  auto ea = model.encode({base.image});
  auto eb = model.encode({changed.image});
  const int feat = model.config().feat_dim();
  // depth-3 stack sees 7 px past its own 8-px tile: one neighbor cell
  CHECK(receptive_margin_px(3) == 7);
  bool near_diff = false;
  for (int l = 0; l < 2; ++l) {
    for (int d = 0; d < feat; ++d) {
      near_diff = near_diff ||
                  ea.a.values()[static_cast<size_t>(l * feat + d)] !=
                      eb.a.values()[static_cast<size_t>(l * feat + d)];
    }
  }
  CHECK(near_diff);  // the changed glyph must register nearby
  for (int l = 2; l < model.config().num_locations(); ++l) {
    for (int d = 0; d < feat; ++d) {
      CHECK(ea.a.values()[static_cast<size_t>(l * feat + d)] ==
            eb.a.values()[static_cast<size_t>(l * feat + d)]);
    }
  }
}

// ---- attention ----

namespace {

AttentionParamsT<double> zero_attention(Tape64& tape, int in_dim, int h1,
                                        int h2, int locations) {
  AttentionParamsT<double> p;
  p.w1 = Tensor64::zeros(tape, {in_dim, h1});
  p.b1 = Tensor64::zeros(tape, {h1});
  p.w2 = Tensor64::zeros(tape, {h1, h2});
  p.b2 = Tensor64::zeros(tape, {h2});
  p.w3 = Tensor64::zeros(tape, {h2, locations});
  p.b3 = Tensor64::zeros(tape, {locations});
  return p;
}

AttentionParamsT<double> random_attention(Tape64& tape, Rng& rng, int in_dim,
                                          int h1, int h2, int locations) {
  auto p = zero_attention(tape, in_dim, h1, h2, locations);
  for (auto* t : {&p.w1, &p.b1, &p.w2, &p.b2, &p.w3, &p.b3}) {
    const auto vals = rand_vals(rng, static_cast<size_t>(t->size()), -0.7, 0.7);
    std::copy(vals.begin(), vals.end(), t->raw_values().begin());
  }
  return p;
}

}  // namespace

TEST_CASE("zero attention weights spread weight uniformly") {
  Tape64 tape;
  const int locations = 6, feat = 3, units = 4;
  auto p = zero_attention(tape, locations * feat + units, 16, 8, locations);
  Rng rng(9);
  auto a_flat = Tensor64::leaf(tape, {2, locations * feat},
                               rand_vals(rng, 2 * locations * feat));
  auto h_prev = Tensor64::leaf(tape, {2, units}, rand_vals(rng, 2 * units));
  auto alpha = attend(a_flat, h_prev, p);
  for (double v : alpha.values()) {
    CHECK(v == doctest::Approx(1.0 / locations).epsilon(1e-12));
  }
}

TEST_CASE("attention weights always form a probability vector") {
  Rng rng(10);
  Tape64 tape;
  for (int trial = 0; trial < 40; ++trial) {
    const int locations = 2 + static_cast<int>(rng.below(7));
    const int feat = 1 + static_cast<int>(rng.below(4));
    const int units = 1 + static_cast<int>(rng.below(5));
    auto p = random_attention(tape, rng, locations * feat + units, 12, 9,
                              locations);
    auto a_flat = Tensor64::leaf(tape, {3, locations * feat},
                                 rand_vals(rng, 3 * locations * feat, -3, 3));
    auto h_prev = Tensor64::leaf(tape, {3, units},
                                 rand_vals(rng, 3 * units, -3, 3));
    auto alpha = attend(a_flat, h_prev, p);
    const auto v = alpha.values();
    for (int r = 0; r < 3; ++r) {
      double s = 0;
      for (int l = 0; l < locations; ++l) {
        const double w = v[static_cast<size_t>(r * locations + l)];
        CHECK(w >= 0.0);
        CHECK(w <= 1.0);
        s += w;
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("strips preset sizes the attention MLP at 256 and 128") {
  ModelConfig c = ModelConfig::i2l_strips();
  c.vocab_total = 340;
  CHECK(c.num_locations() == 34);
  CHECK(c.att_hidden1() == 256);
  CHECK(c.att_hidden2() == 128);
}

TEST_CASE("context reduces to the selected or averaged feature vector") {
  Tape64 tape;
  Rng rng(12);
  const int locations = 4, feat = 3;
  auto a = Tensor64::leaf(tape, {1, locations, feat},
                          rand_vals(rng, locations * feat));
  // one-hot at l = 2
  auto onehot = Tensor64::leaf(tape, {1, locations}, {0, 0, 1, 0});
  auto z = context(a, onehot);
  for (int d = 0; d < feat; ++d) {
    CHECK(z.values()[static_cast<size_t>(d)] ==
          doctest::Approx(a.values()[static_cast<size_t>(2 * feat + d)]));
  }
  // uniform -> mean
  auto uniform = Tensor64::full(tape, {1, locations}, 0.25);
  auto zu = context(a, uniform);
  for (int d = 0; d < feat; ++d) {
    double m = 0;
    for (int l = 0; l < locations; ++l) {
      m += a.values()[static_cast<size_t>(l * feat + d)];
    }
    m /= locations;
    CHECK(zu.values()[static_cast<size_t>(d)] == doctest::Approx(m));
  }
}

TEST_CASE("context matches a hand-computed weighted sum") {
  Tape64 tape;
  // L = 3, D = 2
  auto a = Tensor64::leaf(tape, {1, 3, 2}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
  auto alpha = Tensor64::leaf(tape, {1, 3}, {0.2, 0.3, 0.5});
  auto z = context(a, alpha);
  // direct summation oracle
  const double z0 = 0.2 * 1.0 + 0.3 * 3.0 + 0.5 * 5.0;
  const double z1 = 0.2 * 2.0 + 0.3 * 4.0 + 0.5 * 6.0;
  CHECK(z.values()[0] == doctest::Approx(z0).epsilon(1e-12));
  CHECK(z.values()[1] == doctest::Approx(z1).epsilon(1e-12));
}

TEST_CASE("context is linear in the attention weights") {
  Tape64 tape;
  Rng rng(13);
  const int locations = 5, feat = 4;
  auto a = Tensor64::leaf(tape, {1, locations, feat},
                          rand_vals(rng, locations * feat));
  for (int trial = 0; trial < 20; ++trial) {
    auto w1v = rand_vals(rng, locations, 0.0, 1.0);
    auto w2v = rand_vals(rng, locations, 0.0, 1.0);
    const double lam = rng.uniform();
    std::vector<double> mixv(locations);
    for (int l = 0; l < locations; ++l) {
      mixv[static_cast<size_t>(l)] =
          lam * w1v[static_cast<size_t>(l)] +
          (1 - lam) * w2v[static_cast<size_t>(l)];
    }
    auto z1 = context(a, Tensor64::leaf(tape, {1, locations}, w1v));
    auto z2 = context(a, Tensor64::leaf(tape, {1, locations}, w2v));
    auto zm = context(a, Tensor64::leaf(tape, {1, locations}, mixv));
    for (int d = 0; d < feat; ++d) {
      const double expect = lam * z1.values()[static_cast<size_t>(d)] +
                            (1 - lam) * z2.values()[static_cast<size_t>(d)];
      CHECK(std::abs(zm.values()[static_cast<size_t>(d)] - expect) < 1e-9);
    }
  }
}

TEST_CASE("gradients flow through attend and context") {
  Tape64 tape;
  Rng rng(14);
  const int locations = 4, feat = 3, units = 2;
  auto p = random_attention(tape, rng, locations * feat + units, 8, 6,
                            locations);
  auto a = Tensor64::leaf(tape, {2, locations, feat},
                          rand_vals(rng, 2 * locations * feat), true);
  auto h_prev =
      Tensor64::leaf(tape, {2, units}, rand_vals(rng, 2 * units), true);
  auto weight = Tensor64::leaf(tape, {2, feat}, rand_vals(rng, 2 * feat));
  auto build = [&]() {
    auto a_flat = reshape(a, {2, locations * feat});
    auto alpha = attend(a_flat, h_prev, p);
    return sum(mul(context(a, alpha), weight));
  };
  CHECK(max_grad_err(tape, {&a, &h_prev, &p.w1, &p.w3}, build) < 1e-6);
}

// ---- calstm ----

namespace {

LstmCellParamsT<double> zero_cell(Tape64& tape, int in_dim, int units) {
  LstmCellParamsT<double> p;
  auto mat = [&](int r, int c) { return Tensor64::zeros(tape, {r, c}); };
  auto vec = [&](int n) { return Tensor64::zeros(tape, {n}); };
  p.wx_in = mat(in_dim, units);
  p.wh_in = mat(units, units);
  p.peep_in = vec(units);
  p.b_in = vec(units);
  p.wx_forget = mat(in_dim, units);
  p.wh_forget = mat(units, units);
  p.peep_forget = vec(units);
  p.b_forget = vec(units);
  p.wx_cell = mat(in_dim, units);
  p.wh_cell = mat(units, units);
  p.b_cell = vec(units);
  p.wx_out = mat(in_dim, units);
  p.wh_out = mat(units, units);
  p.peep_out = vec(units);
  p.b_out = vec(units);
  return p;
}

void randomize_cell(LstmCellParamsT<double>& p, Rng& rng) {
  for (auto* t :
       {&p.wx_in, &p.wh_in, &p.peep_in, &p.b_in, &p.wx_forget, &p.wh_forget,
        &p.peep_forget, &p.b_forget, &p.wx_cell, &p.wh_cell, &p.b_cell,
        &p.wx_out, &p.wh_out, &p.peep_out, &p.b_out}) {
    const auto vals = rand_vals(rng, static_cast<size_t>(t->size()), -0.8, 0.8);
    std::copy(vals.begin(), vals.end(), t->raw_values().begin());
  }
}

// Test-side scalar reference of the peephole cell, evaluated element by
// element with plain doubles.
struct ScalarCellOracle {
  static double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

  static std::pair<std::vector<double>, std::vector<double>> step(
      const LstmCellParamsT<double>& p, const std::vector<double>& x,
      const std::vector<double>& h, const std::vector<double>& c) {
    const int in_dim = p.wx_in.dim(0);
    const int units = p.wx_in.dim(1);
    auto affine = [&](const Tensor64& wx, const Tensor64& wh,
                      const Tensor64* peep, const Tensor64& bias,
                      const std::vector<double>& cell, int j) {
      double acc = bias.values()[static_cast<size_t>(j)];
      for (int i = 0; i < in_dim; ++i) {
        acc += x[static_cast<size_t>(i)] *
               wx.values()[static_cast<size_t>(i * units + j)];
      }
      for (int i = 0; i < units; ++i) {
        acc += h[static_cast<size_t>(i)] *
               wh.values()[static_cast<size_t>(i * units + j)];
      }
      if (peep) {
        acc += cell[static_cast<size_t>(j)] *
               peep->values()[static_cast<size_t>(j)];
      }
      return acc;
    };
    std::vector<double> c_new(static_cast<size_t>(units));
    std::vector<double> h_new(static_cast<size_t>(units));
    for (int j = 0; j < units; ++j) {
      const double gi =
          sigmoid(affine(p.wx_in, p.wh_in, &p.peep_in, p.b_in, c, j));
      const double gf = sigmoid(
          affine(p.wx_forget, p.wh_forget, &p.peep_forget, p.b_forget, c, j));
      const double cand =
          std::tanh(affine(p.wx_cell, p.wh_cell, nullptr, p.b_cell, c, j));
      c_new[static_cast<size_t>(j)] =
          gf * c[static_cast<size_t>(j)] + gi * cand;
      const double go = sigmoid(
          affine(p.wx_out, p.wh_out, &p.peep_out, p.b_out, c_new, j));
      h_new[static_cast<size_t>(j)] =
          go * std::tanh(c_new[static_cast<size_t>(j)]);
    }
    return {h_new, c_new};
  }
};

}  // namespace

TEST_CASE("a zeroed cell with zero state stays at zero") {
  Tape64 tape;
  auto p = zero_cell(tape, 3, 4);
  Rng rng(15);
  auto x = Tensor64::leaf(tape, {1, 3}, rand_vals(rng, 3));
  LstmStateT<double> state{Tensor64::zeros(tape, {1, 4}),
                           Tensor64::zeros(tape, {1, 4})};
  auto next = lstm_cell_step(x, state, p);
  for (double v : next.c.values()) CHECK(v == doctest::Approx(0.0));
  for (double v : next.h.values()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("saturated forget gate carries the cell state through") {
  Tape64 tape;
  auto p = zero_cell(tape, 2, 3);
  // forget gate pinned open, input gate pinned shut
  std::fill(p.b_forget.raw_values().begin(), p.b_forget.raw_values().end(),
            30.0);
  std::fill(p.b_in.raw_values().begin(), p.b_in.raw_values().end(), -30.0);
  Rng rng(16);
  auto x = Tensor64::leaf(tape, {1, 2}, rand_vals(rng, 2));
  const std::vector<double> c_prev{0.3, -0.7, 1.2};
  LstmStateT<double> state{Tensor64::zeros(tape, {1, 3}),
                           Tensor64::leaf(tape, {1, 3}, c_prev)};
  auto next = lstm_cell_step(x, state, p);
  for (int j = 0; j < 3; ++j) {
    CHECK(next.c.values()[static_cast<size_t>(j)] ==
          doctest::Approx(c_prev[static_cast<size_t>(j)]).epsilon(1e-9));
  }
}

TEST_CASE("cell step matches the scalar oracle on a random tiny cell") {
  Tape64 tape;
  auto p = zero_cell(tape, 2, 3);
  Rng rng(17);
  randomize_cell(p, rng);
  const auto xv = rand_vals(rng, 2);
  const auto hv = rand_vals(rng, 3);
  const auto cv = rand_vals(rng, 3);
  auto x = Tensor64::leaf(tape, {1, 2}, xv);
  LstmStateT<double> state{Tensor64::leaf(tape, {1, 3}, hv),
                           Tensor64::leaf(tape, {1, 3}, cv)};
  auto next = lstm_cell_step(x, state, p);
  const auto [h_ref, c_ref] = ScalarCellOracle::step(p, xv, hv, cv);
  for (int j = 0; j < 3; ++j) {
    CHECK(next.h.values()[static_cast<size_t>(j)] ==
          doctest::Approx(h_ref[static_cast<size_t>(j)]).epsilon(1e-12));
    CHECK(next.c.values()[static_cast<size_t>(j)] ==
          doctest::Approx(c_ref[static_cast<size_t>(j)]).epsilon(1e-12));
  }
}

TEST_CASE("a one-layer stack is exactly one cell on the joined input") {
  Tape64 tape;
  Rng rng(18);
  const int feat = 3, embed = 2, units = 4;
  auto cell = zero_cell(tape, feat + embed, units);
  randomize_cell(cell, rng);
  auto z = Tensor64::leaf(tape, {1, feat}, rand_vals(rng, feat));
  auto emb = Tensor64::leaf(tape, {1, embed}, rand_vals(rng, embed));
  StackStateT<double> state;
  state.layers.push_back({Tensor64::leaf(tape, {1, units}, rand_vals(rng, units)),
                          Tensor64::leaf(tape, {1, units}, rand_vals(rng, units))});
  std::vector<LstmCellParamsT<double>> cells{cell};
  auto next = stack_step(z, emb, state,
                         std::span<const LstmCellParamsT<double>>(cells));
  auto joined = concat<double>({z, emb}, 1);
  auto direct = lstm_cell_step(joined, state.layers[0], cell);
  for (int j = 0; j < units; ++j) {
    CHECK(next.top_h().values()[static_cast<size_t>(j)] ==
          doctest::Approx(direct.h.values()[static_cast<size_t>(j)]));
  }
}

TEST_CASE("hidden activations stay strictly inside (-1, 1)") {
  Tape64 tape;
  Rng rng(19);
  auto cell = zero_cell(tape, 3, 5);
  randomize_cell(cell, rng);
  auto x = Tensor64::leaf(tape, {4, 3}, rand_vals(rng, 12, -10, 10));
  LstmStateT<double> state{
      Tensor64::leaf(tape, {4, 5}, rand_vals(rng, 20, -0.99, 0.99)),
      Tensor64::leaf(tape, {4, 5}, rand_vals(rng, 20, -3, 3))};
  auto next = lstm_cell_step(x, state, cell);
  for (double v : next.h.values()) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("zeros init mode yields an all-zero stack state") {
  Tape64 tape;
  auto state = zeros_init_state<double>(tape, 3, 2, 4);
  REQUIRE(state.layers.size() == 2);
  for (const auto& layer : state.layers) {
    for (double v : layer.h.values()) CHECK(v == 0.0);
    for (double v : layer.c.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("learned init state lies inside (-1, 1)") {
  ModelT<double> model(tiny_config());
  model.init_params(55);
  GrammarConfig g;
  const auto rendered = render_formula({"1", "2", "3"}, g);
  auto enc = model.encode({rendered.image});
  auto state = model.initial_state(enc);
  REQUIRE(state.layers.size() == 2);
  for (const auto& layer : state.layers) {
    for (double v : layer.h.values()) {
      CHECK(v > -1.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("paper-scale init model consumes 7,569,300 parameters") {
  // strips: 34 locations x 2048 features; nopool: 136 x 512 — same count
  CHECK(init_model_param_count(34, 2048, 100, 2, 1500) == 7569300);
  CHECK(init_model_param_count(136, 512, 100, 2, 1500) == 7569300);
}

TEST_CASE("gradients flow through an unrolled two-step stack") {
  Tape64 tape;
  Rng rng(20);
  const int feat = 2, embed = 2, units = 3;
  auto c1 = zero_cell(tape, feat + embed, units);
  auto c2 = zero_cell(tape, units, units);
  randomize_cell(c1, rng);
  randomize_cell(c2, rng);
  std::vector<LstmCellParamsT<double>> cells{c1, c2};
  auto z1 = Tensor64::leaf(tape, {1, feat}, rand_vals(rng, feat));
  auto z2 = Tensor64::leaf(tape, {1, feat}, rand_vals(rng, feat));
  auto e1 = Tensor64::leaf(tape, {1, embed}, rand_vals(rng, embed));
  auto e2 = Tensor64::leaf(tape, {1, embed}, rand_vals(rng, embed));
  auto weight = Tensor64::leaf(tape, {1, units}, rand_vals(rng, units));
  auto build = [&]() {
    StackStateT<double> state;
    state.layers.push_back({Tensor64::zeros(tape, {1, units}),
                            Tensor64::zeros(tape, {1, units})});
    state.layers.push_back({Tensor64::zeros(tape, {1, units}),
                            Tensor64::zeros(tape, {1, units})});
    const std::span<const LstmCellParamsT<double>> span_cells(cells);
    auto s1 = stack_step(z1, e1, state, span_cells);
    auto s2 = stack_step(z2, e2, s1, span_cells);
    return sum(mul(s2.top_h(), weight));
  };
  CHECK(max_grad_err(tape,
                     {&c1.wx_in, &c1.peep_forget, &c1.b_cell, &c2.wh_out,
                      &c2.peep_out, &z1, &e2},
                     build) < 1e-6);
}

// ---- output head ----

namespace {

OutputHeadParamsT<double> zero_head(Tape64& tape, int vocab_total, int embed,
                                    int units, int feat, int hidden,
                                    int classes) {
  OutputHeadParamsT<double> p;
  p.embedding = Tensor64::zeros(tape, {vocab_total, embed});
  p.w1 = Tensor64::zeros(tape, {units + feat + embed, hidden});
  p.b1 = Tensor64::zeros(tape, {hidden});
  p.w2 = Tensor64::zeros(tape, {hidden, hidden});
  p.b2 = Tensor64::zeros(tape, {hidden});
  p.w3 = Tensor64::zeros(tape, {hidden, classes});
  p.b3 = Tensor64::zeros(tape, {classes});
  return p;
}

}  // namespace

TEST_CASE("token and class indices shift by the pad slot") {
  CHECK(class_of_token_id(Vocab::kBos) == 0);
  CHECK(class_of_token_id(Vocab::kEos) == 1);
  CHECK(token_id_of_class(0) == Vocab::kBos);
  CHECK(token_id_of_class(1) == Vocab::kEos);
}

TEST_CASE("embedding lookups are row selects") {
  Tape64 tape;
  Rng rng(22);
  auto head = zero_head(tape, 5, 3, 2, 2, 8, 4);
  const auto table = rand_vals(rng, 15);
  std::copy(table.begin(), table.end(),
            head.embedding.raw_values().begin());
  const std::vector<int> ids{Vocab::kBos, 3, Vocab::kBos};
  auto rows = embed(head, ids);
  for (int j = 0; j < 3; ++j) {
    CHECK(rows.values()[static_cast<size_t>(j)] ==
          doctest::Approx(table[static_cast<size_t>(3 + j)]));  // row 1
    CHECK(rows.values()[static_cast<size_t>(6 + j)] ==
          doctest::Approx(rows.values()[static_cast<size_t>(j)]));
  }
}

TEST_CASE("zero head weights give the uniform distribution") {
  Tape64 tape;
  const int classes = 7;
  auto head = zero_head(tape, 9, 3, 4, 2, 16, classes);
  Rng rng(23);
  auto h_top = Tensor64::leaf(tape, {2, 4}, rand_vals(rng, 8));
  auto z = Tensor64::leaf(tape, {2, 2}, rand_vals(rng, 4));
  auto emb = embed(head, std::vector<int>{1, 2});
  auto p = deep_output(h_top, z, emb, head);
  for (double v : p.values()) {
    CHECK(v == doctest::Approx(1.0 / classes).epsilon(1e-12));
  }
}

TEST_CASE("output distributions sum to one for random heads") {
  Tape64 tape;
  Rng rng(24);
  for (int trial = 0; trial < 25; ++trial) {
    const int classes = 2 + static_cast<int>(rng.below(9));
    auto head = zero_head(tape, classes + 1, 3, 4, 2, 12, classes);
    for (auto* t : {&head.w1, &head.b1, &head.w2, &head.b2, &head.w3,
                    &head.b3, &head.embedding}) {
      const auto vals =
          rand_vals(rng, static_cast<size_t>(t->size()), -1.5, 1.5);
      std::copy(vals.begin(), vals.end(), t->raw_values().begin());
    }
    auto h_top = Tensor64::leaf(tape, {3, 4}, rand_vals(rng, 12, -2, 2));
    auto z = Tensor64::leaf(tape, {3, 2}, rand_vals(rng, 6, -2, 2));
    auto emb = embed(head, std::vector<int>{0, 1, 2});
    auto p = deep_output(h_top, z, emb, head);
    const auto v = p.values();
    for (int r = 0; r < 3; ++r) {
      double s = 0;
      for (int k = 0; k < classes; ++k) {
        s += v[static_cast<size_t>(r * classes + k)];
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("paper vocabulary sizes are accepted by the sizing rule") {
  ModelConfig c = ModelConfig::i2l_strips();
  c.vocab_total = 340;  // K = 339
  CHECK(c.num_classes() == 339);
  CHECK(c.out_hidden() == 358);
  c.vocab_total = 359;  // K = 358
  CHECK(c.num_classes() == 358);
  CHECK(c.out_hidden() == 358);
  c.vocab_total = 401;  // K = 400 exceeds the floor
  CHECK(c.out_hidden() == 400);
}

TEST_CASE("the head keeps skip connections from context and embedding") {
  Tape64 tape;
  Rng rng(25);
  const int classes = 5;
  auto head = zero_head(tape, 8, 3, 4, 3, 10, classes);
  for (auto* t : {&head.w1, &head.w2, &head.w3, &head.embedding}) {
    const auto vals = rand_vals(rng, static_cast<size_t>(t->size()), -1, 1);
    std::copy(vals.begin(), vals.end(), t->raw_values().begin());
  }
  auto h_top = Tensor64::leaf(tape, {1, 4}, rand_vals(rng, 4));
  auto z1 = Tensor64::leaf(tape, {1, 3}, rand_vals(rng, 3));
  auto z2 = Tensor64::leaf(tape, {1, 3}, rand_vals(rng, 3));
  auto emb1 = embed(head, std::vector<int>{2});
  auto emb2 = embed(head, std::vector<int>{5});
  auto p_base = deep_output(h_top, z1, emb1, head);
  auto p_z = deep_output(h_top, z2, emb1, head);
  auto p_e = deep_output(h_top, z1, emb2, head);
  bool z_moved = false, e_moved = false;
  for (int k = 0; k < classes; ++k) {
    z_moved = z_moved || p_z.values()[static_cast<size_t>(k)] !=
                             p_base.values()[static_cast<size_t>(k)];
    e_moved = e_moved || p_e.values()[static_cast<size_t>(k)] !=
                             p_base.values()[static_cast<size_t>(k)];
  }
  CHECK(z_moved);
  CHECK(e_moved);
}

TEST_CASE("gradients flow through embed and deep_output") {
  Tape64 tape;
  Rng rng(26);
  const int classes = 4;
  auto head = zero_head(tape, 3, 2, 3, 2, 6, classes);
  for (auto* t : {&head.w1, &head.b1, &head.w2, &head.b2, &head.w3, &head.b3,
                  &head.embedding}) {
    const auto vals = rand_vals(rng, static_cast<size_t>(t->size()), -1, 1);
    std::copy(vals.begin(), vals.end(), t->raw_values().begin());
  }
  // promote to leaves that require gradients
  auto mark = [&](Tensor64& t) { t.node()->requires_grad = true; };
  mark(head.embedding);
  mark(head.w1);
  mark(head.w3);
  auto h_top = Tensor64::leaf(tape, {2, 3}, rand_vals(rng, 6));
  auto z = Tensor64::leaf(tape, {2, 2}, rand_vals(rng, 4));
  auto weight = Tensor64::leaf(tape, {2, classes}, rand_vals(rng, 8));
  const std::vector<int> ids{1, 2};
  auto build = [&]() {
    auto emb = embed(head, ids);
    return sum(mul(deep_output(h_top, z, emb, head), weight));
  };
  CHECK(max_grad_err(tape, {&head.embedding, &head.w1, &head.w3}, build) <
        1e-6);
  // the un-looked-up row 0 stays untouched
  CHECK(head.embedding.grad()[0] == 0.0);
  CHECK(head.embedding.grad()[1] == 0.0);
}
