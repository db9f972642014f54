#include <cmath>
#include <vector>

#include "doctest.h"
#include "im2markup/tensor.hpp"
#include "test_util.hpp"

using namespace im2markup;
using testutil::max_grad_err;
using testutil::rand_vals;

TEST_CASE("softmax of equal logits is uniform") {
  Tape64 tape;
  auto x = Tensor64::leaf(tape, {3}, {0.0, 0.0, 0.0});
  auto p = softmax(x);
  for (double v : p.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and stay in (0,1)") {
  Rng rng(7);
  Tape64 tape;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(9));
    auto x = Tensor64::leaf(tape, {4, n}, rand_vals(rng, 4 * n, -8.0, 8.0));
    auto p = softmax(x);
    const auto v = p.values();
    for (int r = 0; r < 4; ++r) {
      double s = 0;
      for (int j = 0; j < n; ++j) {
        CHECK(v[r * n + j] > 0.0);
        CHECK(v[r * n + j] < 1.0);
        s += v[r * n + j];
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("softmax on extreme logits still sums to one") {
  Tape64 tape;
  auto x = Tensor64::leaf(tape, {3}, {-500.0, 0.0, 500.0});
  auto p = softmax(x);
  double s = 0;
  for (double v : p.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    s += v;
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("maxpool halves the paper-sized map") {
  Tape32 tape;
  auto x = Tensor32::zeros(tape, {1, 1, 128, 1088});
  auto y = maxpool2x2(x);
  CHECK(y.shape() == Shape{1, 1, 64, 544});
}

TEST_CASE("conv2d with an identity kernel reproduces the image") {
  Rng rng(11);
  Tape64 tape;
  auto img = Tensor64::leaf(tape, {1, 1, 5, 7}, rand_vals(rng, 35));
  std::vector<double> k(9, 0.0);
  k[4] = 1.0;  // center tap
  auto kernel = Tensor64::leaf(tape, {1, 1, 3, 3}, k);
  auto bias = Tensor64::zeros(tape, {1});
  auto out = conv2d(img, kernel, bias);
  const auto a = img.values();
  const auto b = out.values();
  for (size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]));
}

TEST_CASE("shape mismatch errors name the op and both shapes") {
  Tape64 tape;
  auto a = Tensor64::zeros(tape, {2, 3});
  auto b = Tensor64::zeros(tape, {4, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("(2, 3)") != std::string::npos);
    CHECK(msg.find("(4, 2)") != std::string::npos);
  }
}

TEST_CASE("non-finite results raise a numeric error naming the op") {
  Tape64 tape;
  auto x = Tensor64::leaf(tape, {2}, {0.0, 1.0});
  try {
    auto y = im2markup::log(x);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("log") != std::string::npos);
  }
}

TEST_CASE("backward of sum gives unit gradients") {
  Tape64 tape;
  auto x = Tensor64::leaf(tape, {3}, {0.5, -1.0, 2.0}, true);
  auto loss = sum(x);
  backward(loss);
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("backward of sum(tanh(x)) at zero gives unit gradients") {
  Tape64 tape;
  auto x = Tensor64::leaf(tape, {4}, {0.0, 0.0, 0.0, 0.0}, true);
  auto loss = sum(im2markup::tanh(x));
  backward(loss);
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar root") {
  Tape64 tape;
  auto x = Tensor64::leaf(tape, {3}, {1.0, 2.0, 3.0}, true);
  auto y = im2markup::tanh(x);
  CHECK_THROWS_AS(backward(y), ContractError);
}

TEST_CASE("backward twice without zeroing doubles every gradient") {
  Rng rng(3);
  Tape64 tape;
  auto x = Tensor64::leaf(tape, {2, 3}, rand_vals(rng, 6), true);
  auto w = Tensor64::leaf(tape, {3, 2}, rand_vals(rng, 6), true);
  auto loss = sum(im2markup::tanh(matmul(x, w)));
  backward(loss);
  std::vector<double> gx(x.grad().begin(), x.grad().end());
  std::vector<double> gw(w.grad().begin(), w.grad().end());
  backward(loss);
  for (size_t i = 0; i < gx.size(); ++i) {
    CHECK(x.grad()[i] == doctest::Approx(2.0 * gx[i]).epsilon(1e-15));
  }
  for (size_t i = 0; i < gw.size(); ++i) {
    CHECK(w.grad()[i] == doctest::Approx(2.0 * gw[i]).epsilon(1e-15));
  }
}

TEST_CASE("two-layer MLP gradients match finite differences") {
  Rng rng(17);
  Tape64 tape;
  auto x = Tensor64::leaf(tape, {4, 3}, rand_vals(rng, 12));
  auto w1 = Tensor64::leaf(tape, {3, 5}, rand_vals(rng, 15), true);
  auto b1 = Tensor64::leaf(tape, {5}, rand_vals(rng, 5), true);
  auto w2 = Tensor64::leaf(tape, {5, 2}, rand_vals(rng, 10), true);
  auto b2 = Tensor64::leaf(tape, {2}, rand_vals(rng, 2), true);
  auto build = [&]() {
    auto h = im2markup::tanh(add(matmul(x, w1), b1));
    auto o = sigmoid(add(matmul(h, w2), b2));
    return mean(mul(o, o));
  };
  const double err = max_grad_err(tape, {&w1, &b1, &w2, &b2}, build);
  CHECK(err < 1e-5);
}

TEST_CASE("finite differences validate every catalog op") {
  Rng rng(23);
  Tape64 tape;

  // Weights must be created once per subcase: rebuilding them inside the
  // closure would change the loss between finite-difference evaluations.
  auto make_weight = [&](Shape shape) {
    const size_t n = static_cast<size_t>(numel(shape));
    return Tensor64::leaf(tape, std::move(shape), rand_vals(rng, n));
  };

  SUBCASE("matmul") {
    auto a = Tensor64::leaf(tape, {3, 4}, rand_vals(rng, 12), true);
    auto b = Tensor64::leaf(tape, {4, 2}, rand_vals(rng, 8), true);
    auto w = Tensor64::leaf(tape, {3, 2}, rand_vals(rng, 6));
    auto build = [&]() { return sum(mul(matmul(a, b), w)); };
    CHECK(max_grad_err(tape, {&a, &b}, build) < 1e-6);
  }
  SUBCASE("conv2d") {
    auto x = Tensor64::leaf(tape, {2, 2, 4, 6}, rand_vals(rng, 96), true);
    auto k = Tensor64::leaf(tape, {3, 2, 3, 3}, rand_vals(rng, 54), true);
    auto b = Tensor64::leaf(tape, {3}, rand_vals(rng, 3), true);
    auto w = Tensor64::leaf(tape, {2, 3, 4, 6}, rand_vals(rng, 144));
    auto build = [&]() { return sum(mul(conv2d(x, k, b), w)); };
    CHECK(max_grad_err(tape, {&x, &k, &b}, build) < 1e-6);
  }
  SUBCASE("maxpool2x2") {
    auto x = Tensor64::leaf(tape, {1, 2, 4, 6}, rand_vals(rng, 48), true);
    auto w = Tensor64::leaf(tape, {1, 2, 2, 3}, rand_vals(rng, 12));
    auto build = [&]() { return sum(mul(maxpool2x2(x), w)); };
    CHECK(max_grad_err(tape, {&x}, build) < 1e-6);
  }
  SUBCASE("add sub mul with broadcasting") {
    auto a = Tensor64::leaf(tape, {3, 4}, rand_vals(rng, 12), true);
    auto b = Tensor64::leaf(tape, {4}, rand_vals(rng, 4), true);
    auto s = Tensor64::leaf(tape, {}, rand_vals(rng, 1), true);
    auto w = make_weight({3, 4});
    auto build = [&]() {
      return sum(mul(mul(sub(add(a, b), s), b), w));
    };
    CHECK(max_grad_err(tape, {&a, &b, &s}, build) < 1e-6);
  }
  SUBCASE("tanh sigmoid log clamp") {
    auto x = Tensor64::leaf(tape, {2, 5}, rand_vals(rng, 10, 0.2, 2.0), true);
    auto w = make_weight({2, 5});
    auto build = [&]() {
      auto y = im2markup::log(clamp_min(x, 0.5));
      return sum(mul(add(im2markup::tanh(y), sigmoid(y)), w));
    };
    CHECK(max_grad_err(tape, {&x}, build) < 1e-6);
  }
  SUBCASE("softmax") {
    auto x = Tensor64::leaf(tape, {3, 5}, rand_vals(rng, 15), true);
    auto w = make_weight({3, 5});
    auto build = [&]() { return sum(mul(softmax(x), w)); };
    CHECK(max_grad_err(tape, {&x}, build) < 1e-6);
  }
  SUBCASE("concat") {
    auto a = Tensor64::leaf(tape, {2, 3}, rand_vals(rng, 6), true);
    auto b = Tensor64::leaf(tape, {2, 2}, rand_vals(rng, 4), true);
    auto w = make_weight({2, 5});
    auto build = [&]() {
      return sum(mul(im2markup::tanh(concat<double>({a, b}, 1)), w));
    };
    CHECK(max_grad_err(tape, {&a, &b}, build) < 1e-6);
  }
  SUBCASE("reshape") {
    auto a = Tensor64::leaf(tape, {2, 6}, rand_vals(rng, 12), true);
    auto w = make_weight({3, 4});
    auto build = [&]() {
      return sum(mul(im2markup::tanh(reshape(a, {3, 4})), w));
    };
    CHECK(max_grad_err(tape, {&a}, build) < 1e-6);
  }
  SUBCASE("embedding lookup routes gradient to looked-up rows only") {
    auto e = Tensor64::leaf(tape, {3, 4}, rand_vals(rng, 12), true);
    const std::vector<int> ids{2, 0, 2};
    auto w = make_weight({3, 4});
    auto build = [&]() { return sum(mul(embedding_lookup(e, ids), w)); };
    CHECK(max_grad_err(tape, {&e}, build) < 1e-6);
    // row 1 is never looked up
    for (int j = 0; j < 4; ++j) CHECK(e.grad()[4 + j] == 0.0);
  }
  SUBCASE("pick") {
    auto p = Tensor64::leaf(tape, {3, 4}, rand_vals(rng, 12), true);
    const std::vector<int> ids{1, 3, 0};
    auto w = make_weight({3});
    auto build = [&]() { return sum(mul(pick(p, ids), w)); };
    CHECK(max_grad_err(tape, {&p}, build) < 1e-6);
  }
  SUBCASE("scale_rows") {
    auto x = Tensor64::leaf(tape, {3, 4}, rand_vals(rng, 12), true);
    auto s = Tensor64::leaf(tape, {3}, rand_vals(rng, 3), true);
    auto w = make_weight({3, 4});
    auto build = [&]() { return sum(mul(scale_rows(x, s), w)); };
    CHECK(max_grad_err(tape, {&x, &s}, build) < 1e-6);
  }
  SUBCASE("vecmat") {
    auto w = Tensor64::leaf(tape, {2, 3}, rand_vals(rng, 6), true);
    auto a = Tensor64::leaf(tape, {2, 3, 4}, rand_vals(rng, 24), true);
    auto mask = make_weight({2, 4});
    auto build = [&]() { return sum(mul(vecmat(w, a), mask)); };
    CHECK(max_grad_err(tape, {&w, &a}, build) < 1e-6);
  }
  SUBCASE("gather_linear") {
    auto x = Tensor64::leaf(tape, {6}, rand_vals(rng, 6), true);
    auto map = std::make_shared<std::vector<int64_t>>(
        std::vector<int64_t>{5, 0, 0, 3});
    auto w = make_weight({4});
    auto build = [&]() {
      return sum(mul(gather_linear(x, map, {4}), w));
    };
    CHECK(max_grad_err(tape, {&x}, build) < 1e-6);
  }
  SUBCASE("reductions") {
    auto x = Tensor64::leaf(tape, {3, 4}, rand_vals(rng, 12), true);
    auto build = [&]() {
      auto partial = sum_last(im2markup::tanh(x));
      return add(add(sum(x), mean(mul(x, x))), sum(partial));
    };
    CHECK(max_grad_err(tape, {&x}, build) < 1e-6);
  }
}

TEST_CASE("no records are emitted while recording is disabled") {
  Tape64 tape;
  auto x = Tensor64::leaf(tape, {2}, {1.0, 2.0}, true);
  {
    Tape64::NoGrad guard(tape);
    auto y = im2markup::tanh(x);
    CHECK(tape.size() == 0);
  }
  auto y = im2markup::tanh(x);
  CHECK(tape.size() == 1);
}

TEST_CASE("ops on constants leave the tape empty") {
  Tape64 tape;
  auto x = Tensor64::leaf(tape, {2}, {1.0, 2.0}, false);
  auto y = im2markup::tanh(x);
  CHECK(tape.size() == 0);
}

TEST_CASE("broadcast against manual expansion") {
  Tape64 tape;
  auto a = Tensor64::leaf(tape, {2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor64::leaf(tape, {3}, {10, 20, 30});
  auto c = add(a, b);
  const std::vector<double> expect{11, 22, 33, 14, 25, 36};
  for (size_t i = 0; i < expect.size(); ++i) {
    CHECK(c.values()[i] == doctest::Approx(expect[i]));
  }
  auto d = mul(b, a);  // small side on the left
  const std::vector<double> expect2{10, 40, 90, 40, 100, 180};
  for (size_t i = 0; i < expect2.size(); ++i) {
    CHECK(d.values()[i] == doctest::Approx(expect2[i]));
  }
}

TEST_CASE("argmax_last picks the first maximum on ties") {
  Tape64 tape;
  auto x = Tensor64::leaf(tape, {2, 3}, {1, 3, 3, 0, -1, -1});
  const auto idx = argmax_last(x);
  CHECK(idx == std::vector<int>{1, 0});
}
