#include "im2markup/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace im2markup {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

namespace {

template <class S>
void check_finite(const std::vector<S>& values, const char* op) {
  for (const S v : values) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
}

template <class S>
std::vector<S>& adj_of(NodeT<S>* n) {
  if (n->adj.empty()) n->adj.assign(n->value.size(), S{0});
  return n->adj;
}

template <class S>
bool wants_adj(const NodeT<S>* n) {
  return n->requires_grad || n->on_path;
}

template <class S>
std::shared_ptr<NodeT<S>> new_node(TapeT<S>* tape, Shape shape) {
  auto n = std::make_shared<NodeT<S>>();
  n->shape = std::move(shape);
  n->tape = tape;
  return n;
}

// Wires up a finished op: finiteness check, path propagation, tape record.
template <class S>
TensorT<S> finish_op(const char* name,
                     std::vector<std::shared_ptr<NodeT<S>>> inputs,
                     std::shared_ptr<NodeT<S>> out,
                     std::function<void()> backward_fn) {
  check_finite(out->value, name);
  TapeT<S>* tape = out->tape;
  for (const auto& in : inputs) {
    if (in->tape != tape) {
      throw ContractError(std::string(name) +
                          ": operands belong to different tapes");
    }
  }
  bool on_path = false;
  for (const auto& in : inputs) on_path = on_path || wants_adj(in.get());
  if (on_path && tape->recording()) {
    out->on_path = true;
    out->tape_pos = static_cast<int>(tape->size());
    tape->emit({name, std::move(inputs), out, std::move(backward_fn)});
  }
  return TensorT<S>(std::move(out));
}

template <class S>
void check_2d(const TensorT<S>& t, const char* op) {
  if (t.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected 2-d operand, got " +
                     shape_str(t.shape()));
  }
}

enum class Broadcast { kSame, kRightSmall, kLeftSmall };

// Equal shapes, scalar operand, or the smaller shape a trailing suffix of the
// larger (e.g. bias [n] against activations [B,n]).
template <class S>
Broadcast resolve_broadcast(const TensorT<S>& a, const TensorT<S>& b,
                            const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.size() == 1) return Broadcast::kRightSmall;
  if (a.size() == 1) return Broadcast::kLeftSmall;
  auto is_suffix = [](const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
  };
  if (is_suffix(b.shape(), a.shape())) return Broadcast::kRightSmall;
  if (is_suffix(a.shape(), b.shape())) return Broadcast::kLeftSmall;
  throw ShapeError(std::string(op) + ": shapes do not conform " +
                   shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

// ---- TensorT ----

template <class S>
TensorT<S> TensorT<S>::leaf(TapeT<S>& tape, Shape shape, std::vector<S> values,
                            bool requires_grad) {
  if (numel(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeError("leaf: value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto n = new_node<S>(&tape, std::move(shape));
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return TensorT<S>(std::move(n));
}

template <class S>
TensorT<S> TensorT<S>::zeros(TapeT<S>& tape, Shape shape, bool requires_grad) {
  std::vector<S> v(static_cast<size_t>(numel(shape)), S{0});
  return leaf(tape, std::move(shape), std::move(v), requires_grad);
}

template <class S>
TensorT<S> TensorT<S>::full(TapeT<S>& tape, Shape shape, S v) {
  std::vector<S> vals(static_cast<size_t>(numel(shape)), v);
  return leaf(tape, std::move(shape), std::move(vals), false);
}

template <class S>
TensorT<S> TensorT<S>::scalar(TapeT<S>& tape, S v) {
  return leaf(tape, Shape{}, std::vector<S>{v}, false);
}

template <class S>
std::span<const S> TensorT<S>::grad() const {
  return node_->grad;
}

template <class S>
void TensorT<S>::zero_grad() {
  if (!node_->grad.empty()) {
    std::fill(node_->grad.begin(), node_->grad.end(), S{0});
  }
}

template <class S>
S TensorT<S>::scalar_value() const {
  if (node_->value.size() != 1) {
    throw ContractError("scalar_value: tensor has shape " +
                        shape_str(node_->shape));
  }
  return node_->value[0];
}

// ---- TapeT ----

template <class S>
void TapeT<S>::emit(Record rec) {
  records_.push_back(std::move(rec));
}

// ---- backward ----

template <class S>
void backward(const TensorT<S>& root) {
  if (!root.defined()) throw ContractError("backward: undefined tensor");
  NodeT<S>* rn = root.node();
  if (rn->value.size() != 1) {
    throw ContractError("backward: root must be scalar, got shape " +
                        shape_str(rn->shape));
  }
  TapeT<S>* tape = rn->tape;
  rn->adj.assign(1, S{1});
  if (rn->tape_pos >= 0) {
    for (int i = rn->tape_pos; i >= 0; --i) {
      const auto& rec = tape->record(static_cast<size_t>(i));
      if (!rec.out->adj.empty()) rec.backward();
    }
  }
  // Fold scratch adjoints into persistent grads, then drop the scratch.
  auto fold = [](NodeT<S>* n) {
    if (n->adj.empty()) return;
    if (n->requires_grad) {
      if (n->grad.empty()) n->grad.assign(n->value.size(), S{0});
      for (size_t k = 0; k < n->adj.size(); ++k) n->grad[k] += n->adj[k];
    }
    n->adj.clear();
  };
  if (rn->tape_pos >= 0) {
    for (int i = rn->tape_pos; i >= 0; --i) {
      const auto& rec = tape->record(static_cast<size_t>(i));
      fold(rec.out.get());
      for (const auto& in : rec.inputs) fold(in.get());
    }
  }
  fold(rn);
}

// ---- ops ----

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = new_node<S>(&a.tape(), Shape{m, n});
  out->value.assign(static_cast<size_t>(m) * n, S{0});
  const S* av = a.values().data();
  const S* bv = b.values().data();
  S* ov = out->value.data();
  for (int i = 0; i < m; ++i) {
    const S* arow = av + static_cast<size_t>(i) * k;
    S* orow = ov + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const S aik = arow[p];
      const S* brow = bv + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  auto on = out;
  return finish_op<S>(
      "matmul", {an, bn}, out, [an, bn, on, m, k, n]() {
        const S* dout = on->adj.data();
        if (wants_adj(an.get())) {
          S* da = adj_of(an.get()).data();
          const S* bv2 = bn->value.data();
          for (int i = 0; i < m; ++i) {
            for (int p = 0; p < k; ++p) {
              S acc{0};
              const S* drow = dout + static_cast<size_t>(i) * n;
              const S* brow = bv2 + static_cast<size_t>(p) * n;
              for (int j = 0; j < n; ++j) acc += drow[j] * brow[j];
              da[static_cast<size_t>(i) * k + p] += acc;
            }
          }
        }
        if (wants_adj(bn.get())) {
          S* db = adj_of(bn.get()).data();
          const S* av2 = an->value.data();
          for (int p = 0; p < k; ++p) {
            S* dbrow = db + static_cast<size_t>(p) * n;
            for (int i = 0; i < m; ++i) {
              const S aik = av2[static_cast<size_t>(i) * k + p];
              const S* drow = dout + static_cast<size_t>(i) * n;
              for (int j = 0; j < n; ++j) dbrow[j] += aik * drow[j];
            }
          }
        }
      });
}

template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& kernel,
                  const TensorT<S>& bias) {
  if (x.ndim() != 4 || kernel.ndim() != 4 || bias.ndim() != 1) {
    throw ShapeError("conv2d: expected x [B,C,H,W], kernel [F,C,3,3], bias "
                     "[F]; got " +
                     shape_str(x.shape()) + ", " + shape_str(kernel.shape()) +
                     ", " + shape_str(bias.shape()));
  }
  const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = kernel.dim(0);
  if (kernel.dim(1) != cin || kernel.dim(2) != 3 || kernel.dim(3) != 3 ||
      bias.dim(0) != cout) {
    throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) +
                     " does not match input " + shape_str(x.shape()));
  }
  auto out = new_node<S>(&x.tape(), Shape{batch, cout, h, w});
  out->value.assign(static_cast<size_t>(batch) * cout * h * w, S{0});
  const S* xv = x.values().data();
  const S* kv = kernel.values().data();
  const S* bv = bias.values().data();
  S* ov = out->value.data();
  const auto xat = [&](int b, int c, int y, int xx) {
    return xv[((static_cast<size_t>(b) * cin + c) * h + y) * w + xx];
  };
  for (int b = 0; b < batch; ++b) {
    for (int f = 0; f < cout; ++f) {
      S* oplane = ov + (static_cast<size_t>(b) * cout + f) * h * w;
      for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
          S acc = bv[f];
          for (int c = 0; c < cin; ++c) {
            const S* kk = kv + (static_cast<size_t>(f) * cin + c) * 9;
            for (int ky = 0; ky < 3; ++ky) {
              const int iy = y + ky - 1;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < 3; ++kx) {
                const int ix = xx + kx - 1;
                if (ix < 0 || ix >= w) continue;
                acc += xat(b, c, iy, ix) * kk[ky * 3 + kx];
              }
            }
          }
          oplane[static_cast<size_t>(y) * w + xx] = acc;
        }
      }
    }
  }
  auto xn = x.node_ptr();
  auto kn = kernel.node_ptr();
  auto bn = bias.node_ptr();
  auto on = out;
  return finish_op<S>(
      "conv2d", {xn, kn, bn}, out, [xn, kn, bn, on, batch, cin, cout, h, w]() {
        const S* dout = on->adj.data();
        const S* xv2 = xn->value.data();
        const S* kv2 = kn->value.data();
        const auto dat = [&](int b, int f, int y, int xx) {
          return dout[((static_cast<size_t>(b) * cout + f) * h + y) * w + xx];
        };
        if (wants_adj(bn.get())) {
          S* db = adj_of(bn.get()).data();
          for (int f = 0; f < cout; ++f) {
            S acc{0};
            for (int b = 0; b < batch; ++b) {
              const S* dplane =
                  dout + (static_cast<size_t>(b) * cout + f) * h * w;
              for (int i = 0; i < h * w; ++i) acc += dplane[i];
            }
            db[f] += acc;
          }
        }
        if (wants_adj(kn.get())) {
          S* dk = adj_of(kn.get()).data();
          for (int f = 0; f < cout; ++f) {
            for (int c = 0; c < cin; ++c) {
              for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                  S acc{0};
                  for (int b = 0; b < batch; ++b) {
                    const S* xplane =
                        xv2 + (static_cast<size_t>(b) * cin + c) * h * w;
                    const int y0 = std::max(0, 1 - ky);
                    const int y1 = std::min(h, h + 1 - ky);
                    const int x0 = std::max(0, 1 - kx);
                    const int x1 = std::min(w, w + 1 - kx);
                    for (int y = y0; y < y1; ++y) {
                      const int iy = y + ky - 1;
                      const S* xrow = xplane + static_cast<size_t>(iy) * w;
                      for (int xx = x0; xx < x1; ++xx) {
                        acc += xrow[xx + kx - 1] * dat(b, f, y, xx);
                      }
                    }
                  }
                  dk[((static_cast<size_t>(f) * cin + c) * 3 + ky) * 3 + kx] +=
                      acc;
                }
              }
            }
          }
        }
        if (wants_adj(xn.get())) {
          S* dx = adj_of(xn.get()).data();
          for (int b = 0; b < batch; ++b) {
            for (int c = 0; c < cin; ++c) {
              S* dxplane = dx + (static_cast<size_t>(b) * cin + c) * h * w;
              for (int iy = 0; iy < h; ++iy) {
                for (int ix = 0; ix < w; ++ix) {
                  S acc{0};
                  for (int f = 0; f < cout; ++f) {
                    const S* kk = kv2 + (static_cast<size_t>(f) * cin + c) * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                      const int y = iy - ky + 1;
                      if (y < 0 || y >= h) continue;
                      for (int kx = 0; kx < 3; ++kx) {
                        const int xx = ix - kx + 1;
                        if (xx < 0 || xx >= w) continue;
                        acc += kk[ky * 3 + kx] * dat(b, f, y, xx);
                      }
                    }
                  }
                  dxplane[static_cast<size_t>(iy) * w + ix] += acc;
                }
              }
            }
          }
        }
      });
}

template <class S>
TensorT<S> maxpool2x2(const TensorT<S>& x) {
  if (x.ndim() != 4) {
    throw ShapeError("maxpool2x2: expected [B,C,H,W], got " +
                     shape_str(x.shape()));
  }
  const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2x2: spatial dims must be even, got " +
                     shape_str(x.shape()));
  }
  const int oh = h / 2, ow = w / 2;
  auto out = new_node<S>(&x.tape(), Shape{batch, c, oh, ow});
  out->value.resize(static_cast<size_t>(batch) * c * oh * ow);
  auto argmax = std::make_shared<std::vector<int64_t>>(out->value.size());
  const S* xv = x.values().data();
  S* ov = out->value.data();
  size_t oi = 0;
  for (int b = 0; b < batch; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const S* plane = xv + (static_cast<size_t>(b) * c + ch) * h * w;
      const size_t plane_off = (static_cast<size_t>(b) * c + ch) * h * w;
      for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
          S best{};
          int64_t best_idx = -1;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const size_t idx =
                  static_cast<size_t>(2 * y + dy) * w + (2 * xx + dx);
              const S v = plane[idx];
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = static_cast<int64_t>(plane_off + idx);
              }
            }
          }
          ov[oi] = best;
          (*argmax)[oi] = best_idx;
          ++oi;
        }
      }
    }
  }
  auto xn = x.node_ptr();
  auto on = out;
  return finish_op<S>("maxpool2x2", {xn}, out, [xn, on, argmax]() {
    if (!wants_adj(xn.get())) return;
    S* dx = adj_of(xn.get()).data();
    const S* dout = on->adj.data();
    for (size_t i = 0; i < argmax->size(); ++i) {
      dx[(*argmax)[i]] += dout[i];
    }
  });
}

namespace {

template <class S, class Fwd>
TensorT<S> binary_broadcast_op(const char* name, const TensorT<S>& a,
                               const TensorT<S>& b, Fwd fwd, int mode) {
  // mode: 0 = add, 1 = sub, 2 = mul
  const Broadcast bc = resolve_broadcast(a, b, name);
  const bool b_small = (bc == Broadcast::kRightSmall);
  const TensorT<S>& big = (bc == Broadcast::kLeftSmall) ? b : a;
  const TensorT<S>& small = (bc == Broadcast::kLeftSmall) ? a : b;
  const size_t nb = static_cast<size_t>(small.size());
  const size_t total = static_cast<size_t>(big.size());

  auto out = new_node<S>(&a.tape(), big.shape());
  out->value.resize(total);
  const S* av = a.values().data();
  const S* bv = b.values().data();
  S* ov = out->value.data();
  if (bc == Broadcast::kSame) {
    for (size_t i = 0; i < total; ++i) ov[i] = fwd(av[i], bv[i]);
  } else if (b_small) {
    for (size_t i = 0; i < total; ++i) ov[i] = fwd(av[i], bv[i % nb]);
  } else {
    for (size_t i = 0; i < total; ++i) ov[i] = fwd(av[i % nb], bv[i]);
  }

  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  auto on = out;
  return finish_op<S>(
      name, {an, bn}, out, [an, bn, on, bc, b_small, nb, total, mode]() {
        const S* dout = on->adj.data();
        NodeT<S>* bign = b_small || bc == Broadcast::kSame ? an.get()
                                                           : bn.get();
        NodeT<S>* smalln = (bign == an.get()) ? bn.get() : an.get();
        const bool small_is_b = (smalln == bn.get());
        // gradient of the big-side operand, elementwise
        if (wants_adj(bign)) {
          S* dbig = adj_of(bign).data();
          const S* other = smalln->value.data();
          for (size_t i = 0; i < total; ++i) {
            const S o = (bc == Broadcast::kSame) ? other[i] : other[i % nb];
            S g = dout[i];
            if (mode == 1 && !small_is_b) g = -g;  // big operand is b in a-b
            if (mode == 2) g = dout[i] * o;
            dbig[i] += g;
          }
        }
        // gradient of the small-side operand, reduced over leading dims
        if (wants_adj(smalln)) {
          S* dsmall = adj_of(smalln).data();
          const S* other = bign->value.data();
          const size_t reps = total / nb;
          for (size_t i = 0; i < nb; ++i) {
            S acc{0};
            for (size_t r = 0; r < reps; ++r) {
              const size_t j = r * nb + i;
              S g = dout[j];
              if (mode == 1 && small_is_b) g = -g;
              if (mode == 2) g = dout[j] * other[j];
              acc += g;
            }
            dsmall[i] += acc;
          }
        }
      });
}

}  // namespace

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  return binary_broadcast_op<S>(
      "add", a, b, [](S x, S y) { return x + y; }, 0);
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  return binary_broadcast_op<S>(
      "sub", a, b, [](S x, S y) { return x - y; }, 1);
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  return binary_broadcast_op<S>(
      "mul", a, b, [](S x, S y) { return x * y; }, 2);
}

namespace {

template <class S, class Fwd, class Bwd>
TensorT<S> unary_op(const char* name, const TensorT<S>& x, Fwd fwd, Bwd bwd) {
  auto out = new_node<S>(&x.tape(), x.shape());
  out->value.resize(x.values().size());
  const S* xv = x.values().data();
  S* ov = out->value.data();
  for (size_t i = 0; i < out->value.size(); ++i) ov[i] = fwd(xv[i]);
  auto xn = x.node_ptr();
  auto on = out;
  return finish_op<S>(name, {xn}, out, [xn, on, bwd]() {
    if (!wants_adj(xn.get())) return;
    S* dx = adj_of(xn.get()).data();
    const S* dout = on->adj.data();
    const S* xv2 = xn->value.data();
    const S* yv = on->value.data();
    for (size_t i = 0; i < on->value.size(); ++i) {
      dx[i] += bwd(xv2[i], yv[i]) * dout[i];
    }
  });
}

}  // namespace

template <class S>
TensorT<S> tanh(const TensorT<S>& x) {
  return unary_op<S>(
      "tanh", x, [](S v) { return std::tanh(v); },
      [](S, S y) { return S{1} - y * y; });
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& x) {
  return unary_op<S>(
      "sigmoid", x,
      [](S v) { return S{1} / (S{1} + std::exp(-v)); },
      [](S, S y) { return y * (S{1} - y); });
}

template <class S>
TensorT<S> log(const TensorT<S>& x) {
  return unary_op<S>(
      "log", x, [](S v) { return std::log(v); },
      [](S v, S) { return S{1} / v; });
}

template <class S>
TensorT<S> clamp_min(const TensorT<S>& x, S floor) {
  return unary_op<S>(
      "clamp_min", x, [floor](S v) { return v < floor ? floor : v; },
      [floor](S v, S) { return v < floor ? S{0} : S{1}; });
}

template <class S>
TensorT<S> softmax(const TensorT<S>& x) {
  if (x.ndim() < 1) {
    throw ShapeError("softmax: needs at least one axis, got " +
                     shape_str(x.shape()));
  }
  const int n = x.shape().back();
  const size_t rows = static_cast<size_t>(x.size()) / n;
  auto out = new_node<S>(&x.tape(), x.shape());
  out->value.resize(x.values().size());
  const S* xv = x.values().data();
  S* ov = out->value.data();
  for (size_t r = 0; r < rows; ++r) {
    const S* row = xv + r * n;
    S* orow = ov + r * n;
    S mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    S sum{0};
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= sum;
  }
  auto xn = x.node_ptr();
  auto on = out;
  return finish_op<S>("softmax", {xn}, out, [xn, on, n, rows]() {
    if (!wants_adj(xn.get())) return;
    S* dx = adj_of(xn.get()).data();
    const S* dout = on->adj.data();
    const S* yv = on->value.data();
    for (size_t r = 0; r < rows; ++r) {
      const S* yrow = yv + r * n;
      const S* drow = dout + r * n;
      S dot{0};
      for (int j = 0; j < n; ++j) dot += drow[j] * yrow[j];
      S* dxrow = dx + r * n;
      for (int j = 0; j < n; ++j) dxrow[j] += yrow[j] * (drow[j] - dot);
    }
  });
}

template <class S>
TensorT<S> concat(const std::vector<TensorT<S>>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no operands");
  const int nd = parts[0].ndim();
  if (axis < 0 || axis >= nd) {
    throw ShapeError("concat: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(parts[0].shape()));
  }
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<size_t>(axis)] = 0;
  for (const auto& p : parts) {
    if (p.ndim() != nd) {
      throw ShapeError("concat: rank mismatch " + shape_str(p.shape()) +
                       " vs " + shape_str(parts[0].shape()));
    }
    for (int d = 0; d < nd; ++d) {
      if (d != axis && p.dim(d) != parts[0].dim(d)) {
        throw ShapeError("concat: shapes differ off-axis " +
                         shape_str(p.shape()) + " vs " +
                         shape_str(parts[0].shape()));
      }
    }
    out_shape[static_cast<size_t>(axis)] += p.dim(axis);
  }
  size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<size_t>(out_shape[d]);
  for (int d = axis + 1; d < nd; ++d) inner *= static_cast<size_t>(out_shape[d]);

  auto out = new_node<S>(&parts[0].tape(), out_shape);
  out->value.resize(static_cast<size_t>(numel(out_shape)));
  S* ov = out->value.data();
  std::vector<size_t> chunk(parts.size());
  size_t total_chunk = 0;
  for (size_t p = 0; p < parts.size(); ++p) {
    chunk[p] = static_cast<size_t>(parts[p].dim(axis)) * inner;
    total_chunk += chunk[p];
  }
  for (size_t o = 0; o < outer; ++o) {
    size_t off = o * total_chunk;
    for (size_t p = 0; p < parts.size(); ++p) {
      const S* src = parts[p].values().data() + o * chunk[p];
      std::memcpy(ov + off, src, chunk[p] * sizeof(S));
      off += chunk[p];
    }
  }
  std::vector<std::shared_ptr<NodeT<S>>> inputs;
  inputs.reserve(parts.size());
  for (const auto& p : parts) inputs.push_back(p.node_ptr());
  auto on = out;
  auto ins = inputs;
  return finish_op<S>(
      "concat", std::move(inputs), out, [ins, on, chunk, total_chunk, outer]() {
        const S* dout = on->adj.data();
        for (size_t o = 0; o < outer; ++o) {
          size_t off = o * total_chunk;
          for (size_t p = 0; p < ins.size(); ++p) {
            if (wants_adj(ins[p].get())) {
              S* dst = adj_of(ins[p].get()).data() + o * chunk[p];
              const S* src = dout + off;
              for (size_t i = 0; i < chunk[p]; ++i) dst[i] += src[i];
            }
            off += chunk[p];
          }
        }
      });
}

template <class S>
TensorT<S> reshape(const TensorT<S>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  auto out = new_node<S>(&x.tape(), std::move(shape));
  out->value.assign(x.values().begin(), x.values().end());
  auto xn = x.node_ptr();
  auto on = out;
  return finish_op<S>("reshape", {xn}, out, [xn, on]() {
    if (!wants_adj(xn.get())) return;
    S* dx = adj_of(xn.get()).data();
    const S* dout = on->adj.data();
    for (size_t i = 0; i < on->value.size(); ++i) dx[i] += dout[i];
  });
}

template <class S>
TensorT<S> embedding_lookup(const TensorT<S>& table, std::span<const int> ids) {
  check_2d(table, "embedding_lookup");
  const int v = table.dim(0), m = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw ContractError("embedding_lookup: id " + std::to_string(id) +
                          " out of range [0, " + std::to_string(v) + ")");
    }
  }
  const int batch = static_cast<int>(ids.size());
  auto out = new_node<S>(&table.tape(), Shape{batch, m});
  out->value.resize(static_cast<size_t>(batch) * m);
  const S* tv = table.values().data();
  for (int b = 0; b < batch; ++b) {
    std::memcpy(out->value.data() + static_cast<size_t>(b) * m,
                tv + static_cast<size_t>(ids[b]) * m,
                static_cast<size_t>(m) * sizeof(S));
  }
  auto tn = table.node_ptr();
  auto on = out;
  std::vector<int> ids_copy(ids.begin(), ids.end());
  return finish_op<S>(
      "embedding_lookup", {tn}, out, [tn, on, ids_copy, m]() {
        if (!wants_adj(tn.get())) return;
        S* dt = adj_of(tn.get()).data();
        const S* dout = on->adj.data();
        for (size_t b = 0; b < ids_copy.size(); ++b) {
          S* row = dt + static_cast<size_t>(ids_copy[b]) * m;
          const S* src = dout + b * m;
          for (int j = 0; j < m; ++j) row[j] += src[j];
        }
      });
}

template <class S>
TensorT<S> pick(const TensorT<S>& p, std::span<const int> ids) {
  check_2d(p, "pick");
  const int batch = p.dim(0), k = p.dim(1);
  if (static_cast<int>(ids.size()) != batch) {
    throw ShapeError("pick: ids count " + std::to_string(ids.size()) +
                     " does not match rows of " + shape_str(p.shape()));
  }
  for (int id : ids) {
    if (id < 0 || id >= k) {
      throw ContractError("pick: column " + std::to_string(id) +
                          " out of range [0, " + std::to_string(k) + ")");
    }
  }
  auto out = new_node<S>(&p.tape(), Shape{batch});
  out->value.resize(static_cast<size_t>(batch));
  const S* pv = p.values().data();
  for (int b = 0; b < batch; ++b) {
    out->value[static_cast<size_t>(b)] =
        pv[static_cast<size_t>(b) * k + ids[b]];
  }
  auto pn = p.node_ptr();
  auto on = out;
  std::vector<int> ids_copy(ids.begin(), ids.end());
  return finish_op<S>("pick", {pn}, out, [pn, on, ids_copy, k]() {
    if (!wants_adj(pn.get())) return;
    S* dp = adj_of(pn.get()).data();
    const S* dout = on->adj.data();
    for (size_t b = 0; b < ids_copy.size(); ++b) {
      dp[b * k + ids_copy[b]] += dout[b];
    }
  });
}

template <class S>
TensorT<S> scale_rows(const TensorT<S>& x, const TensorT<S>& s) {
  if (x.ndim() < 1 || s.ndim() != 1 || s.dim(0) != x.dim(0)) {
    throw ShapeError("scale_rows: scale " + shape_str(s.shape()) +
                     " does not match rows of " + shape_str(x.shape()));
  }
  const size_t batch = static_cast<size_t>(x.dim(0));
  const size_t inner = static_cast<size_t>(x.size()) / batch;
  auto out = new_node<S>(&x.tape(), x.shape());
  out->value.resize(x.values().size());
  const S* xv = x.values().data();
  const S* sv = s.values().data();
  S* ov = out->value.data();
  for (size_t b = 0; b < batch; ++b) {
    for (size_t i = 0; i < inner; ++i) ov[b * inner + i] = xv[b * inner + i] * sv[b];
  }
  auto xn = x.node_ptr();
  auto sn = s.node_ptr();
  auto on = out;
  return finish_op<S>(
      "scale_rows", {xn, sn}, out, [xn, sn, on, batch, inner]() {
        const S* dout = on->adj.data();
        if (wants_adj(xn.get())) {
          S* dx = adj_of(xn.get()).data();
          const S* sv2 = sn->value.data();
          for (size_t b = 0; b < batch; ++b) {
            for (size_t i = 0; i < inner; ++i) {
              dx[b * inner + i] += dout[b * inner + i] * sv2[b];
            }
          }
        }
        if (wants_adj(sn.get())) {
          S* ds = adj_of(sn.get()).data();
          const S* xv2 = xn->value.data();
          for (size_t b = 0; b < batch; ++b) {
            S acc{0};
            for (size_t i = 0; i < inner; ++i) {
              acc += dout[b * inner + i] * xv2[b * inner + i];
            }
            ds[b] += acc;
          }
        }
      });
}

template <class S>
TensorT<S> vecmat(const TensorT<S>& w, const TensorT<S>& a) {
  if (w.ndim() != 2 || a.ndim() != 3 || w.dim(0) != a.dim(0) ||
      w.dim(1) != a.dim(1)) {
    throw ShapeError("vecmat: weights " + shape_str(w.shape()) +
                     " do not match features " + shape_str(a.shape()));
  }
  const int batch = w.dim(0), l = w.dim(1), d = a.dim(2);
  auto out = new_node<S>(&w.tape(), Shape{batch, d});
  out->value.assign(static_cast<size_t>(batch) * d, S{0});
  const S* wv = w.values().data();
  const S* av = a.values().data();
  S* ov = out->value.data();
  for (int b = 0; b < batch; ++b) {
    S* orow = ov + static_cast<size_t>(b) * d;
    for (int i = 0; i < l; ++i) {
      const S wl = wv[static_cast<size_t>(b) * l + i];
      const S* arow = av + (static_cast<size_t>(b) * l + i) * d;
      for (int j = 0; j < d; ++j) orow[j] += wl * arow[j];
    }
  }
  auto wn = w.node_ptr();
  auto an = a.node_ptr();
  auto on = out;
  return finish_op<S>("vecmat", {wn, an}, out, [wn, an, on, batch, l, d]() {
    const S* dout = on->adj.data();
    if (wants_adj(wn.get())) {
      S* dw = adj_of(wn.get()).data();
      const S* av2 = an->value.data();
      for (int b = 0; b < batch; ++b) {
        const S* drow = dout + static_cast<size_t>(b) * d;
        for (int i = 0; i < l; ++i) {
          const S* arow = av2 + (static_cast<size_t>(b) * l + i) * d;
          S acc{0};
          for (int j = 0; j < d; ++j) acc += drow[j] * arow[j];
          dw[static_cast<size_t>(b) * l + i] += acc;
        }
      }
    }
    if (wants_adj(an.get())) {
      S* da = adj_of(an.get()).data();
      const S* wv2 = wn->value.data();
      for (int b = 0; b < batch; ++b) {
        const S* drow = dout + static_cast<size_t>(b) * d;
        for (int i = 0; i < l; ++i) {
          const S wl = wv2[static_cast<size_t>(b) * l + i];
          S* darow = da + (static_cast<size_t>(b) * l + i) * d;
          for (int j = 0; j < d; ++j) darow[j] += wl * drow[j];
        }
      }
    }
  });
}

template <class S>
TensorT<S> gather_linear(const TensorT<S>& x,
                         std::shared_ptr<const std::vector<int64_t>> map,
                         Shape out_shape) {
  if (static_cast<int64_t>(map->size()) != numel(out_shape)) {
    throw ShapeError("gather_linear: map size " + std::to_string(map->size()) +
                     " does not match output shape " + shape_str(out_shape));
  }
  for (int64_t idx : *map) {
    if (idx < 0 || idx >= x.size()) {
      throw ContractError("gather_linear: index " + std::to_string(idx) +
                          " out of range for " + shape_str(x.shape()));
    }
  }
  auto out = new_node<S>(&x.tape(), std::move(out_shape));
  out->value.resize(map->size());
  const S* xv = x.values().data();
  for (size_t i = 0; i < map->size(); ++i) out->value[i] = xv[(*map)[i]];
  auto xn = x.node_ptr();
  auto on = out;
  return finish_op<S>("gather_linear", {xn}, out, [xn, on, map]() {
    if (!wants_adj(xn.get())) return;
    S* dx = adj_of(xn.get()).data();
    const S* dout = on->adj.data();
    for (size_t i = 0; i < map->size(); ++i) dx[(*map)[i]] += dout[i];
  });
}

template <class S>
TensorT<S> sum(const TensorT<S>& x) {
  auto out = new_node<S>(&x.tape(), Shape{});
  S acc{0};
  for (const S v : x.values()) acc += v;
  out->value.assign(1, acc);
  auto xn = x.node_ptr();
  auto on = out;
  return finish_op<S>("sum", {xn}, out, [xn, on]() {
    if (!wants_adj(xn.get())) return;
    S* dx = adj_of(xn.get()).data();
    const S d = on->adj[0];
    for (size_t i = 0; i < xn->value.size(); ++i) dx[i] += d;
  });
}

template <class S>
TensorT<S> mean(const TensorT<S>& x) {
  if (x.size() == 0) throw ContractError("mean: empty tensor");
  auto out = new_node<S>(&x.tape(), Shape{});
  S acc{0};
  for (const S v : x.values()) acc += v;
  const S inv = S{1} / static_cast<S>(x.size());
  out->value.assign(1, acc * inv);
  auto xn = x.node_ptr();
  auto on = out;
  return finish_op<S>("mean", {xn}, out, [xn, on, inv]() {
    if (!wants_adj(xn.get())) return;
    S* dx = adj_of(xn.get()).data();
    const S d = on->adj[0] * inv;
    for (size_t i = 0; i < xn->value.size(); ++i) dx[i] += d;
  });
}

template <class S>
TensorT<S> sum_last(const TensorT<S>& x) {
  if (x.ndim() < 1) {
    throw ShapeError("sum_last: needs at least one axis, got " +
                     shape_str(x.shape()));
  }
  const int n = x.shape().back();
  const size_t rows = static_cast<size_t>(x.size()) / n;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  auto out = new_node<S>(&x.tape(), std::move(out_shape));
  out->value.resize(rows);
  const S* xv = x.values().data();
  for (size_t r = 0; r < rows; ++r) {
    S acc{0};
    for (int j = 0; j < n; ++j) acc += xv[r * n + j];
    out->value[r] = acc;
  }
  auto xn = x.node_ptr();
  auto on = out;
  return finish_op<S>("sum_last", {xn}, out, [xn, on, n, rows]() {
    if (!wants_adj(xn.get())) return;
    S* dx = adj_of(xn.get()).data();
    const S* dout = on->adj.data();
    for (size_t r = 0; r < rows; ++r) {
      for (int j = 0; j < n; ++j) dx[r * n + j] += dout[r];
    }
  });
}

template <class S>
std::vector<int> argmax_last(const TensorT<S>& x) {
  if (x.ndim() < 1) throw ShapeError("argmax_last: scalar input");
  const int n = x.shape().back();
  const size_t rows = static_cast<size_t>(x.size()) / n;
  std::vector<int> out(rows);
  const S* xv = x.values().data();
  for (size_t r = 0; r < rows; ++r) {
    int best = 0;
    for (int j = 1; j < n; ++j) {
      if (xv[r * n + j] > xv[r * n + best]) best = j;
    }
    out[r] = best;
  }
  return out;
}

// ---- explicit instantiations ----

#define IM2MARKUP_INSTANTIATE(S)                                              \
  template class TensorT<S>;                                                  \
  template class TapeT<S>;                                                    \
  template void backward<S>(const TensorT<S>&);                               \
  template TensorT<S> matmul<S>(const TensorT<S>&, const TensorT<S>&);        \
  template TensorT<S> conv2d<S>(const TensorT<S>&, const TensorT<S>&,         \
                                const TensorT<S>&);                           \
  template TensorT<S> maxpool2x2<S>(const TensorT<S>&);                       \
  template TensorT<S> add<S>(const TensorT<S>&, const TensorT<S>&);           \
  template TensorT<S> sub<S>(const TensorT<S>&, const TensorT<S>&);           \
  template TensorT<S> mul<S>(const TensorT<S>&, const TensorT<S>&);           \
  template TensorT<S> tanh<S>(const TensorT<S>&);                             \
  template TensorT<S> sigmoid<S>(const TensorT<S>&);                          \
  template TensorT<S> log<S>(const TensorT<S>&);                              \
  template TensorT<S> clamp_min<S>(const TensorT<S>&, S);                     \
  template TensorT<S> softmax<S>(const TensorT<S>&);                          \
  template TensorT<S> concat<S>(const std::vector<TensorT<S>>&, int);         \
  template TensorT<S> reshape<S>(const TensorT<S>&, Shape);                   \
  template TensorT<S> embedding_lookup<S>(const TensorT<S>&,                  \
                                          std::span<const int>);              \
  template TensorT<S> pick<S>(const TensorT<S>&, std::span<const int>);       \
  template TensorT<S> scale_rows<S>(const TensorT<S>&, const TensorT<S>&);    \
  template TensorT<S> vecmat<S>(const TensorT<S>&, const TensorT<S>&);        \
  template TensorT<S> gather_linear<S>(                                       \
      const TensorT<S>&, std::shared_ptr<const std::vector<int64_t>>, Shape); \
  template TensorT<S> sum<S>(const TensorT<S>&);                              \
  template TensorT<S> mean<S>(const TensorT<S>&);                             \
  template TensorT<S> sum_last<S>(const TensorT<S>&);                         \
  template std::vector<int> argmax_last<S>(const TensorT<S>&);

IM2MARKUP_INSTANTIATE(float)
IM2MARKUP_INSTANTIATE(double)

#undef IM2MARKUP_INSTANTIATE

}  // namespace im2markup
