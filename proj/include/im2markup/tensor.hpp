#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "im2markup/error.hpp"

namespace im2markup {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <class S>
class TapeT;

// One value in the computation graph. Owned via shared_ptr; op records on the
// tape keep their operands alive until the tape is cleared.
template <class S>
struct NodeT {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // persistent, accumulated for requires_grad leaves
  std::vector<S> adj;   // scratch adjoint, lives only inside backward()
  bool requires_grad = false;  // leaf that should receive a gradient
  bool on_path = false;        // value depends on a requires_grad leaf
  int tape_pos = -1;           // record that produced this node, -1 for leaves
  TapeT<S>* tape = nullptr;
};

// Handle to a graph node. Cheap to copy; value semantics over shared storage.
template <class S>
class TensorT {
 public:
  TensorT() = default;

  static TensorT leaf(TapeT<S>& tape, Shape shape, std::vector<S> values,
                      bool requires_grad = false);
  static TensorT zeros(TapeT<S>& tape, Shape shape, bool requires_grad = false);
  static TensorT full(TapeT<S>& tape, Shape shape, S v);
  static TensorT scalar(TapeT<S>& tape, S v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(node_->value.size()); }

  std::span<const S> values() const { return node_->value; }
  // Direct write access, for initialization and optimizer updates only.
  std::span<S> raw_values() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const S> grad() const;
  void zero_grad();

  S scalar_value() const;

  NodeT<S>* node() const { return node_.get(); }
  std::shared_ptr<NodeT<S>> node_ptr() const { return node_; }
  TapeT<S>& tape() const { return *node_->tape; }

  explicit TensorT(std::shared_ptr<NodeT<S>> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<NodeT<S>> node_;
};

// Ordered record of executed ops. Creation order is topological by
// construction, so the backward sweep is a single reverse pass.
template <class S>
class TapeT {
 public:
  struct Record {
    const char* name;
    std::vector<std::shared_ptr<NodeT<S>>> inputs;
    std::shared_ptr<NodeT<S>> out;
    std::function<void()> backward;
  };

  bool recording() const { return record_depth_ == 0; }
  size_t size() const { return records_.size(); }

  // Drops all op records. Leaves survive as long as a TensorT references them.
  void clear() { records_.clear(); }

  void emit(Record rec);
  const Record& record(size_t i) const { return records_[i]; }

  // RAII guard disabling recording (inference / metric evaluation).
  class NoGrad {
   public:
    explicit NoGrad(TapeT& t) : tape_(t) { ++tape_.record_depth_; }
    ~NoGrad() { --tape_.record_depth_; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

   private:
    TapeT& tape_;
  };

 private:
  std::vector<Record> records_;
  int record_depth_ = 0;
};

using Tensor32 = TensorT<float>;
using Tensor64 = TensorT<double>;
using Tape32 = TapeT<float>;
using Tape64 = TapeT<double>;

// Reverse-mode sweep from a scalar root. Every requires_grad leaf that root
// depends on gets grad += d root / d leaf; repeated calls accumulate.
template <class S>
void backward(const TensorT<S>& root);

// ---- differentiable op catalog ----

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b);

// 3x3 kernels, stride 1, zero padding preserving H x W.
// x: [B,C,H,W], kernel: [F,C,3,3], bias: [F] -> [B,F,H,W]
template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& kernel,
                  const TensorT<S>& bias);

// 2x2 window, stride 2. Ties route gradient to the first max in scan order.
template <class S>
TensorT<S> maxpool2x2(const TensorT<S>& x);

// Elementwise with broadcasting: equal shapes, or one operand's shape is a
// trailing suffix of the other's, or one operand is a scalar.
template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b);
template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b);
template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b);

template <class S>
TensorT<S> tanh(const TensorT<S>& x);
template <class S>
TensorT<S> sigmoid(const TensorT<S>& x);
template <class S>
TensorT<S> log(const TensorT<S>& x);
// max(x, floor); gradient is zero where the floor is active.
template <class S>
TensorT<S> clamp_min(const TensorT<S>& x, S floor);

// Softmax over the last axis.
template <class S>
TensorT<S> softmax(const TensorT<S>& x);

template <class S>
TensorT<S> concat(const std::vector<TensorT<S>>& parts, int axis);

template <class S>
TensorT<S> reshape(const TensorT<S>& x, Shape shape);

// Row select: E [V,m], ids [B] -> [B,m]. Gradient accumulates only into the
// looked-up rows.
template <class S>
TensorT<S> embedding_lookup(const TensorT<S>& table, std::span<const int> ids);

// Per-row column select: p [B,K], ids [B] -> [B].
template <class S>
TensorT<S> pick(const TensorT<S>& p, std::span<const int> ids);

// Multiply row b of x [B,...] by s[b].
template <class S>
TensorT<S> scale_rows(const TensorT<S>& x, const TensorT<S>& s);

// Batched vector-matrix product: w [B,L] x a [B,L,D] -> [B,D].
template <class S>
TensorT<S> vecmat(const TensorT<S>& w, const TensorT<S>& a);

// out[i] = x[map[i]]. map indexes into x's flat storage; duplicates allowed
// (gradient scatter-adds). Permutations cover pooling and grid flattening.
template <class S>
TensorT<S> gather_linear(const TensorT<S>& x,
                         std::shared_ptr<const std::vector<int64_t>> map,
                         Shape out_shape);

template <class S>
TensorT<S> sum(const TensorT<S>& x);
template <class S>
TensorT<S> mean(const TensorT<S>& x);
// Reduce the last axis: [..., n] -> [...].
template <class S>
TensorT<S> sum_last(const TensorT<S>& x);

template <class S>
TensorT<S> operator+(const TensorT<S>& a, const TensorT<S>& b) {
  return add(a, b);
}
template <class S>
TensorT<S> operator-(const TensorT<S>& a, const TensorT<S>& b) {
  return sub(a, b);
}
template <class S>
TensorT<S> operator*(const TensorT<S>& a, const TensorT<S>& b) {
  return mul(a, b);
}

// Non-differentiable helpers.
template <class S>
std::vector<int> argmax_last(const TensorT<S>& x);

}  // namespace im2markup
