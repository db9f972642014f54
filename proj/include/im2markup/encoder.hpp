#pragma once

#include <string>
#include <utility>
#include <vector>

#include "im2markup/config.hpp"
#include "im2markup/image.hpp"
#include "im2markup/tensor.hpp"

namespace im2markup {

// Row-major mapping between the pooled grid and the flat location index,
// kept explicit so heat maps can reconstruct cells from trace indices.
struct GridGeometry {
  int rows = 0;
  int cols = 0;

  int locations() const { return rows * cols; }
  int to_linear(int row, int col) const { return row * cols + col; }
  std::pair<int, int> to_grid(int l) const { return {l / cols, l % cols}; }
};

struct CenterOffset {
  int dx = 0;
  int dy = 0;
};

// Margins put the image at the canvas center; odd leftovers go to the
// right/bottom so ties favor the top-left.
CenterOffset centering_offset(int img_w, int img_h, int canvas_w,
                              int canvas_h);

// White-padded centering. Throws when the image exceeds the canvas.
Image center_on_canvas(const Image& img, int canvas_w, int canvas_h);

// Full standardization for one image: center, then map bytes v -> v/255-0.5.
// Output shape [1, 1, canvas_h, canvas_w].
template <class S>
TensorT<S> standardize_whiten(TapeT<S>& tape, const Image& img, int canvas_w,
                              int canvas_h);

// Whitens a stack of already-centered canvases into [B, 1, H, W].
template <class S>
TensorT<S> whiten_batch(TapeT<S>& tape, const std::vector<Image>& canvases,
                        int canvas_w, int canvas_h);

// One conv(3x3, tanh) + maxpool(2x2) stage per channel entry.
template <class S>
struct ConvStageParamsT {
  TensorT<S> kernel;
  TensorT<S> bias;
};

template <class S>
TensorT<S> cnn_encode(const TensorT<S>& x,
                      const std::vector<ConvStageParamsT<S>>& stages);

// Concatenates each stride window's vectors in row-major scan order:
// [B, C, H, W] -> [B, C*sh*sw, H/sh, W/sw].
template <class S>
TensorT<S> pool_features(const TensorT<S>& grid, int stride_h, int stride_w);

// [B, D, H, W] -> [B, H*W, D] with l = cols*row + col.
template <class S>
TensorT<S> flatten_grid(const TensorT<S>& grid);

// Static shape walk of the whole encoder for a given config; no parameters
// or data involved.
struct LayerShape {
  std::string layer;
  int h = 0;
  int w = 0;
  int channels = 0;
};
std::vector<LayerShape> encoder_shape_chain(const ModelConfig& config);

// Receptive-field arithmetic for a depth-deep conv3x3 + maxpool2x2 stack.
int receptive_field_px(int depth);
// Pixels a cell sees beyond its own tile, per side.
int receptive_margin_px(int depth);

}  // namespace im2markup
