#include "im2markup/encoder.hpp"

#include "im2markup/error.hpp"

namespace im2markup {

CenterOffset centering_offset(int img_w, int img_h, int canvas_w,
                              int canvas_h) {
  return {(canvas_w - img_w) / 2, (canvas_h - img_h) / 2};
}

Image center_on_canvas(const Image& img, int canvas_w, int canvas_h) {
  if (img.width > canvas_w || img.height > canvas_h) {
    throw ContractError("standardize: image " + std::to_string(img.width) +
                        "x" + std::to_string(img.height) +
                        " exceeds the canvas " + std::to_string(canvas_w) +
                        "x" + std::to_string(canvas_h));
  }
  Image canvas = Image::blank(canvas_w, canvas_h, 255);
  const CenterOffset off =
      centering_offset(img.width, img.height, canvas_w, canvas_h);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      canvas.set(off.dx + x, off.dy + y, img.at(x, y));
    }
  }
  return canvas;
}

template <class S>
TensorT<S> whiten_batch(TapeT<S>& tape, const std::vector<Image>& canvases,
                        int canvas_w, int canvas_h) {
  const int batch = static_cast<int>(canvases.size());
  std::vector<S> values;
  values.reserve(static_cast<size_t>(batch) * canvas_w * canvas_h);
  for (const Image& img : canvases) {
    if (img.width != canvas_w || img.height != canvas_h) {
      throw ContractError("whiten_batch: image is " +
                          std::to_string(img.width) + "x" +
                          std::to_string(img.height) +
                          ", expected the canvas size");
    }
    for (uint8_t v : img.pixels) {
      values.push_back(static_cast<S>(v) / S{255} - S{0.5});
    }
  }
  return TensorT<S>::leaf(tape, {batch, 1, canvas_h, canvas_w},
                          std::move(values));
}

template <class S>
TensorT<S> standardize_whiten(TapeT<S>& tape, const Image& img, int canvas_w,
                              int canvas_h) {
  return whiten_batch<S>(tape, {center_on_canvas(img, canvas_w, canvas_h)},
                         canvas_w, canvas_h);
}

template <class S>
TensorT<S> cnn_encode(const TensorT<S>& x,
                      const std::vector<ConvStageParamsT<S>>& stages) {
  TensorT<S> h = x;
  for (const auto& stage : stages) {
    h = maxpool2x2(im2markup::tanh(conv2d(h, stage.kernel, stage.bias)));
  }
  return h;
}

template <class S>
TensorT<S> pool_features(const TensorT<S>& grid, int stride_h, int stride_w) {
  if (grid.ndim() != 4) {
    throw ShapeError("pool_features: expected [B,C,H,W], got " +
                     shape_str(grid.shape()));
  }
  const int batch = grid.dim(0), c = grid.dim(1), h = grid.dim(2),
            w = grid.dim(3);
  if (stride_h < 1 || stride_w < 1 || h % stride_h != 0 || w % stride_w != 0) {
    throw ConfigError("pool_features: stride " + std::to_string(stride_h) +
                      "x" + std::to_string(stride_w) +
                      " does not divide the grid " + shape_str(grid.shape()));
  }
  const int oh = h / stride_h, ow = w / stride_w;
  const int oc = c * stride_h * stride_w;
  auto map = std::make_shared<std::vector<int64_t>>();
  map->reserve(static_cast<size_t>(batch) * oc * oh * ow);
  // out[b, (win*C + ch), y, x] with win = dy*stride_w + dx scanning the
  // window row-major; source cell is (y*stride_h+dy, x*stride_w+dx).
  for (int b = 0; b < batch; ++b) {
    for (int dy = 0; dy < stride_h; ++dy) {
      for (int dx = 0; dx < stride_w; ++dx) {
        for (int ch = 0; ch < c; ++ch) {
          for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
              const int sy = y * stride_h + dy;
              const int sx = x * stride_w + dx;
              map->push_back(
                  ((static_cast<int64_t>(b) * c + ch) * h + sy) * w + sx);
            }
          }
        }
      }
    }
  }
  return gather_linear(grid, std::move(map), Shape{batch, oc, oh, ow});
}

template <class S>
TensorT<S> flatten_grid(const TensorT<S>& grid) {
  if (grid.ndim() != 4) {
    throw ShapeError("flatten_grid: expected [B,D,H,W], got " +
                     shape_str(grid.shape()));
  }
  const int batch = grid.dim(0), d = grid.dim(1), h = grid.dim(2),
            w = grid.dim(3);
  auto map = std::make_shared<std::vector<int64_t>>();
  map->reserve(static_cast<size_t>(batch) * h * w * d);
  for (int b = 0; b < batch; ++b) {
    for (int row = 0; row < h; ++row) {
      for (int col = 0; col < w; ++col) {
        for (int ch = 0; ch < d; ++ch) {
          map->push_back(
              ((static_cast<int64_t>(b) * d + ch) * h + row) * w + col);
        }
      }
    }
  }
  return gather_linear(grid, std::move(map), Shape{batch, h * w, d});
}

std::vector<LayerShape> encoder_shape_chain(const ModelConfig& config) {
  std::vector<LayerShape> chain;
  int h = config.canvas_h, w = config.canvas_w, c = 1;
  chain.push_back({"input", h, w, c});
  for (int channels : config.cnn_channels) {
    c = channels;
    chain.push_back({"conv", h, w, c});
    h /= 2;
    w /= 2;
    chain.push_back({"maxpool", h, w, c});
  }
  chain.push_back({"pooled-features", h / config.pool_stride_h,
                   w / config.pool_stride_w, config.feat_dim()});
  return chain;
}

int receptive_field_px(int depth) {
  int rf = 1;
  int jump = 1;
  for (int level = 0; level < depth; ++level) {
    rf += 2 * jump;  // 3x3 conv
    rf += jump;      // 2x2 pool
    jump *= 2;
  }
  return rf;
}

int receptive_margin_px(int depth) {
  const int cell = 1 << depth;
  return (receptive_field_px(depth) - cell + 1) / 2;
}

#define IM2MARKUP_INSTANTIATE(S)                                            \
  template TensorT<S> whiten_batch<S>(TapeT<S>&, const std::vector<Image>&, \
                                      int, int);                            \
  template TensorT<S> standardize_whiten<S>(TapeT<S>&, const Image&, int,   \
                                            int);                           \
  template struct ConvStageParamsT<S>;                                      \
  template TensorT<S> cnn_encode<S>(const TensorT<S>&,                      \
                                    const std::vector<ConvStageParamsT<S>>&); \
  template TensorT<S> pool_features<S>(const TensorT<S>&, int, int);        \
  template TensorT<S> flatten_grid<S>(const TensorT<S>&);

IM2MARKUP_INSTANTIATE(float)
IM2MARKUP_INSTANTIATE(double)

#undef IM2MARKUP_INSTANTIATE

}  // namespace im2markup
