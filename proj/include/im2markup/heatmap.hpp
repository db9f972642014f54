#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "im2markup/attention.hpp"
#include "im2markup/encoder.hpp"
#include "im2markup/image.hpp"

namespace im2markup {

struct HeatmapOptions {
  // overlay darkening: pixel *= 1 - darken * alpha_cell / alpha_max
  double darken = 0.7;
  int label_height = 12;  // annotation bar above each step image
};

// Shades one step's weights onto the standardized canvas. alpha holds one
// weight per grid cell; each cell darkens its own tile.
Image overlay_step(const Image& canvas, std::span<const double> alpha,
                   const GridGeometry& grid, const HeatmapOptions& opts = {});

// Writes step_###_<token>.png per step plus strip.png stacking all steps
// with their token annotations. The trace length L must match the grid.
void emit_heatmaps(const AttentionTrace& trace, const Image& canvas,
                   const GridGeometry& grid, const std::string& out_dir,
                   const HeatmapOptions& opts = {});

// 5x7 bitmap text, used for the annotation bars.
void draw_text(Image& img, const std::string& text, int x, int y);

// Fraction of steps whose argmax attention cell's horizontal window overlaps
// the step's token span [x0, x1) in canvas coordinates. Steps beyond
// spans.size() (the <eos> tail) are ignored.
double attention_alignment(const AttentionTrace& trace,
                           const GridGeometry& grid, int canvas_w,
                           std::span<const std::array<int, 2>> spans);

}  // namespace im2markup
