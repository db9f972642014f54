#include "im2markup/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>

#include "im2markup/error.hpp"

namespace im2markup {

namespace {

// 5x7 glyphs, one byte per row, low 5 bits used.
const std::map<char, std::array<uint8_t, 7>> kFont = {
    {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
    {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'2', {0x0e, 0x11, 0x01, 0x06, 0x08, 0x10, 0x1f}},
    {'3', {0x0e, 0x11, 0x01, 0x06, 0x01, 0x11, 0x0e}},
    {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
    {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
    {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
    {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
    {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
    {'a', {0x00, 0x00, 0x0e, 0x01, 0x0f, 0x11, 0x0f}},
    {'b', {0x10, 0x10, 0x1e, 0x11, 0x11, 0x11, 0x1e}},
    {'c', {0x00, 0x00, 0x0e, 0x11, 0x10, 0x11, 0x0e}},
    {'d', {0x01, 0x01, 0x0f, 0x11, 0x11, 0x11, 0x0f}},
    {'e', {0x00, 0x00, 0x0e, 0x11, 0x1f, 0x10, 0x0e}},
    {'f', {0x06, 0x09, 0x08, 0x1c, 0x08, 0x08, 0x08}},
    {'g', {0x00, 0x0f, 0x11, 0x11, 0x0f, 0x01, 0x0e}},
    {'h', {0x10, 0x10, 0x1e, 0x11, 0x11, 0x11, 0x11}},
    {'i', {0x04, 0x00, 0x0c, 0x04, 0x04, 0x04, 0x0e}},
    {'j', {0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0c}},
    {'k', {0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12}},
    {'l', {0x0c, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'m', {0x00, 0x00, 0x1a, 0x15, 0x15, 0x15, 0x15}},
    {'n', {0x00, 0x00, 0x1e, 0x11, 0x11, 0x11, 0x11}},
    {'o', {0x00, 0x00, 0x0e, 0x11, 0x11, 0x11, 0x0e}},
    {'p', {0x00, 0x1e, 0x11, 0x11, 0x1e, 0x10, 0x10}},
    {'q', {0x00, 0x0f, 0x11, 0x11, 0x0f, 0x01, 0x01}},
    {'r', {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10}},
    {'s', {0x00, 0x00, 0x0f, 0x10, 0x0e, 0x01, 0x1e}},
    {'t', {0x08, 0x08, 0x1c, 0x08, 0x08, 0x09, 0x06}},
    {'u', {0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0d}},
    {'v', {0x00, 0x00, 0x11, 0x11, 0x11, 0x0a, 0x04}},
    {'w', {0x00, 0x00, 0x15, 0x15, 0x15, 0x15, 0x0a}},
    {'x', {0x00, 0x00, 0x11, 0x0a, 0x04, 0x0a, 0x11}},
    {'y', {0x00, 0x11, 0x11, 0x0f, 0x01, 0x11, 0x0e}},
    {'z', {0x00, 0x00, 0x1f, 0x02, 0x04, 0x08, 0x1f}},
    {'<', {0x02, 0x04, 0x08, 0x10, 0x08, 0x04, 0x02}},
    {'>', {0x08, 0x04, 0x02, 0x01, 0x02, 0x04, 0x08}},
    {'^', {0x04, 0x0a, 0x11, 0x00, 0x00, 0x00, 0x00}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1f}},
    {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
    {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}},
    {'=', {0x00, 0x00, 0x1f, 0x00, 0x1f, 0x00, 0x00}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
    {'?', {0x0e, 0x11, 0x01, 0x06, 0x04, 0x00, 0x04}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
};

std::string sanitize_token(const std::string& token) {
  std::string out;
  for (char c : token) {
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-') ? c : '_';
  }
  return out.empty() ? "_" : out;
}

}  // namespace

void draw_text(Image& img, const std::string& text, int x, int y) {
  int cx = x;
  for (char raw : text) {
    const char c =
        static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    auto it = kFont.find(c);
    const auto& rows = (it != kFont.end()) ? it->second : kFont.at('?');
    for (int r = 0; r < 7; ++r) {
      for (int b = 0; b < 5; ++b) {
        if (rows[static_cast<size_t>(r)] & (0x10u >> b)) {
          if (img.in_bounds(cx + b, y + r)) img.set(cx + b, y + r, 0);
        }
      }
    }
    cx += 6;
  }
}

Image overlay_step(const Image& canvas, std::span<const double> alpha,
                   const GridGeometry& grid, const HeatmapOptions& opts) {
  if (static_cast<int>(alpha.size()) != grid.locations()) {
    throw ContractError("heatmap: trace has " + std::to_string(alpha.size()) +
                        " weights, expected grid " +
                        std::to_string(grid.rows) + "x" +
                        std::to_string(grid.cols) + " = " +
                        std::to_string(grid.locations()));
  }
  const double alpha_max =
      *std::max_element(alpha.begin(), alpha.end());
  Image out = canvas;
  if (alpha_max <= 0) return out;
  const int tile_h = canvas.height / grid.rows;
  const int tile_w = canvas.width / grid.cols;
  for (int l = 0; l < grid.locations(); ++l) {
    const auto [row, col] = grid.to_grid(l);
    const double factor =
        1.0 - opts.darken * (alpha[static_cast<size_t>(l)] / alpha_max);
    for (int y = row * tile_h; y < (row + 1) * tile_h; ++y) {
      for (int x = col * tile_w; x < (col + 1) * tile_w; ++x) {
        out.set(x, y,
                static_cast<uint8_t>(std::lround(canvas.at(x, y) * factor)));
      }
    }
  }
  return out;
}

void emit_heatmaps(const AttentionTrace& trace, const Image& canvas,
                   const GridGeometry& grid, const std::string& out_dir,
                   const HeatmapOptions& opts) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("heatmap: cannot create " + out_dir);
  const int block_h = opts.label_height + canvas.height;
  Image strip = Image::blank(canvas.width,
                             std::max<int>(1, block_h * static_cast<int>(
                                                            trace.length())));
  for (size_t t = 0; t < trace.length(); ++t) {
    const Image shaded = overlay_step(canvas, trace.steps[t], grid, opts);
    const std::string token =
        t < trace.tokens.size() ? trace.tokens[t] : std::string("?");
    char name[128];
    std::snprintf(name, sizeof(name), "step_%03zu_%s.png", t + 1,
                  sanitize_token(token).c_str());
    Image annotated = Image::blank(canvas.width, block_h);
    draw_text(annotated, "t=" + std::to_string(t + 1) + " " + token, 2, 2);
    for (int y = 0; y < canvas.height; ++y) {
      for (int x = 0; x < canvas.width; ++x) {
        annotated.set(x, opts.label_height + y, shaded.at(x, y));
      }
    }
    save_png((fs::path(out_dir) / name).string(), annotated);
    for (int y = 0; y < block_h; ++y) {
      for (int x = 0; x < canvas.width; ++x) {
        strip.set(x, static_cast<int>(t) * block_h + y, annotated.at(x, y));
      }
    }
  }
  save_png((fs::path(out_dir) / "strip.png").string(), strip);
}

double attention_alignment(const AttentionTrace& trace,
                           const GridGeometry& grid, int canvas_w,
                           std::span<const std::array<int, 2>> spans) {
  const size_t steps = std::min(trace.length(), spans.size());
  if (steps == 0) return 0.0;
  const int tile_w = canvas_w / grid.cols;
  size_t hits = 0;
  for (size_t t = 0; t < steps; ++t) {
    const auto& row = trace.steps[t];
    int best = 0;
    for (int l = 1; l < static_cast<int>(row.size()); ++l) {
      if (row[static_cast<size_t>(l)] > row[static_cast<size_t>(best)]) {
        best = l;
      }
    }
    const int col = grid.to_grid(best).second;
    const int w0 = col * tile_w, w1 = (col + 1) * tile_w;
    if (w0 < spans[t][1] && spans[t][0] < w1) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(steps);
}

}  // namespace im2markup
