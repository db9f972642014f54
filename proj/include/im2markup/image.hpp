#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace im2markup {

// 8-bit grayscale raster, row-major, white = 255.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;

  static Image blank(int w, int h, uint8_t value = 255) {
    Image img;
    img.width = w;
    img.height = h;
    img.pixels.assign(static_cast<size_t>(w) * h, value);
    return img;
  }

  uint8_t at(int x, int y) const {
    return pixels[static_cast<size_t>(y) * width + x];
  }
  void set(int x, int y, uint8_t v) {
    pixels[static_cast<size_t>(y) * width + x] = v;
  }
  bool in_bounds(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }
};

// Format is chosen by extension: .png or .pgm.
Image load_image(const std::string& path);
void save_image(const std::string& path, const Image& img);

Image load_png(const std::string& path);
void save_png(const std::string& path, const Image& img);
Image load_pgm(const std::string& path);
void save_pgm(const std::string& path, const Image& img);

// Reads only the header, for cheap size filtering.
struct ImageSize {
  int width = 0;
  int height = 0;
};
ImageSize probe_image_size(const std::string& path);

}  // namespace im2markup
