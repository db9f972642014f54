#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "im2markup/dataset.hpp"
#include "im2markup/image.hpp"

namespace im2markup {

// Grammar for the synthetic glyph-formula corpus. Formulas are sequences of
// atoms; an atom is a bare glyph, a scripted pair like "3 ^ 7" (the caret
// marker and the raised glyph each take one cell), or a stacked fraction
// "3 / 7" drawn in a single cell with the numerator above the bar and the
// denominator below it.
struct GrammarConfig {
  int num_glyphs = 10;  // how many of the built-in glyph bitmaps to use
  int min_atoms = 2;
  int max_atoms = 6;
  bool enable_scripts = true;
  bool enable_fractions = true;
  int max_cols = 8;      // widest raster, in 8-px glyph cells
  int img_height = 32;
};

constexpr int kGlyphCell = 8;

// Built-in 8x8 bitmaps: digits "0".."9" plus the "^", "_" and "/" markers.
const std::array<uint8_t, 8>& glyph_bitmap(const std::string& token);
std::vector<std::string> glyph_tokens(int num_glyphs);

// Renders a token string to its deterministic raster and reports each
// token's horizontal pixel span [x0, x1).
struct Rendered {
  Image image;
  std::vector<std::array<int, 2>> token_spans;
};
Rendered render_formula(const std::vector<std::string>& tokens,
                        const GrammarConfig& config);

// Writes n seeded samples (PNG) under out_dir/images plus a manifest with
// token spans. Identical seeds produce byte-identical corpora.
Manifest synth_generate(int n_samples, const GrammarConfig& config,
                        uint64_t seed, const std::string& out_dir);

// Draws one formula without touching the filesystem.
std::vector<std::string> sample_formula(const GrammarConfig& config, Rng& rng);

}  // namespace im2markup
