#include "im2markup/synth.hpp"

#include <cstdio>
#include <filesystem>
#include <map>

#include "im2markup/error.hpp"

namespace im2markup {

namespace {

// 8x8 bitmaps, one byte per row, bit 7 = leftmost pixel.
const std::map<std::string, std::array<uint8_t, 8>> kGlyphArt = {
    {"0", {0x3c, 0x42, 0x46, 0x4a, 0x52, 0x62, 0x42, 0x3c}},
    {"1", {0x08, 0x18, 0x28, 0x08, 0x08, 0x08, 0x08, 0x3e}},
    {"2", {0x3c, 0x42, 0x02, 0x0c, 0x30, 0x40, 0x40, 0x7e}},
    {"3", {0x3c, 0x42, 0x02, 0x1c, 0x02, 0x02, 0x42, 0x3c}},
    {"4", {0x04, 0x0c, 0x14, 0x24, 0x44, 0x7e, 0x04, 0x04}},
    {"5", {0x7e, 0x40, 0x40, 0x7c, 0x02, 0x02, 0x42, 0x3c}},
    {"6", {0x1c, 0x20, 0x40, 0x7c, 0x42, 0x42, 0x42, 0x3c}},
    {"7", {0x7e, 0x02, 0x04, 0x08, 0x10, 0x10, 0x10, 0x10}},
    {"8", {0x3c, 0x42, 0x42, 0x3c, 0x42, 0x42, 0x42, 0x3c}},
    {"9", {0x3c, 0x42, 0x42, 0x3e, 0x02, 0x02, 0x04, 0x38}},
    {"^", {0x10, 0x28, 0x44, 0x82, 0x00, 0x00, 0x00, 0x00}},
    {"_", {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x7e}},
    {"/", {0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x00}},
};

void draw_glyph(Image& img, const std::string& token, int x0, int y0) {
  const auto& rows = glyph_bitmap(token);
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) {
      if (rows[static_cast<size_t>(r)] & (0x80u >> c)) {
        if (img.in_bounds(x0 + c, y0 + r)) img.set(x0 + c, y0 + r, 0);
      }
    }
  }
}

void validate(const GrammarConfig& config) {
  if (config.num_glyphs < 2) {
    throw ContractError("synth: grammar needs at least 2 glyphs, got " +
                        std::to_string(config.num_glyphs));
  }
  if (config.num_glyphs > 10) {
    throw ContractError("synth: at most 10 glyph bitmaps are built in");
  }
  if (config.img_height < 28) {
    throw ContractError("synth: image height must be at least 28 px");
  }
  if (config.min_atoms < 1 || config.max_atoms < config.min_atoms) {
    throw ContractError("synth: bad atom count range");
  }
  if (config.max_cols < 1) throw ContractError("synth: max_cols < 1");
}

}  // namespace

const std::array<uint8_t, 8>& glyph_bitmap(const std::string& token) {
  auto it = kGlyphArt.find(token);
  if (it == kGlyphArt.end()) {
    throw ContractError("synth: no bitmap for token '" + token + "'");
  }
  return it->second;
}

std::vector<std::string> glyph_tokens(int num_glyphs) {
  std::vector<std::string> out;
  for (int i = 0; i < num_glyphs; ++i) out.push_back(std::to_string(i));
  return out;
}

Rendered render_formula(const std::vector<std::string>& tokens,
                        const GrammarConfig& config) {
  validate(config);
  const int center = (config.img_height - 8) / 2;
  const int raised = center - 8;
  const int lowered = center + 8;
  const int frac_num = center - 9;
  const int frac_den = center + 9;
  const int bar_y = center + 3;

  // pass 1: assign a cell column and vertical anchor to every token
  struct Placement {
    int col;
    int y0;
    bool bar = false;
  };
  std::vector<Placement> places;
  places.reserve(tokens.size());
  int col = 0;
  size_t i = 0;
  auto is_marker = [](const std::string& t) {
    return t == "^" || t == "_" || t == "/";
  };
  while (i < tokens.size()) {
    if (is_marker(tokens[i])) {
      throw ContractError("render_formula: dangling marker '" + tokens[i] +
                          "' at position " + std::to_string(i));
    }
    if (i + 1 < tokens.size() && is_marker(tokens[i + 1])) {
      if (i + 2 >= tokens.size() || is_marker(tokens[i + 2])) {
        throw ContractError("render_formula: truncated atom at position " +
                            std::to_string(i));
      }
      const std::string& marker = tokens[i + 1];
      if (marker == "/") {
        // stacked fraction, one shared cell
        places.push_back({col, frac_num});
        places.push_back({col, bar_y, /*bar=*/true});
        places.push_back({col, frac_den});
        col += 1;
      } else {
        const int script_y = (marker == "^") ? raised : lowered;
        places.push_back({col, center});
        places.push_back({col + 1, script_y});
        places.push_back({col + 2, script_y});
        col += 3;
      }
      i += 3;
    } else {
      places.push_back({col, center});
      col += 1;
      i += 1;
    }
  }

  Rendered out;
  out.image = Image::blank(col * kGlyphCell, config.img_height);
  for (size_t t = 0; t < tokens.size(); ++t) {
    const Placement& p = places[t];
    const int x0 = p.col * kGlyphCell;
    if (p.bar) {
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 1; dx < kGlyphCell - 1; ++dx) {
          out.image.set(x0 + dx, p.y0 + dy, 0);
        }
      }
    } else {
      draw_glyph(out.image, tokens[t], x0, p.y0);
    }
    out.token_spans.push_back({x0, x0 + kGlyphCell});
  }
  return out;
}

std::vector<std::string> sample_formula(const GrammarConfig& config, Rng& rng) {
  validate(config);
  const auto glyphs = glyph_tokens(config.num_glyphs);
  auto pick_glyph = [&]() {
    return glyphs[static_cast<size_t>(rng.below(glyphs.size()))];
  };
  const int n_atoms =
      config.min_atoms +
      static_cast<int>(rng.below(
          static_cast<uint64_t>(config.max_atoms - config.min_atoms + 1)));
  std::vector<std::string> tokens;
  int cols = 0;
  for (int a = 0; a < n_atoms && cols < config.max_cols; ++a) {
    // kinds: 0 plain (1 cell), 1 script (3 cells), 2 fraction (1 cell)
    int weights[3] = {60, 0, 0};
    if (config.enable_scripts && cols + 3 <= config.max_cols) weights[1] = 20;
    if (config.enable_fractions) weights[2] = 20;
    const int total = weights[0] + weights[1] + weights[2];
    int draw = static_cast<int>(rng.below(static_cast<uint64_t>(total)));
    int kind = 0;
    for (; kind < 2; ++kind) {
      if (draw < weights[kind]) break;
      draw -= weights[kind];
    }
    if (kind == 0) {
      tokens.push_back(pick_glyph());
      cols += 1;
    } else if (kind == 1) {
      tokens.push_back(pick_glyph());
      tokens.push_back(rng.below(2) == 0 ? "^" : "_");
      tokens.push_back(pick_glyph());
      cols += 3;
    } else {
      tokens.push_back(pick_glyph());
      tokens.push_back("/");
      tokens.push_back(pick_glyph());
      cols += 1;
    }
  }
  return tokens;
}

Manifest synth_generate(int n_samples, const GrammarConfig& config,
                        uint64_t seed, const std::string& out_dir) {
  validate(config);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw IoError("synth: cannot create " + out_dir + ": " + ec.message());

  Rng rng(seed);
  Manifest manifest;
  for (int s = 0; s < n_samples; ++s) {
    const auto tokens = sample_formula(config, rng);
    const Rendered rendered = render_formula(tokens, config);
    char name[64];
    std::snprintf(name, sizeof(name), "images/sample_%05d.png", s);
    save_png((fs::path(out_dir) / name).string(), rendered.image);
    ManifestRecord rec;
    rec.image = name;
    rec.tokens = join_tokens(tokens);
    rec.split = "train";
    rec.token_spans = rendered.token_spans;
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

}  // namespace im2markup
