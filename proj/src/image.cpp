#include "im2markup/image.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "im2markup/error.hpp"

namespace im2markup {

namespace {

const uint8_t kPngSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

uint32_t read_be32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) |
         (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void write_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& data) {
  write_be32(out, static_cast<uint32_t>(data.size()));
  const size_t type_pos = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + type_pos, static_cast<uInt>(4 + data.size()));
  write_be32(out, crc);
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  is.seekg(0, std::ios::end);
  const std::streamoff n = is.tellg();
  is.seekg(0, std::ios::beg);
  std::vector<uint8_t> buf(static_cast<size_t>(n));
  is.read(reinterpret_cast<char*>(buf.data()), n);
  if (!is) throw IoError("cannot read " + path);
  return buf;
}

void write_file(const std::string& path, const std::vector<uint8_t>& data) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size()));
  if (!os) throw IoError("write failed for " + path);
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

struct PngHeader {
  uint32_t width = 0, height = 0;
  uint8_t bit_depth = 0, color_type = 0, interlace = 0;
};

PngHeader parse_ihdr(const std::vector<uint8_t>& file, const std::string& path) {
  if (file.size() < 8 + 25 ||
      std::memcmp(file.data(), kPngSignature, 8) != 0) {
    throw IoError(path + ": not a PNG file");
  }
  const uint8_t* p = file.data() + 8;
  const uint32_t len = read_be32(p);
  if (len != 13 || std::memcmp(p + 4, "IHDR", 4) != 0) {
    throw IoError(path + ": malformed PNG header");
  }
  PngHeader h;
  h.width = read_be32(p + 8);
  h.height = read_be32(p + 12);
  h.bit_depth = p[16];
  h.color_type = p[17];
  h.interlace = p[20];
  return h;
}

}  // namespace

void save_png(const std::string& path, const Image& img) {
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(img.height) * (img.width + 1));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    const uint8_t* row = img.pixels.data() + static_cast<size_t>(y) * img.width;
    raw.insert(raw.end(), row, row + img.width);
  }
  uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(comp_size);
  if (compress2(comp.data(), &comp_size, raw.data(),
                static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw IoError("png: deflate failed for " + path);
  }
  comp.resize(comp_size);

  std::vector<uint8_t> out(kPngSignature, kPngSignature + 8);
  std::vector<uint8_t> ihdr;
  write_be32(ihdr, static_cast<uint32_t>(img.width));
  write_be32(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // no interlace
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", comp);
  append_chunk(out, "IEND", {});
  write_file(path, out);
}

Image load_png(const std::string& path) {
  const std::vector<uint8_t> file = read_file(path);
  const PngHeader h = parse_ihdr(file, path);
  if (h.bit_depth != 8 || h.color_type != 0) {
    throw IoError(path + ": only 8-bit grayscale PNG is supported");
  }
  if (h.interlace != 0) {
    throw IoError(path + ": interlaced PNG is not supported");
  }
  std::vector<uint8_t> idat;
  size_t pos = 8;
  while (pos + 12 <= file.size()) {
    const uint32_t len = read_be32(file.data() + pos);
    const char* type = reinterpret_cast<const char*>(file.data() + pos + 4);
    if (pos + 12 + len > file.size()) {
      throw IoError(path + ": truncated PNG chunk");
    }
    if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), file.data() + pos + 8,
                  file.data() + pos + 8 + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  const size_t stride = static_cast<size_t>(h.width) + 1;
  std::vector<uint8_t> raw(stride * h.height);
  uLongf raw_size = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_size, idat.data(),
                 static_cast<uLong>(idat.size())) != Z_OK ||
      raw_size != raw.size()) {
    throw IoError(path + ": PNG inflate failed");
  }

  Image img = Image::blank(static_cast<int>(h.width),
                           static_cast<int>(h.height), 0);
  std::vector<uint8_t> prev(h.width, 0);
  for (uint32_t y = 0; y < h.height; ++y) {
    const uint8_t filter = raw[y * stride];
    const uint8_t* src = raw.data() + y * stride + 1;
    uint8_t* dst = img.pixels.data() + static_cast<size_t>(y) * h.width;
    for (uint32_t x = 0; x < h.width; ++x) {
      const int left = x > 0 ? dst[x - 1] : 0;
      const int up = prev[x];
      const int upleft = x > 0 ? prev[x - 1] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += left; break;
        case 2: v += up; break;
        case 3: v += (left + up) / 2; break;
        case 4: v += paeth(left, up, upleft); break;
        default:
          throw IoError(path + ": unsupported PNG filter " +
                        std::to_string(filter));
      }
      dst[x] = static_cast<uint8_t>(v & 0xff);
    }
    std::memcpy(prev.data(), dst, h.width);
  }
  return img;
}

void save_pgm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw IoError("write failed for " + path);
}

namespace {

int pgm_next_int(std::istream& is, const std::string& path) {
  // skips whitespace and '#' comment lines
  int c = is.get();
  while (is) {
    if (c == '#') {
      while (is && c != '\n') c = is.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = is.get();
  }
  if (!is) throw IoError(path + ": malformed PGM header");
  int v = 0;
  while (is && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = is.get();
  }
  return v;
}

}  // namespace

Image load_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (m0 != 'P' || m1 != '5') throw IoError(path + ": not a binary PGM file");
  const int w = pgm_next_int(is, path);
  const int h = pgm_next_int(is, path);
  const int maxval = pgm_next_int(is, path);
  if (maxval <= 0 || maxval > 255) {
    throw IoError(path + ": unsupported PGM maxval " + std::to_string(maxval));
  }
  Image img = Image::blank(w, h, 0);
  is.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!is) throw IoError(path + ": truncated PGM data");
  return img;
}

namespace {

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Image load_image(const std::string& path) {
  if (has_suffix(path, ".pgm")) return load_pgm(path);
  return load_png(path);
}

void save_image(const std::string& path, const Image& img) {
  if (has_suffix(path, ".pgm")) {
    save_pgm(path, img);
  } else {
    save_png(path, img);
  }
}

ImageSize probe_image_size(const std::string& path) {
  if (has_suffix(path, ".pgm")) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char m0 = 0, m1 = 0;
    is.get(m0);
    is.get(m1);
    if (m0 != 'P' || m1 != '5') throw IoError(path + ": not a binary PGM file");
    ImageSize sz;
    sz.width = pgm_next_int(is, path);
    sz.height = pgm_next_int(is, path);
    return sz;
  }
  const std::vector<uint8_t> file = read_file(path);
  const PngHeader h = parse_ihdr(file, path);
  return {static_cast<int>(h.width), static_cast<int>(h.height)};
}

}  // namespace im2markup
