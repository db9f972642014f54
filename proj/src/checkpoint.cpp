#include "im2markup/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <unordered_map>

#include "im2markup/error.hpp"

namespace im2markup {

namespace {

constexpr char kMagic[8] = {'i', '2', 'm', 'c', 'k', 'p', 't', '\0'};
constexpr uint32_t kVersion = 1;

void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <class T>
void write_pod(std::ostream& os, T v) {
  write_bytes(os, &v, sizeof(T));
}

void read_bytes(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw IoError("checkpoint: truncated file");
}

template <class T>
T read_pod(std::istream& is) {
  T v;
  read_bytes(is, &v, sizeof(T));
  return v;
}

struct Header {
  uint32_t version;
  uint8_t scalar_width;
  uint64_t digest;
  uint32_t block_count;
};

Header read_header(std::istream& is, const std::string& path) {
  char magic[8];
  read_bytes(is, magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("checkpoint: " + path + " is not a checkpoint file");
  }
  Header h;
  h.version = read_pod<uint32_t>(is);
  if (h.version != kVersion) {
    throw IoError("checkpoint: unsupported format version " +
                  std::to_string(h.version));
  }
  h.scalar_width = read_pod<uint8_t>(is);
  if (h.scalar_width != 4 && h.scalar_width != 8) {
    throw IoError("checkpoint: unsupported scalar width " +
                  std::to_string(h.scalar_width));
  }
  h.digest = read_pod<uint64_t>(is);
  h.block_count = read_pod<uint32_t>(is);
  return h;
}

}  // namespace

uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

template <class S>
void save_checkpoint(const std::string& path, uint64_t config_digest,
                     const ParamListT<S>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot write " + path);
  write_bytes(os, kMagic, sizeof(kMagic));
  write_pod<uint32_t>(os, kVersion);
  write_pod<uint8_t>(os, static_cast<uint8_t>(sizeof(S)));
  write_pod<uint64_t>(os, config_digest);
  write_pod<uint32_t>(os, static_cast<uint32_t>(params.size()));
  for (const auto& p : params) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(p.name.size()));
    write_bytes(os, p.name.data(), p.name.size());
    const auto& shape = p.tensor.shape();
    write_pod<uint32_t>(os, static_cast<uint32_t>(shape.size()));
    for (int d : shape) write_pod<int32_t>(os, d);
    const auto vals = p.tensor.values();
    write_bytes(os, vals.data(), vals.size() * sizeof(S));
  }
  if (!os) throw IoError("checkpoint: write failed for " + path);
}

template <class S>
void load_checkpoint(const std::string& path, uint64_t config_digest,
                     ParamListT<S>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path);
  const Header h = read_header(is, path);
  if (h.digest != config_digest) {
    throw ConfigError("checkpoint: config digest mismatch (file " +
                      std::to_string(h.digest) + ", model " +
                      std::to_string(config_digest) + ")");
  }
  if (h.block_count != params.size()) {
    throw ConfigError("checkpoint: file has " + std::to_string(h.block_count) +
                      " blocks, model expects " +
                      std::to_string(params.size()));
  }
  std::unordered_map<std::string, ParamT<S>*> by_name;
  for (auto& p : params) by_name[p.name] = &p;
  for (uint32_t i = 0; i < h.block_count; ++i) {
    const uint32_t name_len = read_pod<uint32_t>(is);
    std::string name(name_len, '\0');
    read_bytes(is, name.data(), name_len);
    const uint32_t ndim = read_pod<uint32_t>(is);
    Shape shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = read_pod<int32_t>(is);
    const size_t count = static_cast<size_t>(numel(shape));
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw ConfigError("checkpoint: unknown block '" + name + "'");
    }
    ParamT<S>* p = it->second;
    if (p->tensor.shape() != shape) {
      throw ConfigError("checkpoint: block '" + name + "' has shape " +
                        shape_str(shape) + ", model expects " +
                        shape_str(p->tensor.shape()));
    }
    auto dst = p->tensor.raw_values();
    if (h.scalar_width == sizeof(S)) {
      read_bytes(is, dst.data(), count * sizeof(S));
    } else if (h.scalar_width == 4) {
      std::vector<float> tmp(count);
      read_bytes(is, tmp.data(), count * sizeof(float));
      for (size_t k = 0; k < count; ++k) dst[k] = static_cast<S>(tmp[k]);
    } else {
      std::vector<double> tmp(count);
      read_bytes(is, tmp.data(), count * sizeof(double));
      for (size_t k = 0; k < count; ++k) dst[k] = static_cast<S>(tmp[k]);
    }
  }
}

uint64_t peek_checkpoint_digest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path);
  return read_header(is, path).digest;
}

template void save_checkpoint<float>(const std::string&, uint64_t,
                                     const ParamListT<float>&);
template void save_checkpoint<double>(const std::string&, uint64_t,
                                      const ParamListT<double>&);
template void load_checkpoint<float>(const std::string&, uint64_t,
                                     ParamListT<float>&);
template void load_checkpoint<double>(const std::string&, uint64_t,
                                      ParamListT<double>&);

}  // namespace im2markup
