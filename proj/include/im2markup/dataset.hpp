#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "im2markup/image.hpp"
#include "im2markup/rng.hpp"
#include "im2markup/vocab.hpp"

namespace im2markup {

// One dataset record. token_spans, when present, give each token's horizontal
// pixel range [x0, x1) on the raster; the synthetic generator fills them in.
struct ManifestRecord {
  std::string image;
  std::string tokens;
  std::string split = "train";
  std::vector<std::array<int, 2>> token_spans;
};

// Lines-of-JSON container, fields {image, tokens, split}.
struct Manifest {
  std::vector<ManifestRecord> records;

  static Manifest load(const std::string& path);
  void save(const std::string& path) const;
  size_t size() const { return records.size(); }
};

// Tokens seen at least freq_threshold times across the manifest, plus the
// specials. Deterministic lexicographic ordering.
Vocab build_vocab(const Manifest& manifest, int freq_threshold);

struct FilterStats {
  size_t kept = 0;
  size_t removed_duplicate = 0;
  size_t removed_oov = 0;
  size_t removed_size = 0;
  size_t removed_length = 0;

  std::string summary() const;
};

// Keeps records whose formula is in-vocabulary, whose image fits max_w x
// max_h, and whose token count is <= max_len; exact duplicate token strings
// keep their first occurrence. image_root resolves relative image paths.
Manifest filter_dataset(const Manifest& manifest, const Vocab& vocab,
                        int max_w, int max_h, int max_len,
                        const std::string& image_root = "",
                        FilterStats* stats = nullptr);

// Groups record indices into batches of similar target length. Buckets share
// ceil(tau / bucket_width); sample order within a bucket and the final batch
// order are shuffled from the given stream.
std::vector<std::vector<size_t>> make_buckets(
    const std::vector<int>& target_lengths, int batch_size, Rng& rng,
    int bucket_width = 8);

// Loaded images plus padded targets for one step. Targets end with <eos> at
// index lengths[i]-1 and are <pad> beyond it.
struct Batch {
  std::vector<Image> images;
  std::vector<int> targets;  // row-major [B, tau_max]
  std::vector<int> lengths;  // per sample, counts the final <eos>
  int tau_max = 0;

  int size() const { return static_cast<int>(lengths.size()); }
  int target_at(int row, int t) const {
    return targets[static_cast<size_t>(row) * tau_max + t];
  }
};

Batch assemble_batch(const Manifest& manifest, const std::string& image_root,
                     const Vocab& vocab, std::span<const size_t> indices);

std::string join_path(const std::string& root, const std::string& rel);

}  // namespace im2markup
