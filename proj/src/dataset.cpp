#include "im2markup/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "im2markup/error.hpp"
#include "json.hpp"

namespace im2markup {

using nlohmann::json;

Manifest Manifest::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("manifest: cannot open " + path);
  Manifest m;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw IoError("manifest: " + path + ":" + std::to_string(lineno) + ": " +
                    e.what());
    }
    ManifestRecord rec;
    rec.image = j.at("image").get<std::string>();
    rec.tokens = j.at("tokens").get<std::string>();
    rec.split = j.value("split", "train");
    if (j.contains("token_spans")) {
      for (const auto& span : j.at("token_spans")) {
        rec.token_spans.push_back({span.at(0).get<int>(), span.at(1).get<int>()});
      }
    }
    if (rec.tokens.empty()) {
      throw IoError("manifest: " + path + ":" + std::to_string(lineno) +
                    ": empty token string");
    }
    m.records.push_back(std::move(rec));
  }
  return m;
}

void Manifest::save(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("manifest: cannot write " + path);
  for (const auto& rec : records) {
    json j;
    j["image"] = rec.image;
    j["tokens"] = rec.tokens;
    j["split"] = rec.split;
    if (!rec.token_spans.empty()) {
      json spans = json::array();
      for (const auto& s : rec.token_spans) spans.push_back({s[0], s[1]});
      j["token_spans"] = spans;
    }
    os << j.dump() << "\n";
  }
  if (!os) throw IoError("manifest: write failed for " + path);
}

Vocab build_vocab(const Manifest& manifest, int freq_threshold) {
  if (manifest.records.empty()) {
    throw ContractError("build_vocab: empty manifest");
  }
  std::map<std::string, long> counts;
  for (const auto& rec : manifest.records) {
    for (const auto& tok : split_tokens(rec.tokens)) counts[tok] += 1;
  }
  std::vector<std::string> kept;
  for (const auto& [tok, count] : counts) {
    if (count >= freq_threshold) kept.push_back(tok);
  }
  if (kept.empty()) {
    throw ContractError("build_vocab: no token met the frequency threshold " +
                        std::to_string(freq_threshold));
  }
  return Vocab::from_tokens(std::move(kept));
}

std::string FilterStats::summary() const {
  std::ostringstream os;
  os << "kept " << kept << ", removed " << removed_duplicate << " duplicate, "
     << removed_oov << " out-of-vocabulary, " << removed_size
     << " oversize, " << removed_length << " overlong";
  return os.str();
}

std::string join_path(const std::string& root, const std::string& rel) {
  if (root.empty() || rel.starts_with('/')) return rel;
  if (root.back() == '/') return root + rel;
  return root + "/" + rel;
}

Manifest filter_dataset(const Manifest& manifest, const Vocab& vocab,
                        int max_w, int max_h, int max_len,
                        const std::string& image_root, FilterStats* stats) {
  if (max_w <= 0 || max_h <= 0 || max_len <= 0) {
    throw ContractError("filter_dataset: limits must be positive");
  }
  FilterStats local;
  Manifest out;
  std::unordered_set<std::string> seen;
  for (const auto& rec : manifest.records) {
    if (!seen.insert(rec.tokens).second) {
      ++local.removed_duplicate;
      continue;
    }
    const auto tokens = split_tokens(rec.tokens);
    const bool oov = std::any_of(tokens.begin(), tokens.end(),
                                 [&](const std::string& t) {
                                   return !vocab.contains(t);
                                 });
    if (oov) {
      ++local.removed_oov;
      continue;
    }
    if (static_cast<int>(tokens.size()) > max_len) {
      ++local.removed_length;
      continue;
    }
    const ImageSize sz = probe_image_size(join_path(image_root, rec.image));
    if (sz.width > max_w || sz.height > max_h) {
      ++local.removed_size;
      continue;
    }
    out.records.push_back(rec);
    ++local.kept;
  }
  if (stats) *stats = local;
  return out;
}

std::vector<std::vector<size_t>> make_buckets(
    const std::vector<int>& target_lengths, int batch_size, Rng& rng,
    int bucket_width) {
  if (batch_size < 1) throw ContractError("make_buckets: batch_size < 1");
  if (bucket_width < 1) throw ContractError("make_buckets: bucket_width < 1");
  std::map<int, std::vector<size_t>> buckets;
  for (size_t i = 0; i < target_lengths.size(); ++i) {
    const int key = (target_lengths[i] + bucket_width - 1) / bucket_width;
    buckets[key].push_back(i);
  }
  std::vector<std::vector<size_t>> batches;
  for (auto& [key, members] : buckets) {
    rng.shuffle(members);
    for (size_t start = 0; start < members.size();
         start += static_cast<size_t>(batch_size)) {
      const size_t end =
          std::min(members.size(), start + static_cast<size_t>(batch_size));
      batches.emplace_back(members.begin() + static_cast<ptrdiff_t>(start),
                           members.begin() + static_cast<ptrdiff_t>(end));
    }
  }
  rng.shuffle(batches);
  return batches;
}

Batch assemble_batch(const Manifest& manifest, const std::string& image_root,
                     const Vocab& vocab, std::span<const size_t> indices) {
  Batch batch;
  std::vector<std::vector<int>> ids;
  ids.reserve(indices.size());
  for (const size_t idx : indices) {
    const auto& rec = manifest.records.at(idx);
    batch.images.push_back(load_image(join_path(image_root, rec.image)));
    ids.push_back(vocab.encode(split_tokens(rec.tokens), /*append_eos=*/true));
    batch.lengths.push_back(static_cast<int>(ids.back().size()));
    batch.tau_max = std::max(batch.tau_max, batch.lengths.back());
  }
  batch.targets.assign(
      static_cast<size_t>(batch.size()) * batch.tau_max, Vocab::kPad);
  for (int row = 0; row < batch.size(); ++row) {
    for (size_t t = 0; t < ids[static_cast<size_t>(row)].size(); ++t) {
      batch.targets[static_cast<size_t>(row) * batch.tau_max + t] =
          ids[static_cast<size_t>(row)][t];
    }
  }
  return batch;
}

}  // namespace im2markup
