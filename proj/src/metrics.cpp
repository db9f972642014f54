#include "im2markup/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "im2markup/error.hpp"

namespace im2markup {

namespace {

constexpr int kMaxGram = 4;
constexpr int kShiftSlack = 5;
constexpr uint8_t kInkThreshold = 128;  // v < 128 counts as ink

// joins an n-gram into one hashable key; '\x1f' cannot appear in tokens
std::string gram_key(const TokenSeq& seq, size_t start, int n) {
  std::string key;
  for (int i = 0; i < n; ++i) {
    if (i) key += '\x1f';
    key += seq[start + static_cast<size_t>(i)];
  }
  return key;
}

}  // namespace

double corpus_bleu(const std::vector<TokenSeq>& hypotheses,
                   const std::vector<TokenSeq>& references) {
  if (hypotheses.size() != references.size()) {
    throw ContractError("corpus_bleu: " + std::to_string(hypotheses.size()) +
                        " hypotheses for " + std::to_string(references.size()) +
                        " references");
  }
  if (references.empty()) throw ContractError("corpus_bleu: empty corpus");
  long long hyp_len = 0, ref_len = 0;
  long long matched[kMaxGram] = {0, 0, 0, 0};
  long long total[kMaxGram] = {0, 0, 0, 0};
  for (size_t s = 0; s < hypotheses.size(); ++s) {
    const TokenSeq& hyp = hypotheses[s];
    const TokenSeq& ref = references[s];
    if (ref.empty()) {
      throw ContractError("corpus_bleu: empty reference at index " +
                          std::to_string(s));
    }
    hyp_len += static_cast<long long>(hyp.size());
    ref_len += static_cast<long long>(ref.size());
    for (int n = 1; n <= kMaxGram; ++n) {
      if (hyp.size() < static_cast<size_t>(n)) continue;
      std::unordered_map<std::string, long long> ref_counts;
      if (ref.size() >= static_cast<size_t>(n)) {
        for (size_t i = 0; i + n <= ref.size(); ++i) {
          ref_counts[gram_key(ref, i, n)] += 1;
        }
      }
      std::unordered_map<std::string, long long> hyp_counts;
      for (size_t i = 0; i + n <= hyp.size(); ++i) {
        hyp_counts[gram_key(hyp, i, n)] += 1;
      }
      for (const auto& [key, count] : hyp_counts) {
        total[n - 1] += count;
        auto it = ref_counts.find(key);
        if (it != ref_counts.end()) {
          matched[n - 1] += std::min(count, it->second);
        }
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_precision = 0.0;
  for (int n = 0; n < kMaxGram; ++n) {
    if (matched[n] == 0 || total[n] == 0) return 0.0;
    log_precision += std::log(static_cast<double>(matched[n]) /
                              static_cast<double>(total[n]));
  }
  const double brevity =
      hyp_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) /
                               static_cast<double>(hyp_len));
  return brevity * std::exp(log_precision / kMaxGram);
}

double edit_distance(const TokenSeq& hypothesis, const TokenSeq& reference) {
  if (reference.empty()) throw ContractError("edit_distance: empty reference");
  const size_t n = hypothesis.size(), m = reference.size();
  std::vector<long> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<long>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<long>(i);
    for (size_t j = 1; j <= m; ++j) {
      const long subst =
          prev[j - 1] + (hypothesis[i - 1] == reference[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, subst});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[m]) / static_cast<double>(m);
}

namespace {

struct InkPixels {
  // (row, col) of every ink pixel after white-column removal, sorted
  std::vector<std::pair<int, int>> pixels;
  int min_row = 0;
  int min_col = 0;
};

InkPixels stripped_ink(const Image& img) {
  std::vector<int> col_map(static_cast<size_t>(img.width), -1);
  int kept = 0;
  for (int x = 0; x < img.width; ++x) {
    bool has_ink = false;
    for (int y = 0; y < img.height && !has_ink; ++y) {
      has_ink = img.at(x, y) < kInkThreshold;
    }
    if (has_ink) col_map[static_cast<size_t>(x)] = kept++;
  }
  InkPixels out;
  out.min_row = img.height;
  out.min_col = kept;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (img.at(x, y) < kInkThreshold) {
        const int col = col_map[static_cast<size_t>(x)];
        out.pixels.emplace_back(y, col);
        out.min_row = std::min(out.min_row, y);
        out.min_col = std::min(out.min_col, col);
      }
    }
  }
  return out;
}

}  // namespace

bool visual_match(const Image& a, const Image& b) {
  const InkPixels ia = stripped_ink(a);
  const InkPixels ib = stripped_ink(b);
  if (ia.pixels.empty() || ib.pixels.empty()) {
    return ia.pixels.empty() && ib.pixels.empty();
  }
  if (ia.pixels.size() != ib.pixels.size()) return false;
  // exact set equality under translation forces the shift to align the
  // bounding boxes, so only one candidate shift exists
  const int dy = ia.min_row - ib.min_row;
  const int dx = ia.min_col - ib.min_col;
  if (std::abs(dx) > kShiftSlack || std::abs(dy) > kShiftSlack) return false;
  for (size_t i = 0; i < ia.pixels.size(); ++i) {
    if (ia.pixels[i].first != ib.pixels[i].first + dy ||
        ia.pixels[i].second != ib.pixels[i].second + dx) {
      return false;
    }
  }
  return true;
}

CorpusScore score_corpus(const std::vector<TokenSeq>& hypotheses,
                         const std::vector<TokenSeq>& references) {
  CorpusScore score;
  score.bleu = corpus_bleu(hypotheses, references);
  double total = 0.0;
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    total += edit_distance(hypotheses[i], references[i]);
  }
  score.mean_edit_distance = total / static_cast<double>(hypotheses.size());
  score.pair_count = hypotheses.size();
  return score;
}

}  // namespace im2markup
