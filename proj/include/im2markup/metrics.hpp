#pragma once

#include <string>
#include <vector>

#include "im2markup/image.hpp"

namespace im2markup {

using TokenSeq = std::vector<std::string>;

// Corpus-level BLEU over 1..4-grams: clipped precisions, geometric mean,
// brevity penalty exp(1 - r/c) when the hypotheses run short. No smoothing;
// a zero n-gram count zeroes the score.
double corpus_bleu(const std::vector<TokenSeq>& hypotheses,
                   const std::vector<TokenSeq>& references);

// Word-level Levenshtein distance (unit costs) divided by the reference
// length.
double edit_distance(const TokenSeq& hypothesis, const TokenSeq& reference);

// Binary pixel-equality verdict after binarizing at 128, discarding all-white
// columns, and allowing a translation of up to 5 px on each axis.
bool visual_match(const Image& a, const Image& b);

struct CorpusScore {
  double bleu = 0.0;
  double mean_edit_distance = 0.0;
  double visual_match_rate = -1.0;  // < 0 when no images were scored
  size_t pair_count = 0;
};

CorpusScore score_corpus(const std::vector<TokenSeq>& hypotheses,
                         const std::vector<TokenSeq>& references);

}  // namespace im2markup
