#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace kvmn {

using Sentence = std::vector<std::string>;

struct EvalPair {
  Sentence hypothesis;
  std::vector<Sentence> references;  // at least one
};

struct NgramCounts {
  std::size_t matches = 0;  // clipped
  std::size_t total = 0;    // hypothesis n-grams
};

/// Corpus-summed clipped n-gram matches: each hypothesis n-gram count is
/// clipped at its maximum count in any single reference.
NgramCounts modified_precision(std::span<const EvalPair> pairs, std::size_t n);

struct BleuOptions {
  std::size_t max_order = 4;
  bool smoothing = false;  // add-one on every order's numerator and denominator
};

/// Corpus BLEU: geometric mean of modified precisions times the brevity
/// penalty exp(1 - r/c) when c < r, with r summing the closest reference
/// length per hypothesis (shorter reference on ties).
double bleu(std::span<const EvalPair> pairs, const BleuOptions& opts = {});
inline double bleu4(std::span<const EvalPair> pairs, bool smoothing = false) {
  return bleu(pairs, BleuOptions{4, smoothing});
}

}  // namespace kvmn
