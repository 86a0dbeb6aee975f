#pragma once

#include <cstddef>
#include <vector>

#include "kvmn/data.hpp"
#include "kvmn/memory.hpp"

namespace kvmn {

struct Hypothesis {
  std::vector<TokenId> tokens;  // starts with BOS; ends with EOS when finished
  double log_prob = 0.0;
  bool finished = false;
  AddressingState addressing;
  DecoderState decoder;
};

struct SearchOptions {
  std::size_t beam_width = 5;
  std::size_t max_len = 30;  // generated tokens, EOS included
  bool length_normalize = false;
};

struct SearchResult {
  std::vector<TokenId> tokens;  // BOS ... [EOS]
  double log_prob = 0.0;        // cumulative, never length-normalized
  bool finished = false;
};

/// True when `a` ranks ahead of `b`: higher score, then the lexicographically
/// smaller token sequence.
bool ranks_before(double score_a, const std::vector<TokenId>& a, double score_b, const std::vector<TokenId>& b);

/// Beam search over cumulative log-probability. Finished hypotheses stay in
/// the beam, frozen, and compete with live expansions for the B slots. PAD and
/// BOS are never proposed. Stops when every hypothesis has finished or
/// max_len tokens have been generated; returns the best finished hypothesis,
/// or the best unfinished one if none finished.
SearchResult beam_search(const KvMemoryModel& model, const Episode& episode, const SearchOptions& opts);

/// Argmax decoding with ties broken toward the lowest eligible id.
SearchResult greedy_decode(const KvMemoryModel& model, const Episode& episode, std::size_t max_len);

/// Teacher-forced log-probability of `tokens` (BOS first) under the model.
double sequence_log_prob(const KvMemoryModel& model, const Episode& episode, std::span<const TokenId> tokens);

}  // namespace kvmn
