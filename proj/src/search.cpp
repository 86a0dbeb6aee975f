#include "kvmn/search.hpp"

#include <algorithm>

#include "kvmn/error.hpp"

namespace kvmn {

bool ranks_before(double score_a, const std::vector<TokenId>& a, double score_b, const std::vector<TokenId>& b) {
  if (score_a != score_b) return score_a > score_b;
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

namespace {

bool eligible(TokenId t) { return t != kPad && t != kBos; }

double rank_score(double log_prob, std::size_t tokens, bool length_normalize) {
  // tokens includes BOS
  if (!length_normalize || tokens <= 1) return log_prob;
  return log_prob / static_cast<double>(tokens - 1);
}

struct Candidate {
  std::size_t parent;  // index into the current beam
  TokenId token;       // appended token; unused for carried hypotheses
  bool carried;        // finished hypothesis carried over unchanged
  double log_prob;
  std::vector<TokenId> tokens;
  double score;
};

}  // namespace

SearchResult beam_search(const KvMemoryModel& model, const Episode& episode, const SearchOptions& opts) {
  if (opts.beam_width == 0) throw UsageError("beam width must be >= 1");
  if (opts.max_len == 0) throw UsageError("max_len must be >= 1");
  const EpisodeMemory mem = model.prepare_memory(episode.frames, episode.values);
  const std::size_t vocab = model.spec().vocab_size;

  std::vector<Hypothesis> beam(1);
  beam[0].tokens = {kBos};
  beam[0].addressing = model.initial_addressing(mem);
  beam[0].decoder = model.initial_decoder();

  std::vector<StepOutput> outputs;
  for (std::size_t step = 0; step < opts.max_len; ++step) {
    if (std::all_of(beam.begin(), beam.end(), [](const Hypothesis& h) { return h.finished; })) break;

    outputs.assign(beam.size(), StepOutput{});
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < beam.size(); ++i) {
      const Hypothesis& h = beam[i];
      if (h.finished) {
        cands.push_back({i, 0, true, h.log_prob, h.tokens, rank_score(h.log_prob, h.tokens.size(), opts.length_normalize)});
        continue;
      }
      DecoderState dec = h.decoder;
      dec.prev_token = h.tokens.back();
      outputs[i] = model.step(mem, h.addressing, dec);
      for (TokenId tok = 0; tok < vocab; ++tok) {
        if (!eligible(tok)) continue;
        Candidate c{i, tok, false, h.log_prob + outputs[i].log_probs[tok], h.tokens, 0.0};
        c.tokens.push_back(tok);
        c.score = rank_score(c.log_prob, c.tokens.size(), opts.length_normalize);
        cands.push_back(std::move(c));
      }
    }

    const std::size_t keep = std::min(opts.beam_width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) { return ranks_before(a.score, a.tokens, b.score, b.tokens); });

    std::vector<Hypothesis> next;
    next.reserve(keep);
    for (std::size_t k = 0; k < keep; ++k) {
      Candidate& c = cands[k];
      if (c.carried) {
        next.push_back(std::move(beam[c.parent]));
        continue;
      }
      Hypothesis h;
      h.tokens = std::move(c.tokens);
      h.log_prob = c.log_prob;
      h.finished = c.token == kEos;
      h.addressing = outputs[c.parent].addressing;
      h.decoder = outputs[c.parent].decoder;
      next.push_back(std::move(h));
    }
    // Each parent index is carried at most once, so the moves above are safe.
    beam = std::move(next);
  }

  const Hypothesis* best = nullptr;
  auto better = [&](const Hypothesis& h) {
    if (!best) return true;
    return ranks_before(rank_score(h.log_prob, h.tokens.size(), opts.length_normalize), h.tokens,
                        rank_score(best->log_prob, best->tokens.size(), opts.length_normalize), best->tokens);
  };
  for (const auto& h : beam) {
    if (h.finished && better(h)) best = &h;
  }
  if (!best) {
    for (const auto& h : beam) {
      if (better(h)) best = &h;
    }
  }
  return {best->tokens, best->log_prob, best->finished};
}

SearchResult greedy_decode(const KvMemoryModel& model, const Episode& episode, std::size_t max_len) {
  if (max_len == 0) throw UsageError("max_len must be >= 1");
  const EpisodeMemory mem = model.prepare_memory(episode.frames, episode.values);
  AddressingState addr = model.initial_addressing(mem);
  DecoderState dec = model.initial_decoder();
  SearchResult out;
  out.tokens = {kBos};
  for (std::size_t step = 0; step < max_len; ++step) {
    dec.prev_token = out.tokens.back();
    StepOutput s = model.step(mem, addr, dec);
    // EOS is the lowest eligible id; strict comparison keeps the lowest on ties.
    TokenId best = kEos;
    for (TokenId tok = kEos + 1; tok < s.log_probs.size(); ++tok) {
      if (s.log_probs[tok] > s.log_probs[best]) best = tok;
    }
    out.log_prob += s.log_probs[best];
    out.tokens.push_back(best);
    addr = std::move(s.addressing);
    dec = std::move(s.decoder);
    if (best == kEos) {
      out.finished = true;
      break;
    }
  }
  return out;
}

double sequence_log_prob(const KvMemoryModel& model, const Episode& episode, std::span<const TokenId> tokens) {
  if (tokens.empty() || tokens.front() != kBos) throw ContractError("sequence_log_prob: sequence must start with BOS");
  const EpisodeMemory mem = model.prepare_memory(episode.frames, episode.values);
  AddressingState addr = model.initial_addressing(mem);
  DecoderState dec = model.initial_decoder();
  double total = 0.0;
  for (std::size_t j = 1; j < tokens.size(); ++j) {
    dec.prev_token = tokens[j - 1];
    StepOutput s = model.step(mem, addr, dec);
    if (tokens[j] >= s.log_probs.size()) throw ContractError("sequence_log_prob: token outside vocabulary");
    total += s.log_probs[tokens[j]];
    addr = std::move(s.addressing);
    dec = std::move(s.decoder);
  }
  return total;
}

}  // namespace kvmn
