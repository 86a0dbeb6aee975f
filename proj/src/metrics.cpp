#include "kvmn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>

#include "kvmn/error.hpp"

namespace kvmn {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> count_ngrams(const Sentence& s, std::size_t n) {
  std::map<Ngram, std::size_t> counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[Ngram(s.begin() + i, s.begin() + i + n)];
  return counts;
}

void check_pair(const EvalPair& p) {
  if (p.references.empty()) throw ContractError("evaluation pair without references");
}

}  // namespace

NgramCounts modified_precision(std::span<const EvalPair> pairs, std::size_t n) {
  if (n == 0) throw ContractError("modified_precision: n must be >= 1");
  NgramCounts out;
  for (const auto& p : pairs) {
    check_pair(p);
    auto hyp = count_ngrams(p.hypothesis, n);
    std::map<Ngram, std::size_t> max_ref;
    for (const auto& ref : p.references) {
      for (const auto& [g, c] : count_ngrams(ref, n)) max_ref[g] = std::max(max_ref[g], c);
    }
    for (const auto& [g, c] : hyp) {
      out.total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) out.matches += std::min(c, it->second);
    }
  }
  return out;
}

double bleu(std::span<const EvalPair> pairs, const BleuOptions& opts) {
  if (opts.max_order == 0) throw ContractError("bleu: max_order must be >= 1");
  std::size_t hyp_len = 0, ref_len = 0;
  for (const auto& p : pairs) {
    check_pair(p);
    hyp_len += p.hypothesis.size();
    const long c = static_cast<long>(p.hypothesis.size());
    std::size_t best = p.references.front().size();
    for (const auto& r : p.references) {
      const long d = std::labs(static_cast<long>(r.size()) - c);
      const long bd = std::labs(static_cast<long>(best) - c);
      if (d < bd || (d == bd && r.size() < best)) best = r.size();
    }
    ref_len += best;
  }

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= opts.max_order; ++n) {
    auto counts = modified_precision(pairs, n);
    double num = static_cast<double>(counts.matches);
    double den = static_cast<double>(counts.total);
    if (opts.smoothing) {
      num += 1.0;
      den += 1.0;
    }
    if (num == 0.0 || den == 0.0) return 0.0;
    log_sum += std::log(num / den);
  }
  const double geo = std::exp(log_sum / static_cast<double>(opts.max_order));
  if (hyp_len == 0) return 0.0;
  const double bp = hyp_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)) : 1.0;
  return std::clamp(geo * bp, 0.0, 1.0);
}

}  // namespace kvmn
