#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kvmn/metrics.hpp"

namespace kvmn::testing {

inline Sentence words(const std::string& s) {
  std::istringstream in(s);
  Sentence out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

// Reference scorer written from the metric's definition: n-grams keyed as
// joined strings, per-sentence clipping, corpus sums, brevity penalty from
// the closest reference length.
inline double reference_bleu(const std::vector<EvalPair>& corpus, int max_n = 4) {
  std::vector<double> match(max_n + 1, 0.0), total(max_n + 1, 0.0);
  double hyp_len = 0.0, ref_len = 0.0;
  for (const auto& p : corpus) {
    for (int n = 1; n <= max_n; ++n) {
      auto grams = [n](const Sentence& s) {
        std::map<std::string, int> m;
        for (int i = 0; i + n <= static_cast<int>(s.size()); ++i) {
          std::string key;
          for (int k = 0; k < n; ++k) key += s[i + k] + "\x1f";
          ++m[key];
        }
        return m;
      };
      const auto h = grams(p.hypothesis);
      std::map<std::string, int> best;
      for (const auto& r : p.references) {
        for (const auto& [g, c] : grams(r)) best[g] = std::max(best[g], c);
      }
      for (const auto& [g, c] : h) {
        total[n] += c;
        match[n] += std::min(c, best.count(g) ? best[g] : 0);
      }
    }
    hyp_len += static_cast<double>(p.hypothesis.size());
    double closest = 1e300;
    double closest_len = 0.0;
    for (const auto& r : p.references) {
      const double d = std::fabs(static_cast<double>(r.size()) - static_cast<double>(p.hypothesis.size()));
      if (d < closest || (d == closest && static_cast<double>(r.size()) < closest_len)) {
        closest = d;
        closest_len = static_cast<double>(r.size());
      }
    }
    ref_len += closest_len;
  }
  double log_p = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    if (match[n] == 0.0) return 0.0;
    log_p += std::log(match[n] / total[n]) / max_n;
  }
  const double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
  return bp * std::exp(log_p);
}

inline std::vector<EvalPair> mini_corpus() {
  return {
      {words("a man is riding a horse on the beach"),
       {words("a man rides a horse on the beach"), words("a person is riding a horse along the sand"),
        words("someone is riding a horse")}},
      {words("a woman is slicing an onion"),
       {words("a woman is slicing onions"), words("a woman cuts an onion into pieces")}},
      {words("the cat is playing with a ball of yarn"),
       {words("a cat is playing with yarn"), words("the cat plays with a ball of yarn happily")}},
  };
}

}  // namespace kvmn::testing
