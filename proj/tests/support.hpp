#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "kvmn/data.hpp"
#include "kvmn/memory.hpp"
#include "kvmn/optim.hpp"
#include "kvmn/random.hpp"
#include "kvmn/tensor.hpp"

namespace kvmn::testing {

inline Tensor random_tensor(Rng& rng, Shape dims, double scale = 1.0) {
  Tensor t(std::move(dims));
  for (double& v : t.data()) v = rng.uniform(-scale, scale);
  return t;
}

inline void fill(ParamStore& params, double value) {
  for (auto& [_, t] : params) {
    for (double& v : t.data()) v = value;
  }
}

inline void randomize(ParamStore& params, Rng& rng, double scale) {
  for (auto& [_, t] : params) {
    for (double& v : t.data()) v = rng.uniform(-scale, scale);
  }
}

struct TinyModel {
  ModelSpec spec;
  KvMemoryModel model;
  Episode episode;
};

inline ModelSpec tiny_spec(AddressingMode mode, KeyMode key_mode = KeyMode::Direct, std::size_t vocab = 7,
                           std::size_t dim = 4) {
  ModelSpec s;
  s.mode = mode;
  s.key_mode = key_mode;
  s.frame_dim = dim;
  s.key_dim = dim;
  s.value_dim = dim;
  s.hidden_dim = dim + 1;
  s.embed_dim = dim;
  s.attention_dim = dim;
  s.vocab_size = vocab;
  return s;
}

/// Random episode with `slots` frames and one random caption of `length`
/// content tokens.
inline Episode random_episode(const ModelSpec& spec, std::size_t slots, std::size_t length, Rng& rng) {
  Episode e;
  e.id = "rand";
  e.frames = random_tensor(rng, {slots, spec.frame_dim});
  e.values = random_tensor(rng, {slots, spec.value_dim});
  std::vector<TokenId> cap{kBos};
  for (std::size_t i = 0; i < length; ++i) {
    cap.push_back(static_cast<TokenId>(kReservedTokens - 1 + rng.below(spec.vocab_size - kReservedTokens + 1)));
  }
  cap.push_back(kEos);
  e.captions.push_back(cap);
  return e;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace kvmn::testing
