#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kvmn/config.hpp"
#include "kvmn/data.hpp"
#include "kvmn/memory.hpp"
#include "kvmn/optim.hpp"

namespace kvmn {

/// Everything a training run owns: configuration, vocabulary, parameters,
/// optimizer accumulators and the number of updates applied so far.
struct TrainingState {
  Config config;
  Vocabulary vocab;
  KvMemoryModel model;
  Adadelta optimizer;
  std::uint64_t step = 0;

  /// Fresh state with parameters initialized from config.seed. The vocabulary
  /// size must equal config.model.vocab_size.
  TrainingState(Config config, Vocabulary vocab);
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, all integers little-endian:
///
///   "KVMN" | u32 version | u32 tensor count
///   per tensor: u32 name length | name bytes | u32 rank | u32 dims[rank] |
///               f64 data[product(dims)]
///   u32 metadata length | metadata JSON (config, step, vocabulary)
///
/// Tensors are "param/<name>" followed by "adadelta.g2/<name>" and
/// "adadelta.dx2/<name>" for every parameter that has optimizer state.
std::vector<std::uint8_t> serialize_checkpoint(const TrainingState& state);
TrainingState deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const TrainingState& state);
TrainingState load_checkpoint(const std::filesystem::path& path);

/// Loads and then applies `overrides`; DataError if an override changes any
/// structural key (dimension, mode, vocabulary size).
TrainingState load_checkpoint(const std::filesystem::path& path, const nlohmann::json& overrides);

}  // namespace kvmn
