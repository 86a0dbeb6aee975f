#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "kvmn/data.hpp"
#include "kvmn/memory.hpp"

namespace kvmn {

/// Every tunable of a run. Serialized as a flat JSON object whose keys match
/// the command-line flags (`--d_h=32` sets "d_h").
struct Config {
  ModelSpec model;
  SyntheticTask task = SyntheticTask::Copy;
  std::size_t slots = 10;  // T for synthetic episodes
  std::size_t batch = 16;
  std::size_t steps = 100;
  std::uint64_t seed = 1;
  double rho = 0.95;
  double eps = 1e-6;
  double clip = 5.0;  // global-norm threshold, 0 disables
  std::size_t beam = 5;
  std::size_t max_len = 30;
  bool length_normalize = false;
  bool bleu_smoothing = false;
  std::size_t region_top = 5;
  std::size_t min_count = 1;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t episodes = 100;        // synthetic eval / gen-data count
  std::size_t threads = 1;

  /// Starts from defaults and applies every key of `j`. Unknown keys, wrong
  /// types and invalid values raise UsageError.
  static Config from_json(const nlohmann::json& j);
  /// Applies the keys of `j` on top of this config.
  void merge(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;

  SyntheticSpec synthetic_spec() const;
  /// True when both configs describe the same parameter shapes.
  bool same_structure(const Config& other) const;
};

/// Config::from_json, falling back to the KVMN_SEED environment variable
/// when `j` has no "seed" key.
Config resolve_config(const nlohmann::json& j);

/// Keys that change parameter shapes; they cannot be overridden on a loaded
/// checkpoint.
bool is_structural_key(const std::string& key);

}  // namespace kvmn
