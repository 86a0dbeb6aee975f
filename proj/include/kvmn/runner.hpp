#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kvmn/checkpoint.hpp"
#include "kvmn/config.hpp"
#include "kvmn/data.hpp"
#include "kvmn/metrics.hpp"

namespace kvmn {

/// Where training batches come from: a fixed episode list (every caption is
/// one item) or, when empty, the synthetic generator named by the config.
struct TrainingData {
  std::vector<Episode> episodes;
  bool synthetic() const noexcept { return episodes.empty(); }
};

/// Seed of the `index`-th synthetic episode in a named stream.
std::uint64_t episode_seed(std::uint64_t base_seed, std::uint64_t stream, std::uint64_t index);
inline constexpr std::uint64_t kTrainStream = 0x747261696eULL;
inline constexpr std::uint64_t kEvalStream = 0x6576616cULL;
inline constexpr std::uint64_t kDataStream = 0x64617461ULL;

/// `count` synthetic episodes of the configured task from `stream`.
std::vector<Episode> synthetic_episodes(const Config& config, std::uint64_t stream, std::size_t count);

/// Builds a fresh training state whose vocabulary comes from the dataset
/// captions; d_f, d_v and vocab must agree with the file.
TrainingState state_for_dataset(Config config, std::span<const DatasetRecord> records);
/// Fresh state over the synthetic vocabulary of config.vocab entries.
TrainingState state_for_synthetic(Config config);

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // loss.log and checkpoints
  /// Invoked after each update with (step, loss).
  std::function<void(std::uint64_t, double)> on_step;
};

struct TrainResult {
  std::vector<double> losses;  // one per update, in order
};

/// Runs config.steps Adadelta updates on batches of config.batch items,
/// appending "<step> <loss>" lines to out_dir/loss.log and writing
/// out_dir/final.kvmn (plus checkpoint-<step>.kvmn every checkpoint_every).
TrainResult run_train(TrainingState& state, const TrainingData& data, const TrainOptions& opts = {});

/// Applies a single update; returns the batch loss before the update.
double train_step(TrainingState& state, const TrainingData& data);

struct TeacherForcedStats {
  double loss = 0.0;  // mean summed caption loss
  double accuracy = 0.0;
  std::size_t tokens = 0;
};

/// Teacher-forced loss and argmax accuracy over the first caption of every
/// episode.
TeacherForcedStats teacher_forced(const KvMemoryModel& model, std::span<const Episode> episodes);

struct EvalItem {
  Episode episode;
  std::vector<Sentence> references;
};

/// Pairs each episode with surface-token references.
std::vector<EvalItem> eval_items_from_records(std::span<const DatasetRecord> records, const TrainingState& state);
std::vector<EvalItem> eval_items_from_episodes(std::vector<Episode> episodes, const Vocabulary& vocab);

struct EvalReport {
  double bleu4 = 0.0;
  double token_acc = 0.0;
  std::size_t n = 0;
  nlohmann::json to_json() const;
};

/// Beam-decodes every item (config.beam, config.max_len), scores BLEU@4
/// against its references and reports teacher-forced token accuracy.
EvalReport run_eval(const TrainingState& state, std::span<const EvalItem> items);

struct DecodedCaption {
  std::string id;
  std::vector<std::string> tokens;
  double log_prob = 0.0;
  nlohmann::json to_json() const;
};

std::vector<DecodedCaption> run_decode(const TrainingState& state, std::span<const Episode> episodes);

struct GradcheckEntry {
  AddressingMode mode;
  KeyMode key_mode;
  double max_error;
};

inline constexpr double kGradcheckTolerance = 1e-4;

/// Finite-difference check of the full sequence loss for every addressing x
/// key mode on a tiny model (T=5, V=7, every dim capped at 8).
std::vector<GradcheckEntry> run_gradcheck(const Config& config);
nlohmann::json gradcheck_report(const std::vector<GradcheckEntry>& entries);

/// Writes config.episodes synthetic episodes of config.task to `path`.
void generate_dataset(const Config& config, const std::filesystem::path& path);

}  // namespace kvmn
