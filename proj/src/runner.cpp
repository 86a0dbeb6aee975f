#include "kvmn/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "kvmn/error.hpp"
#include "kvmn/optim.hpp"
#include "kvmn/random.hpp"
#include "kvmn/search.hpp"

namespace kvmn {

using nlohmann::json;

std::uint64_t episode_seed(std::uint64_t base_seed, std::uint64_t stream, std::uint64_t index) {
  return derive_seed(base_seed, stream, index);
}

std::vector<Episode> synthetic_episodes(const Config& config, std::uint64_t stream, std::size_t count) {
  std::vector<Episode> out;
  out.reserve(count);
  const auto spec = config.synthetic_spec();
  for (std::size_t i = 0; i < count; ++i) out.push_back(gen_episode(config.task, spec, episode_seed(config.seed, stream, i)));
  return out;
}

TrainingState state_for_synthetic(Config config) {
  config.validate();
  return TrainingState(config, Vocabulary::synthetic(config.model.vocab_size));
}

TrainingState state_for_dataset(Config config, std::span<const DatasetRecord> records) {
  if (records.empty()) throw DataError("dataset is empty");
  Vocabulary vocab = build_vocab(records, config.min_count);
  config.model.vocab_size = vocab.size();
  config.validate();
  for (const auto& r : records) {
    Episode e = to_episode(r, vocab, config.region_top);
    if (e.frames.cols() != config.model.frame_dim) {
      throw DataError(r.id + ": frame width " + std::to_string(e.frames.cols()) + " != d_f " +
                      std::to_string(config.model.frame_dim));
    }
    if (e.values.cols() != config.model.value_dim) {
      throw DataError(r.id + ": value width " + std::to_string(e.values.cols()) + " != d_v " +
                      std::to_string(config.model.value_dim));
    }
  }
  return TrainingState(config, std::move(vocab));
}

// ---------------------------------------------------------------------------

namespace {

void check_episode_dims(const TrainingState& state, const Episode& e) {
  const auto& spec = state.model.spec();
  if (e.frames.rank() != 2 || e.frames.cols() != spec.frame_dim || e.values.rank() != 2 ||
      e.values.cols() != spec.value_dim) {
    throw DataError(e.id + ": episode dims do not match the model (d_f=" + std::to_string(spec.frame_dim) +
                    ", d_v=" + std::to_string(spec.value_dim) + ")");
  }
}

// Shuffled (episode, caption) order for one pass over the data.
std::vector<std::pair<std::size_t, std::size_t>> epoch_order(const TrainingData& data, std::uint64_t seed,
                                                             std::uint64_t epoch) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < data.episodes.size(); ++i) {
    for (std::size_t c = 0; c < data.episodes[i].captions.size(); ++c) pairs.emplace_back(i, c);
  }
  Rng rng(derive_seed(seed, kTrainStream, epoch));
  for (std::size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[rng.below(i)]);
  return pairs;
}

}  // namespace

double train_step(TrainingState& state, const TrainingData& data) {
  const Config& cfg = state.config;
  std::vector<Episode> generated;
  std::vector<SequenceItem> items;
  items.reserve(cfg.batch);

  const std::uint64_t first = state.step * cfg.batch;
  if (data.synthetic()) {
    const auto spec = cfg.synthetic_spec();
    generated.reserve(cfg.batch);
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      generated.push_back(gen_episode(cfg.task, spec, episode_seed(cfg.seed, kTrainStream, first + i)));
    }
    for (const auto& e : generated) items.push_back({&e.frames, &e.values, e.captions.front()});
  } else {
    std::size_t total = 0;
    for (const auto& e : data.episodes) total += e.captions.size();
    if (total == 0) throw DataError("training data has no captions");
    std::map<std::uint64_t, std::vector<std::pair<std::size_t, std::size_t>>> orders;
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      const std::uint64_t g = first + i;
      const std::uint64_t epoch = g / total;
      auto it = orders.find(epoch);
      if (it == orders.end()) it = orders.emplace(epoch, epoch_order(data, cfg.seed, epoch)).first;
      const auto [ep, cap] = it->second[g % total];
      const Episode& e = data.episodes[ep];
      check_episode_dims(state, e);
      items.push_back({&e.frames, &e.values, e.captions[cap]});
    }
  }

  auto& params = state.model.params();
  params.zero_grads();
  const BatchStats stats = accumulate_batch_gradients(state.model, items, cfg.threads);
  if (!std::isfinite(stats.loss)) throw NumericError("non-finite loss at step " + std::to_string(state.step + 1));
  if (cfg.clip > 0.0) clip_gradients(params, cfg.clip);
  state.optimizer.step(params);
  for (const auto& [name, t] : params) {
    if (!t.all_finite()) throw NumericError("parameter '" + name + "' became non-finite at step " +
                                            std::to_string(state.step + 1));
  }
  params.drop_grads();
  ++state.step;
  return stats.loss;
}

TrainResult run_train(TrainingState& state, const TrainingData& data, const TrainOptions& opts) {
  for (const auto& e : data.episodes) check_episode_dims(state, e);

  std::ofstream log;
  if (opts.out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*opts.out_dir, ec);
    if (ec) throw IoError("cannot create '" + opts.out_dir->string() + "': " + ec.message());
    const auto mode = state.step == 0 ? std::ios::trunc : std::ios::app;
    log.open(*opts.out_dir / "loss.log", std::ios::out | mode);
    if (!log) throw IoError("cannot open loss log in '" + opts.out_dir->string() + "'");
  }

  TrainResult result;
  char line[64];
  for (std::size_t i = 0; i < state.config.steps; ++i) {
    const double loss = train_step(state, data);
    result.losses.push_back(loss);
    if (log.is_open()) {
      std::snprintf(line, sizeof line, "%llu %.17g\n", static_cast<unsigned long long>(state.step), loss);
      log << line << std::flush;
    }
    if (opts.on_step) opts.on_step(state.step, loss);
    if (opts.out_dir && state.config.checkpoint_every > 0 && state.step % state.config.checkpoint_every == 0) {
      save_checkpoint(*opts.out_dir / ("checkpoint-" + std::to_string(state.step) + ".kvmn"), state);
    }
  }
  if (opts.out_dir) save_checkpoint(*opts.out_dir / "final.kvmn", state);
  return result;
}

// ---------------------------------------------------------------------------

TeacherForcedStats teacher_forced(const KvMemoryModel& model, std::span<const Episode> episodes) {
  TeacherForcedStats out;
  if (episodes.empty()) return out;
  std::size_t correct = 0;
  for (const auto& e : episodes) {
    Graph g;
    auto seq = model.sequence_loss(g, e.frames, e.values, e.captions.front());
    out.loss += g.value(seq.loss).item();
    out.tokens += seq.tokens;
    correct += seq.correct;
  }
  out.loss /= static_cast<double>(episodes.size());
  out.accuracy = out.tokens ? static_cast<double>(correct) / static_cast<double>(out.tokens) : 0.0;
  return out;
}

std::vector<EvalItem> eval_items_from_records(std::span<const DatasetRecord> records, const TrainingState& state) {
  std::vector<EvalItem> out;
  for (const auto& r : records) {
    EvalItem item;
    item.episode = to_episode(r, state.vocab, state.config.region_top);
    check_episode_dims(state, item.episode);
    for (const auto& c : r.captions) item.references.push_back(tokenize(c));
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<EvalItem> eval_items_from_episodes(std::vector<Episode> episodes, const Vocabulary& vocab) {
  std::vector<EvalItem> out;
  for (auto& e : episodes) {
    EvalItem item;
    for (const auto& c : e.captions) item.references.push_back(vocab.decode(c));
    item.episode = std::move(e);
    out.push_back(std::move(item));
  }
  return out;
}

json EvalReport::to_json() const { return json{{"bleu4", bleu4}, {"token_acc", token_acc}, {"n", n}}; }

EvalReport run_eval(const TrainingState& state, std::span<const EvalItem> items) {
  if (items.empty()) throw DataError("evaluation set is empty");
  const Config& cfg = state.config;
  const SearchOptions search{cfg.beam, cfg.max_len, cfg.length_normalize};
  std::vector<EvalPair> pairs;
  std::vector<Episode> episodes;
  for (const auto& item : items) {
    check_episode_dims(state, item.episode);
    auto result = beam_search(state.model, item.episode, search);
    pairs.push_back({state.vocab.decode(result.tokens), item.references});
    episodes.push_back(item.episode);
  }
  EvalReport report;
  report.bleu4 = bleu4(pairs, cfg.bleu_smoothing);
  report.token_acc = teacher_forced(state.model, episodes).accuracy;
  report.n = items.size();
  return report;
}

json DecodedCaption::to_json() const {
  std::string caption;
  for (const auto& t : tokens) {
    if (!caption.empty()) caption += ' ';
    caption += t;
  }
  return json{{"id", id}, {"caption", caption}, {"log_prob", log_prob}};
}

std::vector<DecodedCaption> run_decode(const TrainingState& state, std::span<const Episode> episodes) {
  const Config& cfg = state.config;
  const SearchOptions search{cfg.beam, cfg.max_len, cfg.length_normalize};
  std::vector<DecodedCaption> out;
  for (const auto& e : episodes) {
    check_episode_dims(state, e);
    auto result = beam_search(state.model, e, search);
    out.push_back({e.id, state.vocab.decode(result.tokens), result.log_prob});
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<GradcheckEntry> run_gradcheck(const Config& config) {
  config.validate();
  constexpr std::size_t kSlots = 5;
  constexpr std::size_t kVocab = 7;
  static constexpr std::size_t kCap = 8;
  auto cap = [](std::size_t d) { return std::min(d, kCap); };

  std::vector<GradcheckEntry> out;
  for (AddressingMode mode : {AddressingMode::None, AddressingMode::Temporal, AddressingMode::Recurrent}) {
    for (KeyMode key_mode : {KeyMode::Direct, KeyMode::Rnn}) {
      ModelSpec spec;
      spec.mode = mode;
      spec.key_mode = key_mode;
      spec.key_dim = cap(config.model.key_dim);
      spec.frame_dim = key_mode == KeyMode::Direct ? spec.key_dim : cap(config.model.frame_dim);
      spec.value_dim = cap(config.model.value_dim);
      spec.hidden_dim = cap(config.model.hidden_dim);
      spec.embed_dim = cap(config.model.embed_dim);
      spec.attention_dim = cap(config.model.attention_dim);
      spec.vocab_size = kVocab;
      spec.standard_lstm_output = config.model.standard_lstm_output;

      KvMemoryModel model(spec);
      init_params(model.params(), config.seed);
      const Episode e =
          gen_copy_episode(SyntheticSpec{kSlots, kVocab, spec.frame_dim, spec.value_dim}, derive_seed(config.seed, 0x6763));
      auto tensors = model.params().tensors();
      const double err = grad_check(
          [&](Graph& g) { return model.sequence_loss(g, e.frames, e.values, e.captions.front()).loss; }, tensors);
      out.push_back({mode, key_mode, err});
    }
  }
  return out;
}

json gradcheck_report(const std::vector<GradcheckEntry>& entries) {
  json results = json::array();
  double worst = 0.0;
  for (const auto& e : entries) {
    results.push_back({{"mode", std::string(to_string(e.mode))},
                       {"key_mode", std::string(to_string(e.key_mode))},
                       {"max_error", e.max_error}});
    worst = std::max(worst, e.max_error);
  }
  return json{{"results", results}, {"max_error", worst}, {"tolerance", kGradcheckTolerance},
              {"pass", worst < kGradcheckTolerance}};
}

void generate_dataset(const Config& config, const std::filesystem::path& path) {
  config.validate();
  const Vocabulary vocab = Vocabulary::synthetic(config.model.vocab_size);
  std::vector<DatasetRecord> records;
  for (const auto& e : synthetic_episodes(config, kDataStream, config.episodes)) records.push_back(to_record(e, vocab));
  write_dataset(path, records);
}

}  // namespace kvmn
