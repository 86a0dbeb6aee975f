#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "kvmn/error.hpp"
#include "kvmn/runner.hpp"
#include "kvmn/search.hpp"
#include "support.hpp"

using namespace kvmn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "kvmn_test_runner" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Config small_config() {
  return Config::from_json({{"d_f", 6}, {"d_k", 6}, {"d_v", 5}, {"d_h", 7}, {"d_e", 4}, {"a", 5},
                            {"vocab", 9}, {"T", 4}, {"batch", 3}, {"steps", 4}});
}

}  // namespace

TEST_CASE("config defaults and json round trip") {
  const Config c;
  CHECK(c.model.key_dim == 16);
  CHECK(c.model.value_dim == 16);
  CHECK(c.model.hidden_dim == 32);
  CHECK(c.model.embed_dim == 16);
  CHECK(c.model.attention_dim == 16);
  CHECK(c.slots == 10);
  CHECK(c.model.vocab_size == 20);
  CHECK(c.batch == 16);
  CHECK(c.rho == 0.95);
  CHECK(c.eps == 1e-6);
  CHECK(c.clip == 5.0);
  CHECK(c.beam == 5);
  CHECK_FALSE(c.model.standard_lstm_output);

  Config d = small_config();
  d.model.mode = AddressingMode::Temporal;
  d.bleu_smoothing = true;
  const Config back = Config::from_json(d.to_json());
  CHECK(back.to_json() == d.to_json());
}

TEST_CASE("config errors are usage errors") {
  CHECK_THROWS_AS(Config::from_json({{"nope", 1}}), UsageError);
  CHECK_THROWS_AS(Config::from_json({{"d_h", "big"}}), UsageError);
  CHECK_THROWS_AS(Config::from_json({{"d_h", -1}}), UsageError);
  CHECK_THROWS_AS(Config::from_json({{"mode", "q"}}), UsageError);
  CHECK_THROWS_AS(Config::from_json({{"rho", 1.5}}).validate(), UsageError);
  CHECK_THROWS_AS(Config::from_json({{"d_k", 0}}).validate(), UsageError);
  CHECK_THROWS_AS(Config::from_json(json::array()), UsageError);
  CHECK(is_structural_key("d_h"));
  CHECK_FALSE(is_structural_key("steps"));
}

TEST_CASE("KVMN_SEED is the seed fallback") {
  ::setenv("KVMN_SEED", "1234", 1);
  CHECK(resolve_config(json::object()).seed == 1234);
  CHECK(resolve_config({{"seed", 5}}).seed == 5);
  ::setenv("KVMN_SEED", "abc", 1);
  CHECK_THROWS_AS(resolve_config(json::object()), UsageError);
  ::unsetenv("KVMN_SEED");
  CHECK(resolve_config(json::object()).seed == 1);
}

TEST_CASE("checkpoint layout starts with the documented header") {
  TrainingState state = state_for_synthetic(small_config());
  const auto bytes = serialize_checkpoint(state);
  REQUIRE(bytes.size() > 12);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "KVMN");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  const std::uint32_t count = bytes[8] | (bytes[9] << 8) | (bytes[10] << 16) | (bytes[11] << 24);
  CHECK(count == state.model.params().count());
  const std::uint32_t name_len = bytes[12] | (bytes[13] << 8);
  CHECK(std::string(bytes.begin() + 16, bytes.begin() + 16 + name_len) == "param/addr.U_a");
}

TEST_CASE("checkpoint round trip is byte identical") {
  const auto dir = fresh_dir("roundtrip");
  TrainingState state = state_for_synthetic(small_config());
  run_train(state, TrainingData{});
  save_checkpoint(dir / "a.kvmn", state);
  const TrainingState loaded = load_checkpoint(dir / "a.kvmn");
  save_checkpoint(dir / "b.kvmn", loaded);
  CHECK(slurp(dir / "a.kvmn") == slurp(dir / "b.kvmn"));
  CHECK(loaded.step == 4);
  CHECK(loaded.vocab == state.vocab);
}

TEST_CASE("checkpoint load refuses mismatches and corruption") {
  const auto dir = fresh_dir("mismatch");
  TrainingState state = state_for_synthetic(small_config());
  save_checkpoint(dir / "c.kvmn", state);
  CHECK_THROWS_AS(load_checkpoint(dir / "c.kvmn", json{{"d_h", 8}}), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "c.kvmn", json{{"mode", "t"}}), DataError);
  const TrainingState ok = load_checkpoint(dir / "c.kvmn", json{{"steps", 9}, {"rho", 0.9}});
  CHECK(ok.config.steps == 9);
  CHECK(ok.optimizer.rho() == 0.9);

  auto bytes = serialize_checkpoint(state);
  auto truncated = bytes;
  truncated.resize(truncated.size() / 2);
  CHECK_THROWS_AS(deserialize_checkpoint(truncated), DataError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad_magic), DataError);
  auto bad_version = bytes;
  bad_version[4] = 2;
  CHECK_THROWS_AS(deserialize_checkpoint(bad_version), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.kvmn"), IoError);
}

TEST_CASE("zero steps leaves the initial parameters") {
  Config c = small_config();
  c.steps = 0;
  const auto dir = fresh_dir("zero");
  TrainingState state = state_for_synthetic(c);
  const TrainingState init = state_for_synthetic(c);
  run_train(state, TrainingData{}, TrainOptions{dir, {}});
  const TrainingState loaded = load_checkpoint(dir / "final.kvmn");
  for (const auto& [name, t] : init.model.params()) CHECK(loaded.model.params().at(name) == t);
  CHECK(slurp(dir / "loss.log").empty());
}

TEST_CASE("training is deterministic and logs one line per step") {
  const auto d1 = fresh_dir("det1");
  const auto d2 = fresh_dir("det2");
  for (const auto& d : {d1, d2}) {
    TrainingState state = state_for_synthetic(small_config());
    run_train(state, TrainingData{}, TrainOptions{d, {}});
  }
  const std::string log = slurp(d1 / "loss.log");
  CHECK(log == slurp(d2 / "loss.log"));
  CHECK(std::count(log.begin(), log.end(), '\n') == 4);
  CHECK(slurp(d1 / "final.kvmn") == slurp(d2 / "final.kvmn"));
}

TEST_CASE("resuming continues the same run") {
  const auto straight = fresh_dir("straight");
  const auto split = fresh_dir("split");
  Config c = small_config();
  c.steps = 6;
  {
    TrainingState s = state_for_synthetic(c);
    run_train(s, TrainingData{}, TrainOptions{straight, {}});
  }
  {
    Config first = c;
    first.steps = 2;
    TrainingState s = state_for_synthetic(first);
    run_train(s, TrainingData{}, TrainOptions{split, {}});
    TrainingState resumed = load_checkpoint(split / "final.kvmn", json{{"steps", 4}});
    run_train(resumed, TrainingData{}, TrainOptions{split, {}});
  }
  CHECK(slurp(straight / "loss.log") == slurp(split / "loss.log"));
  CHECK(slurp(straight / "final.kvmn").size() == slurp(split / "final.kvmn").size());
  const auto a = load_checkpoint(straight / "final.kvmn");
  const auto b = load_checkpoint(split / "final.kvmn");
  for (const auto& [name, t] : a.model.params()) CHECK(b.model.params().at(name) == t);
}

TEST_CASE("periodic checkpoints") {
  const auto dir = fresh_dir("periodic");
  Config c = small_config();
  c.checkpoint_every = 2;
  TrainingState s = state_for_synthetic(c);
  run_train(s, TrainingData{}, TrainOptions{dir, {}});
  CHECK(fs::exists(dir / "checkpoint-2.kvmn"));
  CHECK(fs::exists(dir / "checkpoint-4.kvmn"));
  CHECK_FALSE(fs::exists(dir / "checkpoint-3.kvmn"));
  CHECK(load_checkpoint(dir / "checkpoint-2.kvmn").step == 2);
}

TEST_CASE("training on a dataset") {
  const auto dir = fresh_dir("dataset");
  Config c = small_config();
  c.episodes = 5;
  generate_dataset(c, dir / "d.jsonl");
  const auto records = read_dataset(dir / "d.jsonl");
  CHECK(records.size() == 5);
  TrainingState s = state_for_dataset(c, records);
  TrainingData data;
  for (const auto& r : records) data.episodes.push_back(to_episode(r, s.vocab, c.region_top));
  const auto result = run_train(s, data);
  CHECK(result.losses.size() == 4);
  for (double l : result.losses) CHECK(std::isfinite(l));

  Config wrong = c;
  wrong.model.value_dim = 3;
  CHECK_THROWS_AS(state_for_dataset(wrong, records), DataError);
  CHECK_THROWS_AS(state_for_dataset(c, {}), DataError);
}

TEST_CASE("evaluation report") {
  Config c = small_config();
  TrainingState s = state_for_synthetic(c);
  auto items = eval_items_from_episodes(synthetic_episodes(c, kEvalStream, 6), s.vocab);
  const auto report = run_eval(s, items);
  CHECK(report.n == 6);
  CHECK(report.bleu4 >= 0.0);
  CHECK(report.bleu4 <= 1.0);
  const json j = report.to_json();
  CHECK(j.contains("bleu4"));
  CHECK(j.contains("token_acc"));
  CHECK(j["n"] == 6);
  CHECK_THROWS_AS(run_eval(s, {}), DataError);

  // Width one evaluates exactly like greedy decoding.
  s.config.beam = 1;
  std::vector<EvalPair> pairs;
  for (const auto& item : items) {
    pairs.push_back({s.vocab.decode(greedy_decode(s.model, item.episode, c.max_len).tokens), item.references});
  }
  CHECK(run_eval(s, items).bleu4 == bleu4(pairs));
}

TEST_CASE("decode output") {
  Config c = small_config();
  TrainingState s = state_for_synthetic(c);
  const auto eps = synthetic_episodes(c, kEvalStream, 3);
  const auto out = run_decode(s, eps);
  REQUIRE(out.size() == 3);
  CHECK(out[0].id == eps[0].id);
  const json j = out[0].to_json();
  CHECK(j["caption"].is_string());
  CHECK(j["log_prob"].get<double>() <= 0.0);
}

TEST_CASE("gradcheck over every variant") {
  const auto entries = run_gradcheck(Config{});
  CHECK(entries.size() == 6);
  for (const auto& e : entries) {
    CAPTURE(to_string(e.mode));
    CAPTURE(to_string(e.key_mode));
    CHECK(e.max_error < kGradcheckTolerance);
  }
  CHECK(gradcheck_report(entries)["pass"] == true);
  Config lit;
  lit.model.standard_lstm_output = true;
  for (const auto& e : run_gradcheck(lit)) CHECK(e.max_error < kGradcheckTolerance);
}
