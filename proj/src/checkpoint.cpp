#include "kvmn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "kvmn/error.hpp"

namespace kvmn {

using nlohmann::json;

TrainingState::TrainingState(Config cfg, Vocabulary v)
    : config(std::move(cfg)), vocab(std::move(v)), model(config.model), optimizer(config.rho, config.eps) {
  config.validate();
  if (vocab.size() != config.model.vocab_size) {
    throw UsageError("vocabulary has " + std::to_string(vocab.size()) + " entries but config.vocab is " +
                     std::to_string(config.model.vocab_size));
  }
  init_params(model.params(), config.seed);
}

namespace {

constexpr char kMagic[4] = {'K', 'V', 'M', 'N'};
constexpr const char* kParamPrefix = "param/";
constexpr const char* kGradSqPrefix = "adadelta.g2/";
constexpr const char* kUpdateSqPrefix = "adadelta.dx2/";

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const std::string& name, const Tensor& t) {
    str(name);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.dims()) u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) f64(v);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::pair<std::string, Tensor> tensor() {
    std::string name = str();
    const auto rank = u32();
    if (rank == 0 || rank > 8) throw DataError("checkpoint tensor '" + name + "' has invalid rank");
    Shape dims(rank);
    for (auto& d : dims) {
      d = u32();
      if (d == 0) throw DataError("checkpoint tensor '" + name + "' has a zero dimension");
    }
    const std::size_t n = shape_size(dims);
    need(n * 8);
    std::vector<double> data(n);
    for (auto& v : data) v = f64();
    return {std::move(name), Tensor(std::move(dims), std::move(data))};
  }
  bool done() const { return pos_ == in_.size(); }
  void expect_magic() {
    need(4);
    if (std::memcmp(in_.data(), kMagic, 4) != 0) throw DataError("not a checkpoint (bad magic)");
    pos_ += 4;
  }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const TrainingState& state) {
  const auto& params = state.model.params();
  const auto& opt = state.optimizer.states();
  std::uint32_t count = static_cast<std::uint32_t>(params.count());
  for (const auto& [name, _] : params) {
    if (opt.count(name)) count += 2;
  }

  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(count);
  for (const auto& [name, t] : params) w.tensor(kParamPrefix + name, t);
  for (const auto& [name, _] : params) {
    auto it = opt.find(name);
    if (it == opt.end()) continue;
    w.tensor(kGradSqPrefix + name, it->second.mean_sq_grad);
    w.tensor(kUpdateSqPrefix + name, it->second.mean_sq_update);
  }
  json meta{{"config", state.config.to_json()}, {"step", state.step}, {"vocab", state.vocab.tokens()}};
  w.str(meta.dump());
  return w.take();
}

TrainingState deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.expect_magic();
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.u32();
  std::vector<std::pair<std::string, Tensor>> tensors;
  for (std::uint32_t i = 0; i < count; ++i) tensors.push_back(r.tensor());

  json meta;
  try {
    meta = json::parse(r.str());
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint metadata: ") + e.what());
  }
  if (!r.done()) throw DataError("trailing bytes after checkpoint metadata");
  if (!meta.contains("config") || !meta.contains("step") || !meta.contains("vocab")) {
    throw DataError("checkpoint metadata is incomplete");
  }

  Config config;
  try {
    config = Config::from_json(meta["config"]);
  } catch (const UsageError& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }
  TrainingState state(config, Vocabulary::from_tokens(meta["vocab"].get<std::vector<std::string>>()));
  state.step = meta["step"].get<std::uint64_t>();

  auto& params = state.model.params();
  std::size_t loaded = 0;
  for (auto& [name, t] : tensors) {
    if (starts_with(name, kParamPrefix)) {
      const std::string key = name.substr(std::strlen(kParamPrefix));
      if (!params.contains(key)) throw DataError("checkpoint has unknown parameter '" + key + "'");
      Tensor& dst = params.at(key);
      if (!dst.same_shape(t)) {
        throw DataError("checkpoint parameter '" + key + "' has shape " + shape_string(t.dims()) +
                        " but the config implies " + shape_string(dst.dims()));
      }
      dst = std::move(t);
      ++loaded;
    } else if (starts_with(name, kGradSqPrefix) || starts_with(name, kUpdateSqPrefix)) {
      const bool grad_sq = starts_with(name, kGradSqPrefix);
      const std::string key = name.substr(std::strlen(grad_sq ? kGradSqPrefix : kUpdateSqPrefix));
      if (!params.contains(key) || !params.at(key).same_shape(t)) {
        throw DataError("checkpoint optimizer state '" + name + "' does not match parameters");
      }
      auto& states = state.optimizer.states();
      auto it = states.find(key);
      if (it == states.end()) {
        it = states.emplace(key, AdadeltaState(t.dims(), config.rho, config.eps)).first;
      }
      (grad_sq ? it->second.mean_sq_grad : it->second.mean_sq_update) = std::move(t);
    } else {
      throw DataError("unexpected checkpoint tensor '" + name + "'");
    }
  }
  if (loaded != params.count()) throw DataError("checkpoint is missing parameters");
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const TrainingState& state) {
  const auto bytes = serialize_checkpoint(state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

TrainingState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

TrainingState load_checkpoint(const std::filesystem::path& path, const json& overrides) {
  TrainingState state = load_checkpoint(path);
  if (overrides.is_null()) return state;
  if (!overrides.is_object()) throw UsageError("overrides must be a JSON object");
  Config updated = state.config;
  updated.merge(overrides);
  updated.validate();
  if (!updated.same_structure(state.config)) {
    throw DataError("config dimensions do not match checkpoint '" + path.string() + "'");
  }
  // Optimizer hyperparameters travel with the accumulators.
  for (auto& [_, s] : state.optimizer.states()) {
    s.rho = updated.rho;
    s.eps = updated.eps;
  }
  state.optimizer = [&] {
    Adadelta opt(updated.rho, updated.eps);
    opt.states() = std::move(state.optimizer.states());
    return opt;
  }();
  state.config = updated;
  return state;
}

}  // namespace kvmn
