#include "kvmn/memory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "kvmn/error.hpp"

namespace kvmn {

std::string_view to_string(AddressingMode m) {
  switch (m) {
    case AddressingMode::None: return "none";
    case AddressingMode::Temporal: return "t";
    case AddressingMode::Recurrent: return "m";
  }
  return "?";
}

std::string_view to_string(KeyMode m) { return m == KeyMode::Direct ? "direct" : "rnn"; }

AddressingMode parse_addressing_mode(std::string_view s) {
  if (s == "none") return AddressingMode::None;
  if (s == "t") return AddressingMode::Temporal;
  if (s == "m") return AddressingMode::Recurrent;
  throw UsageError("unknown addressing mode '" + std::string(s) + "' (expected none, t or m)");
}

KeyMode parse_key_mode(std::string_view s) {
  if (s == "direct") return KeyMode::Direct;
  if (s == "rnn") return KeyMode::Rnn;
  throw UsageError("unknown key mode '" + std::string(s) + "' (expected direct or rnn)");
}

void ModelSpec::validate() const {
  const std::pair<const char*, std::size_t> dims[] = {
      {"d_f", frame_dim},  {"d_k", key_dim},       {"d_v", value_dim},  {"d_h", hidden_dim},
      {"d_e", embed_dim}, {"a", attention_dim}, {"vocab", vocab_size},
  };
  for (const auto& [name, v] : dims) {
    if (v == 0) throw UsageError(std::string(name) + " must be >= 1");
  }
  if (vocab_size < kReservedTokens) throw UsageError("vocab must include the 4 reserved tokens");
  if (key_mode == KeyMode::Direct && frame_dim != key_dim) {
    throw UsageError("direct key mode requires d_f == d_k (got d_f=" + std::to_string(frame_dim) +
                     ", d_k=" + std::to_string(key_dim) + ")");
  }
}

std::vector<double> pool_regions(std::span<const Region> regions, std::size_t top_b) {
  if (regions.empty()) throw ContractError("pool_regions: empty region set");
  if (top_b == 0) throw ContractError("pool_regions: top_b must be >= 1");
  const std::size_t dim = regions[0].feature.size();
  if (dim == 0) throw ContractError("pool_regions: empty region feature");
  for (const Region& r : regions) {
    if (r.feature.size() != dim) throw ShapeError("pool_regions: region features differ in length");
    if (!(r.score >= 0.0) || !std::isfinite(r.score)) throw ContractError("pool_regions: scores must be finite and >= 0");
  }
  std::vector<std::size_t> order(regions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return regions[a].score > regions[b].score; });
  order.resize(std::min(top_b, order.size()));

  double total = 0.0;
  for (auto i : order) total += regions[i].score;
  std::vector<double> out(dim, 0.0);
  for (auto i : order) {
    const double w = total > 0.0 ? regions[i].score / total : 1.0 / static_cast<double>(order.size());
    for (std::size_t j = 0; j < dim; ++j) out[j] += w * regions[i].feature[j];
  }
  return out;
}

Tensor pool_region_values(std::span<const std::vector<Region>> frames, std::size_t top_b) {
  if (frames.empty()) throw ContractError("pool_region_values: no frames");
  std::vector<double> data;
  std::size_t dim = 0;
  for (const auto& regions : frames) {
    auto v = pool_regions(regions, top_b);
    if (dim == 0) dim = v.size();
    if (v.size() != dim) throw ContractError("pool_region_values: region dims differ across frames");
    data.insert(data.end(), v.begin(), v.end());
  }
  return Tensor({frames.size(), dim}, std::move(data));
}

// ---------------------------------------------------------------------------

KvMemoryModel::KvMemoryModel(ModelSpec spec) : spec_(spec) {
  spec_.validate();
  declare_params();
  bind();
}

KvMemoryModel::KvMemoryModel(const KvMemoryModel& other) : spec_(other.spec_), params_(other.params_) { bind(); }

KvMemoryModel& KvMemoryModel::operator=(const KvMemoryModel& other) {
  if (this != &other) {
    spec_ = other.spec_;
    params_ = other.params_;
    bind();
  }
  return *this;
}

void KvMemoryModel::declare_params() {
  const auto& s = spec_;
  params_.add("embed", {s.vocab_size, s.embed_dim});
  LstmParams::declare(params_, "dec", s.hidden_dim, s.embed_dim, s.value_dim);
  if (s.key_mode == KeyMode::Rnn) LstmParams::declare(params_, "enc", s.key_dim, s.frame_dim, 0);
  if (s.mode == AddressingMode::Recurrent) LstmParams::declare(params_, "key", s.key_dim, s.key_dim, 0);
  if (s.mode != AddressingMode::None) params_.add("addr.W_k", {s.attention_dim, s.key_dim});
  params_.add("addr.W_d", {s.attention_dim, s.hidden_dim});
  params_.add("addr.U_a", {s.attention_dim, s.key_dim});
  params_.add("addr.w", {s.attention_dim});
  params_.add("out.U_p", {s.vocab_size, s.hidden_dim + s.embed_dim + s.value_dim});
  params_.add("out.b_p", {s.vocab_size}, InitRole::Bias);
}

void KvMemoryModel::bind() {
  embed_ = &params_.at("embed");
  decoder_ = LstmParams::bind(params_, "dec");
  encoder_.reset();
  key_lstm_.reset();
  if (spec_.key_mode == KeyMode::Rnn) encoder_ = LstmParams::bind(params_, "enc");
  if (spec_.mode == AddressingMode::Recurrent) key_lstm_ = LstmParams::bind(params_, "key");
  W_k_ = spec_.mode != AddressingMode::None ? &params_.at("addr.W_k") : nullptr;
  W_d_ = &params_.at("addr.W_d");
  U_a_ = &params_.at("addr.U_a");
  w_ = &params_.at("addr.w");
  U_p_ = &params_.at("out.U_p");
  b_p_ = &params_.at("out.b_p");
}

Var KvMemoryModel::build_keys(Graph& g, Var frames) const {
  const Tensor& f = g.value(frames);
  if (f.rank() != 2) throw ShapeError("build_keys: frames must be a T x d_f matrix");
  if (f.cols() != spec_.frame_dim) {
    throw ShapeError("build_keys: frame dim " + std::to_string(f.cols()) + " != d_f " +
                     std::to_string(spec_.frame_dim));
  }
  if (spec_.key_mode == KeyMode::Direct) return frames;
  if (!encoder_) throw ContractError("build_keys: rnn key mode without encoder parameters");

  Var h = g.input(Tensor::zeros({spec_.key_dim}));
  Var c = g.input(Tensor::zeros({spec_.key_dim}));
  std::vector<Var> keys;
  keys.reserve(f.rows());
  for (std::size_t i = 0; i < f.rows(); ++i) {
    auto next = lstm_step(g, *encoder_, h, c, g.gather(frames, i), std::nullopt, spec_.standard_lstm_output);
    h = next.h;
    c = next.c;
    keys.push_back(h);
  }
  return g.stack(keys);
}

Memory KvMemoryModel::build_memory(Graph& g, Var frames, Var values) const {
  const Tensor& f = g.value(frames);
  const Tensor& v = g.value(values);
  if (v.rank() != 2 || v.cols() != spec_.value_dim) {
    throw ShapeError("build_memory: values must be T x " + std::to_string(spec_.value_dim) + ", got " +
                     shape_string(v.dims()));
  }
  if (f.rank() != 2 || f.rows() != v.rows()) throw ShapeError("build_memory: frame and value counts differ");
  Memory mem;
  mem.slots = f.rows();
  mem.keys = build_keys(g, frames);
  mem.values = values;
  mem.projected_keys = g.matmul(mem.keys, g.transpose(g.param(*U_a_)));
  return mem;
}

AddressingVars KvMemoryModel::init_addressing(Graph& g, const Memory& mem) const {
  if (mem.slots == 0) throw ContractError("init_addressing: empty memory");
  AddressingVars s;
  s.alpha = g.input(Tensor({mem.slots}, std::vector<double>(mem.slots, 1.0 / static_cast<double>(mem.slots))));
  s.h_k = g.mean(mem.keys);
  s.c_k = g.input(Tensor::zeros({spec_.key_dim}));
  s.phi_k = g.weighted_sum(s.alpha, mem.keys);
  return s;
}

AddressingVars KvMemoryModel::address_keys(Graph& g, const AddressingVars& prev, Var dec_h_prev, const Memory& mem,
                                           const AddressingOptions& opts) const {
  AddressingVars next;
  next.h_k = prev.h_k;
  next.c_k = prev.c_k;
  Var decoder_term = g.matmul(g.param(*W_d_), dec_h_prev);
  switch (spec_.mode) {
    case AddressingMode::None:
      next.query = decoder_term;
      break;
    case AddressingMode::Temporal:
      next.h_k = prev.phi_k;
      next.query = g.add(g.matmul(g.param(*W_k_), next.h_k), decoder_term);
      break;
    case AddressingMode::Recurrent: {
      if (!key_lstm_) throw ContractError("address_keys: recurrent mode without key-addressing LSTM");
      auto s = lstm_step(g, *key_lstm_, prev.h_k, prev.c_k, prev.phi_k, std::nullopt, spec_.standard_lstm_output);
      next.h_k = opts.force_previous_read ? prev.phi_k : s.h;
      next.c_k = s.c;
      next.query = g.add(g.matmul(g.param(*W_k_), next.h_k), decoder_term);
      break;
    }
  }
  Var scores = g.matmul(g.tanh(g.add(mem.projected_keys, next.query)), g.param(*w_));
  next.alpha = g.softmax(scores);
  next.phi_k = g.weighted_sum(next.alpha, mem.keys);
  return next;
}

Var KvMemoryModel::read_values(Graph& g, Var alpha, const Memory& mem) const {
  return g.weighted_sum(alpha, mem.values);
}

DecoderVars KvMemoryModel::init_decoder(Graph& g) const {
  return {g.input(Tensor::zeros({spec_.hidden_dim})), g.input(Tensor::zeros({spec_.hidden_dim}))};
}

DecodeStepVars KvMemoryModel::decode_step(Graph& g, const DecoderVars& prev, TokenId prev_token,
                                          Var value_read) const {
  Var x = embed(g, *embed_, prev_token);
  auto s = lstm_step(g, decoder_, prev.h, prev.c, x, value_read, spec_.standard_lstm_output);
  Var features = g.concat({s.h, x, value_read});
  if (g.value(features).size() != U_p_->cols()) throw ShapeError("decode_step: U_p width mismatch");
  return {{s.h, s.c}, linear(g, *U_p_, features, b_p_)};
}

namespace {

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

SequenceLoss KvMemoryModel::sequence_loss(Graph& g, const Tensor& frames, const Tensor& values,
                                          std::span<const TokenId> caption) const {
  const bool has_target =
      caption.size() >= 2 && std::any_of(caption.begin() + 1, caption.end(), [](TokenId t) { return t != kPad; });
  if (!has_target) throw ContractError("sequence_loss: caption has no target tokens");
  for (TokenId t : caption) {
    if (t >= spec_.vocab_size) throw ContractError("sequence_loss: token id " + std::to_string(t) + " >= vocab");
  }

  Memory mem = build_memory(g, g.input(frames), g.input(values));
  AddressingVars addr = init_addressing(g, mem);
  DecoderVars dec = init_decoder(g);

  SequenceLoss out;
  std::vector<Var> losses;
  for (std::size_t j = 1; j < caption.size(); ++j) {
    addr = address_keys(g, addr, dec.h, mem);
    Var read = read_values(g, addr.alpha, mem);
    auto step = decode_step(g, dec, caption[j - 1], read);
    dec = step.state;
    out.alphas.push_back(g.value(addr.alpha));
    const TokenId target = caption[j];
    if (target == kPad) continue;
    auto xent = softmax_xent(g, step.logits, target);
    losses.push_back(xent.loss);
    ++out.tokens;
    if (argmax(xent.probs) == target) ++out.correct;
  }
  out.loss = g.sum(g.concat(losses));
  return out;
}

void KvMemoryModel::check_memory_inputs(const Tensor& frames, const Tensor& values) const {
  if (frames.rank() != 2 || values.rank() != 2 || frames.rows() != values.rows()) {
    throw ShapeError("memory inputs must be T x d_f frames and T x d_v values");
  }
}

EpisodeMemory KvMemoryModel::prepare_memory(const Tensor& frames, const Tensor& values) const {
  check_memory_inputs(frames, values);
  Graph g;
  Memory mem = build_memory(g, g.input(frames), g.input(values));
  return {g.value(mem.keys), g.value(mem.values), g.value(mem.projected_keys)};
}

AddressingState KvMemoryModel::initial_addressing(const EpisodeMemory& mem) const {
  Graph g;
  Memory m{g.input(mem.keys), g.input(mem.values), g.input(mem.projected_keys), mem.keys.rows()};
  auto s = init_addressing(g, m);
  return {g.value(s.alpha), g.value(s.h_k), g.value(s.c_k), g.value(s.phi_k)};
}

DecoderState KvMemoryModel::initial_decoder() const {
  DecoderState s;
  s.h = Tensor::zeros({spec_.hidden_dim});
  s.c = Tensor::zeros({spec_.hidden_dim});
  return s;
}

StepOutput KvMemoryModel::step(const EpisodeMemory& mem, const AddressingState& addressing,
                               const DecoderState& decoder) const {
  Graph g;
  Memory m{g.input(mem.keys), g.input(mem.values), g.input(mem.projected_keys), mem.keys.rows()};
  AddressingVars prev{g.input(addressing.alpha), g.input(addressing.h_k), g.input(addressing.c_k),
                      g.input(addressing.phi_k), Var{}};
  DecoderVars dec{g.input(decoder.h), g.input(decoder.c)};

  AddressingVars addr = address_keys(g, prev, dec.h, m);
  Var read = read_values(g, addr.alpha, m);
  auto s = decode_step(g, dec, decoder.prev_token, read);
  Var logp = g.log_softmax(s.logits);

  StepOutput out;
  out.addressing = {g.value(addr.alpha), g.value(addr.h_k), g.value(addr.c_k), g.value(addr.phi_k)};
  out.decoder.h = g.value(s.state.h);
  out.decoder.c = g.value(s.state.c);
  out.decoder.prev_token = decoder.prev_token;
  out.decoder.t = decoder.t + 1;
  const auto lp = g.value(logp).data();
  out.log_probs.assign(lp.begin(), lp.end());
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct ItemResult {
  Graph graph;
  double loss = 0.0;
  std::size_t tokens = 0;
  std::size_t correct = 0;
};

void run_item(const KvMemoryModel& model, const SequenceItem& item, double scale, bool with_grad, ItemResult& out) {
  auto seq = model.sequence_loss(out.graph, *item.frames, *item.values, item.caption);
  Var scaled = out.graph.scale(seq.loss, scale);
  out.loss = out.graph.value(scaled).item();
  out.tokens = seq.tokens;
  out.correct = seq.correct;
  if (with_grad) out.graph.backward(scaled, /*flush_params=*/false);
}

BatchStats run_batch(const KvMemoryModel& model, std::span<const SequenceItem> items, std::size_t threads,
                     bool with_grad) {
  if (items.empty()) throw ContractError("batch is empty");
  const double scale = 1.0 / static_cast<double>(items.size());
  std::vector<ItemResult> results(items.size());

  threads = std::clamp<std::size_t>(threads, 1, items.size());
  if (threads == 1) {
    for (std::size_t i = 0; i < items.size(); ++i) run_item(model, items[i], scale, with_grad, results[i]);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < items.size(); i += threads) run_item(model, items[i], scale, with_grad, results[i]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  BatchStats stats;
  for (auto& r : results) {
    if (with_grad) r.graph.flush_param_grads();
    stats.loss += r.loss;
    stats.tokens += r.tokens;
    stats.correct += r.correct;
  }
  return stats;
}

}  // namespace

BatchStats accumulate_batch_gradients(KvMemoryModel& model, std::span<const SequenceItem> items,
                                      std::size_t threads) {
  return run_batch(model, items, threads, true);
}

BatchStats evaluate_batch(const KvMemoryModel& model, std::span<const SequenceItem> items) {
  return run_batch(model, items, 1, false);
}

}  // namespace kvmn
