#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kvmn/graph.hpp"
#include "kvmn/layers.hpp"
#include "kvmn/params.hpp"

namespace kvmn {

/// How the attention query summarizes previously attended keys.
enum class AddressingMode {
  None,       // decoder state only: q = W_d h_{t-1}
  Temporal,   // "t": previous key read used directly
  Recurrent,  // "m": previous key read fed through a key-addressing LSTM
};

enum class KeyMode {
  Direct,  // frame features are the keys
  Rnn,     // keys are encoder LSTM hidden states over the frames
};

std::string_view to_string(AddressingMode m);
std::string_view to_string(KeyMode m);
AddressingMode parse_addressing_mode(std::string_view s);
KeyMode parse_key_mode(std::string_view s);

struct ModelSpec {
  AddressingMode mode = AddressingMode::Recurrent;
  KeyMode key_mode = KeyMode::Direct;
  std::size_t frame_dim = 16;      // d_f
  std::size_t key_dim = 16;        // d_k
  std::size_t value_dim = 16;      // d_v
  std::size_t hidden_dim = 32;     // d_h
  std::size_t embed_dim = 16;      // d_e
  std::size_t attention_dim = 16;  // a
  std::size_t vocab_size = 20;
  bool standard_lstm_output = false;

  /// Throws UsageError on zero dims or direct keys with d_f != d_k.
  void validate() const;
};

/// One region proposal inside a frame.
struct Region {
  std::vector<double> feature;
  double score = 0.0;
};

/// Value for one frame from its regions: the top `top_b` regions by score,
/// combined with weights score / (sum of selected scores). Equal weights are
/// used when every selected score is zero.
std::vector<double> pool_regions(std::span<const Region> regions, std::size_t top_b = 5);

/// Stacks pool_regions() over every frame into a T x d_r value matrix.
Tensor pool_region_values(std::span<const std::vector<Region>> frames, std::size_t top_b = 5);

// ---------------------------------------------------------------------------
// Graph-level state. All Vars belong to the graph passed alongside them.

struct Memory {
  Var keys;            // T x d_k
  Var values;          // T x d_v
  Var projected_keys;  // T x a, rows U_a k_i
  std::size_t slots = 0;
};

struct AddressingVars {
  Var alpha;  // [T]
  Var h_k;    // [d_k]
  Var c_k;    // [d_k]
  Var phi_k;  // [d_k], sum_i alpha_i k_i
  Var query;  // [a]; invalid for the initial state
};

struct AddressingOptions {
  /// Recurrent mode only: run the key LSTM but replace its output with the
  /// previous key read, which turns the step into the temporal one.
  bool force_previous_read = false;
};

struct DecoderVars {
  Var h;
  Var c;
};

struct DecodeStepVars {
  DecoderVars state;
  Var logits;
};

struct SequenceLoss {
  Var loss;                  // sum over non-PAD targets of -log p
  std::vector<Tensor> alphas;  // one per decoding step
  std::size_t tokens = 0;
  std::size_t correct = 0;  // argmax hits under teacher forcing
};

// ---------------------------------------------------------------------------
// Value-level state for step-by-step decoding outside a training graph.

struct EpisodeMemory {
  Tensor keys;
  Tensor values;
  Tensor projected_keys;
};

struct AddressingState {
  Tensor alpha;
  Tensor h_k;
  Tensor c_k;
  Tensor phi_k;
};

struct DecoderState {
  Tensor h;
  Tensor c;
  TokenId prev_token = kBos;
  std::size_t t = 1;
};

struct StepOutput {
  AddressingState addressing;
  DecoderState decoder;
  std::vector<double> log_probs;
};

/// Key-value memory captioning model.
///
/// Per decoding step: address keys, read values, advance the decoder LSTM
/// with the value read as context, then project [h; x; value read] to
/// vocabulary logits.
class KvMemoryModel {
 public:
  explicit KvMemoryModel(ModelSpec spec);
  KvMemoryModel(const KvMemoryModel& other);
  KvMemoryModel& operator=(const KvMemoryModel& other);

  const ModelSpec& spec() const noexcept { return spec_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }

  Var build_keys(Graph& g, Var frames) const;
  Memory build_memory(Graph& g, Var frames, Var values) const;

  AddressingVars init_addressing(Graph& g, const Memory& mem) const;
  AddressingVars address_keys(Graph& g, const AddressingVars& prev, Var dec_h_prev, const Memory& mem,
                              const AddressingOptions& opts = {}) const;
  Var read_values(Graph& g, Var alpha, const Memory& mem) const;

  DecoderVars init_decoder(Graph& g) const;
  DecodeStepVars decode_step(Graph& g, const DecoderVars& prev, TokenId prev_token, Var value_read) const;

  /// Teacher-forced loss of one caption (BOS ... EOS, PAD allowed as filler).
  SequenceLoss sequence_loss(Graph& g, const Tensor& frames, const Tensor& values,
                             std::span<const TokenId> caption) const;

  EpisodeMemory prepare_memory(const Tensor& frames, const Tensor& values) const;
  AddressingState initial_addressing(const EpisodeMemory& mem) const;
  DecoderState initial_decoder() const;
  StepOutput step(const EpisodeMemory& mem, const AddressingState& addressing, const DecoderState& decoder) const;

 private:
  void declare_params();
  void bind();
  void check_memory_inputs(const Tensor& frames, const Tensor& values) const;

  ModelSpec spec_;
  ParamStore params_;

  const Tensor* embed_ = nullptr;
  LstmParams decoder_;
  std::optional<LstmParams> encoder_;
  std::optional<LstmParams> key_lstm_;
  const Tensor* W_k_ = nullptr;
  const Tensor* W_d_ = nullptr;
  const Tensor* U_a_ = nullptr;
  const Tensor* w_ = nullptr;
  const Tensor* U_p_ = nullptr;
  const Tensor* b_p_ = nullptr;
};

/// One teacher-forced training item.
struct SequenceItem {
  const Tensor* frames = nullptr;
  const Tensor* values = nullptr;
  std::span<const TokenId> caption;
};

struct BatchStats {
  double loss = 0.0;  // (1/N) sum over items of summed token losses
  std::size_t tokens = 0;
  std::size_t correct = 0;
};

/// Forward/backward over a batch, adding d(loss)/d(param) into the model's
/// parameter gradients. Items are reduced in index order regardless of
/// `threads`, so results are bitwise reproducible.
BatchStats accumulate_batch_gradients(KvMemoryModel& model, std::span<const SequenceItem> items,
                                      std::size_t threads = 1);

/// Same loss without gradients.
BatchStats evaluate_batch(const KvMemoryModel& model, std::span<const SequenceItem> items);

}  // namespace kvmn
