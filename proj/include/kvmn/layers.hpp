#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kvmn/graph.hpp"
#include "kvmn/params.hpp"

namespace kvmn {

using TokenId = std::uint32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kReservedTokens = 4;

enum Gate : std::size_t { kInputGate = 0, kForgetGate = 1, kOutputGate = 2, kCellGate = 3 };

/// Views onto the tensors of one LSTM held in a ParamStore.
///
/// Gate order is input, forget, output, candidate. `A` (context weights) is
/// either fully bound or fully null.
struct LstmParams {
  std::array<const Tensor*, 4> W{};  // hidden x hidden
  std::array<const Tensor*, 4> U{};  // hidden x input
  std::array<const Tensor*, 4> A{};  // hidden x context
  std::array<const Tensor*, 4> b{};  // hidden

  std::size_t hidden = 0;
  std::size_t input = 0;
  std::size_t context = 0;

  bool has_context() const noexcept { return A[0] != nullptr; }

  /// Registers `<prefix>.W_i` ... `<prefix>.b_c`; context == 0 omits A_*.
  static void declare(ParamStore& store, const std::string& prefix, std::size_t hidden, std::size_t input,
                      std::size_t context);
  static LstmParams bind(const ParamStore& store, const std::string& prefix);
};

struct LstmState {
  Var h;
  Var c;
};

/// One LSTM recurrence. With `standard_output` false the hidden state is
/// o * c (no squashing of the cell); with it true, o * tanh(c).
LstmState lstm_step(Graph& g, const LstmParams& p, Var h_prev, Var c_prev, Var x, std::optional<Var> context,
                    bool standard_output);

/// W x (+ b).
Var linear(Graph& g, const Tensor& weight, Var x, const Tensor* bias = nullptr);

/// Row `id` of the embedding table, differentiable with respect to the table.
Var embed(Graph& g, const Tensor& table, TokenId id);

struct XentResult {
  Var loss;                  // -log p[target]
  std::vector<double> probs;  // softmax(logits)
};

XentResult softmax_xent(Graph& g, Var logits, TokenId target);

}  // namespace kvmn
