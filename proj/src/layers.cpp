#include "kvmn/layers.hpp"

#include <cmath>

#include "kvmn/error.hpp"

namespace kvmn {

namespace {

constexpr std::array<const char*, 4> kGateSuffix = {"i", "f", "o", "c"};

}  // namespace

void LstmParams::declare(ParamStore& store, const std::string& prefix, std::size_t hidden, std::size_t input,
                         std::size_t context) {
  for (std::size_t k = 0; k < 4; ++k) {
    const std::string s = kGateSuffix[k];
    store.add(prefix + ".W_" + s, {hidden, hidden});
    store.add(prefix + ".U_" + s, {hidden, input});
    if (context > 0) store.add(prefix + ".A_" + s, {hidden, context});
    store.add(prefix + ".b_" + s, {hidden}, k == kForgetGate ? InitRole::ForgetBias : InitRole::Bias);
  }
}

LstmParams LstmParams::bind(const ParamStore& store, const std::string& prefix) {
  LstmParams p;
  const bool ctx = store.contains(prefix + ".A_i");
  for (std::size_t k = 0; k < 4; ++k) {
    const std::string s = kGateSuffix[k];
    p.W[k] = &store.at(prefix + ".W_" + s);
    p.U[k] = &store.at(prefix + ".U_" + s);
    p.b[k] = &store.at(prefix + ".b_" + s);
    if (ctx) {
      p.A[k] = &store.at(prefix + ".A_" + s);
    } else if (store.contains(prefix + ".A_" + s)) {
      throw ContractError(prefix + ": context matrices must be all present or all absent");
    }
  }
  p.hidden = p.W[0]->dims()[0];
  p.input = p.U[0]->dims()[1];
  p.context = ctx ? p.A[0]->dims()[1] : 0;
  for (std::size_t k = 0; k < 4; ++k) {
    const bool ok = p.W[k]->dims() == Shape{p.hidden, p.hidden} && p.U[k]->dims() == Shape{p.hidden, p.input} &&
                    p.b[k]->dims() == Shape{p.hidden} &&
                    (!ctx || p.A[k]->dims() == Shape{p.hidden, p.context});
    if (!ok) throw ShapeError(prefix + ": gate blocks disagree in shape");
  }
  return p;
}

LstmState lstm_step(Graph& g, const LstmParams& p, Var h_prev, Var c_prev, Var x, std::optional<Var> context,
                    bool standard_output) {
  if (context.has_value() != p.has_context()) {
    throw ContractError(p.has_context() ? "lstm_step: context required by A_* weights"
                                        : "lstm_step: context given but no A_* weights");
  }
  auto check = [](const Tensor& t, std::size_t n, const char* what) {
    if (t.rank() != 1 || t.size() != n) {
      throw ShapeError(std::string("lstm_step: ") + what + " has shape " + shape_string(t.dims()) + ", expected [" +
                       std::to_string(n) + "]");
    }
  };
  check(g.value(h_prev), p.hidden, "h_prev");
  check(g.value(c_prev), p.hidden, "c_prev");
  check(g.value(x), p.input, "x");
  if (context) check(g.value(*context), p.context, "context");

  std::array<Var, 4> gates;
  for (std::size_t k = 0; k < 4; ++k) {
    Var pre = g.add(g.matmul(g.param(*p.W[k]), h_prev), g.matmul(g.param(*p.U[k]), x));
    if (context) pre = g.add(pre, g.matmul(g.param(*p.A[k]), *context));
    pre = g.add(pre, g.param(*p.b[k]));
    gates[k] = k == kCellGate ? g.tanh(pre) : g.sigmoid(pre);
  }
  Var c = g.add(g.mul(gates[kInputGate], gates[kCellGate]), g.mul(gates[kForgetGate], c_prev));
  Var h = g.mul(gates[kOutputGate], standard_output ? g.tanh(c) : c);
  return {h, c};
}

Var linear(Graph& g, const Tensor& weight, Var x, const Tensor* bias) {
  Var y = g.matmul(g.param(weight), x);
  if (bias) y = g.add(y, g.param(*bias));
  return y;
}

Var embed(Graph& g, const Tensor& table, TokenId id) {
  if (table.rank() != 2) throw ShapeError("embed: table must be a matrix");
  if (id >= table.rows()) {
    throw ContractError("embed: token id " + std::to_string(id) + " >= vocab size " + std::to_string(table.rows()));
  }
  return g.gather(g.param(table), id);
}

XentResult softmax_xent(Graph& g, Var logits, TokenId target) {
  const Tensor& z = g.value(logits);
  if (z.rank() != 1) throw ShapeError("softmax_xent: logits must be a vector");
  if (target == kPad) throw ContractError("softmax_xent: PAD target must be masked by the caller");
  if (target >= z.size()) throw ContractError("softmax_xent: target id out of range");
  Var logp = g.log_softmax(logits);
  XentResult out;
  out.loss = g.negate(g.gather(logp, target));
  const Tensor& lp = g.value(logp);
  out.probs.resize(lp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) out.probs[i] = std::exp(lp[i]);
  return out;
}

}  // namespace kvmn
