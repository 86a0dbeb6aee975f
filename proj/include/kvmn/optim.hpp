#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "kvmn/params.hpp"
#include "kvmn/tensor.hpp"

namespace kvmn {

/// Running averages of squared gradients and squared updates for one tensor.
struct AdadeltaState {
  Tensor mean_sq_grad;    // E[g^2]
  Tensor mean_sq_update;  // E[dx^2]
  double rho = 0.95;
  double eps = 1e-6;

  AdadeltaState() = default;
  AdadeltaState(const Shape& dims, double rho, double eps);
};

/// param += dx with dx = -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g,
/// updating both accumulators.
void adadelta_update(Tensor& param, std::span<const double> grad, AdadeltaState& state);

/// Adadelta over every tensor in a ParamStore, keyed by parameter name.
class Adadelta {
 public:
  explicit Adadelta(double rho = 0.95, double eps = 1e-6);

  /// Applies one update from each parameter's current Tensor::grad.
  void step(ParamStore& params);

  double rho() const noexcept { return rho_; }
  double eps() const noexcept { return eps_; }
  std::map<std::string, AdadeltaState>& states() noexcept { return states_; }
  const std::map<std::string, AdadeltaState>& states() const noexcept { return states_; }

 private:
  double rho_;
  double eps_;
  std::map<std::string, AdadeltaState> states_;
};

/// Global L2-norm clipping over all gradients in the store. Returns the
/// factor applied (1 when the norm is within `max_norm`).
double clip_gradients(ParamStore& params, double max_norm);
double global_grad_norm(const ParamStore& params);

/// Fills every tensor according to its InitRole from a seeded generator.
void init_params(ParamStore& params, std::uint64_t seed);

}  // namespace kvmn
