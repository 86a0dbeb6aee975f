#include "kvmn/optim.hpp"

#include <cmath>

#include "kvmn/error.hpp"
#include "kvmn/random.hpp"

namespace kvmn {

AdadeltaState::AdadeltaState(const Shape& dims, double rho_, double eps_)
    : mean_sq_grad(dims), mean_sq_update(dims), rho(rho_), eps(eps_) {
  if (!(rho > 0.0 && rho < 1.0)) throw UsageError("adadelta rho must lie in (0, 1)");
  if (!(eps > 0.0)) throw UsageError("adadelta eps must be positive");
}

void adadelta_update(Tensor& param, std::span<const double> grad, AdadeltaState& state) {
  if (grad.size() != param.size() || !state.mean_sq_grad.same_shape(param) ||
      !state.mean_sq_update.same_shape(param)) {
    throw ShapeError("adadelta_update: gradient/accumulator shape mismatch for " + shape_string(param.dims()));
  }
  for (double g : grad) {
    if (!std::isfinite(g)) throw NumericError("adadelta_update: non-finite gradient");
  }
  const double rho = state.rho, eps = state.eps;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    double& eg2 = state.mean_sq_grad[i];
    double& edx2 = state.mean_sq_update[i];
    eg2 = rho * eg2 + (1.0 - rho) * g * g;
    const double dx = -(std::sqrt(edx2 + eps) / std::sqrt(eg2 + eps)) * g;
    edx2 = rho * edx2 + (1.0 - rho) * dx * dx;
    param[i] += dx;
  }
}

Adadelta::Adadelta(double rho, double eps) : rho_(rho), eps_(eps) {
  if (!(rho > 0.0 && rho < 1.0)) throw UsageError("adadelta rho must lie in (0, 1)");
  if (!(eps > 0.0)) throw UsageError("adadelta eps must be positive");
}

void Adadelta::step(ParamStore& params) {
  for (auto& [name, tensor] : params) {
    auto it = states_.find(name);
    if (it == states_.end()) it = states_.emplace(name, AdadeltaState(tensor.dims(), rho_, eps_)).first;
    if (!tensor.has_grad()) continue;
    adadelta_update(tensor, tensor.grad(), it->second);
  }
}

double global_grad_norm(const ParamStore& params) {
  double sq = 0.0;
  for (const auto& [_, t] : params) {
    for (double g : t.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_gradients(ParamStore& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractError("clip_gradients: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (!std::isfinite(norm)) throw NumericError("clip_gradients: non-finite gradient norm");
  if (norm <= max_norm) return 1.0;
  const double factor = max_norm / norm;
  for (auto& [_, t] : params) {
    for (double& g : t.grad()) g *= factor;
  }
  return factor;
}

void init_params(ParamStore& params, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, t] : params) {
    switch (params.role(name)) {
      case InitRole::Bias:
        for (double& v : t.data()) v = 0.0;
        break;
      case InitRole::ForgetBias:
        for (double& v : t.data()) v = 1.0;
        break;
      case InitRole::Weight: {
        const double s = 1.0 / std::sqrt(static_cast<double>(t.dims().back()));
        for (double& v : t.data()) v = rng.uniform(-s, s);
        break;
      }
    }
  }
}

}  // namespace kvmn
