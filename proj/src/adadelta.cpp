#include "moes/adadelta.hpp"

#include <cmath>

#include "moes/error.hpp"

namespace moes {

void adadelta_step(std::span<double> params, std::span<const double> grads, AdadeltaState& state) {
  if (params.size() != grads.size() || params.size() != state.sq_grad.size() ||
      params.size() != state.sq_update.size()) {
    throw UsageError("adadelta_step: parameter, gradient and state sizes differ");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("adadelta_step: non-finite gradient at element " + std::to_string(i));
    }
  }
  const double rho = state.rho, eps = state.eps;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.sq_grad[i] = rho * state.sq_grad[i] + (1.0 - rho) * g * g;
    const double dx = -std::sqrt(state.sq_update[i] + eps) / std::sqrt(state.sq_grad[i] + eps) * g;
    state.sq_update[i] = rho * state.sq_update[i] + (1.0 - rho) * dx * dx;
    params[i] += dx;
  }
}

Adadelta::Adadelta(const Graph& graph, double rho, double eps) {
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("adadelta rho must lie in (0,1)");
  if (!(eps > 0.0)) throw ConfigError("adadelta eps must be positive");
  for (const auto& p : graph.parameters()) states_.emplace_back(p->value.size(), rho, eps);
}

void Adadelta::step(Graph& graph) {
  const auto& params = graph.parameters();
  if (params.size() != states_.size()) throw UsageError("optimizer was built for a different graph");
  for (const auto& p : params) {
    if (!p->grad.all_finite()) throw NumericError("non-finite gradient in parameter " + p->name);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (is_frozen(params[i]->name)) continue;
    adadelta_step(params[i]->value.values(), params[i]->ensure_grad().values(), states_[i]);
  }
}

}  // namespace moes
