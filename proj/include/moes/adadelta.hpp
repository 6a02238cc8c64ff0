#pragma once

#include <set>
#include <span>
#include <string>
#include <vector>

#include "moes/autodiff.hpp"

namespace moes {

struct AdadeltaState {
  std::vector<double> sq_grad;    // running E[g^2]
  std::vector<double> sq_update;  // running E[dx^2]
  double rho = 0.95;
  double eps = 1e-6;

  AdadeltaState() = default;
  AdadeltaState(std::size_t n, double rho_, double eps_) : sq_grad(n, 0.0), sq_update(n, 0.0), rho(rho_), eps(eps_) {}
};

// One Adadelta update in place. Throws NumericError, leaving params and
// state untouched, if any gradient is non-finite.
void adadelta_step(std::span<double> params, std::span<const double> grads, AdadeltaState& state);

// Adadelta over every parameter of a graph, reading the accumulated grads.
// Frozen parameters are skipped entirely (no update, no accumulator change).
class Adadelta {
 public:
  explicit Adadelta(const Graph& graph, double rho = 0.95, double eps = 1e-6);

  void freeze(const std::string& parameter_name) { frozen_.insert(parameter_name); }
  bool is_frozen(const std::string& parameter_name) const { return frozen_.count(parameter_name) != 0; }

  void step(Graph& graph);
  const AdadeltaState& state(std::size_t parameter_index) const { return states_.at(parameter_index); }

 private:
  std::vector<AdadeltaState> states_;
  std::set<std::string> frozen_;
};

}  // namespace moes
