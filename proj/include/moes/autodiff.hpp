#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "moes/tensor.hpp"

namespace moes {

// One value in the computation: a trainable leaf, a constant, or the output
// of an operation recorded on the tape.
struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  std::string name;
  // Propagates this node's grad into the grads of its inputs.
  std::function<void(Node&)> backward;
  // Position on the tape; -1 for parameters (which outlive the tape).
  long tape_index = -1;

  Tensor& ensure_grad();
  bool has_grad() const noexcept { return !grad.empty(); }
};

using Var = std::shared_ptr<Node>;

// Reverse-mode tape. Parameters persist across forward passes; everything
// else is recorded in creation order, which is a valid topological order.
// Gradients on parameters accumulate across backward() calls until
// zero_grad() is invoked.
class Graph {
 public:
  Var parameter(std::string name, Tensor init);
  Var constant(Tensor value);
  Var record(Tensor value, std::span<const Var> inputs, std::function<void(Node&)> backward);
  Var record(Tensor value, std::initializer_list<Var> inputs, std::function<void(Node&)> backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  // Populates d(loss)/d(parameter) on every parameter reachable from loss.
  // Throws UsageError unless loss holds exactly one value.
  void backward(const Var& loss);
  void zero_grad();
  // Drops recorded operations. Parameters and their grads are kept.
  void clear_tape();

  const std::vector<Var>& parameters() const noexcept { return parameters_; }
  Var find_parameter(const std::string& name) const;
  std::size_t tape_size() const noexcept { return tape_.size(); }
  std::size_t parameter_scalar_count() const noexcept;

  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> flat);

 private:
  std::vector<Var> parameters_;
  std::vector<Var> tape_;
};

}  // namespace moes
