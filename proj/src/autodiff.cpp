#include "moes/autodiff.hpp"

#include <algorithm>

#include "moes/error.hpp"

namespace moes {

Tensor& Node::ensure_grad() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var Graph::parameter(std::string name, Tensor init) {
  if (find_parameter(name)) throw ConfigError("duplicate parameter name: " + name);
  auto node = std::make_shared<Node>();
  node->value = std::move(init);
  node->grad = Tensor(node->value.shape(), 0.0);
  node->requires_grad = true;
  node->name = std::move(name);
  parameters_.push_back(node);
  return node;
}

Var Graph::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->tape_index = static_cast<long>(tape_.size());
  tape_.push_back(node);
  return node;
}

Var Graph::record(Tensor value, std::span<const Var> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  const long index = static_cast<long>(tape_.size());
  bool needs_grad = false;
  for (const auto& in : inputs) {
    if (!in) throw UsageError("null input to recorded operation");
    if (in->tape_index >= index) throw UsageError("operation input recorded after its consumer");
    needs_grad = needs_grad || in->requires_grad;
  }
  node->value = std::move(value);
  node->requires_grad = needs_grad;
  if (needs_grad) node->backward = std::move(backward);
  node->tape_index = index;
  tape_.push_back(node);
  return node;
}

void Graph::backward(const Var& loss) {
  if (!loss || loss->value.size() != 1) throw UsageError("backward requires a scalar loss");
  if (loss->tape_index < 0) {
    // A parameter used directly as the loss.
    loss->ensure_grad()[0] += 1.0;
    return;
  }
  if (static_cast<std::size_t>(loss->tape_index) >= tape_.size() ||
      tape_[static_cast<std::size_t>(loss->tape_index)] != loss) {
    throw UsageError("loss does not belong to this graph's tape");
  }
  for (auto& node : tape_) node->grad = Tensor();
  loss->ensure_grad()[0] = 1.0;
  for (long i = loss->tape_index; i >= 0; --i) {
    Node& node = *tape_[static_cast<std::size_t>(i)];
    if (node.requires_grad && node.has_grad() && node.backward) node.backward(node);
  }
}

void Graph::zero_grad() {
  for (auto& p : parameters_) p->ensure_grad().fill(0.0);
}

void Graph::clear_tape() { tape_.clear(); }

Var Graph::find_parameter(const std::string& name) const {
  auto it = std::find_if(parameters_.begin(), parameters_.end(),
                         [&](const Var& p) { return p->name == name; });
  return it == parameters_.end() ? nullptr : *it;
}

std::size_t Graph::parameter_scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : parameters_) n += p->value.size();
  return n;
}

std::vector<double> Graph::flat_parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_scalar_count());
  for (const auto& p : parameters_) {
    auto v = p->value.values();
    flat.insert(flat.end(), v.begin(), v.end());
  }
  return flat;
}

void Graph::set_flat_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_scalar_count()) {
    throw UsageError("parameter vector has " + std::to_string(flat.size()) + " values, graph needs " +
                     std::to_string(parameter_scalar_count()));
  }
  std::size_t offset = 0;
  for (auto& p : parameters_) {
    auto v = p->value.values();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), v.size(), v.begin());
    offset += v.size();
  }
}

}  // namespace moes
