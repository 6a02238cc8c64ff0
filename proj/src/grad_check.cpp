#include "moes/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "moes/error.hpp"

namespace moes {

bool GradCheckReport::passed() const {
  return std::none_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.flagged; });
}

namespace {

double evaluate(Graph& graph, const LossFunction& loss_fn) {
  graph.clear_tape();
  Var loss = loss_fn(graph);
  if (loss->value.size() != 1) throw UsageError("grad_check loss must be scalar");
  const double v = loss->value[0];
  graph.clear_tape();
  return v;
}

}  // namespace

GradCheckReport grad_check(Graph& graph, const LossFunction& loss_fn, const GradCheckOptions& options) {
  if (!(options.epsilon > 0.0 && options.epsilon <= 1e-2)) {
    throw UsageError("grad_check epsilon must lie in (0, 1e-2]");
  }
  graph.clear_tape();
  graph.zero_grad();
  Var loss = loss_fn(graph);
  graph.backward(loss);
  graph.clear_tape();

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  for (const Var& param : graph.parameters()) {
    GradCheckEntry entry;
    entry.name = param->name;
    const Tensor analytic = param->grad;
    std::vector<std::size_t> indices(param->value.size());
    std::iota(indices.begin(), indices.end(), 0);
    if (options.max_elements_per_parameter != 0 && indices.size() > options.max_elements_per_parameter) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(options.max_elements_per_parameter);
      std::sort(indices.begin(), indices.end());
    }
    for (std::size_t i : indices) {
      double& x = param->value[i];
      const double saved = x;
      x = saved + options.epsilon;
      const double up = evaluate(graph, loss_fn);
      x = saved - options.epsilon;
      const double down = evaluate(graph, loss_fn);
      x = saved;
      const double numeric = (up - down) / (2.0 * options.epsilon);
      const double abs_err = std::abs(numeric - analytic[i]);
      const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), options.magnitude_floor});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, abs_err / scale);
    }
    entry.checked = indices.size();
    entry.flagged = !(entry.max_rel_error <= options.tolerance);
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  graph.zero_grad();
  return report;
}

}  // namespace moes
