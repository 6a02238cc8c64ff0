#pragma once

#include <cstddef>
#include <vector>

#include "moes/autodiff.hpp"

// Differentiable layer primitives. Every op records its output on the graph
// and, when any input requires a gradient, a closure that accumulates into
// the inputs' grads. Shapes are NCHW for image tensors.
namespace moes::ops {

struct PoolSpec {
  std::size_t window = 2;
  std::size_t stride = 2;
  // "same" pads the trailing edge so the output extent is ceil(extent/stride).
  bool same = false;

  bool operator==(const PoolSpec&) const = default;
};

// Cross-correlation (no kernel flip). kernel is [F,C,kh,kw], bias is [F].
Var conv2d(Graph& g, const Var& input, const Var& kernel, const Var& bias, std::size_t stride,
           std::size_t padding);

// Max over each window. The gradient goes to the first maximal element in
// row-major scan order of the window.
Var maxpool2d(Graph& g, const Var& input, const PoolSpec& pool);

// Non-overlapping mean pooling by an integer factor that divides H and W.
Var avgpool2d(Graph& g, const Var& input, std::size_t factor);

// input [N,D] x weight [D,U] + bias [U].
Var dense(Graph& g, const Var& input, const Var& weight, const Var& bias);

Var relu(Graph& g, const Var& input);

Var concat_channels(Graph& g, const std::vector<Var>& inputs);

// Align-corners bilinear resize to [N,C,target_h,target_w].
Var upsample_bilinear(Graph& g, const Var& input, std::size_t target_h, std::size_t target_w);

// Row-wise softmax of logits/tau with max subtraction.
Var softmax_tempered(Graph& g, const Var& logits, double tau);

Var reshape(Graph& g, const Var& input, Shape shape);
Var flatten(Graph& g, const Var& input);

// [N,C,H,W] -> [N,1,H,W], mean over channels.
Var channel_mean(Graph& g, const Var& input);

// maps [N,K,H,W] times factors [1,K,H,W] broadcast over the batch.
Var multiply_broadcast_batch(Graph& g, const Var& maps, const Var& factors);

// Sum_k gates[n,k] * maps[n,k,:,:] -> [N,1,H,W].
Var gated_sum(Graph& g, const Var& maps, const Var& gates);

Var add(Graph& g, const Var& a, const Var& b);
Var scale(Graph& g, const Var& input, double factor);
Var sum(Graph& g, const Var& input);

// Identity in the forward pass; multiplies the incoming gradient by factor.
// Used to build deliberately wrong graphs for negative-control checks.
Var scale_gradient(Graph& g, const Var& input, double factor);

// Per-sample max-normalized, alpha-weighted squared error, averaged over
// pixels and batch. pred and target are [N,1,H,W]; target is a constant.
// A per-sample max below norm_floor is replaced by norm_floor.
Var normalized_saliency_error(Graph& g, const Var& pred, const Tensor& target, double alpha,
                              double norm_floor = 1e-8);

// (1/K)(1/Npx) Sum_k Sum_i (1 - bias[k,i])^2 over a [1,K,H,W] map.
Var center_bias_penalty(Graph& g, const Var& bias_maps);

// -Sum_k t_k log(max(p_k, floor)), averaged over the batch. targets is one-hot [N,K].
Var cross_entropy(Graph& g, const Var& probs, const Tensor& targets, double floor = 1e-12);

}  // namespace moes::ops
