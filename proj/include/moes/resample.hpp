#pragma once

#include <cstddef>

#include "moes/tensor.hpp"

namespace moes {

// Align-corners bilinear resize of a [C,h,w] map to [C,H,W] (either direction).
Tensor resize_bilinear(const Tensor& chw, std::size_t height, std::size_t width);

// Box-filter reduction when the factors are integral, bilinear otherwise.
Tensor downsample_area(const Tensor& chw, std::size_t height, std::size_t width);

// Divides by the maximum so the map peaks at exactly 1. All-zero maps are left as is.
Tensor max_normalized(Tensor map);

}  // namespace moes
