#include "moes/resample.hpp"

#include <algorithm>
#include <cmath>

#include "moes/error.hpp"

namespace moes {

Tensor resize_bilinear(const Tensor& chw, std::size_t height, std::size_t width) {
  if (chw.rank() != 3) throw UsageError("resize_bilinear expects [C,H,W]");
  const std::size_t C = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (h == height && w == width) return chw;
  Tensor out({C, height, width});
  auto src_coord = [](std::size_t o, std::size_t in, std::size_t n_out) {
    return n_out == 1 ? 0.0 : static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(n_out - 1);
  };
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      const double sy = src_coord(y, h, height);
      const auto y0 = std::min(static_cast<std::size_t>(sy), h - 1), y1 = std::min(y0 + 1, h - 1);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t x = 0; x < width; ++x) {
        const double sx = src_coord(x, w, width);
        const auto x0 = std::min(static_cast<std::size_t>(sx), w - 1), x1 = std::min(x0 + 1, w - 1);
        const double fx = sx - static_cast<double>(x0);
        const double* p = chw.data() + c * h * w;
        const double top = p[y0 * w + x0] * (1 - fx) + p[y0 * w + x1] * fx;
        const double bot = p[y1 * w + x0] * (1 - fx) + p[y1 * w + x1] * fx;
        out[(c * height + y) * width + x] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

Tensor downsample_area(const Tensor& chw, std::size_t height, std::size_t width) {
  if (chw.rank() != 3) throw UsageError("downsample_area expects [C,H,W]");
  const std::size_t C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
  if (H == height && W == width) return chw;
  if (height == 0 || width == 0 || H % height != 0 || W % width != 0) return resize_bilinear(chw, height, width);
  const std::size_t fy = H / height, fx = W / width;
  const double inv = 1.0 / static_cast<double>(fy * fx);
  Tensor out({C, height, width});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        out[(c * height + y / fy) * width + x / fx] += chw[(c * H + y) * W + x] * inv;
      }
    }
  }
  return out;
}

Tensor max_normalized(Tensor map) {
  const double peak = map.max();
  if (peak > 0.0) {
    for (auto& v : map.values()) v /= peak;
  }
  return map;
}

}  // namespace moes
