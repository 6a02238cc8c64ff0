#include "moes/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "moes/error.hpp"

namespace moes::ops {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ConfigError(std::string(what) + " expects a rank-" + std::to_string(rank) + " tensor, got " +
                      shape_to_string(t.shape()));
  }
}

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kh, kw, stride, padding;
  std::size_t out_h, out_w;

  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return out_h * out_w; }
};

// Unfolds one image [C,H,W] into a [C*kh*kw, out_h*out_w] patch matrix.
void im2col(const double* image, const ConvGeometry& geo, double* col) {
  const auto pad = static_cast<long>(geo.padding);
  for (std::size_t c = 0; c < geo.channels; ++c) {
    const double* plane = image + c * geo.height * geo.width;
    for (std::size_t i = 0; i < geo.kh; ++i) {
      for (std::size_t j = 0; j < geo.kw; ++j) {
        double* row = col + ((c * geo.kh + i) * geo.kw + j) * geo.cols();
        for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
          const long iy = static_cast<long>(oy * geo.stride + i) - pad;
          double* dst = row + oy * geo.out_w;
          if (iy < 0 || iy >= static_cast<long>(geo.height)) {
            std::fill_n(dst, geo.out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * geo.width;
          for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
            const long ix = static_cast<long>(ox * geo.stride + j) - pad;
            dst[ox] = (ix < 0 || ix >= static_cast<long>(geo.width)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters patch-matrix gradients back onto the image.
void col2im_add(const double* col, const ConvGeometry& geo, double* image) {
  const auto pad = static_cast<long>(geo.padding);
  for (std::size_t c = 0; c < geo.channels; ++c) {
    double* plane = image + c * geo.height * geo.width;
    for (std::size_t i = 0; i < geo.kh; ++i) {
      for (std::size_t j = 0; j < geo.kw; ++j) {
        const double* row = col + ((c * geo.kh + i) * geo.kw + j) * geo.cols();
        for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
          const long iy = static_cast<long>(oy * geo.stride + i) - pad;
          if (iy < 0 || iy >= static_cast<long>(geo.height)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * geo.width;
          const double* src = row + oy * geo.out_w;
          for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
            const long ix = static_cast<long>(ox * geo.stride + j) - pad;
            if (ix >= 0 && ix < static_cast<long>(geo.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

struct BilinearTap {
  std::size_t lo, hi;
  double frac;
};

std::vector<BilinearTap> align_corner_taps(std::size_t in, std::size_t out) {
  std::vector<BilinearTap> taps(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double src = out == 1 ? 0.0
                                : static_cast<double>(o) * static_cast<double>(in - 1) /
                                      static_cast<double>(out - 1);
    auto lo = std::min(static_cast<std::size_t>(std::floor(src)), in - 1);
    taps[o] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

Var conv2d(Graph& g, const Var& input, const Var& kernel, const Var& bias, std::size_t stride,
           std::size_t padding) {
  const Tensor& x = input->value;
  const Tensor& k = kernel->value;
  require_rank(x, 4, "conv2d input");
  require_rank(k, 4, "conv2d kernel");
  if (k.dim(1) != x.dim(1)) {
    throw ConfigError("conv2d channel mismatch: input has " + std::to_string(x.dim(1)) +
                      " channels, kernel expects " + std::to_string(k.dim(1)));
  }
  if (bias->value.size() != k.dim(0)) throw ConfigError("conv2d bias size must equal filter count");
  if (stride == 0) throw ConfigError("conv2d stride must be positive");
  if (x.dim(2) + 2 * padding < k.dim(2) || x.dim(3) + 2 * padding < k.dim(3)) {
    throw ConfigError("conv2d kernel larger than padded input");
  }

  ConvGeometry geo{x.dim(1), x.dim(2), x.dim(3), k.dim(2), k.dim(3), stride, padding, 0, 0};
  geo.out_h = (geo.height + 2 * padding - geo.kh) / stride + 1;
  geo.out_w = (geo.width + 2 * padding - geo.kw) / stride + 1;
  const std::size_t batch = x.dim(0);
  const std::size_t filters = k.dim(0);

  Tensor out({batch, filters, geo.out_h, geo.out_w});
  std::vector<double> col(geo.rows() * geo.cols());
  ConstMatrixMap kmat(k.data(), static_cast<long>(filters), static_cast<long>(geo.rows()));
  Eigen::Map<const Eigen::VectorXd> bvec(bias->value.data(), static_cast<long>(filters));
  const std::size_t image_stride = geo.channels * geo.height * geo.width;
  for (std::size_t n = 0; n < batch; ++n) {
    im2col(x.data() + n * image_stride, geo, col.data());
    ConstMatrixMap cmat(col.data(), static_cast<long>(geo.rows()), static_cast<long>(geo.cols()));
    MatrixMap omat(out.data() + n * filters * geo.cols(), static_cast<long>(filters),
                   static_cast<long>(geo.cols()));
    omat.noalias() = kmat * cmat;
    omat.colwise() += bvec;
  }

  return g.record(std::move(out), {input, kernel, bias}, [input, kernel, bias, geo, batch, filters,
                                                           image_stride](Node& self) {
    const Tensor& go = self.grad;
    std::vector<double> col(geo.rows() * geo.cols());
    ConstMatrixMap kmat(kernel->value.data(), static_cast<long>(filters), static_cast<long>(geo.rows()));
    for (std::size_t n = 0; n < batch; ++n) {
      ConstMatrixMap gmat(go.data() + n * filters * geo.cols(), static_cast<long>(filters),
                          static_cast<long>(geo.cols()));
      if (kernel->requires_grad) {
        im2col(input->value.data() + n * image_stride, geo, col.data());
        ConstMatrixMap cmat(col.data(), static_cast<long>(geo.rows()), static_cast<long>(geo.cols()));
        MatrixMap dk(kernel->ensure_grad().data(), static_cast<long>(filters),
                     static_cast<long>(geo.rows()));
        dk.noalias() += gmat * cmat.transpose();
      }
      if (bias->requires_grad) {
        Eigen::Map<Eigen::VectorXd> db(bias->ensure_grad().data(), static_cast<long>(filters));
        db += gmat.rowwise().sum();
      }
      if (input->requires_grad) {
        MatrixMap dcol(col.data(), static_cast<long>(geo.rows()), static_cast<long>(geo.cols()));
        dcol.noalias() = kmat.transpose() * gmat;
        col2im_add(col.data(), geo, input->ensure_grad().data() + n * image_stride);
      }
    }
  });
}

Var maxpool2d(Graph& g, const Var& input, const PoolSpec& pool) {
  const Tensor& x = input->value;
  require_rank(x, 4, "maxpool2d");
  if (pool.window == 0 || pool.stride == 0) throw ConfigError("pool window and stride must be >= 1");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::size_t out_h = 0, out_w = 0, pad_top = 0, pad_left = 0;
  if (pool.same) {
    out_h = (H + pool.stride - 1) / pool.stride;
    out_w = (W + pool.stride - 1) / pool.stride;
    const std::size_t need_h = (out_h - 1) * pool.stride + pool.window;
    const std::size_t need_w = (out_w - 1) * pool.stride + pool.window;
    pad_top = need_h > H ? (need_h - H) / 2 : 0;
    pad_left = need_w > W ? (need_w - W) / 2 : 0;
  } else {
    if (pool.window > H || pool.window > W) {
      throw ConfigError("pool window " + std::to_string(pool.window) + " larger than input " +
                        shape_to_string(x.shape()));
    }
    out_h = (H - pool.window) / pool.stride + 1;
    out_w = (W - pool.window) / pool.stride + 1;
  }

  Tensor out({N, C, out_h, out_w});
  std::vector<std::size_t> argmax(out.size());
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* plane = x.data() + nc * H * W;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        bool found = false;
        for (std::size_t i = 0; i < pool.window; ++i) {
          const long iy = static_cast<long>(oy * pool.stride + i) - static_cast<long>(pad_top);
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          for (std::size_t j = 0; j < pool.window; ++j) {
            const long ix = static_cast<long>(ox * pool.stride + j) - static_cast<long>(pad_left);
            if (ix < 0 || ix >= static_cast<long>(W)) continue;
            const std::size_t idx = static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix);
            if (!found || plane[idx] > best) {
              best = plane[idx];
              best_idx = idx;
              found = true;
            }
          }
        }
        out[o] = best;
        argmax[o] = nc * H * W + best_idx;
      }
    }
  }

  return g.record(std::move(out), {input}, [input, argmax = std::move(argmax)](Node& self) {
    Tensor& dx = input->ensure_grad();
    for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += self.grad[i];
  });
}

Var avgpool2d(Graph& g, const Var& input, std::size_t factor) {
  const Tensor& x = input->value;
  require_rank(x, 4, "avgpool2d");
  if (factor == 0) throw ConfigError("avgpool2d factor must be positive");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % factor != 0 || W % factor != 0) {
    throw ConfigError("avgpool2d factor " + std::to_string(factor) + " does not divide " +
                      shape_to_string(x.shape()));
  }
  const std::size_t oh = H / factor, ow = W / factor;
  const double inv = 1.0 / static_cast<double>(factor * factor);
  Tensor out({N, C, oh, ow});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t xx = 0; xx < W; ++xx) {
        out[(nc * oh + y / factor) * ow + xx / factor] += x[(nc * H + y) * W + xx] * inv;
      }
    }
  }
  return g.record(std::move(out), {input}, [input, factor, H, W, oh, ow, inv](Node& self) {
    Tensor& dx = input->ensure_grad();
    const std::size_t planes = dx.size() / (H * W);
    for (std::size_t nc = 0; nc < planes; ++nc) {
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t xx = 0; xx < W; ++xx) {
          dx[(nc * H + y) * W + xx] += self.grad[(nc * oh + y / factor) * ow + xx / factor] * inv;
        }
      }
    }
  });
}

Var dense(Graph& g, const Var& input, const Var& weight, const Var& bias) {
  const Tensor& x = input->value;
  const Tensor& w = weight->value;
  require_rank(x, 2, "dense input");
  require_rank(w, 2, "dense weight");
  if (x.dim(1) != w.dim(0)) {
    throw ConfigError("dense dimension mismatch: input " + shape_to_string(x.shape()) + ", weight " +
                      shape_to_string(w.shape()));
  }
  if (bias->value.size() != w.dim(1)) throw ConfigError("dense bias size must equal unit count");
  const auto N = static_cast<long>(x.dim(0)), D = static_cast<long>(w.dim(0)),
             U = static_cast<long>(w.dim(1));
  Tensor out({x.dim(0), w.dim(1)});
  MatrixMap omat(out.data(), N, U);
  omat.noalias() = ConstMatrixMap(x.data(), N, D) * ConstMatrixMap(w.data(), D, U);
  omat.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias->value.data(), U);

  return g.record(std::move(out), {input, weight, bias}, [input, weight, bias, N, D, U](Node& self) {
    ConstMatrixMap go(self.grad.data(), N, U);
    if (input->requires_grad) {
      MatrixMap(input->ensure_grad().data(), N, D).noalias() +=
          go * ConstMatrixMap(weight->value.data(), D, U).transpose();
    }
    if (weight->requires_grad) {
      MatrixMap(weight->ensure_grad().data(), D, U).noalias() +=
          ConstMatrixMap(input->value.data(), N, D).transpose() * go;
    }
    if (bias->requires_grad) {
      Eigen::Map<Eigen::RowVectorXd>(bias->ensure_grad().data(), U) += go.colwise().sum();
    }
  });
}

Var relu(Graph& g, const Var& input) {
  Tensor out = input->value;
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return g.record(std::move(out), {input}, [input](Node& self) {
    Tensor& dx = input->ensure_grad();
    const Tensor& x = input->value;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > 0.0) dx[i] += self.grad[i];
    }
  });
}

Var concat_channels(Graph& g, const std::vector<Var>& inputs) {
  if (inputs.empty()) throw ConfigError("concat_channels needs at least one input");
  const Tensor& first = inputs.front()->value;
  require_rank(first, 4, "concat_channels");
  const std::size_t N = first.dim(0), H = first.dim(2), W = first.dim(3);
  std::size_t total = 0;
  for (const auto& in : inputs) {
    const Tensor& t = in->value;
    require_rank(t, 4, "concat_channels");
    if (t.dim(0) != N || t.dim(2) != H || t.dim(3) != W) {
      throw ConfigError("concat_channels spatial mismatch: " + shape_to_string(first.shape()) + " vs " +
                        shape_to_string(t.shape()));
    }
    total += t.dim(1);
  }
  const std::size_t plane = H * W;
  Tensor out({N, total, H, W});
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t offset = 0;
    for (const auto& in : inputs) {
      const std::size_t c = in->value.dim(1);
      std::copy_n(in->value.data() + n * c * plane, c * plane, out.data() + (n * total + offset) * plane);
      offset += c;
    }
  }
  return g.record(std::move(out), inputs, [inputs, N, total, plane](Node& self) {
    for (std::size_t n = 0; n < N; ++n) {
      std::size_t offset = 0;
      for (const auto& in : inputs) {
        const std::size_t c = in->value.dim(1);
        if (in->requires_grad) {
          double* dst = in->ensure_grad().data() + n * c * plane;
          const double* src = self.grad.data() + (n * total + offset) * plane;
          for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
        }
        offset += c;
      }
    }
  });
}

Var upsample_bilinear(Graph& g, const Var& input, std::size_t target_h, std::size_t target_w) {
  const Tensor& x = input->value;
  require_rank(x, 4, "upsample_bilinear");
  if (target_h == 0 || target_w == 0) throw ConfigError("upsample_bilinear target must be nonzero");
  const std::size_t N = x.dim(0), C = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (target_h < h || target_w < w) {
    throw ConfigError("upsample_bilinear target " + std::to_string(target_h) + "x" +
                      std::to_string(target_w) + " smaller than input " + shape_to_string(x.shape()));
  }
  auto ty = align_corner_taps(h, target_h);
  auto tx = align_corner_taps(w, target_w);
  Tensor out({N, C, target_h, target_w});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* src = x.data() + nc * h * w;
    double* dst = out.data() + nc * target_h * target_w;
    for (std::size_t oy = 0; oy < target_h; ++oy) {
      const auto& a = ty[oy];
      for (std::size_t ox = 0; ox < target_w; ++ox) {
        const auto& b = tx[ox];
        const double top = src[a.lo * w + b.lo] * (1.0 - b.frac) + src[a.lo * w + b.hi] * b.frac;
        const double bot = src[a.hi * w + b.lo] * (1.0 - b.frac) + src[a.hi * w + b.hi] * b.frac;
        dst[oy * target_w + ox] = top * (1.0 - a.frac) + bot * a.frac;
      }
    }
  }
  return g.record(std::move(out), {input},
                  [input, ty = std::move(ty), tx = std::move(tx), h, w, target_h, target_w](Node& self) {
                    Tensor& dx = input->ensure_grad();
                    const std::size_t planes = dx.size() / (h * w);
                    for (std::size_t nc = 0; nc < planes; ++nc) {
                      double* d = dx.data() + nc * h * w;
                      const double* go = self.grad.data() + nc * target_h * target_w;
                      for (std::size_t oy = 0; oy < target_h; ++oy) {
                        const auto& a = ty[oy];
                        for (std::size_t ox = 0; ox < target_w; ++ox) {
                          const auto& b = tx[ox];
                          const double v = go[oy * target_w + ox];
                          d[a.lo * w + b.lo] += v * (1.0 - a.frac) * (1.0 - b.frac);
                          d[a.lo * w + b.hi] += v * (1.0 - a.frac) * b.frac;
                          d[a.hi * w + b.lo] += v * a.frac * (1.0 - b.frac);
                          d[a.hi * w + b.hi] += v * a.frac * b.frac;
                        }
                      }
                    }
                  });
}

Var softmax_tempered(Graph& g, const Var& logits, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ConfigError("softmax temperature must be positive and finite, got " + std::to_string(tau));
  }
  const Tensor& z = logits->value;
  require_rank(z, 2, "softmax_tempered");
  const std::size_t N = z.dim(0), K = z.dim(1);
  Tensor out({N, K});
  for (std::size_t n = 0; n < N; ++n) {
    const double* row = z.data() + n * K;
    double* p = out.data() + n * K;
    const double top = *std::max_element(row, row + K);
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      p[k] = std::exp((row[k] - top) / tau);
      total += p[k];
    }
    for (std::size_t k = 0; k < K; ++k) p[k] /= total;
  }
  return g.record(std::move(out), {logits}, [logits, tau, N, K](Node& self) {
    Tensor& dz = logits->ensure_grad();
    const Tensor& p = self.value;
    for (std::size_t n = 0; n < N; ++n) {
      double dot = 0.0;
      for (std::size_t k = 0; k < K; ++k) dot += self.grad[n * K + k] * p[n * K + k];
      for (std::size_t k = 0; k < K; ++k) {
        dz[n * K + k] += p[n * K + k] * (self.grad[n * K + k] - dot) / tau;
      }
    }
  });
}

Var reshape(Graph& g, const Var& input, Shape shape) {
  if (shape_size(shape) != input->value.size()) {
    throw ConfigError("reshape from " + shape_to_string(input->value.shape()) + " to " +
                      shape_to_string(shape) + " changes the element count");
  }
  return g.record(input->value.reshaped(std::move(shape)), {input}, [input](Node& self) {
    Tensor& dx = input->ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
  });
}

Var flatten(Graph& g, const Var& input) {
  const std::size_t n = input->value.dim(0);
  return reshape(g, input, {n, input->value.size() / n});
}

Var channel_mean(Graph& g, const Var& input) {
  const Tensor& x = input->value;
  require_rank(x, 4, "channel_mean");
  const std::size_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  const double inv = 1.0 / static_cast<double>(C);
  Tensor out({N, 1, x.dim(2), x.dim(3)});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* src = x.data() + (n * C + c) * plane;
      double* dst = out.data() + n * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i] * inv;
    }
  }
  return g.record(std::move(out), {input}, [input, N, C, plane, inv](Node& self) {
    Tensor& dx = input->ensure_grad();
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        double* dst = dx.data() + (n * C + c) * plane;
        const double* src = self.grad.data() + n * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i] * inv;
      }
    }
  });
}

Var multiply_broadcast_batch(Graph& g, const Var& maps, const Var& factors) {
  const Tensor& m = maps->value;
  const Tensor& f = factors->value;
  require_rank(m, 4, "multiply_broadcast_batch maps");
  require_rank(f, 4, "multiply_broadcast_batch factors");
  if (f.dim(0) != 1 || f.dim(1) != m.dim(1) || f.dim(2) != m.dim(2) || f.dim(3) != m.dim(3)) {
    throw ConfigError("cannot broadcast " + shape_to_string(f.shape()) + " over " +
                      shape_to_string(m.shape()));
  }
  const std::size_t N = m.dim(0), per = f.size();
  Tensor out = m;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t i = 0; i < per; ++i) out[n * per + i] *= f[i];
  }
  return g.record(std::move(out), {maps, factors}, [maps, factors, N, per](Node& self) {
    if (maps->requires_grad) {
      Tensor& dm = maps->ensure_grad();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t i = 0; i < per; ++i) dm[n * per + i] += self.grad[n * per + i] * factors->value[i];
      }
    }
    if (factors->requires_grad) {
      Tensor& df = factors->ensure_grad();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t i = 0; i < per; ++i) df[i] += self.grad[n * per + i] * maps->value[n * per + i];
      }
    }
  });
}

Var gated_sum(Graph& g, const Var& maps, const Var& gates) {
  const Tensor& m = maps->value;
  const Tensor& w = gates->value;
  require_rank(m, 4, "gated_sum maps");
  require_rank(w, 2, "gated_sum gates");
  if (w.dim(0) != m.dim(0) || w.dim(1) != m.dim(1)) {
    throw ConfigError("gate shape " + shape_to_string(w.shape()) + " does not match maps " +
                      shape_to_string(m.shape()));
  }
  const std::size_t N = m.dim(0), K = m.dim(1), plane = m.dim(2) * m.dim(3);
  Tensor out({N, 1, m.dim(2), m.dim(3)});
  for (std::size_t n = 0; n < N; ++n) {
    double* dst = out.data() + n * plane;
    for (std::size_t k = 0; k < K; ++k) {
      const double weight = w[n * K + k];
      const double* src = m.data() + (n * K + k) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += weight * src[i];
    }
  }
  return g.record(std::move(out), {maps, gates}, [maps, gates, N, K, plane](Node& self) {
    for (std::size_t n = 0; n < N; ++n) {
      const double* go = self.grad.data() + n * plane;
      for (std::size_t k = 0; k < K; ++k) {
        const double* src = maps->value.data() + (n * K + k) * plane;
        if (maps->requires_grad) {
          const double weight = gates->value[n * K + k];
          double* dst = maps->ensure_grad().data() + (n * K + k) * plane;
          for (std::size_t i = 0; i < plane; ++i) dst[i] += weight * go[i];
        }
        if (gates->requires_grad) {
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += src[i] * go[i];
          gates->ensure_grad()[n * K + k] += acc;
        }
      }
    }
  });
}

Var add(Graph& g, const Var& a, const Var& b) {
  if (a->value.shape() != b->value.shape()) {
    throw ConfigError("add shape mismatch: " + shape_to_string(a->value.shape()) + " vs " +
                      shape_to_string(b->value.shape()));
  }
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return g.record(std::move(out), {a, b}, [a, b](Node& self) {
    for (const Var& in : {a, b}) {
      if (!in->requires_grad) continue;
      Tensor& d = in->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

Var scale(Graph& g, const Var& input, double factor) {
  Tensor out = input->value;
  for (auto& v : out.values()) v *= factor;
  return g.record(std::move(out), {input}, [input, factor](Node& self) {
    Tensor& d = input->ensure_grad();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * factor;
  });
}

Var sum(Graph& g, const Var& input) {
  return g.record(Tensor::scalar(input->value.sum()), {input}, [input](Node& self) {
    Tensor& d = input->ensure_grad();
    const double go = self.grad[0];
    for (auto& v : d.values()) v += go;
  });
}

Var scale_gradient(Graph& g, const Var& input, double factor) {
  return g.record(input->value, {input}, [input, factor](Node& self) {
    Tensor& d = input->ensure_grad();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * factor;
  });
}

Var normalized_saliency_error(Graph& g, const Var& pred, const Tensor& target, double alpha,
                              double norm_floor) {
  const Tensor& p = pred->value;
  require_rank(p, 4, "normalized_saliency_error");
  if (target.shape() != p.shape()) {
    throw UsageError("saliency target " + shape_to_string(target.shape()) + " does not match prediction " +
                     shape_to_string(p.shape()));
  }
  if (!(alpha > target.max())) {
    throw ConfigError("alpha (" + std::to_string(alpha) + ") must exceed the ground-truth maximum (" +
                      std::to_string(target.max()) + ")");
  }
  const std::size_t N = p.dim(0), px = p.size() / N;
  std::vector<double> norm(N);
  std::vector<std::size_t> argmax(N);
  std::vector<bool> floored(N);
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const double* row = p.data() + n * px;
    const double* y = target.data() + n * px;
    argmax[n] = static_cast<std::size_t>(std::max_element(row, row + px) - row);
    floored[n] = row[argmax[n]] < norm_floor;
    norm[n] = floored[n] ? norm_floor : row[argmax[n]];
    double term = 0.0;
    for (std::size_t i = 0; i < px; ++i) {
      const double r = row[i] / norm[n] - y[i];
      term += r * r / (alpha - y[i]);
    }
    loss += term / static_cast<double>(px);
  }
  loss /= static_cast<double>(N);

  return g.record(Tensor::scalar(loss), {pred},
                  [pred, target, alpha, N, px, norm = std::move(norm), argmax = std::move(argmax),
                   floored = std::move(floored)](Node& self) {
                    Tensor& dp = pred->ensure_grad();
                    const double scale = self.grad[0] / static_cast<double>(N * px);
                    for (std::size_t n = 0; n < N; ++n) {
                      const double* row = pred->value.data() + n * px;
                      const double* y = target.data() + n * px;
                      double* d = dp.data() + n * px;
                      const double m = norm[n];
                      double dmax = 0.0;
                      for (std::size_t i = 0; i < px; ++i) {
                        const double coef = 2.0 * (row[i] / m - y[i]) / (alpha - y[i]) * scale;
                        d[i] += coef / m;
                        dmax -= coef * row[i] / (m * m);
                      }
                      if (!floored[n]) d[argmax[n]] += dmax;
                    }
                  });
}

Var center_bias_penalty(Graph& g, const Var& bias_maps) {
  const Tensor& b = bias_maps->value;
  require_rank(b, 4, "center_bias_penalty");
  const double denom = static_cast<double>(b.size());
  double acc = 0.0;
  for (double v : b.values()) acc += (1.0 - v) * (1.0 - v);
  return g.record(Tensor::scalar(acc / denom), {bias_maps}, [bias_maps, denom](Node& self) {
    Tensor& d = bias_maps->ensure_grad();
    const double go = self.grad[0];
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= 2.0 * (1.0 - bias_maps->value[i]) / denom * go;
  });
}

Var cross_entropy(Graph& g, const Var& probs, const Tensor& targets, double floor) {
  const Tensor& p = probs->value;
  require_rank(p, 2, "cross_entropy");
  if (targets.shape() != p.shape()) {
    throw UsageError("class targets " + shape_to_string(targets.shape()) + " do not match " +
                     shape_to_string(p.shape()));
  }
  const std::size_t N = p.dim(0), K = p.dim(1);
  std::vector<std::size_t> cls(N);
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t ones = 0;
    for (std::size_t k = 0; k < K; ++k) {
      const double t = targets[n * K + k];
      if (t == 1.0) {
        ++ones;
        cls[n] = k;
      } else if (t != 0.0) {
        ones = 2;
      }
    }
    if (ones != 1) throw UsageError("class target row " + std::to_string(n) + " is not one-hot");
    loss -= std::log(std::max(p[n * K + cls[n]], floor));
  }
  loss /= static_cast<double>(N);
  return g.record(Tensor::scalar(loss), {probs}, [probs, cls = std::move(cls), floor, N, K](Node& self) {
    Tensor& d = probs->ensure_grad();
    for (std::size_t n = 0; n < N; ++n) {
      const double pt = probs->value[n * K + cls[n]];
      if (pt > floor) d[n * K + cls[n]] -= self.grad[0] / (static_cast<double>(N) * pt);
    }
  });
}

}  // namespace moes::ops
