#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "moes/autodiff.hpp"
#include "moes/tensor.hpp"

namespace moes::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values()) v = u(rng);
  return t;
}

// sum(w * x) for a fixed random w, so every output element gets a distinct
// upstream gradient.
inline Var weighted_sum(Graph& g, const Var& x, std::uint64_t seed = 99) {
  auto w = std::make_shared<Tensor>(random_tensor(x->value.shape(), seed));
  double s = 0.0;
  for (std::size_t i = 0; i < x->value.size(); ++i) s += (*w)[i] * x->value[i];
  return g.record(Tensor::scalar(s), {x}, [x, w](Node& self) {
    if (!x->requires_grad) return;
    Tensor& gx = x->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += (*w)[i] * self.grad[0];
  });
}

// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("moes_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

}  // namespace moes::testing
