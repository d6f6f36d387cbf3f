#ifndef SON_GRF_HPP
#define SON_GRF_HPP

#include <array>
#include <memory>
#include <vector>

#include "son/rng.hpp"
#include "son/tensor.hpp"

namespace son {

/// RBF covariance kernel: variance * exp(-||p-q||^2 / (2 l^2)) + jitter on the diagonal.
struct KernelConfig {
  double length_scale = 0.2;
  double variance = 1.0;
  double jitter = 1e-8;
};

/// Fixed sensor locations in R^1 or R^2. 2-D grids are full tensor products,
/// stored row-major (x varies fastest along the second axis).
struct SensorGrid {
  int dim = 1;
  std::vector<double> axis_x;  // 1-D: the grid itself
  std::vector<double> axis_y;  // 2-D only
  std::array<double, 2> lo{0, 0};
  std::array<double, 2> hi{0, 0};

  static SensorGrid uniform_1d(double a, double b, int m);
  static SensorGrid uniform_2d(double ax, double bx, int nx, double ay, double by, int ny);

  int count() const {
    return static_cast<int>(axis_x.size()) * (dim == 2 ? static_cast<int>(axis_y.size()) : 1);
  }
  std::array<double, 2> point(int i) const;
  /// Grid shape for tensors living on this grid: {m} or {ny, nx}.
  std::vector<int> field_shape() const;
};

Tensor rbf_covariance(const SensorGrid& grid, const KernelConfig& cfg);

/// Cholesky-based sampler. Factors once; doubles the jitter until the
/// factorization succeeds, failing past 1e-4.
class GrfSampler {
 public:
  GrfSampler(const SensorGrid& grid, const KernelConfig& cfg);
  ~GrfSampler();
  GrfSampler(GrfSampler&&) noexcept;
  GrfSampler& operator=(GrfSampler&&) noexcept;

  Tensor sample(RandomStream& rng) const;  // field_shape-shaped tensor
  double effective_jitter() const { return jitter_; }
  /// Lower-triangular factor L with L L^T = K + jitter I (row-major m x m).
  Tensor cholesky_factor() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::vector<int> shape_;
  double jitter_ = 0;
};

/// `count` independent fields; sample i is drawn from rng.substream(i).
std::vector<Tensor> sample_grf(const SensorGrid& grid, const KernelConfig& cfg, int count,
                               const RandomStream& rng);

}  // namespace son

#endif  // SON_GRF_HPP
