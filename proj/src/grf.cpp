#include "son/grf.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "son/errors.hpp"

namespace son {

SensorGrid SensorGrid::uniform_1d(double a, double b, int m) {
  if (m < 1) throw ConfigError("SensorGrid: need at least one sensor");
  SensorGrid g;
  g.dim = 1;
  g.lo = {a, 0};
  g.hi = {b, 0};
  g.axis_x.resize(m);
  for (int i = 0; i < m; ++i) g.axis_x[i] = m == 1 ? a : a + (b - a) * i / (m - 1);
  return g;
}

SensorGrid SensorGrid::uniform_2d(double ax, double bx, int nx, double ay, double by, int ny) {
  if (nx < 1 || ny < 1) throw ConfigError("SensorGrid: need at least one sensor per axis");
  SensorGrid g;
  g.dim = 2;
  g.lo = {ax, ay};
  g.hi = {bx, by};
  g.axis_x.resize(nx);
  g.axis_y.resize(ny);
  for (int i = 0; i < nx; ++i) g.axis_x[i] = nx == 1 ? ax : ax + (bx - ax) * i / (nx - 1);
  for (int j = 0; j < ny; ++j) g.axis_y[j] = ny == 1 ? ay : ay + (by - ay) * j / (ny - 1);
  return g;
}

std::array<double, 2> SensorGrid::point(int i) const {
  if (dim == 1) return {axis_x[static_cast<std::size_t>(i)], 0.0};
  const int nx = static_cast<int>(axis_x.size());
  return {axis_x[static_cast<std::size_t>(i % nx)], axis_y[static_cast<std::size_t>(i / nx)]};
}

std::vector<int> SensorGrid::field_shape() const {
  if (dim == 1) return {static_cast<int>(axis_x.size())};
  return {static_cast<int>(axis_y.size()), static_cast<int>(axis_x.size())};
}

Tensor rbf_covariance(const SensorGrid& grid, const KernelConfig& cfg) {
  const int m = grid.count();
  if (m == 0) throw ContractError("rbf_covariance: empty grid");
  if (cfg.length_scale <= 0 || cfg.variance <= 0 || cfg.jitter < 0)
    throw ConfigError("rbf_covariance: invalid kernel config");
  Tensor k({m, m});
  const double inv2l2 = 1.0 / (2.0 * cfg.length_scale * cfg.length_scale);
  for (int i = 0; i < m; ++i) {
    auto pi = grid.point(i);
    k.at(i, i) = cfg.variance + cfg.jitter;
    for (int j = i + 1; j < m; ++j) {
      auto pj = grid.point(j);
      double dx = pi[0] - pj[0], dy = pi[1] - pj[1];
      double v = cfg.variance * std::exp(-(dx * dx + dy * dy) * inv2l2);
      k.at(i, j) = v;
      k.at(j, i) = v;
    }
  }
  return k;
}

struct GrfSampler::Impl {
  Eigen::MatrixXd chol_l;
};

GrfSampler::GrfSampler(const SensorGrid& grid, const KernelConfig& cfg)
    : impl_(std::make_unique<Impl>()), shape_(grid.field_shape()) {
  const int m = grid.count();
  KernelConfig base = cfg;
  base.jitter = 0;
  Tensor k = rbf_covariance(grid, base);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> kmap(
      k.data(), m, m);

  double jitter = cfg.jitter > 0 ? cfg.jitter : 1e-8;
  while (true) {
    Eigen::MatrixXd kj = kmap;
    kj.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(kj);
    if (llt.info() == Eigen::Success) {
      impl_->chol_l = llt.matrixL();
      jitter_ = jitter;
      return;
    }
    if (jitter >= 1e-4)
      throw NumericError("GrfSampler: Cholesky failed with jitter up to " + std::to_string(jitter));
    jitter *= 2;
  }
}

GrfSampler::~GrfSampler() = default;
GrfSampler::GrfSampler(GrfSampler&&) noexcept = default;
GrfSampler& GrfSampler::operator=(GrfSampler&&) noexcept = default;

Tensor GrfSampler::sample(RandomStream& rng) const {
  const int m = static_cast<int>(impl_->chol_l.rows());
  Eigen::VectorXd z(m);
  for (int i = 0; i < m; ++i) z[i] = rng.normal();
  Eigen::VectorXd x = impl_->chol_l * z;
  Tensor out(shape_);
  for (int i = 0; i < m; ++i) out[i] = x[i];
  return out;
}

Tensor GrfSampler::cholesky_factor() const {
  const int m = static_cast<int>(impl_->chol_l.rows());
  Tensor l({m, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) l.at(i, j) = impl_->chol_l(i, j);
  return l;
}

std::vector<Tensor> sample_grf(const SensorGrid& grid, const KernelConfig& cfg, int count,
                               const RandomStream& rng) {
  if (count < 0) throw ContractError("sample_grf: negative count");
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(count));
  if (count == 0) return out;
  GrfSampler sampler(grid, cfg);
  for (int i = 0; i < count; ++i) {
    RandomStream sub = rng.substream(static_cast<std::uint64_t>(i));
    out.push_back(sampler.sample(sub));
  }
  return out;
}

}  // namespace son
