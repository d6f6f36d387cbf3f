#ifndef SON_ODE_HPP
#define SON_ODE_HPP

#include <functional>
#include <limits>
#include <vector>

#include "son/tensor.hpp"

namespace son {

struct OdeOptions {
  double rtol = 1e-6;
  double atol = 1e-9;
  double max_step = std::numeric_limits<double>::infinity();
  int max_steps = 1000000;
};

using OdeRhs = std::function<void(double t, const std::vector<double>& y, std::vector<double>& dydt)>;

/// Adaptive Dormand-Prince 5(4). Integrates y' = f(t, y) from t0 to t1 (t1 >= t0)
/// and returns y(t1).
std::vector<double> rk45_solve(const OdeRhs& f, double t0, std::vector<double> y0, double t1,
                               const OdeOptions& opts = {});

/// Same, but lands exactly on every stop in (t0, t1); use when f has known
/// kinks (piecewise-linear interpolants) so each segment stays smooth.
std::vector<double> rk45_solve_through(const OdeRhs& f, double t0, std::vector<double> y0,
                                       double t1, const std::vector<double>& stops,
                                       const OdeOptions& opts = {});

/// Piecewise-linear interpolant through (xs, vals); constant beyond the ends.
class LinearInterpolant {
 public:
  LinearInterpolant(std::vector<double> xs, std::vector<double> vals);
  double operator()(double x) const;

 private:
  std::vector<double> xs_, vals_;
};

/// Bilinear interpolant on a tensor grid; clamped to the grid box outside it
/// (nearest-boundary constant extension).
class BilinearInterpolant {
 public:
  BilinearInterpolant(std::vector<double> xs, std::vector<double> ys, Tensor vals);  // vals {ny, nx}
  double operator()(double x, double y) const;
  const std::vector<double>& xs() const { return xs_; }
  const std::vector<double>& ys() const { return ys_; }

 private:
  std::vector<double> xs_, ys_;
  Tensor vals_;
};

}  // namespace son

#endif  // SON_ODE_HPP
