#include "son/ode.hpp"

#include <algorithm>
#include <cmath>

#include "son/errors.hpp"

namespace son {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double kA21 = 1.0 / 5;
constexpr double kA31 = 3.0 / 40, kA32 = 9.0 / 40;
constexpr double kA41 = 44.0 / 45, kA42 = -56.0 / 15, kA43 = 32.0 / 9;
constexpr double kA51 = 19372.0 / 6561, kA52 = -25360.0 / 2187, kA53 = 64448.0 / 6561,
                 kA54 = -212.0 / 729;
constexpr double kA61 = 9017.0 / 3168, kA62 = -355.0 / 33, kA63 = 46732.0 / 5247,
                 kA64 = 49.0 / 176, kA65 = -5103.0 / 18656;
constexpr double kB1 = 35.0 / 384, kB3 = 500.0 / 1113, kB4 = 125.0 / 192, kB5 = -2187.0 / 6784,
                 kB6 = 11.0 / 84;
constexpr double kE1 = 35.0 / 384 - 5179.0 / 57600, kE3 = 500.0 / 1113 - 7571.0 / 16695,
                 kE4 = 125.0 / 192 - 393.0 / 640, kE5 = -2187.0 / 6784 + 92097.0 / 339200,
                 kE6 = 11.0 / 84 - 187.0 / 2100, kE7 = -1.0 / 40;
constexpr double kC2 = 1.0 / 5, kC3 = 3.0 / 10, kC4 = 4.0 / 5, kC5 = 8.0 / 9;

}  // namespace

std::vector<double> rk45_solve(const OdeRhs& f, double t0, std::vector<double> y0, double t1,
                               const OdeOptions& opts) {
  if (t1 < t0) throw ContractError("rk45_solve: backward integration not supported");
  const std::size_t n = y0.size();
  if (t1 == t0) return y0;

  std::vector<double> y = std::move(y0);
  std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n);

  double t = t0;
  double h = std::min({opts.max_step, t1 - t0, 0.25});
  f(t, y, k1);  // FSAL: k1 carried over accepted steps

  int steps = 0;
  while (t < t1) {
    if (++steps > opts.max_steps) throw NumericError("rk45_solve: step limit exceeded");
    h = std::min({h, opts.max_step, t1 - t});

    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * kA21 * k1[i];
    f(t + kC2 * h, ytmp, k2);
    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * (kA31 * k1[i] + kA32 * k2[i]);
    f(t + kC3 * h, ytmp, k3);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (kA41 * k1[i] + kA42 * k2[i] + kA43 * k3[i]);
    f(t + kC4 * h, ytmp, k4);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (kA51 * k1[i] + kA52 * k2[i] + kA53 * k3[i] + kA54 * k4[i]);
    f(t + kC5 * h, ytmp, k5);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (kA61 * k1[i] + kA62 * k2[i] + kA63 * k3[i] + kA64 * k4[i] + kA65 * k5[i]);
    f(t + h, ytmp, k6);
    for (std::size_t i = 0; i < n; ++i)
      ynew[i] = y[i] + h * (kB1 * k1[i] + kB3 * k3[i] + kB4 * k4[i] + kB5 * k5[i] + kB6 * k6[i]);
    f(t + h, ynew, k7);

    double err = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double e = h * (kE1 * k1[i] + kE3 * k3[i] + kE4 * k4[i] + kE5 * k5[i] + kE6 * k6[i] +
                      kE7 * k7[i]);
      double sc = opts.atol + opts.rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
      err += (e / sc) * (e / sc);
    }
    err = std::sqrt(err / static_cast<double>(n));

    if (err <= 1.0 || h <= 1e-14 * std::max(1.0, std::abs(t))) {
      t += h;
      y = ynew;
      k1 = k7;
      if (!std::isfinite(y[0])) throw NumericError("rk45_solve: non-finite state");
    }
    double factor = err > 0 ? 0.9 * std::pow(err, -0.2) : 5.0;
    h *= std::clamp(factor, 0.2, 5.0);
  }
  return y;
}

std::vector<double> rk45_solve_through(const OdeRhs& f, double t0, std::vector<double> y0,
                                       double t1, const std::vector<double>& stops,
                                       const OdeOptions& opts) {
  std::vector<double> y = std::move(y0);
  double t = t0;
  for (double s : stops) {
    if (s <= t) continue;
    if (s >= t1) break;
    y = rk45_solve(f, t, std::move(y), s, opts);
    t = s;
  }
  return rk45_solve(f, t, std::move(y), t1, opts);
}

LinearInterpolant::LinearInterpolant(std::vector<double> xs, std::vector<double> vals)
    : xs_(std::move(xs)), vals_(std::move(vals)) {
  if (xs_.size() != vals_.size() || xs_.empty())
    throw ContractError("LinearInterpolant: bad node/value sizes");
  for (std::size_t i = 1; i < xs_.size(); ++i)
    if (xs_[i] <= xs_[i - 1]) throw ContractError("LinearInterpolant: nodes must increase");
}

double LinearInterpolant::operator()(double x) const {
  if (x <= xs_.front()) return vals_.front();
  if (x >= xs_.back()) return vals_.back();
  auto it = std::upper_bound(xs_.begin(), xs_.end(), x);
  std::size_t hi = static_cast<std::size_t>(it - xs_.begin());
  std::size_t lo = hi - 1;
  double w = (x - xs_[lo]) / (xs_[hi] - xs_[lo]);
  return vals_[lo] + w * (vals_[hi] - vals_[lo]);
}

BilinearInterpolant::BilinearInterpolant(std::vector<double> xs, std::vector<double> ys, Tensor vals)
    : xs_(std::move(xs)), ys_(std::move(ys)), vals_(std::move(vals)) {
  if (vals_.ndim() != 2 || vals_.dim(0) != static_cast<int>(ys_.size()) ||
      vals_.dim(1) != static_cast<int>(xs_.size()))
    throw ContractError("BilinearInterpolant: value grid shape mismatch");
}

double BilinearInterpolant::operator()(double x, double y) const {
  x = std::clamp(x, xs_.front(), xs_.back());
  y = std::clamp(y, ys_.front(), ys_.back());
  auto cell = [](const std::vector<double>& axis, double v) {
    std::size_t hi = static_cast<std::size_t>(std::upper_bound(axis.begin(), axis.end(), v) -
                                              axis.begin());
    if (hi >= axis.size()) hi = axis.size() - 1;
    if (hi == 0) hi = 1;
    return hi;
  };
  std::size_t ix = cell(xs_, x), iy = cell(ys_, y);
  double tx = (x - xs_[ix - 1]) / (xs_[ix] - xs_[ix - 1]);
  double ty = (y - ys_[iy - 1]) / (ys_[iy] - ys_[iy - 1]);
  double v00 = vals_.at(static_cast<int>(iy - 1), static_cast<int>(ix - 1));
  double v01 = vals_.at(static_cast<int>(iy - 1), static_cast<int>(ix));
  double v10 = vals_.at(static_cast<int>(iy), static_cast<int>(ix - 1));
  double v11 = vals_.at(static_cast<int>(iy), static_cast<int>(ix));
  return (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
}

}  // namespace son
