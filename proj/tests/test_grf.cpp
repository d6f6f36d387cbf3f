#include "son/grf.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

#include "son/errors.hpp"
#include "test_util.hpp"

using namespace son;

TEST_CASE("rbf covariance diagonal and closed-form entry") {
  SensorGrid grid = SensorGrid::uniform_1d(0.0, 0.2, 2);
  KernelConfig cfg{0.2, 1.0, 1e-8};
  Tensor k = rbf_covariance(grid, cfg);
  CHECK(k.at(0, 0) == doctest::Approx(1.0 + 1e-8));
  CHECK(k.at(1, 1) == doctest::Approx(1.0 + 1e-8));
  // distance 0.2 with l = 0.2 -> exp(-1/2)
  CHECK(k.at(0, 1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(k.at(0, 1) == doctest::Approx(0.60653).epsilon(1e-4));
}

TEST_CASE("rbf covariance decays monotonically with distance") {
  SensorGrid grid = SensorGrid::uniform_1d(0.0, 5.0, 50);
  Tensor k = rbf_covariance(grid, KernelConfig{0.5, 2.0, 0.0});
  for (int j = 1; j < 49; ++j) CHECK(k.at(0, j) > k.at(0, j + 1));
  CHECK(k.at(0, 49) < 1e-20);
  // symmetry
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < i; ++j) CHECK(k.at(i, j) == k.at(j, i));
}

TEST_CASE("cholesky factor reconstructs the jittered kernel") {
  SensorGrid grid = SensorGrid::uniform_1d(0.0, 5.0, 40);
  KernelConfig cfg{0.2, 1.0, 1e-8};
  GrfSampler sampler(grid, cfg);
  Tensor l = sampler.cholesky_factor();
  Tensor k = rbf_covariance(grid, KernelConfig{0.2, 1.0, sampler.effective_jitter()});
  double num = 0, den = 0;
  for (int i = 0; i < 40; ++i) {
    for (int j = 0; j < 40; ++j) {
      double llt = 0;
      for (int t = 0; t < 40; ++t) llt += l.at(i, t) * l.at(j, t);
      num += (llt - k.at(i, j)) * (llt - k.at(i, j));
      den += k.at(i, j) * k.at(i, j);
    }
  }
  CHECK(std::sqrt(num / den) < 1e-8);
}

TEST_CASE("sample mean and covariance match the kernel within MC error") {
  const int m = 20, n = 10000;
  SensorGrid grid = SensorGrid::uniform_1d(0.0, 5.0, m);
  KernelConfig cfg{0.7, 1.0, 1e-8};
  RandomStream rng(2024);
  std::vector<Tensor> samples = sample_grf(grid, cfg, n, rng);
  Tensor k = rbf_covariance(grid, KernelConfig{0.7, 1.0, 0.0});

  std::vector<double> mean(m, 0.0);
  for (const auto& s : samples)
    for (int i = 0; i < m; ++i) mean[i] += s[i];
  for (double& v : mean) v /= n;
  for (int i = 0; i < m; ++i) CHECK(std::abs(mean[i]) < 4.0 / std::sqrt(static_cast<double>(n)));

  for (int i = 0; i < m; ++i) {
    for (int j = i; j < m; ++j) {
      double cov = 0;
      for (const auto& s : samples) cov += (s[i] - mean[i]) * (s[j] - mean[j]);
      cov /= (n - 1);
      // MC standard error of a Gaussian covariance estimate.
      double se = std::sqrt((k.at(i, i) * k.at(j, j) + k.at(i, j) * k.at(i, j)) /
                            static_cast<double>(n));
      CHECK(std::abs(cov - k.at(i, j)) < 5.0 * se);
    }
  }
}

TEST_CASE("identical seeds give bit-identical samples") {
  SensorGrid grid = SensorGrid::uniform_1d(0.0, 1.0, 30);
  KernelConfig cfg{0.3, 1.0, 1e-8};
  RandomStream a(99), b(99);
  auto sa = sample_grf(grid, cfg, 5, a);
  auto sb = sample_grf(grid, cfg, 5, b);
  for (int s = 0; s < 5; ++s)
    for (int i = 0; i < 30; ++i) CHECK(sa[s][i] == sb[s][i]);
}

TEST_CASE("count zero returns an empty set") {
  SensorGrid grid = SensorGrid::uniform_1d(0.0, 1.0, 10);
  RandomStream rng(1);
  CHECK(sample_grf(grid, KernelConfig{}, 0, rng).empty());
}

TEST_CASE("long length scales make neighboring sensors nearly equal") {
  SensorGrid grid = SensorGrid::uniform_1d(0.0, 5.0, 100);
  KernelConfig cfg{100.0, 1.0, 1e-8};
  GrfSampler sampler(grid, cfg);
  for (int seed = 0; seed < 100; ++seed) {
    RandomStream rng(static_cast<std::uint64_t>(seed) + 1);
    Tensor s = sampler.sample(rng);
    double worst = 0;
    for (int i = 1; i < 100; ++i) worst = std::max(worst, std::abs(s[i] - s[i - 1]));
    CHECK(worst < 0.05);
  }
}

TEST_CASE("2d grids sample fields on the tensor product") {
  SensorGrid grid = SensorGrid::uniform_2d(0.5, 1.5, 8, 0.5, 1.5, 8);
  CHECK(grid.count() == 64);
  RandomStream rng(7);
  auto fields = sample_grf(grid, KernelConfig{0.2, 1.0, 1e-8}, 2, rng);
  CHECK(fields[0].ndim() == 2);
  CHECK(fields[0].dim(0) == 8);
  CHECK(fields[0].dim(1) == 8);
  CHECK(fields[0].all_finite());
}
