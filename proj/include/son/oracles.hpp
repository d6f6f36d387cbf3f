#ifndef SON_ORACLES_HPP
#define SON_ORACLES_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "son/grf.hpp"
#include "son/rng.hpp"
#include "son/tensor.hpp"

namespace son {

enum class ExperimentId { Antiderivative, ExpOde, Pendulum2d, DoubleIntegral, Elliptic };

std::string to_string(ExperimentId id);
ExperimentId experiment_from_string(const std::string& name);
int experiment_output_dim(ExperimentId id);
int experiment_query_dim(ExperimentId id);

/// How the evaluation points y are chosen for a dataset.
struct QuerySpec {
  enum class Mode { RandomUniform, UniformPartition, Grid2d, GridIndices };
  Mode mode = Mode::RandomUniform;
  int count = 0;                   // RandomUniform / UniformPartition
  int nx = 0, ny = 0;              // Grid2d
  std::array<double, 2> lo{0, 0};
  std::array<double, 2> hi{0, 0};
  std::vector<int> indices;        // GridIndices: sensor-grid node indices

  int total() const {
    switch (mode) {
      case Mode::Grid2d:
        return nx * ny;
      case Mode::GridIndices:
        return static_cast<int>(indices.size());
      default:
        return count;
    }
  }
};

struct DatasetSpec {
  ExperimentId experiment = ExperimentId::Antiderivative;
  SensorGrid sensors;
  KernelConfig kernel;
  double l_lo = 0, l_hi = 0;  // >0: per-function length scale drawn uniformly (elliptic)
  int n_functions = 0;
  QuerySpec queries;
  double noise_scale = 0;
};

struct OperatorSample {
  int function_index = 0;
  std::array<double, 2> y{0, 0};
  std::array<double, 2> target_clean{0, 0};
  std::array<double, 2> target_noisy{0, 0};
};

/// Cartesian-product dataset: every function paired with every query point,
/// samples ordered function-major.
struct OperatorDataset {
  ExperimentId experiment = ExperimentId::Antiderivative;
  SensorGrid sensors;
  int y_dim = 1;
  int d_out = 1;
  double noise_scale = 0;
  std::uint64_t seed = 0;
  int n_functions = 0;
  int n_queries = 0;
  std::vector<Tensor> functions;
  std::vector<OperatorSample> samples;

  int size() const { return static_cast<int>(samples.size()); }
  const Tensor& function_of(const OperatorSample& s) const {
    return functions[static_cast<std::size_t>(s.function_index)];
  }
};

// Ground-truth operators. Input functions are interpolated piecewise-linearly
// in 1-D and bilinearly in 2-D; ODE solves use adaptive RK45 (rtol 1e-6, atol 1e-9).

/// s(y) = integral of u from 0 to y; u sampled on `grid` over [0, 5].
double antiderivative_truth(const Tensor& u, const SensorGrid& grid, double y);

/// s' = s u, s(0) = 1, evaluated at y in [0, 1].
double exp_ode_truth(const Tensor& u, const SensorGrid& grid, double y);

/// s1' = s2, s2' = -sin(s1) + u(y), s(0) = (0, 0), evaluated at y in [0, 1].
std::array<double, 2> pendulum_truth(const Tensor& u, const SensorGrid& grid, double y);

/// Iterated integral of the bilinear interpolant of u over [0, y1] x [0, y2].
/// Below the sensor box the integrand is the nearest boundary value.
double double_integral_truth(const Tensor& u, const SensorGrid& grid, double y1, double y2);

/// div(e^b grad u) = f on (0,1), u(0) = u_left, u(1) = u_right; conservative
/// second-order differences with geometric-mean face coefficients.
std::vector<double> elliptic_solve(const std::vector<double>& b, double f, double u_left,
                                   double u_right);

/// The paper's test case: f = 5, u(0) = 0, u(1) = 1.
std::vector<double> elliptic_truth(const Tensor& b);

OperatorDataset build_dataset(const DatasetSpec& spec, std::uint64_t seed);

void save_dataset(const OperatorDataset& ds, const std::filesystem::path& dir);
OperatorDataset load_dataset(const std::filesystem::path& dir);

}  // namespace son

#endif  // SON_ORACLES_HPP
