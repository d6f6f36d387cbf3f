#ifndef SON_DIAGNOSTICS_HPP
#define SON_DIAGNOSTICS_HPP

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "son/oracles.hpp"
#include "son/son_model.hpp"

namespace son {

/// Uniform evaluation surface over SON, the DeepONet baseline, and test mocks.
class StochasticPredictor {
 public:
  virtual ~StochasticPredictor() = default;
  virtual int output_dim() const = 0;

  /// One independent stochastic prediction at a single query point.
  virtual Tensor predict_point(const Tensor& u, const Tensor& y, RandomStream& rng) = 0;

  /// Factory for repeated whole-curve realizations over fixed query points.
  /// Each invocation of the returned callable draws one realization (for
  /// path-based models a single branch path shared across the points) and
  /// returns a {n_points, d_out} tensor. Deterministic per-query work (the
  /// trunk) is done once inside the factory.
  virtual std::function<Tensor(RandomStream&)> curve_sampler(const Tensor& u,
                                                             const std::vector<Tensor>& ys) = 0;
};

class SonPredictor : public StochasticPredictor {
 public:
  explicit SonPredictor(const SonModel& model) : model_(model) {}
  int output_dim() const override { return model_.cfg.d_out; }
  Tensor predict_point(const Tensor& u, const Tensor& y, RandomStream& rng) override;
  std::function<Tensor(RandomStream&)> curve_sampler(const Tensor& u,
                                                     const std::vector<Tensor>& ys) override;

 private:
  const SonModel& model_;
};

class BaselinePredictor : public StochasticPredictor {
 public:
  explicit BaselinePredictor(const BaselineModel& model) : model_(model) {}
  int output_dim() const override { return model_.cfg.d_out; }
  Tensor predict_point(const Tensor& u, const Tensor& y, RandomStream& rng) override;
  std::function<Tensor(RandomStream&)> curve_sampler(const Tensor& u,
                                                     const std::vector<Tensor>& ys) override;

 private:
  const BaselineModel& model_;
};

/// Mean over samples of the MSE against the noisy targets, one stochastic
/// prediction per sample.
double eval_mse(StochasticPredictor& model, const OperatorDataset& dataset,
                const RandomStream& rng);

/// Variant averaging `reps` predictions per sample before the error; exposed
/// for analysis, not used by the acceptance criteria.
double eval_mse_mean_prediction(StochasticPredictor& model, const OperatorDataset& dataset,
                                const RandomStream& rng, int reps);

struct NoiseReport {
  std::vector<double> per_dim_std;  // mean pointwise std per output dimension
  double overall = 0;               // average of the per-dimension values
  int reps = 0;
  std::string dataset_id;
};

/// Repeated stochastic prediction of every sample; pointwise sample std
/// (n-1 denominator) averaged over all samples, per output dimension.
NoiseReport noise_recovery(StochasticPredictor& model, const OperatorDataset& dataset, int reps,
                           const RandomStream& rng);

void save_noise_report_csv(const NoiseReport& report, const std::filesystem::path& path);

struct EnsembleStats {
  Tensor raw;   // {count, n_points * d_out}
  Tensor mean;  // {n_points, d_out}
  Tensor std;   // {n_points, d_out}
  Tensor lo;    // mean - 2 std
  Tensor hi;    // mean + 2 std
};

EnsembleStats ensemble_stats(StochasticPredictor& model, const Tensor& u,
                             const std::vector<Tensor>& y_grid, int count,
                             const RandomStream& rng);

/// band.csv: y, mean, lo, hi (first query coordinate as the y column).
void save_band_csv(const EnsembleStats& stats, const std::vector<Tensor>& y_grid,
                   const std::filesystem::path& path);

struct CovarianceReport {
  Tensor reference;   // from the oracle ensemble
  Tensor estimate;    // from the model ensemble
  Tensor difference;  // estimate - reference
  double max_abs = 0;
  double frobenius = 0;
};

/// Unbiased sample covariances of two raw ensembles ({members, width} each).
CovarianceReport covariance_compare(const Tensor& model_raw, const Tensor& oracle_raw);

void save_matrix_csv(const Tensor& matrix, const std::filesystem::path& path);

/// The stochastic-elliptic study: `count` fresh coefficient fields per
/// ensemble (two independent oracle ensembles and one model ensemble), solved
/// and predicted on the dataset's query grid.
struct EllipticStudy {
  std::vector<double> query_x;
  Tensor model_raw, oracle_raw, oracle_raw_b;  // {count, n_points}
  CovarianceReport cov;                        // model vs first oracle ensemble
  double mc_floor_max_abs = 0;                 // two-oracle covariance max-abs gap
  std::vector<double> model_mean, oracle_mean, pooled_se;
  double frac_within_3se = 0;
};

EllipticStudy elliptic_ensemble_study(StochasticPredictor& model, const SensorGrid& sensors,
                                      const std::vector<int>& query_indices,
                                      const KernelConfig& kernel, int count,
                                      const RandomStream& rng);

}  // namespace son

#endif  // SON_DIAGNOSTICS_HPP
