#include "son/diagnostics.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "son/csv.hpp"
#include "son/errors.hpp"

namespace son {

Tensor SonPredictor::predict_point(const Tensor& u, const Tensor& y, RandomStream& rng) {
  return predict(model_, u, y, rng, model_.cfg.branch.dropout_everywhere).value;
}

std::function<Tensor(RandomStream&)> SonPredictor::curve_sampler(const Tensor& u,
                                                                 const std::vector<Tensor>& ys) {
  const int d_out = model_.cfg.d_out;
  const int p = model_.cfg.p;
  auto taus = std::make_shared<std::vector<Tensor>>();
  taus->reserve(ys.size());
  for (const auto& y : ys) taus->push_back(trunk_forward(model_.cfg.trunk, model_.params.trunk, y));

  const SonModel& model = model_;
  Tensor input = u;
  return [&model, input, taus, d_out, p](RandomStream& rng) {
    SdeTrajectory traj = forward_sde(input, model.params.branch, model.cfg.branch, rng,
                                     model.cfg.branch.dropout_everywhere);
    Tensor out({static_cast<int>(taus->size()), d_out});
    for (std::size_t i = 0; i < taus->size(); ++i) {
      Tensor v = combine(traj.beta, (*taus)[i], model.params.b0, d_out);
      for (int d = 0; d < d_out; ++d) out.at(static_cast<int>(i), d) = v[d];
    }
    return out;
  };
}

Tensor BaselinePredictor::predict_point(const Tensor& u, const Tensor& y, RandomStream&) {
  return baseline_predict(model_, u, y);
}

std::function<Tensor(RandomStream&)> BaselinePredictor::curve_sampler(
    const Tensor& u, const std::vector<Tensor>& ys) {
  const int d_out = model_.cfg.d_out;
  Tensor beta =
      stack_forward(model_.cfg.branch, model_.branch_params, u, nullptr, nullptr).flattened();
  Tensor out({static_cast<int>(ys.size()), d_out});
  for (std::size_t i = 0; i < ys.size(); ++i) {
    Tensor tau = stack_forward(model_.cfg.trunk.stack, model_.trunk_params, ys[i], nullptr, nullptr);
    Tensor v = combine(beta, tau, model_.b0, d_out);
    for (int d = 0; d < d_out; ++d) out.at(static_cast<int>(i), d) = v[d];
  }
  return [out](RandomStream&) { return out; };
}

namespace {

Tensor query_tensor(const OperatorSample& s, int y_dim) {
  Tensor y({y_dim});
  for (int d = 0; d < y_dim; ++d) y[d] = s.y[static_cast<std::size_t>(d)];
  return y;
}

double phi_against(const Tensor& value, const OperatorSample& s, int d_out) {
  double phi = 0;
  for (int d = 0; d < d_out; ++d) {
    double r = value[d] - s.target_noisy[static_cast<std::size_t>(d)];
    phi += r * r;
  }
  return phi / d_out;
}

// Sample indices grouped by input function, robust to sample shuffling.
std::map<int, std::vector<int>> group_by_function(const OperatorDataset& ds) {
  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < ds.size(); ++i)
    groups[ds.samples[static_cast<std::size_t>(i)].function_index].push_back(i);
  return groups;
}

}  // namespace

double eval_mse(StochasticPredictor& model, const OperatorDataset& dataset,
                const RandomStream& rng) {
  if (dataset.size() == 0) throw ContractError("eval_mse: empty dataset");
  const int d_out = dataset.d_out;
  double total = 0;
  for (int i = 0; i < dataset.size(); ++i) {
    const OperatorSample& s = dataset.samples[static_cast<std::size_t>(i)];
    RandomStream sub = rng.substream(stream_tag::kDiag, static_cast<std::uint64_t>(i));
    Tensor v = model.predict_point(dataset.function_of(s), query_tensor(s, dataset.y_dim), sub);
    total += phi_against(v, s, d_out);
  }
  return total / dataset.size();
}

double eval_mse_mean_prediction(StochasticPredictor& model, const OperatorDataset& dataset,
                                const RandomStream& rng, int reps) {
  if (dataset.size() == 0) throw ContractError("eval_mse_mean_prediction: empty dataset");
  if (reps < 1) throw ContractError("eval_mse_mean_prediction: reps must be >= 1");
  const int d_out = dataset.d_out;
  double total = 0;
  for (int i = 0; i < dataset.size(); ++i) {
    const OperatorSample& s = dataset.samples[static_cast<std::size_t>(i)];
    Tensor mean({d_out});
    for (int r = 0; r < reps; ++r) {
      RandomStream sub = rng.substream(stream_tag::kDiag, static_cast<std::uint64_t>(i),
                                       static_cast<std::uint64_t>(r));
      mean += model.predict_point(dataset.function_of(s), query_tensor(s, dataset.y_dim), sub);
    }
    mean *= 1.0 / reps;
    total += phi_against(mean, s, d_out);
  }
  return total / dataset.size();
}

NoiseReport noise_recovery(StochasticPredictor& model, const OperatorDataset& dataset, int reps,
                           const RandomStream& rng) {
  if (reps < 2) throw ContractError("noise_recovery: reps must be >= 2");
  if (dataset.size() == 0) throw ContractError("noise_recovery: empty dataset");
  const int d_out = dataset.d_out;

  std::vector<double> dim_sum(static_cast<std::size_t>(d_out), 0.0);
  long counted = 0;

  for (const auto& [fi, indices] : group_by_function(dataset)) {
    const Tensor& u = dataset.functions[static_cast<std::size_t>(fi)];
    std::vector<Tensor> ys;
    ys.reserve(indices.size());
    for (int idx : indices)
      ys.push_back(query_tensor(dataset.samples[static_cast<std::size_t>(idx)], dataset.y_dim));

    auto sampler = model.curve_sampler(u, ys);
    const int n_pts = static_cast<int>(ys.size());

    // Welford over repetitions, per (point, dim).
    Tensor mean({n_pts, d_out}), m2({n_pts, d_out});
    for (int r = 0; r < reps; ++r) {
      RandomStream sub = rng.substream(stream_tag::kDiag, static_cast<std::uint64_t>(fi),
                                       static_cast<std::uint64_t>(r));
      Tensor curve = sampler(sub);
      for (int i = 0; i < curve.size(); ++i) {
        double delta = curve[i] - mean[i];
        mean[i] += delta / (r + 1);
        m2[i] += delta * (curve[i] - mean[i]);
      }
    }
    for (int i = 0; i < n_pts; ++i)
      for (int d = 0; d < d_out; ++d)
        dim_sum[static_cast<std::size_t>(d)] += std::sqrt(m2.at(i, d) / (reps - 1));
    counted += n_pts;
  }

  NoiseReport report;
  report.reps = reps;
  report.dataset_id = to_string(dataset.experiment) + "/" + std::to_string(dataset.n_functions) +
                      "x" + std::to_string(dataset.n_queries);
  double overall = 0;
  for (int d = 0; d < d_out; ++d) {
    report.per_dim_std.push_back(dim_sum[static_cast<std::size_t>(d)] / counted);
    overall += report.per_dim_std.back();
  }
  report.overall = overall / d_out;
  return report;
}

void save_noise_report_csv(const NoiseReport& report, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("save_noise_report_csv: cannot write " + path.string());
  f << "dataset,reps,dimension,mean_pointwise_std\n";
  for (std::size_t d = 0; d < report.per_dim_std.size(); ++d)
    f << report.dataset_id << "," << report.reps << "," << d << "," << g17(report.per_dim_std[d])
      << "\n";
  f << report.dataset_id << "," << report.reps << ",overall," << g17(report.overall) << "\n";
}

EnsembleStats ensemble_stats(StochasticPredictor& model, const Tensor& u,
                             const std::vector<Tensor>& y_grid, int count,
                             const RandomStream& rng) {
  if (count < 2) throw ContractError("ensemble_stats: count must be >= 2");
  const int d_out = model.output_dim();
  const int n_pts = static_cast<int>(y_grid.size());
  auto sampler = model.curve_sampler(u, y_grid);

  EnsembleStats stats;
  stats.raw = Tensor({count, n_pts * d_out});
  for (int r = 0; r < count; ++r) {
    RandomStream sub = rng.substream(stream_tag::kDiag, static_cast<std::uint64_t>(r));
    Tensor curve = sampler(sub);
    for (int i = 0; i < curve.size(); ++i) stats.raw.at(r, i) = curve[i];
  }

  stats.mean = Tensor({n_pts, d_out});
  stats.std = Tensor({n_pts, d_out});
  for (int i = 0; i < n_pts * d_out; ++i) {
    double m = 0;
    for (int r = 0; r < count; ++r) m += stats.raw.at(r, i);
    m /= count;
    double s2 = 0;
    for (int r = 0; r < count; ++r) {
      double d = stats.raw.at(r, i) - m;
      s2 += d * d;
    }
    stats.mean[i] = m;
    stats.std[i] = std::sqrt(s2 / (count - 1));
  }
  stats.lo = stats.mean;
  stats.lo.axpy(-2.0, stats.std);
  stats.hi = stats.mean;
  stats.hi.axpy(2.0, stats.std);
  return stats;
}

void save_band_csv(const EnsembleStats& stats, const std::vector<Tensor>& y_grid,
                   const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("save_band_csv: cannot write " + path.string());
  f << "y,mean,lo,hi\n";
  for (std::size_t i = 0; i < y_grid.size(); ++i)
    f << g17(y_grid[i][0]) << "," << g17(stats.mean[static_cast<int>(i)]) << ","
      << g17(stats.lo[static_cast<int>(i)]) << "," << g17(stats.hi[static_cast<int>(i)]) << "\n";
}

namespace {

Tensor sample_covariance(const Tensor& raw) {
  const int n = raw.dim(0), w = raw.dim(1);
  if (n < 2) throw ContractError("covariance: need at least two ensemble members");
  std::vector<double> mean(static_cast<std::size_t>(w), 0.0);
  for (int r = 0; r < n; ++r)
    for (int i = 0; i < w; ++i) mean[static_cast<std::size_t>(i)] += raw.at(r, i);
  for (double& m : mean) m /= n;
  Tensor cov({w, w});
  for (int r = 0; r < n; ++r) {
    for (int i = 0; i < w; ++i) {
      double di = raw.at(r, i) - mean[static_cast<std::size_t>(i)];
      for (int j = i; j < w; ++j)
        cov.at(i, j) += di * (raw.at(r, j) - mean[static_cast<std::size_t>(j)]);
    }
  }
  for (int i = 0; i < w; ++i)
    for (int j = i; j < w; ++j) {
      double v = cov.at(i, j) / (n - 1);
      cov.at(i, j) = v;
      cov.at(j, i) = v;
    }
  return cov;
}

}  // namespace

CovarianceReport covariance_compare(const Tensor& model_raw, const Tensor& oracle_raw) {
  if (model_raw.dim(1) != oracle_raw.dim(1))
    throw ShapeError("covariance_compare: ensembles live on different grids");
  CovarianceReport rep;
  rep.estimate = sample_covariance(model_raw);
  rep.reference = sample_covariance(oracle_raw);
  rep.difference = rep.estimate;
  const int w = rep.estimate.dim(0);
  double fro = 0, worst = 0;
  for (int i = 0; i < w * w; ++i) {
    rep.difference[i] -= rep.reference[i];
    fro += rep.difference[i] * rep.difference[i];
    worst = std::max(worst, std::abs(rep.difference[i]));
  }
  rep.max_abs = worst;
  rep.frobenius = std::sqrt(fro);
  return rep;
}

void save_matrix_csv(const Tensor& matrix, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("save_matrix_csv: cannot write " + path.string());
  for (int i = 0; i < matrix.dim(0); ++i) {
    for (int j = 0; j < matrix.dim(1); ++j) f << (j ? "," : "") << g17(matrix.at(i, j));
    f << "\n";
  }
}

EllipticStudy elliptic_ensemble_study(StochasticPredictor& model, const SensorGrid& sensors,
                                      const std::vector<int>& query_indices,
                                      const KernelConfig& kernel, int count,
                                      const RandomStream& rng) {
  const int n_pts = static_cast<int>(query_indices.size());
  EllipticStudy study;
  for (int idx : query_indices)
    study.query_x.push_back(sensors.axis_x[static_cast<std::size_t>(idx)]);

  GrfSampler sampler(sensors, kernel);
  auto oracle_ensemble = [&](std::uint64_t tag) {
    Tensor raw({count, n_pts});
    for (int r = 0; r < count; ++r) {
      RandomStream sub = rng.substream(tag, static_cast<std::uint64_t>(r));
      Tensor b = sampler.sample(sub);
      auto sol = elliptic_truth(b);
      for (int i = 0; i < n_pts; ++i)
        raw.at(r, i) = sol[static_cast<std::size_t>(query_indices[static_cast<std::size_t>(i)])];
    }
    return raw;
  };
  study.oracle_raw = oracle_ensemble(101);
  study.oracle_raw_b = oracle_ensemble(202);

  std::vector<Tensor> ys;
  for (int idx : query_indices)
    ys.push_back(Tensor::vec({sensors.axis_x[static_cast<std::size_t>(idx)]}));
  study.model_raw = Tensor({count, n_pts});
  for (int r = 0; r < count; ++r) {
    RandomStream field_rng = rng.substream(303, static_cast<std::uint64_t>(r));
    Tensor b = sampler.sample(field_rng);
    auto curve = model.curve_sampler(b, ys);
    RandomStream pred_rng = rng.substream(404, static_cast<std::uint64_t>(r));
    Tensor c = curve(pred_rng);
    for (int i = 0; i < n_pts; ++i) study.model_raw.at(r, i) = c[i];
  }

  study.cov = covariance_compare(study.model_raw, study.oracle_raw);
  CovarianceReport floor = covariance_compare(study.oracle_raw_b, study.oracle_raw);
  study.mc_floor_max_abs = floor.max_abs;

  // Pointwise means and the pooled standard error of their difference.
  auto column_stats = [&](const Tensor& raw, std::vector<double>& mean, std::vector<double>& var) {
    mean.assign(static_cast<std::size_t>(n_pts), 0.0);
    var.assign(static_cast<std::size_t>(n_pts), 0.0);
    for (int i = 0; i < n_pts; ++i) {
      double m = 0;
      for (int r = 0; r < count; ++r) m += raw.at(r, i);
      m /= count;
      double s2 = 0;
      for (int r = 0; r < count; ++r) {
        double d = raw.at(r, i) - m;
        s2 += d * d;
      }
      mean[static_cast<std::size_t>(i)] = m;
      var[static_cast<std::size_t>(i)] = s2 / (count - 1);
    }
  };
  std::vector<double> model_var, oracle_var;
  column_stats(study.model_raw, study.model_mean, model_var);
  column_stats(study.oracle_raw, study.oracle_mean, oracle_var);
  int within = 0;
  study.pooled_se.resize(static_cast<std::size_t>(n_pts));
  for (int i = 0; i < n_pts; ++i) {
    double se = std::sqrt((model_var[static_cast<std::size_t>(i)] +
                           oracle_var[static_cast<std::size_t>(i)]) /
                          count);
    study.pooled_se[static_cast<std::size_t>(i)] = se;
    if (std::abs(study.model_mean[static_cast<std::size_t>(i)] -
                 study.oracle_mean[static_cast<std::size_t>(i)]) <= 3.0 * se)
      ++within;
  }
  study.frac_within_3se = static_cast<double>(within) / n_pts;
  return study;
}

}  // namespace son
