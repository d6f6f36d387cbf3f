#include "son/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "son/csv.hpp"
#include "son/errors.hpp"
#include "son/ode.hpp"

namespace son {

using json = nlohmann::json;

std::string to_string(ExperimentId id) {
  switch (id) {
    case ExperimentId::Antiderivative:
      return "antiderivative";
    case ExperimentId::ExpOde:
      return "exp_ode";
    case ExperimentId::Pendulum2d:
      return "pendulum2d";
    case ExperimentId::DoubleIntegral:
      return "double_integral";
    case ExperimentId::Elliptic:
      return "elliptic";
  }
  return "unknown";
}

ExperimentId experiment_from_string(const std::string& name) {
  if (name == "antiderivative") return ExperimentId::Antiderivative;
  if (name == "exp_ode") return ExperimentId::ExpOde;
  if (name == "pendulum2d") return ExperimentId::Pendulum2d;
  if (name == "double_integral") return ExperimentId::DoubleIntegral;
  if (name == "elliptic") return ExperimentId::Elliptic;
  throw ConfigError("unknown experiment id: " + name);
}

int experiment_output_dim(ExperimentId id) { return id == ExperimentId::Pendulum2d ? 2 : 1; }
int experiment_query_dim(ExperimentId id) { return id == ExperimentId::DoubleIntegral ? 2 : 1; }

namespace {

LinearInterpolant interp_1d(const Tensor& u, const SensorGrid& grid) {
  if (grid.dim != 1 || u.size() != grid.count())
    throw ShapeError("oracle: sensor field does not match 1-D grid");
  return LinearInterpolant(grid.axis_x, u.raw());
}

void check_domain(double y, double lo, double hi, const char* op) {
  if (y < lo - 1e-12 || y > hi + 1e-12)
    throw DomainError(std::string(op) + ": query outside output domain");
}

}  // namespace

double antiderivative_truth(const Tensor& u, const SensorGrid& grid, double y) {
  check_domain(y, 0.0, grid.hi[0], "antiderivative_truth");
  if (y == 0.0) return 0.0;
  LinearInterpolant ut = interp_1d(u, grid);
  OdeRhs rhs = [&](double t, const std::vector<double>&, std::vector<double>& d) { d[0] = ut(t); };
  return rk45_solve_through(rhs, 0.0, {0.0}, y, grid.axis_x)[0];
}

double exp_ode_truth(const Tensor& u, const SensorGrid& grid, double y) {
  check_domain(y, 0.0, 1.0, "exp_ode_truth");
  if (y == 0.0) return 1.0;
  LinearInterpolant ut = interp_1d(u, grid);
  OdeRhs rhs = [&](double t, const std::vector<double>& s, std::vector<double>& d) {
    d[0] = s[0] * ut(t);
  };
  return rk45_solve_through(rhs, 0.0, {1.0}, y, grid.axis_x)[0];
}

std::array<double, 2> pendulum_truth(const Tensor& u, const SensorGrid& grid, double y) {
  check_domain(y, 0.0, 1.0, "pendulum_truth");
  if (y == 0.0) return {0.0, 0.0};
  LinearInterpolant ut = interp_1d(u, grid);
  OdeRhs rhs = [&](double t, const std::vector<double>& s, std::vector<double>& d) {
    d[0] = s[1];
    d[1] = -std::sin(s[0]) + ut(t);
  };
  auto s = rk45_solve_through(rhs, 0.0, {0.0, 0.0}, y, grid.axis_x);
  return {s[0], s[1]};
}

double double_integral_truth(const Tensor& u, const SensorGrid& grid, double y1, double y2) {
  if (grid.dim != 2) throw ShapeError("double_integral_truth: needs a 2-D sensor grid");
  check_domain(y1, grid.lo[0], grid.hi[0], "double_integral_truth");
  check_domain(y2, grid.lo[1], grid.hi[1], "double_integral_truth");
  BilinearInterpolant g(grid.axis_x, grid.axis_y, u);

  // Breakpoints of [0, y] on each axis: the clamped region [0, first sensor]
  // plus every sensor line below y. The integrand is bilinear between them.
  auto breaks = [](const std::vector<double>& axis, double y) {
    std::vector<double> b{0.0};
    for (double x : axis) {
      if (x >= y) break;
      if (x > 0.0) b.push_back(x);
    }
    b.push_back(y);
    return b;
  };
  std::vector<double> bx = breaks(grid.axis_x, y1);
  std::vector<double> by = breaks(grid.axis_y, y2);

  // 2-point Gauss-Legendre per cell, exact for bilinear integrands.
  constexpr double kNode = 0.5773502691896257;
  double total = 0;
  for (std::size_t i = 1; i < bx.size(); ++i) {
    double xm = 0.5 * (bx[i - 1] + bx[i]), xr = 0.5 * (bx[i] - bx[i - 1]);
    for (std::size_t j = 1; j < by.size(); ++j) {
      double ym = 0.5 * (by[j - 1] + by[j]), yr = 0.5 * (by[j] - by[j - 1]);
      double cell = 0;
      for (int a = -1; a <= 1; a += 2)
        for (int b = -1; b <= 1; b += 2) cell += g(xm + a * kNode * xr, ym + b * kNode * yr);
      total += cell * xr * yr;
    }
  }
  return total;
}

std::vector<double> elliptic_solve(const std::vector<double>& b, double f, double u_left,
                                   double u_right) {
  const int m = static_cast<int>(b.size());
  if (m < 3) throw ContractError("elliptic_solve: need at least 3 grid points");
  const double h = 1.0 / (m - 1);

  // Face coefficients: geometric mean of e^{b_i}, e^{b_{i+1}}.
  std::vector<double> a_face(static_cast<std::size_t>(m) - 1);
  for (int i = 0; i + 1 < m; ++i) a_face[static_cast<std::size_t>(i)] = std::exp(0.5 * (b[i] + b[i + 1]));

  // Thomas solve of the interior tridiagonal system.
  std::vector<double> diag(m), lower(m), upper(m), rhs(m), u(m);
  u[0] = u_left;
  u[m - 1] = u_right;
  for (int i = 1; i < m - 1; ++i) {
    double al = a_face[static_cast<std::size_t>(i) - 1], ar = a_face[static_cast<std::size_t>(i)];
    lower[i] = al;
    diag[i] = -(al + ar);
    upper[i] = ar;
    rhs[i] = f * h * h;
  }
  rhs[1] -= lower[1] * u_left;
  rhs[m - 2] -= upper[m - 2] * u_right;

  for (int i = 2; i < m - 1; ++i) {
    double w = lower[i] / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  if (diag[m - 2] == 0.0) throw NumericError("elliptic_solve: singular tridiagonal system");
  u[m - 2] = rhs[m - 2] / diag[m - 2];
  for (int i = m - 3; i >= 1; --i) u[i] = (rhs[i] - upper[i] * u[i + 1]) / diag[i];
  return u;
}

std::vector<double> elliptic_truth(const Tensor& b) { return elliptic_solve(b.raw(), 5.0, 0.0, 1.0); }

namespace {

std::vector<std::array<double, 2>> make_queries(const DatasetSpec& spec, RandomStream& rng) {
  const QuerySpec& q = spec.queries;
  std::vector<std::array<double, 2>> out;
  switch (q.mode) {
    case QuerySpec::Mode::RandomUniform:
      for (int i = 0; i < q.count; ++i) out.push_back({rng.uniform(q.lo[0], q.hi[0]), 0.0});
      break;
    case QuerySpec::Mode::UniformPartition:
      for (int i = 0; i < q.count; ++i) {
        double t = q.count == 1 ? q.lo[0]
                                : q.lo[0] + (q.hi[0] - q.lo[0]) * i / (q.count - 1);
        out.push_back({t, 0.0});
      }
      break;
    case QuerySpec::Mode::Grid2d:
      for (int j = 0; j < q.ny; ++j) {
        double y2 = q.ny == 1 ? q.lo[1] : q.lo[1] + (q.hi[1] - q.lo[1]) * j / (q.ny - 1);
        for (int i = 0; i < q.nx; ++i) {
          double y1 = q.nx == 1 ? q.lo[0] : q.lo[0] + (q.hi[0] - q.lo[0]) * i / (q.nx - 1);
          out.push_back({y1, y2});
        }
      }
      break;
    case QuerySpec::Mode::GridIndices:
      for (int idx : q.indices) {
        if (idx < 0 || idx >= spec.sensors.count())
          throw ConfigError("build_dataset: query grid index out of range");
        out.push_back({spec.sensors.axis_x[static_cast<std::size_t>(idx)], 0.0});
      }
      break;
  }
  return out;
}

}  // namespace

OperatorDataset build_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.n_functions < 0) throw ConfigError("build_dataset: negative function count");
  OperatorDataset ds;
  ds.experiment = spec.experiment;
  ds.sensors = spec.sensors;
  ds.noise_scale = spec.noise_scale;
  ds.seed = seed;
  ds.d_out = experiment_output_dim(spec.experiment);
  ds.y_dim = experiment_query_dim(spec.experiment);
  ds.n_functions = spec.n_functions;

  RandomStream root(seed);

  // Input functions, one GRF substream per function.
  RandomStream data_stream = root.substream(stream_tag::kData);
  if (spec.l_lo > 0.0) {
    for (int i = 0; i < spec.n_functions; ++i) {
      RandomStream sub = data_stream.substream(static_cast<std::uint64_t>(i));
      KernelConfig cfg = spec.kernel;
      cfg.length_scale = sub.uniform(spec.l_lo, spec.l_hi);
      GrfSampler sampler(spec.sensors, cfg);
      ds.functions.push_back(sampler.sample(sub));
    }
  } else {
    ds.functions = sample_grf(spec.sensors, spec.kernel, spec.n_functions, data_stream);
  }

  RandomStream query_stream = root.substream(stream_tag::kQuery);
  std::vector<std::array<double, 2>> queries = make_queries(spec, query_stream);
  ds.n_queries = static_cast<int>(queries.size());

  ds.samples.reserve(static_cast<std::size_t>(spec.n_functions) * queries.size());
  for (int fi = 0; fi < spec.n_functions; ++fi) {
    const Tensor& u = ds.functions[static_cast<std::size_t>(fi)];
    RandomStream noise = root.substream(stream_tag::kNoise, static_cast<std::uint64_t>(fi));

    std::vector<double> elliptic_u;
    if (spec.experiment == ExperimentId::Elliptic) elliptic_u = elliptic_truth(u);

    for (const auto& y : queries) {
      OperatorSample s;
      s.function_index = fi;
      s.y = y;
      switch (spec.experiment) {
        case ExperimentId::Antiderivative:
          s.target_clean[0] = antiderivative_truth(u, spec.sensors, y[0]);
          break;
        case ExperimentId::ExpOde:
          s.target_clean[0] = exp_ode_truth(u, spec.sensors, y[0]);
          break;
        case ExperimentId::Pendulum2d:
          s.target_clean = pendulum_truth(u, spec.sensors, y[0]);
          break;
        case ExperimentId::DoubleIntegral:
          s.target_clean[0] = double_integral_truth(u, spec.sensors, y[0], y[1]);
          break;
        case ExperimentId::Elliptic: {
          auto it = std::find(spec.sensors.axis_x.begin(), spec.sensors.axis_x.end(), y[0]);
          s.target_clean[0] = elliptic_u[static_cast<std::size_t>(it - spec.sensors.axis_x.begin())];
          break;
        }
      }
      for (int d = 0; d < ds.d_out; ++d)
        s.target_noisy[static_cast<std::size_t>(d)] =
            s.target_clean[static_cast<std::size_t>(d)] + spec.noise_scale * noise.normal();
      ds.samples.push_back(s);
    }
  }
  return ds;
}

void save_dataset(const OperatorDataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);

  json meta;
  meta["experiment"] = to_string(ds.experiment);
  meta["n_functions"] = ds.n_functions;
  meta["n_queries"] = ds.n_queries;
  meta["noise_scale"] = ds.noise_scale;
  meta["seed"] = ds.seed;
  meta["d_out"] = ds.d_out;
  meta["y_dim"] = ds.y_dim;
  json grid;
  grid["dim"] = ds.sensors.dim;
  grid["lo"] = ds.sensors.lo;
  grid["hi"] = ds.sensors.hi;
  grid["nx"] = ds.sensors.axis_x.size();
  grid["ny"] = ds.sensors.axis_y.size();
  meta["sensor_grid"] = grid;

  {
    std::ofstream f(dir / "meta.json");
    if (!f) throw IoError("save_dataset: cannot write meta.json in " + dir.string());
    f << meta.dump(2) << "\n";
  }
  {
    std::ofstream f(dir / "functions.csv");
    if (!f) throw IoError("save_dataset: cannot write functions.csv");
    for (const auto& u : ds.functions) {
      for (int i = 0; i < u.size(); ++i) f << (i ? "," : "") << g17(u[i]);
      f << "\n";
    }
  }
  {
    std::ofstream f(dir / "samples.csv");
    if (!f) throw IoError("save_dataset: cannot write samples.csv");
    f << "function_index";
    for (int i = 0; i < ds.y_dim; ++i) f << ",y" << i;
    for (int i = 0; i < ds.d_out; ++i) f << ",target_clean" << i;
    for (int i = 0; i < ds.d_out; ++i) f << ",target_noisy" << i;
    f << "\n";
    for (const auto& s : ds.samples) {
      f << s.function_index;
      for (int i = 0; i < ds.y_dim; ++i) f << "," << g17(s.y[static_cast<std::size_t>(i)]);
      for (int i = 0; i < ds.d_out; ++i) f << "," << g17(s.target_clean[static_cast<std::size_t>(i)]);
      for (int i = 0; i < ds.d_out; ++i) f << "," << g17(s.target_noisy[static_cast<std::size_t>(i)]);
      f << "\n";
    }
  }
}

OperatorDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "meta.json");
  if (!mf) throw IoError("load_dataset: missing meta.json in " + dir.string());
  json meta = json::parse(mf);

  OperatorDataset ds;
  ds.experiment = experiment_from_string(meta.at("experiment").get<std::string>());
  ds.n_functions = meta.at("n_functions").get<int>();
  ds.n_queries = meta.at("n_queries").get<int>();
  ds.noise_scale = meta.at("noise_scale").get<double>();
  ds.seed = meta.at("seed").get<std::uint64_t>();
  ds.d_out = meta.at("d_out").get<int>();
  ds.y_dim = meta.at("y_dim").get<int>();

  const json& grid = meta.at("sensor_grid");
  int dim = grid.at("dim").get<int>();
  int nx = grid.at("nx").get<int>();
  int ny = grid.at("ny").get<int>();
  auto lo = grid.at("lo").get<std::array<double, 2>>();
  auto hi = grid.at("hi").get<std::array<double, 2>>();
  ds.sensors = dim == 1 ? SensorGrid::uniform_1d(lo[0], hi[0], nx)
                        : SensorGrid::uniform_2d(lo[0], hi[0], nx, lo[1], hi[1], ny);

  {
    std::ifstream f(dir / "functions.csv");
    if (!f) throw IoError("load_dataset: missing functions.csv");
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      auto cells = split_csv_line(line);
      Tensor u(ds.sensors.field_shape());
      if (static_cast<int>(cells.size()) != u.size())
        throw IoError("load_dataset: functions.csv row width mismatch");
      for (int i = 0; i < u.size(); ++i) u[i] = std::stod(cells[static_cast<std::size_t>(i)]);
      ds.functions.push_back(std::move(u));
    }
  }
  {
    std::ifstream f(dir / "samples.csv");
    if (!f) throw IoError("load_dataset: missing samples.csv");
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      auto cells = split_csv_line(line);
      OperatorSample s;
      std::size_t c = 0;
      s.function_index = std::stoi(cells[c++]);
      for (int i = 0; i < ds.y_dim; ++i) s.y[static_cast<std::size_t>(i)] = std::stod(cells[c++]);
      for (int i = 0; i < ds.d_out; ++i)
        s.target_clean[static_cast<std::size_t>(i)] = std::stod(cells[c++]);
      for (int i = 0; i < ds.d_out; ++i)
        s.target_noisy[static_cast<std::size_t>(i)] = std::stod(cells[c++]);
      ds.samples.push_back(s);
    }
  }
  if (static_cast<int>(ds.functions.size()) != ds.n_functions ||
      ds.size() != ds.n_functions * ds.n_queries)
    throw IoError("load_dataset: inconsistent counts");
  return ds;
}

}  // namespace son
