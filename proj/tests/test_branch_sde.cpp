#include "son/branch_sde.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

#include "son/errors.hpp"
#include "test_util.hpp"

using namespace son;
using son::test::sample_std;

namespace {

BranchConfig tiny_config(int width, int steps, Activation act) {
  BranchConfig cfg;
  cfg.steps = steps;
  cfg.drift_stack = {dense_spec(width, width, act)};
  cfg.diffusion_mode = DiffusionMode::PerStepVector;
  cfg.diffusion_size = 1;
  return cfg;
}

std::vector<Tensor> zero_increments(const BranchConfig& cfg, int width) {
  return std::vector<Tensor>(static_cast<std::size_t>(cfg.steps), Tensor({width}));
}

// Independent reverse-mode oracle for the residual scheme
//   A_{n+1} = A_n + h act(W_n A_n + c_n) + sqrt(h) s_n omega_n
// with terminal cotangent w. Plain vector math, no son::layers code.
struct OracleGrads {
  std::vector<std::vector<double>> gw;  // per step, row-major
  std::vector<std::vector<double>> gb;
  std::vector<double> gsigma;
};

OracleGrads handrolled_backprop(const BranchConfig& cfg, const BranchParams& params,
                                const std::vector<Tensor>& states,
                                const std::vector<Tensor>& omegas, const Tensor& w,
                                Activation act) {
  const int n_steps = cfg.steps;
  const int m = states[0].size();
  const double h = cfg.step_size();
  const double sqrt_h = std::sqrt(h);
  OracleGrads g;
  g.gw.resize(static_cast<std::size_t>(n_steps));
  g.gb.resize(static_cast<std::size_t>(n_steps));
  g.gsigma.resize(static_cast<std::size_t>(n_steps));

  std::vector<double> lam(w.raw());
  for (int n = n_steps - 1; n >= 0; --n) {
    const Tensor& a = states[static_cast<std::size_t>(n)];
    const Tensor& weight = params.drift[static_cast<std::size_t>(n)][0].weight;
    const Tensor& bias = params.drift[static_cast<std::size_t>(n)][0].bias;
    double sigma = params.diffusion_vec[static_cast<std::size_t>(n)][0];
    (void)sigma;

    std::vector<double> z(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      double s = bias[i];
      for (int j = 0; j < m; ++j) s += weight.at(i, j) * a[j];
      z[static_cast<std::size_t>(i)] = s;
    }
    std::vector<double> dz(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i)
      dz[static_cast<std::size_t>(i)] =
          activation_derivative(act, z[static_cast<std::size_t>(i)]) * lam[static_cast<std::size_t>(i)];

    g.gw[static_cast<std::size_t>(n)].assign(static_cast<std::size_t>(m) * m, 0.0);
    g.gb[static_cast<std::size_t>(n)].assign(static_cast<std::size_t>(m), 0.0);
    for (int i = 0; i < m; ++i) {
      g.gb[static_cast<std::size_t>(n)][static_cast<std::size_t>(i)] = h * dz[static_cast<std::size_t>(i)];
      for (int j = 0; j < m; ++j)
        g.gw[static_cast<std::size_t>(n)][static_cast<std::size_t>(i * m + j)] =
            h * dz[static_cast<std::size_t>(i)] * a[j];
    }
    double gs = 0;
    for (int i = 0; i < m; ++i) gs += omegas[static_cast<std::size_t>(n)][i] * lam[static_cast<std::size_t>(i)];
    g.gsigma[static_cast<std::size_t>(n)] = sqrt_h * gs;

    std::vector<double> lam_prev(lam);
    for (int j = 0; j < m; ++j) {
      double s = 0;
      for (int i = 0; i < m; ++i) s += weight.at(i, j) * dz[static_cast<std::size_t>(i)];
      lam_prev[static_cast<std::size_t>(j)] += h * s;
    }
    lam = std::move(lam_prev);
  }
  return g;
}

}  // namespace

TEST_CASE("frozen dynamics: zero drift and diffusion leave the state fixed") {
  BranchConfig cfg = tiny_config(5, 4, Activation::Identity);
  BranchParams params = zero_branch_params(cfg, {5});
  Tensor u = Tensor::vec({1, -2, 3, 0.5, 0});
  RandomStream rng(1);
  auto traj = forward_sde(u, params, cfg, rng);
  for (int i = 0; i < 5; ++i) CHECK(traj.states.back()[i] == u[i]);
  CHECK(traj.beta.size() == 5);
}

TEST_CASE("constant scalar diffusion accumulates variance s^2 T") {
  const double s = 0.7;
  BranchConfig cfg = tiny_config(4, 5, Activation::Identity);
  BranchParams params = zero_branch_params(cfg, {4});
  for (auto& d : params.diffusion_vec) d[0] = s;
  Tensor u({4});
  RandomStream root(99);
  std::vector<double> terminal;
  for (int p = 0; p < 10000; ++p) {
    RandomStream rng = root.substream(static_cast<std::uint64_t>(p));
    auto traj = forward_sde(u, params, cfg, rng);
    for (int i = 0; i < 4; ++i) terminal.push_back(traj.states.back()[i] - u[i]);
  }
  double sd = sample_std(terminal);
  CHECK(sd * sd == doctest::Approx(s * s).epsilon(0.05));
}

TEST_CASE("zero diffusion makes the forward pass seed-independent") {
  BranchConfig cfg = tiny_config(3, 3, Activation::Sigmoid);
  RandomStream init(5);
  BranchParams params = init_branch_params(cfg, {3}, init);
  for (auto& d : params.diffusion_vec) d[0] = 0.0;
  Tensor u = Tensor::vec({0.2, -0.4, 1.0});
  RandomStream r1(11), r2(222);
  auto t1 = forward_sde(u, params, cfg, r1);
  auto t2 = forward_sde(u, params, cfg, r2);
  for (int i = 0; i < 3; ++i) CHECK(t1.states.back()[i] == t2.states.back()[i]);
}

TEST_CASE("replaying stored increments reproduces the trajectory exactly") {
  BranchConfig cfg = tiny_config(4, 6, Activation::Arctan);
  RandomStream init(7);
  BranchParams params = init_branch_params(cfg, {4}, init);
  Tensor u = Tensor::vec({1, 0, -1, 0.5});
  RandomStream rng(13);
  auto traj = forward_sde(u, params, cfg, rng);
  RandomStream unused(999);
  auto replay = forward_sde(u, params, cfg, unused, true, &traj.increments);
  for (std::size_t n = 0; n < traj.states.size(); ++n)
    for (int i = 0; i < 4; ++i) CHECK(replay.states[n][i] == traj.states[n][i]);
}

TEST_CASE("overflowing drift raises a numeric error with the step index") {
  BranchConfig cfg = tiny_config(2, 3, Activation::Identity);
  BranchParams params = zero_branch_params(cfg, {2});
  params.drift[0][0].weight.at(0, 0) = 1e300;
  params.drift[0][0].weight.at(0, 1) = 1e300;
  Tensor u = Tensor::vec({1e300, 1e8});
  RandomStream rng(3);
  CHECK_THROWS_AS(forward_sde(u, params, cfg, rng), NumericError);
}

TEST_CASE("sigma = 0 with zero increments reproduces plain ResNet backprop") {
  const int m = 4, steps = 2;
  BranchConfig cfg = tiny_config(m, steps, Activation::Sigmoid);
  RandomStream init(21);
  BranchParams params = init_branch_params(cfg, {m}, init);
  for (auto& d : params.diffusion_vec) d[0] = 0.0;

  Tensor u = Tensor::vec({0.3, -0.8, 0.1, 0.9});
  RandomStream rng(5);
  auto zeros = zero_increments(cfg, m);
  auto traj = forward_sde(u, params, cfg, rng, true, &zeros);

  Tensor w = Tensor::vec({0.5, -1.0, 2.0, 0.25});
  auto path = backward_adjoint(traj, params, cfg, w);
  auto oracle = handrolled_backprop(cfg, params, traj.states, traj.increments, w,
                                    Activation::Sigmoid);

  for (int n = 0; n < steps; ++n) {
    const auto& got_w = path.grads.drift[static_cast<std::size_t>(n)][0].weight;
    const auto& got_b = path.grads.drift[static_cast<std::size_t>(n)][0].bias;
    for (int i = 0; i < m * m; ++i) {
      double want = oracle.gw[static_cast<std::size_t>(n)][static_cast<std::size_t>(i)];
      CHECK(std::abs(got_w[i] - want) <= 1e-10 * std::max(1.0, std::abs(want)));
    }
    for (int i = 0; i < m; ++i) {
      double want = oracle.gb[static_cast<std::size_t>(n)][static_cast<std::size_t>(i)];
      CHECK(std::abs(got_b[i] - want) <= 1e-10 * std::max(1.0, std::abs(want)));
    }
    CHECK(path.grads.diffusion_vec[static_cast<std::size_t>(n)][0] == 0.0);
  }
}

TEST_CASE("stochastic path gradients match the independent reverse-mode oracle") {
  const int m = 4, steps = 3;
  BranchConfig cfg = tiny_config(m, steps, Activation::Sigmoid);
  RandomStream init(22);
  BranchParams params = init_branch_params(cfg, {m}, init);
  for (int n = 0; n < steps; ++n) params.diffusion_vec[static_cast<std::size_t>(n)][0] = 0.4 + 0.2 * n;

  Tensor u = Tensor::vec({0.1, -0.5, 0.8, 0.0});
  RandomStream rng(88);
  auto traj = forward_sde(u, params, cfg, rng);
  Tensor w = Tensor::vec({1.5, -0.6, 0.2, 1.0});
  auto path = backward_adjoint(traj, params, cfg, w);
  auto oracle = handrolled_backprop(cfg, params, traj.states, traj.increments, w,
                                    Activation::Sigmoid);

  for (int n = 0; n < steps; ++n) {
    for (int i = 0; i < m * m; ++i) {
      double want = oracle.gw[static_cast<std::size_t>(n)][static_cast<std::size_t>(i)];
      double got = path.grads.drift[static_cast<std::size_t>(n)][0].weight[i];
      CHECK(std::abs(got - want) <= 1e-8 * std::max(1.0, std::abs(want)));
    }
    double want_s = oracle.gsigma[static_cast<std::size_t>(n)];
    double got_s = path.grads.diffusion_vec[static_cast<std::size_t>(n)][0];
    CHECK(std::abs(got_s - want_s) <= 1e-8 * std::max(1.0, std::abs(want_s)));
  }
}

TEST_CASE("pathwise gradients match finite differences of the fixed-path loss") {
  const int m = 3, steps = 2;
  BranchConfig cfg = tiny_config(m, steps, Activation::Arctan);
  RandomStream init(31);
  BranchParams params = init_branch_params(cfg, {m}, init);
  for (auto& d : params.diffusion_vec) d[0] = 0.5;

  Tensor u = Tensor::vec({0.4, -0.2, 0.7});
  Tensor target = Tensor::vec({0.1, 0.1, -0.3});
  RandomStream rng(77);
  auto traj = forward_sde(u, params, cfg, rng);
  auto increments = traj.increments;

  auto fixed_loss = [&](const BranchParams& p) {
    RandomStream r(0);
    auto t = forward_sde(u, p, cfg, r, true, &increments);
    double phi = 0;
    for (int i = 0; i < m; ++i)
      phi += (t.beta[i] - target[i]) * (t.beta[i] - target[i]);
    return phi;
  };

  Tensor b_term({m});
  for (int i = 0; i < m; ++i) b_term[i] = 2.0 * (traj.beta[i] - target[i]);
  auto path = backward_adjoint(traj, params, cfg, b_term);

  const double step = 1e-6;
  for (int n = 0; n < steps; ++n) {
    BranchParams p = params;
    auto& wmat = p.drift[static_cast<std::size_t>(n)][0].weight;
    for (int i = 0; i < wmat.size(); ++i) {
      double orig = wmat[i];
      wmat[i] = orig + step;
      double up = fixed_loss(p);
      wmat[i] = orig - step;
      double dn = fixed_loss(p);
      wmat[i] = orig;
      double fd = (up - dn) / (2 * step);
      double got = path.grads.drift[static_cast<std::size_t>(n)][0].weight[i];
      CHECK(std::abs(got - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
    double orig = p.diffusion_vec[static_cast<std::size_t>(n)][0];
    p.diffusion_vec[static_cast<std::size_t>(n)][0] = orig + step;
    double up = fixed_loss(p);
    p.diffusion_vec[static_cast<std::size_t>(n)][0] = orig - step;
    double dn = fixed_loss(p);
    p.diffusion_vec[static_cast<std::size_t>(n)][0] = orig;
    double fd = (up - dn) / (2 * step);
    double got = path.grads.diffusion_vec[static_cast<std::size_t>(n)][0];
    CHECK(std::abs(got - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("pure noise dynamics keep the adjoint constant") {
  BranchConfig cfg = tiny_config(4, 5, Activation::Identity);
  BranchParams params = zero_branch_params(cfg, {4});
  for (auto& d : params.diffusion_vec) d[0] = 1.3;
  Tensor u({4});
  RandomStream rng(9);
  auto traj = forward_sde(u, params, cfg, rng);
  Tensor w = Tensor::vec({1, 2, 3, 4});
  auto path = backward_adjoint(traj, params, cfg, w);
  for (const auto& b : path.adjoint)
    for (int i = 0; i < 4; ++i) CHECK(b[i] == w[i]);
}

TEST_CASE("mean path gradient matches finite differences of the MC loss") {
  const int m = 3, steps = 2, n_paths = 10000;
  BranchConfig cfg = tiny_config(m, steps, Activation::Sigmoid);
  RandomStream init(41);
  BranchParams params = init_branch_params(cfg, {m}, init);
  for (auto& d : params.diffusion_vec) d[0] = 0.6;

  Tensor u = Tensor::vec({0.5, -0.1, 0.2});
  Tensor target = Tensor::vec({0.4, 0.0, 0.1});

  // Common increments across theta perturbations.
  std::vector<std::vector<Tensor>> increments;
  RandomStream root(51);
  for (int p = 0; p < n_paths; ++p) {
    RandomStream rng = root.substream(static_cast<std::uint64_t>(p));
    std::vector<Tensor> om;
    for (int n = 0; n < steps; ++n) {
      Tensor o({m});
      rng.fill_normal(o);
      om.push_back(std::move(o));
    }
    increments.push_back(std::move(om));
  }

  auto phi_of = [&](const SdeTrajectory& t) {
    double phi = 0;
    for (int i = 0; i < m; ++i) phi += (t.beta[i] - target[i]) * (t.beta[i] - target[i]);
    return phi;
  };
  auto mc_loss = [&](const BranchParams& p) {
    double total = 0;
    RandomStream r(0);
    for (int i = 0; i < n_paths; ++i)
      total += phi_of(forward_sde(u, p, cfg, r, true, &increments[static_cast<std::size_t>(i)]));
    return total / n_paths;
  };

  // Mean SMP gradient and its per-path spread for the probed parameter.
  const int probe_step = 1, probe_idx = 2;  // one weight entry
  std::vector<double> per_path;
  RandomStream r(0);
  for (int i = 0; i < n_paths; ++i) {
    auto traj = forward_sde(u, params, cfg, r, true, &increments[static_cast<std::size_t>(i)]);
    Tensor b_term({m});
    for (int j = 0; j < m; ++j) b_term[j] = 2.0 * (traj.beta[j] - target[j]);
    auto path = backward_adjoint(traj, params, cfg, b_term);
    per_path.push_back(path.grads.drift[probe_step][0].weight[probe_idx]);
  }
  double mean_g = son::test::mean(per_path);
  double se = sample_std(per_path) / std::sqrt(static_cast<double>(n_paths));

  const double fd_step = 1e-4;
  BranchParams p = params;
  double orig = p.drift[probe_step][0].weight[probe_idx];
  p.drift[probe_step][0].weight[probe_idx] = orig + fd_step;
  double up = mc_loss(p);
  p.drift[probe_step][0].weight[probe_idx] = orig - fd_step;
  double dn = mc_loss(p);
  double fd = (up - dn) / (2 * fd_step);

  CHECK(std::abs(mean_g - fd) <= 3.0 * se + 1e-6);
}

TEST_CASE("backward_adjoint is linear in the terminal gradient") {
  BranchConfig cfg = tiny_config(3, 4, Activation::Sigmoid);
  RandomStream init(61);
  BranchParams params = init_branch_params(cfg, {3}, init);
  Tensor u = Tensor::vec({0.3, 0.3, -0.9});
  RandomStream rng(62);
  auto traj = forward_sde(u, params, cfg, rng);

  Tensor w = Tensor::vec({0.7, -0.2, 1.1});
  Tensor w2 = w;
  w2 *= 2.0;
  auto p1 = backward_adjoint(traj, params, cfg, w);
  auto p2 = backward_adjoint(traj, params, cfg, w2);
  for (std::size_t n = 0; n < p1.adjoint.size(); ++n)
    for (int i = 0; i < 3; ++i) CHECK(p2.adjoint[n][i] == doctest::Approx(2 * p1.adjoint[n][i]).epsilon(1e-14));
  for (std::size_t n = 0; n < p1.martingale.size(); ++n)
    for (int i = 0; i < 3; ++i)
      CHECK(p2.martingale[n][i] == doctest::Approx(2 * p1.martingale[n][i]).epsilon(1e-14));
  for (std::size_t n = 0; n < p1.grads.diffusion_vec.size(); ++n)
    CHECK(p2.grads.diffusion_vec[n][0] == doctest::Approx(2 * p1.grads.diffusion_vec[n][0]).epsilon(1e-14));
}

TEST_CASE("encode_input: identity without projection, pooling with it") {
  BranchConfig cfg;
  cfg.steps = 1;
  Tensor u = Tensor::vec({1, 2, 3});
  Tensor a0 = encode_input(u, cfg);
  for (int i = 0; i < 3; ++i) CHECK(a0[i] == u[i]);

  BranchConfig cfg2;
  cfg2.steps = 1;
  cfg2.pre_projection = {maxpool2d_spec(20, 20, 2)};
  Tensor grid({20, 20});
  RandomStream rng(4);
  rng.fill_uniform(grid, -1, 1);
  Tensor pooled = encode_input(grid, cfg2);
  CHECK(pooled.ndim() == 2);
  CHECK(pooled.dim(0) == 10);
  CHECK(pooled.dim(1) == 10);

  Tensor constant({20, 20}, 3.5);
  Tensor pooled_c = encode_input(constant, cfg2);
  for (int i = 0; i < pooled_c.size(); ++i) CHECK(pooled_c[i] == 3.5);
}

TEST_CASE("network diffusion mode: pathwise gradients still match finite differences") {
  const int rows = 4, cols = 4, steps = 2;
  BranchConfig cfg;
  cfg.steps = steps;
  cfg.drift_stack = {conv2d_spec(rows, cols, 3, Activation::Relu)};
  cfg.diffusion_mode = DiffusionMode::Network;
  cfg.diffusion_stack = {conv2d_spec(rows, cols, 3, Activation::Arctan),
                         dropout_spec(rows, cols, 0.3)};
  RandomStream init(71);
  BranchParams params = init_branch_params(cfg, {rows, cols}, init);

  Tensor u({rows, cols});
  init.fill_uniform(u, -1, 1);
  Tensor target({rows * cols});
  init.fill_uniform(target, -1, 1);

  RandomStream rng(72);
  auto traj = forward_sde(u, params, cfg, rng);
  auto increments = traj.increments;

  // Freeze the dropout masks along with the increments by replaying the same
  // rng key; the masks depend only on the stream and the draw order.
  auto fixed_loss = [&](const BranchParams& p) {
    RandomStream r(72);
    auto t = forward_sde(u, p, cfg, r, true, &increments);
    double phi = 0;
    for (int i = 0; i < t.beta.size(); ++i) phi += (t.beta[i] - target[i]) * (t.beta[i] - target[i]);
    return phi;
  };

  Tensor b_term({rows * cols});
  for (int i = 0; i < b_term.size(); ++i) b_term[i] = 2.0 * (traj.beta[i] - target[i]);
  auto path = backward_adjoint(traj, params, cfg, b_term);

  const double step = 1e-6;
  for (int n = 0; n < steps; ++n) {
    BranchParams p = params;
    auto& kern = p.diffusion_net[static_cast<std::size_t>(n)][0].weight;
    for (int i = 0; i < kern.size(); ++i) {
      double orig = kern[i];
      kern[i] = orig + step;
      double up = fixed_loss(p);
      kern[i] = orig - step;
      double dn = fixed_loss(p);
      kern[i] = orig;
      double fd = (up - dn) / (2 * step);
      double got = path.grads.diffusion_net[static_cast<std::size_t>(n)][0].weight[i];
      CHECK(std::abs(got - fd) <= 2e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}
