#include "son/branch_sde.hpp"

#include <cmath>
#include <string>

#include "son/errors.hpp"

namespace son {

std::vector<int> BranchConfig::state_shape(const std::vector<int>& input_shape) const {
  std::vector<int> s = pre_projection.empty() ? input_shape
                                              : stack_out_shape(pre_projection, input_shape);
  if (!drift_stack.empty()) {
    std::vector<int> out = stack_out_shape(drift_stack, s);
    int a = 1, b = 1;
    for (int d : s) a *= d;
    for (int d : out) b *= d;
    if (a != b) throw ConfigError("BranchConfig: drift stack must preserve the state dimension");
  }
  return s;
}

int BranchConfig::output_width(const std::vector<int>& input_shape) const {
  std::vector<int> s = state_shape(input_shape);
  if (!post_projection.empty()) s = stack_out_shape(post_projection, s);
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

BranchParams init_branch_params(const BranchConfig& cfg, const std::vector<int>& input_shape,
                                RandomStream& rng) {
  if (cfg.steps < 1) throw ConfigError("BranchConfig: need at least one pseudo-time step");
  std::vector<int> state = cfg.state_shape(input_shape);
  int state_size = 1;
  for (int d : state) state_size *= d;

  BranchParams p;
  for (int n = 0; n < cfg.steps; ++n) p.drift.push_back(init_stack_params(cfg.drift_stack, rng));
  if (cfg.diffusion_mode == DiffusionMode::PerStepVector) {
    if (cfg.diffusion_size != 1 && cfg.diffusion_size != state_size)
      throw ConfigError("BranchConfig: diffusion vector must be scalar or state-sized");
    for (int n = 0; n < cfg.steps; ++n) {
      Tensor d({cfg.diffusion_size});
      rng.fill_normal(d, cfg.diffusion_init_mean, cfg.diffusion_init_std);
      p.diffusion_vec.push_back(std::move(d));
    }
  } else {
    for (int n = 0; n < cfg.steps; ++n)
      p.diffusion_net.push_back(init_stack_params(cfg.diffusion_stack, rng));
  }
  return p;
}

BranchParams zero_branch_params(const BranchConfig& cfg, const std::vector<int>& input_shape) {
  std::vector<int> state = cfg.state_shape(input_shape);
  BranchParams p;
  for (int n = 0; n < cfg.steps; ++n) p.drift.push_back(zero_stack_params(cfg.drift_stack));
  if (cfg.diffusion_mode == DiffusionMode::PerStepVector) {
    for (int n = 0; n < cfg.steps; ++n) p.diffusion_vec.push_back(Tensor({cfg.diffusion_size}));
  } else {
    for (int n = 0; n < cfg.steps; ++n) p.diffusion_net.push_back(zero_stack_params(cfg.diffusion_stack));
  }
  return p;
}

Tensor encode_input(const Tensor& u, const BranchConfig& cfg, StackCaches* caches) {
  if (cfg.pre_projection.empty()) {
    if (caches) caches->clear();
    return u;
  }
  StackParams empty(cfg.pre_projection.size());
  return stack_forward(cfg.pre_projection, empty, u, nullptr, caches);
}

namespace {

// sigma_n as a state-shaped tensor: broadcast a scalar, copy a vector, or
// evaluate the diffusion network at A_n.
Tensor diffusion_value(const BranchConfig& cfg, const BranchParams& params, int step,
                       const Tensor& state, RandomStream* rng, StackCaches* caches,
                       bool dropout_active) {
  if (cfg.diffusion_mode == DiffusionMode::PerStepVector) {
    const Tensor& d = params.diffusion_vec[static_cast<std::size_t>(step)];
    Tensor out(state.shape());
    if (d.size() == 1) {
      out.fill(d[0]);
    } else {
      if (d.size() != state.size())
        throw ShapeError("forward_sde: diffusion vector does not match state size");
      for (int i = 0; i < out.size(); ++i) out[i] = d[i];
    }
    return out;
  }
  Tensor out = stack_forward(cfg.diffusion_stack, params.diffusion_net[static_cast<std::size_t>(step)],
                             state, rng, caches, dropout_active);
  if (out.size() != state.size())
    throw ShapeError("forward_sde: diffusion network output does not match state size");
  return out;
}

}  // namespace

SdeTrajectory forward_sde(const Tensor& u, const BranchParams& params, const BranchConfig& cfg,
                          RandomStream& rng, bool dropout_active,
                          const std::vector<Tensor>* fixed_increments) {
  const double h = cfg.step_size();
  const double sqrt_h = std::sqrt(h);

  SdeTrajectory traj;
  Tensor state = encode_input(u, cfg, &traj.pre_caches);
  traj.states.push_back(state);

  traj.drift_caches.resize(static_cast<std::size_t>(cfg.steps));
  if (cfg.diffusion_mode == DiffusionMode::Network)
    traj.diffusion_caches.resize(static_cast<std::size_t>(cfg.steps));

  for (int n = 0; n < cfg.steps; ++n) {
    Tensor mu = stack_forward(cfg.drift_stack, params.drift[static_cast<std::size_t>(n)], state,
                              nullptr, &traj.drift_caches[static_cast<std::size_t>(n)]);
    StackCaches* sig_caches = cfg.diffusion_mode == DiffusionMode::Network
                                  ? &traj.diffusion_caches[static_cast<std::size_t>(n)]
                                  : nullptr;
    Tensor sigma = diffusion_value(cfg, params, n, state, &rng, sig_caches, dropout_active);

    // The noise slot is always drawn so the stream stays aligned with a live
    // run; replays with fixed increments then see identical dropout masks.
    Tensor omega(state.shape());
    rng.fill_normal(omega);
    if (fixed_increments) {
      omega = (*fixed_increments)[static_cast<std::size_t>(n)];
      if (!omega.same_shape(state)) throw ContractError("forward_sde: fixed increment shape mismatch");
    }

    Tensor next(state.shape());
    for (int i = 0; i < state.size(); ++i)
      next[i] = state[i] + h * mu[i] + sqrt_h * sigma[i] * omega[i];
    if (!next.all_finite())
      throw NumericError("forward_sde: non-finite state at step " + std::to_string(n));

    traj.increments.push_back(std::move(omega));
    traj.diffusion_values.push_back(std::move(sigma));
    state = std::move(next);
    traj.states.push_back(state);
  }

  if (cfg.post_projection.empty()) {
    traj.beta = state.flattened();
  } else {
    StackParams empty(cfg.post_projection.size());
    traj.beta = stack_forward(cfg.post_projection, empty, state, nullptr, &traj.post_caches)
                    .flattened();
  }
  return traj;
}

AdjointPath backward_adjoint(const SdeTrajectory& traj, const BranchParams& params,
                             const BranchConfig& cfg, const Tensor& b_terminal,
                             RandomStream* fresh_noise_rng) {
  const int n_steps = cfg.steps;
  if (static_cast<int>(traj.states.size()) != n_steps + 1)
    throw ContractError("backward_adjoint: trajectory does not match config");
  const double h = cfg.step_size();
  const double sqrt_h = std::sqrt(h);
  const std::vector<int>& state_shape = traj.states[0].shape();

  AdjointPath path;
  path.adjoint.assign(static_cast<std::size_t>(n_steps) + 1, Tensor());
  path.martingale.assign(static_cast<std::size_t>(n_steps), Tensor());
  path.grads.drift.resize(static_cast<std::size_t>(n_steps));
  if (cfg.diffusion_mode == DiffusionMode::PerStepVector)
    path.grads.diffusion_vec.resize(static_cast<std::size_t>(n_steps));
  else
    path.grads.diffusion_net.resize(static_cast<std::size_t>(n_steps));

  // Terminal condition through the post-projection stack, C = 0.
  Tensor b_n;
  if (cfg.post_projection.empty()) {
    if (b_terminal.size() != traj.states.back().size())
      throw ContractError("backward_adjoint: terminal gradient size mismatch");
    b_n = Tensor(state_shape);
    for (int i = 0; i < b_terminal.size(); ++i) b_n[i] = b_terminal[i];
  } else {
    StackParams empty(cfg.post_projection.size());
    StackVjpResult r = stack_vjp(cfg.post_projection, empty, traj.post_caches, b_terminal);
    b_n = std::move(r.grad_input);
  }
  path.adjoint[static_cast<std::size_t>(n_steps)] = b_n;

  for (int n = n_steps - 1; n >= 0; --n) {
    const Tensor& b_next = path.adjoint[static_cast<std::size_t>(n) + 1];

    // Martingale integrand from the forward increment (or a fresh draw when
    // the literal-paper variant is requested).
    Tensor omega;
    if (fresh_noise_rng && cfg.fresh_backward_noise) {
      omega = Tensor(state_shape);
      fresh_noise_rng->fill_normal(omega);
    } else {
      omega = traj.increments[static_cast<std::size_t>(n)];
    }
    Tensor c_n(state_shape);
    for (int i = 0; i < c_n.size(); ++i) c_n[i] = b_next[i] * omega[i] / sqrt_h;

    // Parameter gradients are always evaluated on the stored path at A_n.
    StackVjpResult mu_vjp = stack_vjp(cfg.drift_stack, params.drift[static_cast<std::size_t>(n)],
                                      traj.drift_caches[static_cast<std::size_t>(n)], b_next);
    path.grads.drift[static_cast<std::size_t>(n)] = std::move(mu_vjp.grad_params);
    for (auto& lp : path.grads.drift[static_cast<std::size_t>(n)]) {
      lp.weight *= h;
      lp.bias *= h;
    }

    Tensor grad_a = std::move(mu_vjp.grad_input);  // mu_a^T B_{n+1}

    if (cfg.diffusion_mode == DiffusionMode::PerStepVector) {
      const Tensor& dvec = params.diffusion_vec[static_cast<std::size_t>(n)];
      Tensor g({dvec.size()});
      if (dvec.size() == 1) {
        double s = 0;
        for (int i = 0; i < c_n.size(); ++i) s += c_n[i];
        g[0] = h * s;
      } else {
        for (int i = 0; i < g.size(); ++i) g[i] = h * c_n[i];
      }
      path.grads.diffusion_vec[static_cast<std::size_t>(n)] = std::move(g);
    } else {
      StackVjpResult sig_vjp =
          stack_vjp(cfg.diffusion_stack, params.diffusion_net[static_cast<std::size_t>(n)],
                    traj.diffusion_caches[static_cast<std::size_t>(n)], c_n);
      path.grads.diffusion_net[static_cast<std::size_t>(n)] = std::move(sig_vjp.grad_params);
      for (auto& lp : path.grads.diffusion_net[static_cast<std::size_t>(n)]) {
        lp.weight *= h;
        lp.bias *= h;
      }
      grad_a += sig_vjp.grad_input;  // sigma_a^T C_n
    }

    if (cfg.paper_indexing && n + 1 < static_cast<int>(traj.states.size())) {
      // Literal scheme: grad_a H evaluated at A_{n+1} with theta_n. Dropout is
      // held inactive in this re-evaluation (the flag is a scalar-mode study).
      StackCaches caches;
      stack_forward(cfg.drift_stack, params.drift[static_cast<std::size_t>(n)],
                    traj.states[static_cast<std::size_t>(n) + 1], nullptr, &caches, false);
      StackVjpResult mu_next = stack_vjp(cfg.drift_stack, params.drift[static_cast<std::size_t>(n)],
                                         caches, b_next);
      grad_a = std::move(mu_next.grad_input);
      if (cfg.diffusion_mode == DiffusionMode::Network) {
        StackCaches scaches;
        stack_forward(cfg.diffusion_stack, params.diffusion_net[static_cast<std::size_t>(n)],
                      traj.states[static_cast<std::size_t>(n) + 1], nullptr, &scaches, false);
        StackVjpResult sig_next =
            stack_vjp(cfg.diffusion_stack, params.diffusion_net[static_cast<std::size_t>(n)],
                      scaches, c_n);
        grad_a += sig_next.grad_input;
      }
    }

    Tensor b_prev = b_next;
    b_prev.axpy(h, grad_a);
    path.adjoint[static_cast<std::size_t>(n)] = std::move(b_prev);
    path.martingale[static_cast<std::size_t>(n)] = std::move(c_n);
  }
  return path;
}

}  // namespace son
