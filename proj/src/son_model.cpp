#include "son/son_model.hpp"

#include <cmath>

#include "son/errors.hpp"

namespace son {

void SonConfig::validate() const {
  if (p <= 0 || d_out <= 0) throw ConfigError("SonConfig: p and d_out must be positive");
  if (branch.output_width(input_shape) != p)
    throw ConfigError("SonConfig: flattened branch output width must equal p");
  if (trunk.stack.empty()) throw ConfigError("SonConfig: trunk stack is empty");
  std::vector<int> tout = stack_out_shape(trunk.stack, trunk.stack.front().in_shape());
  int w = 1;
  for (int d : tout) w *= d;
  if (w != p * d_out) throw ConfigError("SonConfig: trunk output width must equal p * d_out");
}

SonModel make_son_model(const SonConfig& cfg, RandomStream& rng) {
  cfg.validate();
  SonModel m;
  m.cfg = cfg;
  m.params.branch = init_branch_params(cfg.branch, cfg.input_shape, rng);
  m.params.trunk = init_stack_params(cfg.trunk.stack, rng);
  m.params.b0 = 0.0;
  return m;
}

Tensor trunk_forward(const TrunkConfig& cfg, const StackParams& params, const Tensor& y,
                     StackCaches* caches) {
  return stack_forward(cfg.stack, params, y, nullptr, caches);
}

Tensor combine(const Tensor& beta, const Tensor& tau, double b0, int d_out) {
  const int p = beta.size();
  if (tau.size() != p * d_out) throw ShapeError("combine: tau length must be p * d_out");
  Tensor value({d_out});
  for (int d = 0; d < d_out; ++d) {
    double s = b0;
    const int off = d * p;
    for (int k = 0; k < p; ++k) s += beta[k] * tau[off + k];
    value[d] = s;
  }
  return value;
}

Prediction predict(const SonModel& model, const Tensor& u, const Tensor& y, RandomStream& rng,
                   bool dropout_active, bool with_caches) {
  Prediction pred;
  auto traj = std::make_unique<SdeTrajectory>(
      forward_sde(u, model.params.branch, model.cfg.branch, rng, dropout_active));
  auto tcaches = std::make_unique<StackCaches>();
  pred.tau = trunk_forward(model.cfg.trunk, model.params.trunk, y,
                           with_caches ? tcaches.get() : nullptr);
  pred.value = combine(traj->beta, pred.tau, model.params.b0, model.cfg.d_out);
  if (!pred.value.all_finite()) throw NumericError("predict: non-finite prediction");
  if (with_caches) {
    pred.trajectory = std::move(traj);
    pred.trunk_caches = std::move(tcaches);
  }
  return pred;
}

LossTerminal loss_and_terminal(const Prediction& pred, const Tensor& target, const SonModel& model) {
  const int d_out = model.cfg.d_out;
  const int p = model.cfg.p;
  if (target.size() != d_out) throw ShapeError("loss_and_terminal: target size mismatch");
  if (!pred.trajectory) throw ContractError("loss_and_terminal: prediction lacks caches");

  LossTerminal out;
  out.b_beta = Tensor({p});
  out.grad_tau = Tensor({p * d_out});

  const Tensor& beta = pred.trajectory->beta;
  double phi = 0;
  for (int d = 0; d < d_out; ++d) {
    double r = pred.value[d] - target[d];
    phi += r * r;
    double e = 2.0 * r / d_out;
    out.grad_b0 += e;
    const int off = d * p;
    for (int k = 0; k < p; ++k) {
      out.b_beta[k] += e * pred.tau[off + k];
      out.grad_tau[off + k] = e * beta[k];
    }
  }
  out.phi = phi / d_out;
  return out;
}

void BaselineConfigValidate(const BaselineConfig& cfg) {
  std::vector<int> bout = stack_out_shape(cfg.branch, cfg.input_shape);
  int w = 1;
  for (int d : bout) w *= d;
  if (w != cfg.p) throw ConfigError("BaselineConfig: branch output width must equal p");
}

BaselineModel make_baseline_model(const BaselineConfig& cfg, RandomStream& rng) {
  BaselineConfigValidate(cfg);
  BaselineModel m;
  m.cfg = cfg;
  m.branch_params = init_stack_params(cfg.branch, rng);
  m.trunk_params = init_stack_params(cfg.trunk.stack, rng);
  m.b0 = 0.0;
  return m;
}

Tensor baseline_predict(const BaselineModel& model, const Tensor& u, const Tensor& y) {
  Tensor beta = stack_forward(model.cfg.branch, model.branch_params, u, nullptr, nullptr).flattened();
  Tensor tau = stack_forward(model.cfg.trunk.stack, model.trunk_params, y, nullptr, nullptr);
  return combine(beta, tau, model.b0, model.cfg.d_out);
}

double baseline_loss_and_grads(const BaselineModel& model, const Tensor& u, const Tensor& y,
                               const Tensor& target, BaselineGrads& grads) {
  const int d_out = model.cfg.d_out;
  const int p = model.cfg.p;

  StackCaches bcaches, tcaches;
  Tensor beta =
      stack_forward(model.cfg.branch, model.branch_params, u, nullptr, &bcaches).flattened();
  Tensor tau = stack_forward(model.cfg.trunk.stack, model.trunk_params, y, nullptr, &tcaches);
  Tensor value = combine(beta, tau, model.b0, d_out);

  double phi = 0;
  Tensor grad_beta({p});
  Tensor grad_tau({p * d_out});
  double grad_b0 = 0;
  for (int d = 0; d < d_out; ++d) {
    double r = value[d] - target[d];
    phi += r * r;
    double e = 2.0 * r / d_out;
    grad_b0 += e;
    const int off = d * p;
    for (int k = 0; k < p; ++k) {
      grad_beta[k] += e * tau[off + k];
      grad_tau[off + k] = e * beta[k];
    }
  }

  StackVjpResult bres = stack_vjp(model.cfg.branch, model.branch_params, bcaches, grad_beta);
  StackVjpResult tres = stack_vjp(model.cfg.trunk.stack, model.trunk_params, tcaches, grad_tau);
  grads.branch = std::move(bres.grad_params);
  grads.trunk = std::move(tres.grad_params);
  grads.b0 = grad_b0;
  return phi / d_out;
}

}  // namespace son
