#ifndef SON_MODEL_HPP
#define SON_MODEL_HPP

#include <memory>
#include <vector>

#include "son/branch_sde.hpp"
#include "son/layers.hpp"
#include "son/rng.hpp"
#include "son/tensor.hpp"

namespace son {

/// Trunk net: plain feed-forward stack from the query point to p * d_out basis values.
struct TrunkConfig {
  StackSpec stack;
  int p = 0;
  int d_out = 1;
};

struct SonConfig {
  BranchConfig branch;
  TrunkConfig trunk;
  std::vector<int> input_shape;  // sensor field shape
  int p = 0;
  int d_out = 1;

  void validate() const;
};

/// All trainable state: per-step branch parameters, trunk parameters, bias.
struct ParameterSet {
  BranchParams branch;
  StackParams trunk;
  double b0 = 0.0;
};

struct SonModel {
  SonConfig cfg;
  ParameterSet params;
};

SonModel make_son_model(const SonConfig& cfg, RandomStream& rng);

struct Prediction {
  Tensor value;  // d_out
  Tensor tau;    // p * d_out
  std::unique_ptr<SdeTrajectory> trajectory;  // kept when with_caches
  std::unique_ptr<StackCaches> trunk_caches;
};

Tensor trunk_forward(const TrunkConfig& cfg, const StackParams& params, const Tensor& y,
                     StackCaches* caches = nullptr);

/// value_d = sum_k beta_k tau_{(d-1)p+k} + b0.
Tensor combine(const Tensor& beta, const Tensor& tau, double b0, int d_out);

Prediction predict(const SonModel& model, const Tensor& u, const Tensor& y, RandomStream& rng,
                   bool dropout_active = true, bool with_caches = false);

/// Mean-squared-error loss over output dimensions plus the terminal adjoint
/// and the ordinary gradients for trunk and bias.
struct LossTerminal {
  double phi = 0;
  Tensor b_beta;   // dPhi/dbeta (p), the BSDE terminal condition
  Tensor grad_tau;  // dPhi/dtau (p * d_out)
  double grad_b0 = 0;
};

LossTerminal loss_and_terminal(const Prediction& pred, const Tensor& target, const SonModel& model);

// Vanilla DeepONet baseline: deterministic branch stack, same trunk/combine,
// trained by ordinary backpropagation.
struct BaselineConfig {
  StackSpec branch;
  TrunkConfig trunk;
  std::vector<int> input_shape;
  int p = 0;
  int d_out = 1;
};

struct BaselineModel {
  BaselineConfig cfg;
  StackParams branch_params;
  StackParams trunk_params;
  double b0 = 0.0;
};

BaselineModel make_baseline_model(const BaselineConfig& cfg, RandomStream& rng);

Tensor baseline_predict(const BaselineModel& model, const Tensor& u, const Tensor& y);

struct BaselineGrads {
  StackParams branch;
  StackParams trunk;
  double b0 = 0.0;
};

/// One forward + full backprop; returns the loss and writes gradients.
double baseline_loss_and_grads(const BaselineModel& model, const Tensor& u, const Tensor& y,
                               const Tensor& target, BaselineGrads& grads);

}  // namespace son

#endif  // SON_MODEL_HPP
