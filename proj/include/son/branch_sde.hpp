#ifndef SON_BRANCH_SDE_HPP
#define SON_BRANCH_SDE_HPP

#include <vector>

#include "son/layers.hpp"
#include "son/rng.hpp"
#include "son/tensor.hpp"

namespace son {

enum class DiffusionMode {
  PerStepVector,  // trainable vector (size 1 broadcasts) per pseudo-time step
  Network         // sigma(A_n; theta_n) from a per-step layer stack
};

/// Branch net layout: optional projection stacks around N Euler-Maruyama
/// steps of the controlled SDE on pseudo-time [0, T], h = T/N.
struct BranchConfig {
  int steps = 1;
  double terminal_time = 1.0;

  StackSpec pre_projection;    // pooling / flatten only (no parameters)
  StackSpec drift_stack;       // per-step drift sub-network (shapes shared, params per step)
  DiffusionMode diffusion_mode = DiffusionMode::PerStepVector;
  int diffusion_size = 1;      // PerStepVector: 1 (scalar) or the state size
  StackSpec diffusion_stack;   // Network mode
  StackSpec post_projection;   // pooling + flatten, applied after the last step

  double diffusion_init_mean = 0.0;
  double diffusion_init_std = 1.0;

  // Diagnostics toggle: when false, diffusion-stack dropout is a no-op outside
  // training. Default keeps dropout active everywhere (literal reading).
  bool dropout_everywhere = true;

  // Literal-paper variants (see module open questions).
  bool fresh_backward_noise = false;  // redraw the noise in C_n instead of reusing
  bool paper_indexing = false;        // evaluate grad_a H at A_{n+1} in the B recursion

  bool train_diffusion = true;  // false freezes diffusion parameters during training

  double step_size() const { return terminal_time / steps; }
  /// State shape inside the SDE (after pre-projection) for a given input shape.
  std::vector<int> state_shape(const std::vector<int>& input_shape) const;
  int output_width(const std::vector<int>& input_shape) const;  // flattened beta width
};

/// Trainable branch parameters, one entry per pseudo-time step.
struct BranchParams {
  std::vector<StackParams> drift;          // [step][layer]
  std::vector<Tensor> diffusion_vec;       // [step] (PerStepVector mode)
  std::vector<StackParams> diffusion_net;  // [step][layer] (Network mode)
};

BranchParams init_branch_params(const BranchConfig& cfg, const std::vector<int>& input_shape,
                                RandomStream& rng);
BranchParams zero_branch_params(const BranchConfig& cfg, const std::vector<int>& input_shape);

/// Stored forward pass: states, Gaussian increments, and every cache the
/// backward solve needs. Replaying `increments` reproduces `states` exactly.
struct SdeTrajectory {
  std::vector<Tensor> states;                        // A_0 .. A_N
  std::vector<Tensor> increments;                    // omega_0 .. omega_{N-1}
  std::vector<Tensor> diffusion_values;              // sigma_n as applied (state shape)
  std::vector<StackCaches> drift_caches;             // [step]
  std::vector<StackCaches> diffusion_caches;         // [step] (Network mode)
  StackCaches pre_caches;
  StackCaches post_caches;
  Tensor beta;                                       // post-projection output (flat)
};

/// Backward adjoint path plus per-step Hamiltonian parameter gradients.
struct AdjointPath {
  std::vector<Tensor> adjoint;     // B_0 .. B_N (state shape)
  std::vector<Tensor> martingale;  // C_0 .. C_{N-1} (state shape)
  BranchParams grads;
};

/// Apply the pre-projection stack (identity when absent).
Tensor encode_input(const Tensor& u, const BranchConfig& cfg, StackCaches* caches = nullptr);

/// Euler-Maruyama forward propagation from the raw sensor field through the
/// post-projection. When `fixed_increments` is given, those omega_n are used
/// instead of fresh draws (replay / finite differencing).
SdeTrajectory forward_sde(const Tensor& u, const BranchParams& params, const BranchConfig& cfg,
                          RandomStream& rng, bool dropout_active = true,
                          const std::vector<Tensor>* fixed_increments = nullptr);

/// Sample-wise backward solve of the adjoint BSDE. `b_terminal` is the loss
/// gradient with respect to beta (flattened post-projection output); it is
/// back-propagated through the post-projection with C = 0, then the per-step
/// recursion runs on the stored forward path.
AdjointPath backward_adjoint(const SdeTrajectory& traj, const BranchParams& params,
                             const BranchConfig& cfg, const Tensor& b_terminal,
                             RandomStream* fresh_noise_rng = nullptr);

}  // namespace son

#endif  // SON_BRANCH_SDE_HPP
