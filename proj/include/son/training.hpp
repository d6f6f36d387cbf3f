#ifndef SON_TRAINING_HPP
#define SON_TRAINING_HPP

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "son/oracles.hpp"
#include "son/son_model.hpp"

namespace son {

struct TrainConfig {
  int epochs = 1;
  double lr = 1e-3;

  // Scheduler: lr * factor^k, k = completed intervals after the activation epoch.
  double sched_factor = 1.0;
  int sched_interval = 0;
  int sched_activation = 0;

  int batch_size = 0;  // 0 = full dataset, one optimizer step per epoch

  enum class Optimizer { Adam, Sgd };
  Optimizer optimizer = Optimizer::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;

  // Projection P_Theta: clamp after each update; defaults are unbounded.
  double proj_lo = -std::numeric_limits<double>::infinity();
  double proj_hi = std::numeric_limits<double>::infinity();

  bool running_cost = false;  // r == 0 everywhere; reserved switch

  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs; 0 = off

  // Deterministic accumulation granularity; gradients are summed per block and
  // blocks merged in index order, so results do not depend on the worker count.
  int block_size = 512;
  int workers = 0;  // 0 = hardware concurrency capped by SON_THREADS

  // Force the per-sample reference implementation even when the batched dense
  // kernels apply (testing knob; results agree to roundoff).
  bool force_reference_path = false;
};

double lr_at(int epoch, const TrainConfig& cfg);

int resolve_worker_count(int requested);

/// Gradients shaped like the trainable state.
struct ModelGrads {
  BranchParams branch;
  StackParams trunk;
  double b0 = 0.0;
};

ModelGrads zero_grads_like(const SonModel& model);

/// Moment accumulators parallel to the flattened tensor list plus the bias.
struct OptimizerState {
  std::vector<Tensor> m, v;
  double m_b0 = 0, v_b0 = 0;
  long step = 0;
};

/// Tensor views over the trainable state in a fixed order (branch drift,
/// branch diffusion, trunk); parameter-free layers contribute empty tensors.
std::vector<Tensor*> tensor_refs(ParameterSet& params);
std::vector<const Tensor*> tensor_refs(const ModelGrads& grads);
std::vector<std::string> tensor_names(const SonModel& model);

std::vector<Tensor*> tensor_refs(BaselineModel& model);
std::vector<const Tensor*> tensor_refs(const BaselineGrads& grads);
std::vector<std::string> tensor_names(const BaselineModel& model);

/// One optimizer update over parallel (param, grad) lists plus the scalar bias.
void optimizer_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                    double* b0, double b0_grad, OptimizerState& state, double lr,
                    const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0;
  double lr = 0;
  double wall_ms = 0;
  double ham_grad_norm = 0;  // L2 norm of the batch-mean branch gradient
};

struct History {
  std::vector<EpochRecord> epochs;
  long optimizer_steps = 0;
  double total_wall_ms = 0;
};

void save_history_csv(const History& history, const std::string& path);

using CheckpointHook = std::function<void(int epoch)>;

History train_son(SonModel& model, const OperatorDataset& dataset, const TrainConfig& cfg,
                  const CheckpointHook& checkpoint = nullptr);

History train_baseline(BaselineModel& model, const OperatorDataset& dataset,
                       const TrainConfig& cfg, const CheckpointHook& checkpoint = nullptr);

}  // namespace son

#endif  // SON_TRAINING_HPP
