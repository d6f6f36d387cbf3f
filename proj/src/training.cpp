#include "son/training.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "son/csv.hpp"
#include "son/errors.hpp"

namespace son {

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ContractError("lr_at: negative epoch");
  if (cfg.sched_interval <= 0 || cfg.sched_factor == 1.0 || epoch < cfg.sched_activation)
    return cfg.lr;
  int k = (epoch - cfg.sched_activation) / cfg.sched_interval;
  return cfg.lr * std::pow(cfg.sched_factor, k);
}

int resolve_worker_count(int requested) {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  int n = requested > 0 ? requested : hw;
  if (const char* env = std::getenv("SON_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return std::max(1, n);
}

namespace {

template <class F>
void visit_branch(BranchParams& bp, F&& f) {
  for (auto& stack : bp.drift)
    for (auto& lp : stack) {
      f(lp.weight);
      f(lp.bias);
    }
  for (auto& t : bp.diffusion_vec) f(t);
  for (auto& stack : bp.diffusion_net)
    for (auto& lp : stack) {
      f(lp.weight);
      f(lp.bias);
    }
}

template <class F>
void visit_stack(StackParams& sp, F&& f) {
  for (auto& lp : sp) {
    f(lp.weight);
    f(lp.bias);
  }
}

void add_branch(BranchParams& into, const BranchParams& from) {
  for (std::size_t s = 0; s < from.drift.size(); ++s)
    for (std::size_t l = 0; l < from.drift[s].size(); ++l) {
      if (from.drift[s][l].weight.size()) into.drift[s][l].weight += from.drift[s][l].weight;
      if (from.drift[s][l].bias.size()) into.drift[s][l].bias += from.drift[s][l].bias;
    }
  for (std::size_t s = 0; s < from.diffusion_vec.size(); ++s)
    into.diffusion_vec[s] += from.diffusion_vec[s];
  for (std::size_t s = 0; s < from.diffusion_net.size(); ++s)
    for (std::size_t l = 0; l < from.diffusion_net[s].size(); ++l) {
      if (from.diffusion_net[s][l].weight.size())
        into.diffusion_net[s][l].weight += from.diffusion_net[s][l].weight;
      if (from.diffusion_net[s][l].bias.size())
        into.diffusion_net[s][l].bias += from.diffusion_net[s][l].bias;
    }
}

void add_stack(StackParams& into, const StackParams& from) {
  for (std::size_t l = 0; l < from.size(); ++l) {
    if (from[l].weight.size()) into[l].weight += from[l].weight;
    if (from[l].bias.size()) into[l].bias += from[l].bias;
  }
}

Tensor sample_target(const OperatorSample& s, int d_out) {
  Tensor t({d_out});
  for (int d = 0; d < d_out; ++d) t[d] = s.target_noisy[static_cast<std::size_t>(d)];
  return t;
}

Tensor sample_query(const OperatorSample& s, int y_dim) {
  Tensor y({y_dim});
  for (int d = 0; d < y_dim; ++d) y[d] = s.y[static_cast<std::size_t>(d)];
  return y;
}

// Fixed-size blocks processed by a worker pool; results land in per-block
// slots and are merged in index order, so the reduction is identical for any
// worker count.
void run_blocks(int n_blocks, int workers, const std::function<void(int)>& body) {
  if (workers <= 1 || n_blocks <= 1) {
    for (int b = 0; b < n_blocks; ++b) body(b);
    return;
  }
  std::atomic<int> next{0};
  auto work = [&]() {
    while (true) {
      int b = next.fetch_add(1);
      if (b >= n_blocks) return;
      body(b);
    }
  };
  std::vector<std::thread> pool;
  int n = std::min(workers, n_blocks);
  pool.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pool.emplace_back(work);
  for (auto& t : pool) t.join();
}

double branch_grad_norm(const ModelGrads& g) {
  double s = 0;
  for (const auto& stack : g.branch.drift)
    for (const auto& lp : stack) s += lp.weight.squared_norm() + lp.bias.squared_norm();
  for (const auto& t : g.branch.diffusion_vec) s += t.squared_norm();
  for (const auto& stack : g.branch.diffusion_net)
    for (const auto& lp : stack) s += lp.weight.squared_norm() + lp.bias.squared_norm();
  return std::sqrt(s);
}

void adam_update(double& theta, double g, double& m, double& v, double lr, long step,
                 const TrainConfig& cfg) {
  m = cfg.beta1 * m + (1 - cfg.beta1) * g;
  v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
  double mhat = m / (1 - std::pow(cfg.beta1, static_cast<double>(step)));
  double vhat = v / (1 - std::pow(cfg.beta2, static_cast<double>(step)));
  theta -= lr * mhat / (std::sqrt(vhat) + cfg.eps_adam);
}

// ---------------------------------------------------------------------------
// Batched dense kernels. Dense-only stacks over a block of samples turn the
// per-sample matvec / outer-product work into cache-friendly matrix products;
// the math is identical to the per-sample path up to summation order.
// ---------------------------------------------------------------------------

bool all_dense(const StackSpec& specs) {
  for (const auto& s : specs)
    if (s.kind != LayerKind::Dense) return false;
  return !specs.empty();
}

bool son_batched_supported(const SonModel& model) {
  const BranchConfig& b = model.cfg.branch;
  return b.pre_projection.empty() && b.post_projection.empty() && all_dense(b.drift_stack) &&
         b.diffusion_mode == DiffusionMode::PerStepVector && all_dense(model.cfg.trunk.stack);
}

// C (k x m) = A (k x n) * B^T (m x n) + bias, i.e. rows of A against rows of B.
void gemm_abT_bias(const Tensor& a, const Tensor& b, const Tensor& bias, Tensor& c) {
  const int k = a.dim(0), n = a.dim(1), m = b.dim(0);
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  for (int s = 0; s < k; ++s) {
    const double* arow = ap + static_cast<std::size_t>(s) * n;
    double* crow = cp + static_cast<std::size_t>(s) * m;
    for (int i = 0; i < m; ++i) {
      const double* brow = bp + static_cast<std::size_t>(i) * n;
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      int j = 0;
      for (; j + 4 <= n; j += 4) {
        s0 += arow[j] * brow[j];
        s1 += arow[j + 1] * brow[j + 1];
        s2 += arow[j + 2] * brow[j + 2];
        s3 += arow[j + 3] * brow[j + 3];
      }
      double acc = (s0 + s1) + (s2 + s3);
      for (; j < n; ++j) acc += arow[j] * brow[j];
      crow[i] = bias[i] + acc;
    }
  }
}

// C (k x n) = A (k x m) * B (m x n): rows of A through the rows of B (axpy form).
void gemm_ab(const Tensor& a, const Tensor& b, Tensor& c) {
  const int k = a.dim(0), m = a.dim(1), n = b.dim(1);
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  for (int s = 0; s < k; ++s) {
    const double* arow = ap + static_cast<std::size_t>(s) * m;
    double* crow = cp + static_cast<std::size_t>(s) * n;
    std::fill(crow, crow + n, 0.0);
    for (int i = 0; i < m; ++i) {
      const double ai = arow[i];
      if (ai == 0.0) continue;
      const double* brow = bp + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += ai * brow[j];
    }
  }
}

// C (m x n) += A^T (k x m) * B (k x n): rank-k update, axpy per (sample, row).
void gemm_aTb_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const int k = a.dim(0), m = a.dim(1), n = b.dim(1);
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  for (int s = 0; s < k; ++s) {
    const double* arow = ap + static_cast<std::size_t>(s) * m;
    const double* brow = bp + static_cast<std::size_t>(s) * n;
    for (int i = 0; i < m; ++i) {
      const double ai = arow[i];
      if (ai == 0.0) continue;
      double* crow = cp + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += ai * brow[j];
    }
  }
}

struct BatchedStackWork {
  std::vector<Tensor> acts;  // L+1 activations, acts[0] = input (k x w0)
  std::vector<Tensor> pre;   // L pre-activation matrices
};

// Forward a dense stack over a block; activations and pre-activations kept.
void batched_stack_forward(const StackSpec& specs, const StackParams& params, Tensor input,
                           BatchedStackWork& work) {
  const int k = input.dim(0);
  work.acts.assign(specs.size() + 1, Tensor());
  work.pre.assign(specs.size(), Tensor());
  work.acts[0] = std::move(input);
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const LayerSpec& spec = specs[l];
    Tensor pre({k, spec.out_width});
    gemm_abT_bias(work.acts[l], params[l].weight, params[l].bias, pre);
    Tensor act({k, spec.out_width});
    for (int i = 0; i < pre.size(); ++i) act[i] = apply_activation(spec.activation, pre[i]);
    work.pre[l] = std::move(pre);
    work.acts[l + 1] = std::move(act);
  }
}

// Backward over the block: parameter cotangents accumulate into grad_accum,
// the input cotangent is returned.
Tensor batched_stack_vjp_acc(const StackSpec& specs, const StackParams& params,
                             const BatchedStackWork& work, Tensor v, StackParams& grad_accum) {
  const int k = v.dim(0);
  for (int l = static_cast<int>(specs.size()) - 1; l >= 0; --l) {
    const LayerSpec& spec = specs[static_cast<std::size_t>(l)];
    const Tensor& pre = work.pre[static_cast<std::size_t>(l)];
    Tensor dz({k, spec.out_width});
    for (int i = 0; i < dz.size(); ++i)
      dz[i] = v[i] * activation_derivative(spec.activation, pre[i]);

    LayerParams& acc = grad_accum[static_cast<std::size_t>(l)];
    gemm_aTb_acc(dz, work.acts[static_cast<std::size_t>(l)], acc.weight);
    for (int s = 0; s < k; ++s)
      for (int i = 0; i < spec.out_width; ++i) acc.bias[i] += dz.at(s, i);

    Tensor prev({k, spec.in_width});
    gemm_ab(dz, params[static_cast<std::size_t>(l)].weight, prev);
    v = std::move(prev);
  }
  return v;
}

}  // namespace

ModelGrads zero_grads_like(const SonModel& model) {
  ModelGrads g;
  g.branch = zero_branch_params(model.cfg.branch, model.cfg.input_shape);
  g.trunk = zero_stack_params(model.cfg.trunk.stack);
  g.b0 = 0;
  return g;
}

std::vector<Tensor*> tensor_refs(ParameterSet& params) {
  std::vector<Tensor*> out;
  visit_branch(params.branch, [&](Tensor& t) { out.push_back(&t); });
  visit_stack(params.trunk, [&](Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<const Tensor*> tensor_refs(const ModelGrads& grads) {
  std::vector<const Tensor*> out;
  visit_branch(const_cast<BranchParams&>(grads.branch), [&](Tensor& t) { out.push_back(&t); });
  visit_stack(const_cast<StackParams&>(grads.trunk), [&](Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<std::string> tensor_names(const SonModel& model) {
  std::vector<std::string> names;
  const auto& b = model.params.branch;
  for (std::size_t s = 0; s < b.drift.size(); ++s)
    for (std::size_t l = 0; l < b.drift[s].size(); ++l) {
      names.push_back("branch.step" + std::to_string(s) + ".drift" + std::to_string(l) + ".weight");
      names.push_back("branch.step" + std::to_string(s) + ".drift" + std::to_string(l) + ".bias");
    }
  for (std::size_t s = 0; s < b.diffusion_vec.size(); ++s)
    names.push_back("branch.step" + std::to_string(s) + ".diffusion");
  for (std::size_t s = 0; s < b.diffusion_net.size(); ++s)
    for (std::size_t l = 0; l < b.diffusion_net[s].size(); ++l) {
      names.push_back("branch.step" + std::to_string(s) + ".sigma" + std::to_string(l) + ".weight");
      names.push_back("branch.step" + std::to_string(s) + ".sigma" + std::to_string(l) + ".bias");
    }
  for (std::size_t l = 0; l < model.params.trunk.size(); ++l) {
    names.push_back("trunk.layer" + std::to_string(l) + ".weight");
    names.push_back("trunk.layer" + std::to_string(l) + ".bias");
  }
  return names;
}

std::vector<Tensor*> tensor_refs(BaselineModel& model) {
  std::vector<Tensor*> out;
  visit_stack(model.branch_params, [&](Tensor& t) { out.push_back(&t); });
  visit_stack(model.trunk_params, [&](Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<const Tensor*> tensor_refs(const BaselineGrads& grads) {
  std::vector<const Tensor*> out;
  visit_stack(const_cast<StackParams&>(grads.branch), [&](Tensor& t) { out.push_back(&t); });
  visit_stack(const_cast<StackParams&>(grads.trunk), [&](Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<std::string> tensor_names(const BaselineModel& model) {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < model.branch_params.size(); ++l) {
    names.push_back("branch.layer" + std::to_string(l) + ".weight");
    names.push_back("branch.layer" + std::to_string(l) + ".bias");
  }
  for (std::size_t l = 0; l < model.trunk_params.size(); ++l) {
    names.push_back("trunk.layer" + std::to_string(l) + ".weight");
    names.push_back("trunk.layer" + std::to_string(l) + ".bias");
  }
  return names;
}

void optimizer_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                    double* b0, double b0_grad, OptimizerState& state, double lr,
                    const TrainConfig& cfg) {
  if (params.size() != grads.size()) throw ContractError("optimizer_step: param/grad count mismatch");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!grads[i]->all_finite())
      throw NumericError("optimizer_step: non-finite gradient in tensor " + std::to_string(i));
  if (!std::isfinite(b0_grad)) throw NumericError("optimizer_step: non-finite bias gradient");

  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    if (p.size() == 0) continue;
    if (cfg.optimizer == TrainConfig::Optimizer::Sgd) {
      for (int j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
    } else {
      Tensor& m = state.m[i];
      Tensor& v = state.v[i];
      for (int j = 0; j < p.size(); ++j) adam_update(p[j], g[j], m[j], v[j], lr, state.step, cfg);
    }
    if (std::isfinite(cfg.proj_lo) || std::isfinite(cfg.proj_hi))
      for (int j = 0; j < p.size(); ++j) p[j] = std::clamp(p[j], cfg.proj_lo, cfg.proj_hi);
  }
  if (b0) {
    if (cfg.optimizer == TrainConfig::Optimizer::Sgd) {
      *b0 -= lr * b0_grad;
    } else {
      adam_update(*b0, b0_grad, state.m_b0, state.v_b0, lr, state.step, cfg);
    }
    if (std::isfinite(cfg.proj_lo) || std::isfinite(cfg.proj_hi))
      *b0 = std::clamp(*b0, cfg.proj_lo, cfg.proj_hi);
  }
}

void save_history_csv(const History& history, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("save_history_csv: cannot write " + path);
  f << "epoch,mean_loss,lr,wall_ms\n";
  for (const auto& e : history.epochs)
    f << e.epoch << "," << g17(e.mean_loss) << "," << g17(e.lr) << "," << g17(e.wall_ms) << "\n";
}

namespace {

struct BlockResult {
  ModelGrads grads;
  double loss_sum = 0;
};

// Whole-block SON pass on the batched dense kernels. Semantics match the
// per-sample path: same per-sample noise streams, same loss, h-scaled
// Hamiltonian gradients accumulated into `accum`.
double son_batched_block(const SonModel& model, const OperatorDataset& ds, int lo, int hi,
                         int epoch, const RandomStream& root, ModelGrads& accum) {
  const int k = hi - lo;
  const int m = model.cfg.p;
  const int d_out = model.cfg.d_out;
  const int y_dim = ds.y_dim;
  const BranchConfig& bcfg = model.cfg.branch;
  const int n_steps = bcfg.steps;
  const double h = bcfg.step_size();
  const double sqrt_h = std::sqrt(h);

  Tensor x({k, m});
  Tensor y_in({k, y_dim});
  std::vector<RandomStream> streams;
  streams.reserve(static_cast<std::size_t>(k));
  for (int s = 0; s < k; ++s) {
    const OperatorSample& smp = ds.samples[static_cast<std::size_t>(lo + s)];
    const Tensor& u = ds.function_of(smp);
    for (int j = 0; j < m; ++j) x.at(s, j) = u[j];
    for (int d = 0; d < y_dim; ++d) y_in.at(s, d) = smp.y[static_cast<std::size_t>(d)];
    streams.push_back(root.substream(stream_tag::kTrain, static_cast<std::uint64_t>(epoch),
                                     static_cast<std::uint64_t>(lo + s)));
  }

  // Forward SDE.
  std::vector<BatchedStackWork> works(static_cast<std::size_t>(n_steps));
  std::vector<Tensor> omegas(static_cast<std::size_t>(n_steps));
  for (int n = 0; n < n_steps; ++n) {
    batched_stack_forward(bcfg.drift_stack, model.params.branch.drift[static_cast<std::size_t>(n)],
                          std::move(x), works[static_cast<std::size_t>(n)]);
    const Tensor& mu = works[static_cast<std::size_t>(n)].acts.back();
    const Tensor& prev = works[static_cast<std::size_t>(n)].acts.front();
    const Tensor& sigma = model.params.branch.diffusion_vec[static_cast<std::size_t>(n)];

    Tensor omega({k, m});
    for (int s = 0; s < k; ++s) {
      double* row = omega.data() + static_cast<std::size_t>(s) * m;
      for (int j = 0; j < m; ++j) row[j] = streams[static_cast<std::size_t>(s)].normal();
    }
    Tensor next({k, m});
    if (sigma.size() == 1) {
      const double sv = sigma[0];
      for (int i = 0; i < next.size(); ++i) next[i] = prev[i] + h * mu[i] + sqrt_h * sv * omega[i];
    } else {
      for (int s = 0; s < k; ++s)
        for (int j = 0; j < m; ++j)
          next.at(s, j) = prev.at(s, j) + h * mu.at(s, j) + sqrt_h * sigma[j] * omega.at(s, j);
    }
    if (!next.all_finite())
      throw NumericError("train_son: non-finite state at step " + std::to_string(n));
    omegas[static_cast<std::size_t>(n)] = std::move(omega);
    x = std::move(next);
  }
  Tensor beta = std::move(x);  // {k, m}

  // Trunk and loss terminal.
  BatchedStackWork twork;
  batched_stack_forward(model.cfg.trunk.stack, model.params.trunk, std::move(y_in), twork);
  const Tensor& tau = twork.acts.back();  // {k, p * d_out}

  Tensor b_adj({k, m});
  Tensor gtau({k, m * d_out});
  double loss_sum = 0;
  for (int s = 0; s < k; ++s) {
    const OperatorSample& smp = ds.samples[static_cast<std::size_t>(lo + s)];
    for (int d = 0; d < d_out; ++d) {
      const int off = d * m;
      double value = model.params.b0;
      for (int j = 0; j < m; ++j) value += beta.at(s, j) * tau.at(s, off + j);
      double r = value - smp.target_noisy[static_cast<std::size_t>(d)];
      loss_sum += r * r / d_out;
      double e = 2.0 * r / d_out;
      accum.b0 += e;
      for (int j = 0; j < m; ++j) {
        b_adj.at(s, j) += e * tau.at(s, off + j);
        gtau.at(s, off + j) = e * beta.at(s, j);
      }
    }
  }
  batched_stack_vjp_acc(model.cfg.trunk.stack, model.params.trunk, twork, std::move(gtau),
                        accum.trunk);

  // Backward adjoint sweep.
  for (int n = n_steps - 1; n >= 0; --n) {
    const Tensor& omega = omegas[static_cast<std::size_t>(n)];
    Tensor& gsig = accum.branch.diffusion_vec[static_cast<std::size_t>(n)];
    if (gsig.size() == 1) {
      double g = 0;
      for (int i = 0; i < b_adj.size(); ++i) g += b_adj[i] * omega[i];
      gsig[0] += sqrt_h * g;
    } else {
      for (int s = 0; s < k; ++s)
        for (int j = 0; j < m; ++j) gsig[j] += sqrt_h * b_adj.at(s, j) * omega.at(s, j);
    }

    Tensor hb = b_adj;
    hb *= h;
    Tensor gin = batched_stack_vjp_acc(bcfg.drift_stack,
                                       model.params.branch.drift[static_cast<std::size_t>(n)],
                                       works[static_cast<std::size_t>(n)], std::move(hb),
                                       accum.branch.drift[static_cast<std::size_t>(n)]);
    b_adj += gin;
  }
  return loss_sum;
}

bool baseline_batched_supported(const BaselineModel& model) {
  return all_dense(model.cfg.branch) && all_dense(model.cfg.trunk.stack);
}

double baseline_batched_block(const BaselineModel& model, const OperatorDataset& ds, int lo,
                              int hi, BaselineGrads& accum) {
  const int k = hi - lo;
  const int p = model.cfg.p;
  const int d_out = model.cfg.d_out;
  const int y_dim = ds.y_dim;
  const int in_w = model.cfg.branch.front().in_width;

  Tensor x({k, in_w});
  Tensor y_in({k, y_dim});
  for (int s = 0; s < k; ++s) {
    const OperatorSample& smp = ds.samples[static_cast<std::size_t>(lo + s)];
    const Tensor& u = ds.function_of(smp);
    for (int j = 0; j < in_w; ++j) x.at(s, j) = u[j];
    for (int d = 0; d < y_dim; ++d) y_in.at(s, d) = smp.y[static_cast<std::size_t>(d)];
  }

  BatchedStackWork bwork, twork;
  batched_stack_forward(model.cfg.branch, model.branch_params, std::move(x), bwork);
  batched_stack_forward(model.cfg.trunk.stack, model.trunk_params, std::move(y_in), twork);
  const Tensor& beta = bwork.acts.back();
  const Tensor& tau = twork.acts.back();

  Tensor gbeta({k, p});
  Tensor gtau({k, p * d_out});
  double loss_sum = 0;
  for (int s = 0; s < k; ++s) {
    const OperatorSample& smp = ds.samples[static_cast<std::size_t>(lo + s)];
    for (int d = 0; d < d_out; ++d) {
      const int off = d * p;
      double value = model.b0;
      for (int j = 0; j < p; ++j) value += beta.at(s, j) * tau.at(s, off + j);
      double r = value - smp.target_noisy[static_cast<std::size_t>(d)];
      loss_sum += r * r / d_out;
      double e = 2.0 * r / d_out;
      accum.b0 += e;
      for (int j = 0; j < p; ++j) {
        gbeta.at(s, j) += e * tau.at(s, off + j);
        gtau.at(s, off + j) = e * beta.at(s, j);
      }
    }
  }
  batched_stack_vjp_acc(model.cfg.branch, model.branch_params, bwork, std::move(gbeta),
                        accum.branch);
  batched_stack_vjp_acc(model.cfg.trunk.stack, model.trunk_params, twork, std::move(gtau),
                        accum.trunk);
  return loss_sum;
}

}  // namespace

History train_son(SonModel& model, const OperatorDataset& dataset, const TrainConfig& cfg,
                  const CheckpointHook& checkpoint) {
  if (dataset.size() == 0) throw ContractError("train_son: empty dataset");
  const int n = dataset.size();
  const int d_out = model.cfg.d_out;
  const int y_dim = dataset.y_dim;
  const int workers = resolve_worker_count(cfg.workers);
  const bool freeze_diffusion = !model.cfg.branch.train_diffusion;

  RandomStream root(cfg.seed);
  OptimizerState state;
  History history;
  const bool batched = son_batched_supported(model) && !cfg.force_reference_path;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    double lr = lr_at(epoch, cfg);
    double loss_sum = 0;
    double norm_sum = 0;
    int batch_count = 0;

    const int batch = cfg.batch_size > 0 ? cfg.batch_size : n;
    for (int start = 0; start < n; start += batch) {
      const int end = std::min(n, start + batch);
      const int count = end - start;
      const int block = std::max(1, cfg.block_size);
      const int n_blocks = (count + block - 1) / block;

      std::vector<BlockResult> results(static_cast<std::size_t>(n_blocks));
      run_blocks(n_blocks, workers, [&](int bi) {
        BlockResult res;
        res.grads = zero_grads_like(model);
        const int lo = start + bi * block;
        const int hi = std::min(end, lo + block);
        if (batched) {
          res.loss_sum = son_batched_block(model, dataset, lo, hi, epoch, root, res.grads);
        } else {
          for (int idx = lo; idx < hi; ++idx) {
            const OperatorSample& s = dataset.samples[static_cast<std::size_t>(idx)];
            RandomStream rng = root.substream(stream_tag::kTrain, static_cast<std::uint64_t>(epoch),
                                              static_cast<std::uint64_t>(idx));
            Prediction pred = predict(model, dataset.function_of(s),
                                      sample_query(s, y_dim), rng, true, true);
            LossTerminal lt = loss_and_terminal(pred, sample_target(s, d_out), model);
            res.loss_sum += lt.phi;

            AdjointPath path = backward_adjoint(*pred.trajectory, model.params.branch,
                                                model.cfg.branch, lt.b_beta);
            add_branch(res.grads.branch, path.grads);

            stack_vjp_accumulate(model.cfg.trunk.stack, model.params.trunk, *pred.trunk_caches,
                                 lt.grad_tau, res.grads.trunk);
            res.grads.b0 += lt.grad_b0;
          }
        }
        results[static_cast<std::size_t>(bi)] = std::move(res);
      });

      ModelGrads grads = zero_grads_like(model);
      double batch_loss = 0;
      for (const auto& r : results) {
        add_branch(grads.branch, r.grads.branch);
        add_stack(grads.trunk, r.grads.trunk);
        grads.b0 += r.grads.b0;
        batch_loss += r.loss_sum;
      }
      const double scale = 1.0 / count;
      visit_branch(grads.branch, [&](Tensor& t) { t *= scale; });
      visit_stack(grads.trunk, [&](Tensor& t) { t *= scale; });
      grads.b0 *= scale;
      if (freeze_diffusion) {
        for (auto& t : grads.branch.diffusion_vec) t.fill(0);
        for (auto& stack : grads.branch.diffusion_net)
          for (auto& lp : stack) {
            lp.weight.fill(0);
            lp.bias.fill(0);
          }
      }

      norm_sum += branch_grad_norm(grads);
      loss_sum += batch_loss;
      ++batch_count;

      optimizer_step(tensor_refs(model.params), tensor_refs(grads), &model.params.b0, grads.b0,
                     state, lr, cfg);
      ++history.optimizer_steps;
    }

    double mean_loss = loss_sum / n;
    if (!std::isfinite(mean_loss))
      throw NumericError("train_son: mean loss diverged at epoch " + std::to_string(epoch));

    auto t1 = std::chrono::steady_clock::now();
    double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    history.epochs.push_back({epoch, mean_loss, lr, ms, norm_sum / batch_count});
    history.total_wall_ms += ms;
    if (checkpoint && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
      checkpoint(epoch);
  }
  return history;
}

History train_baseline(BaselineModel& model, const OperatorDataset& dataset,
                       const TrainConfig& cfg, const CheckpointHook& checkpoint) {
  if (dataset.size() == 0) throw ContractError("train_baseline: empty dataset");
  const int n = dataset.size();
  const int d_out = model.cfg.d_out;
  const int y_dim = dataset.y_dim;
  const int workers = resolve_worker_count(cfg.workers);

  OptimizerState state;
  History history;
  const bool batched = baseline_batched_supported(model) && !cfg.force_reference_path;

  struct BlockRes {
    BaselineGrads grads;
    double loss_sum = 0;
  };

  auto zero_grads = [&]() {
    BaselineGrads g;
    g.branch = zero_stack_params(model.cfg.branch);
    g.trunk = zero_stack_params(model.cfg.trunk.stack);
    g.b0 = 0;
    return g;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    double lr = lr_at(epoch, cfg);
    double loss_sum = 0;
    int batch_count = 0;

    const int batch = cfg.batch_size > 0 ? cfg.batch_size : n;
    for (int start = 0; start < n; start += batch) {
      const int end = std::min(n, start + batch);
      const int count = end - start;
      const int block = std::max(1, cfg.block_size);
      const int n_blocks = (count + block - 1) / block;

      std::vector<BlockRes> results(static_cast<std::size_t>(n_blocks));
      run_blocks(n_blocks, workers, [&](int bi) {
        BlockRes res;
        res.grads = zero_grads();
        const int lo = start + bi * block;
        const int hi = std::min(end, lo + block);
        if (batched) {
          res.loss_sum = baseline_batched_block(model, dataset, lo, hi, res.grads);
        } else {
          BaselineGrads sample_grads;
          for (int idx = lo; idx < hi; ++idx) {
            const OperatorSample& s = dataset.samples[static_cast<std::size_t>(idx)];
            res.loss_sum += baseline_loss_and_grads(model, dataset.function_of(s),
                                                    sample_query(s, y_dim),
                                                    sample_target(s, d_out), sample_grads);
            add_stack(res.grads.branch, sample_grads.branch);
            add_stack(res.grads.trunk, sample_grads.trunk);
            res.grads.b0 += sample_grads.b0;
          }
        }
        results[static_cast<std::size_t>(bi)] = std::move(res);
      });

      BaselineGrads grads = zero_grads();
      double batch_loss = 0;
      for (const auto& r : results) {
        add_stack(grads.branch, r.grads.branch);
        add_stack(grads.trunk, r.grads.trunk);
        grads.b0 += r.grads.b0;
        batch_loss += r.loss_sum;
      }
      const double scale = 1.0 / count;
      for (auto& lp : grads.branch) {
        lp.weight *= scale;
        lp.bias *= scale;
      }
      for (auto& lp : grads.trunk) {
        lp.weight *= scale;
        lp.bias *= scale;
      }
      grads.b0 *= scale;
      loss_sum += batch_loss;
      ++batch_count;

      optimizer_step(tensor_refs(model), tensor_refs(grads), &model.b0, grads.b0, state, lr, cfg);
      ++history.optimizer_steps;
    }

    double mean_loss = loss_sum / n;
    if (!std::isfinite(mean_loss))
      throw NumericError("train_baseline: mean loss diverged at epoch " + std::to_string(epoch));

    auto t1 = std::chrono::steady_clock::now();
    double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    history.epochs.push_back({epoch, mean_loss, lr, ms, 0.0});
    history.total_wall_ms += ms;
    if (checkpoint && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
      checkpoint(epoch);
  }
  return history;
}

}  // namespace son
