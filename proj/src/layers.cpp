#include "son/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "son/errors.hpp"

namespace son {

namespace {

int pool_out(int in, int window, int stride) {
  if (in < window) return 0;
  return (in - window) / stride + 1;
}

void check_input_shape(const LayerSpec& spec, const Tensor& x) {
  if (x.size() != spec.in_size())
    throw ShapeError("layer_forward: input size " + std::to_string(x.size()) +
                     " does not match spec in_size " + std::to_string(spec.in_size()));
  if (!x.all_finite()) throw NumericError("layer_forward: non-finite input");
}

}  // namespace

int LayerSpec::out_rows() const {
  switch (kind) {
    case LayerKind::Conv2d:
      return in_rows;  // same padding, stride 1
    case LayerKind::MaxPool2d:
      return pool_out(in_rows, pool, pool_stride > 0 ? pool_stride : pool);
    case LayerKind::Dropout:
      return in_rows;
    default:
      return 0;
  }
}

int LayerSpec::out_cols() const {
  switch (kind) {
    case LayerKind::Conv2d:
      return in_cols;
    case LayerKind::MaxPool2d:
      return pool_out(in_cols, pool, pool_stride > 0 ? pool_stride : pool);
    case LayerKind::Dropout:
      return in_cols;
    default:
      return 0;
  }
}

std::vector<int> LayerSpec::in_shape() const {
  if (kind == LayerKind::Dense) return {in_width};
  return {in_rows, in_cols};
}

std::vector<int> LayerSpec::out_shape() const {
  switch (kind) {
    case LayerKind::Dense:
      return {out_width};
    case LayerKind::Flatten:
      return {in_rows * in_cols};
    case LayerKind::Dropout:
      if (in_cols <= 0) return {in_rows};
      return {in_rows, in_cols};
    default:
      return {out_rows(), out_cols()};
  }
}

int LayerSpec::in_size() const {
  if (kind == LayerKind::Dense) return in_width;
  return in_rows * (in_cols > 0 ? in_cols : 1);
}

int LayerSpec::out_size() const {
  int n = 1;
  for (int d : out_shape()) n *= d;
  return n;
}

LayerSpec dense_spec(int in, int out, Activation act) {
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.activation = act;
  s.in_width = in;
  s.out_width = out;
  return s;
}

LayerSpec conv2d_spec(int rows, int cols, int kernel, Activation act) {
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("conv2d_spec: kernel must be odd and >= 1");
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.activation = act;
  s.in_rows = rows;
  s.in_cols = cols;
  s.kernel = kernel;
  return s;
}

LayerSpec maxpool2d_spec(int rows, int cols, int window, int stride) {
  if (window < 1) throw ConfigError("maxpool2d_spec: window must be >= 1");
  LayerSpec s;
  s.kind = LayerKind::MaxPool2d;
  s.in_rows = rows;
  s.in_cols = cols;
  s.pool = window;
  s.pool_stride = stride;
  return s;
}

LayerSpec dropout_spec(int rows, int cols, double rate) {
  if (rate < 0.0 || rate > 1.0) throw ConfigError("dropout_spec: rate must lie in [0,1]");
  LayerSpec s;
  s.kind = LayerKind::Dropout;
  s.in_rows = rows;
  s.in_cols = cols;
  s.dropout_rate = rate;
  return s;
}

LayerSpec flatten_spec(int rows, int cols) {
  LayerSpec s;
  s.kind = LayerKind::Flatten;
  s.in_rows = rows;
  s.in_cols = cols;
  return s;
}

double apply_activation(Activation act, double z) {
  switch (act) {
    case Activation::Relu:
      return z > 0.0 ? z : 0.0;
    case Activation::Sigmoid:
      return 1.0 / (1.0 + std::exp(-z));
    case Activation::Arctan:
      return std::atan(z);
    case Activation::Identity:
      return z;
  }
  return z;
}

double activation_derivative(Activation act, double z) {
  switch (act) {
    case Activation::Relu:
      return z > 0.0 ? 1.0 : 0.0;  // subgradient 0 at the kink
    case Activation::Sigmoid: {
      double s = 1.0 / (1.0 + std::exp(-z));
      return s * (1.0 - s);
    }
    case Activation::Arctan:
      return 1.0 / (1.0 + z * z);
    case Activation::Identity:
      return 1.0;
  }
  return 1.0;
}

LayerParams init_layer_params(const LayerSpec& spec, RandomStream& rng) {
  LayerParams p;
  switch (spec.kind) {
    case LayerKind::Dense: {
      p.weight = Tensor({spec.out_width, spec.in_width});
      p.bias = Tensor({spec.out_width});
      double bound = 1.0 / std::sqrt(static_cast<double>(spec.in_width));
      rng.fill_uniform(p.weight, -bound, bound);
      break;
    }
    case LayerKind::Conv2d: {
      p.weight = Tensor({spec.kernel, spec.kernel});
      p.bias = Tensor({1});
      double bound = 1.0 / std::sqrt(static_cast<double>(spec.kernel * spec.kernel));
      rng.fill_uniform(p.weight, -bound, bound);
      break;
    }
    default:
      break;  // parameter-free
  }
  return p;
}

LayerParams zero_layer_params(const LayerSpec& spec) {
  LayerParams p;
  if (spec.kind == LayerKind::Dense) {
    p.weight = Tensor({spec.out_width, spec.in_width});
    p.bias = Tensor({spec.out_width});
  } else if (spec.kind == LayerKind::Conv2d) {
    p.weight = Tensor({spec.kernel, spec.kernel});
    p.bias = Tensor({1});
  }
  return p;
}

namespace {

Tensor dense_forward(const LayerSpec& spec, const LayerParams& params, const Tensor& x,
                     ForwardCache* cache) {
  if (params.weight.dim(0) != spec.out_width || params.weight.dim(1) != spec.in_width)
    throw ShapeError("dense forward: weight shape does not match spec");
  Tensor pre({spec.out_width});
  const double* w = params.weight.data();
  const double* xv = x.data();
  const int in = spec.in_width;
  for (int i = 0; i < spec.out_width; ++i) {
    const double* row = w + static_cast<std::size_t>(i) * in;
    double s = params.bias[i];
    for (int j = 0; j < in; ++j) s += row[j] * xv[j];
    pre[i] = s;
  }
  Tensor y({spec.out_width});
  for (int i = 0; i < spec.out_width; ++i) y[i] = apply_activation(spec.activation, pre[i]);
  if (cache) {
    cache->input = x;
    cache->pre = std::move(pre);
  }
  return y;
}

Tensor conv2d_forward(const LayerSpec& spec, const LayerParams& params, const Tensor& x,
                      ForwardCache* cache) {
  const int R = spec.in_rows, C = spec.in_cols, K = spec.kernel, off = K / 2;
  if (params.weight.size() != K * K) throw ShapeError("conv2d forward: kernel shape mismatch");
  Tensor pre({R, C});
  const double b = params.bias[0];
  for (int r = 0; r < R; ++r) {
    for (int c = 0; c < C; ++c) {
      double s = b;
      for (int dr = 0; dr < K; ++dr) {
        int rr = r + dr - off;
        if (rr < 0 || rr >= R) continue;
        for (int dc = 0; dc < K; ++dc) {
          int cc = c + dc - off;
          if (cc < 0 || cc >= C) continue;
          s += params.weight[dr * K + dc] * x[rr * C + cc];
        }
      }
      pre.at(r, c) = s;
    }
  }
  Tensor y({R, C});
  for (int i = 0; i < y.size(); ++i) y[i] = apply_activation(spec.activation, pre[i]);
  if (cache) {
    cache->input = x;
    cache->pre = std::move(pre);
  }
  return y;
}

Tensor maxpool_forward(const LayerSpec& spec, const Tensor& x, ForwardCache* cache) {
  const int R = spec.in_rows, C = spec.in_cols, W = spec.pool;
  const int S = spec.pool_stride > 0 ? spec.pool_stride : W;
  const int OR = spec.out_rows(), OC = spec.out_cols();
  if (OR <= 0 || OC <= 0) throw ShapeError("maxpool forward: window larger than input");
  Tensor y({OR, OC});
  std::vector<int> argmax(static_cast<std::size_t>(OR) * OC);
  for (int orow = 0; orow < OR; ++orow) {
    for (int ocol = 0; ocol < OC; ++ocol) {
      int r0 = orow * S, c0 = ocol * S;
      double best = x[r0 * C + c0];
      int best_idx = r0 * C + c0;
      for (int dr = 0; dr < W; ++dr) {
        for (int dc = 0; dc < W; ++dc) {
          int idx = (r0 + dr) * C + (c0 + dc);
          if (x[idx] > best) {
            best = x[idx];
            best_idx = idx;
          }
        }
      }
      y.at(orow, ocol) = best;
      argmax[static_cast<std::size_t>(orow) * OC + ocol] = best_idx;
    }
  }
  if (cache) {
    cache->input = x;
    cache->argmax = std::move(argmax);
  }
  return y;
}

Tensor dropout_forward(const LayerSpec& spec, const Tensor& x, RandomStream* rng,
                       ForwardCache* cache, bool active) {
  Tensor y = x;
  Tensor mask(x.shape(), 1.0);
  if (active && spec.dropout_rate > 0.0) {
    if (!rng) throw ContractError("dropout forward: active dropout needs an rng");
    for (int i = 0; i < x.size(); ++i) {
      // Plain masking, no 1/(1-p) rescale: the surviving entries keep their
      // forward magnitude and the expected noise amplitude shrinks.
      if (rng->bernoulli(spec.dropout_rate)) {
        mask[i] = 0.0;
        y[i] = 0.0;
      }
    }
  }
  if (cache) {
    cache->input = x;
    cache->mask = std::move(mask);
  }
  return y;
}

}  // namespace

Tensor layer_forward(const LayerSpec& spec, const LayerParams& params, const Tensor& x,
                     RandomStream* rng, ForwardCache* cache, bool dropout_active) {
  check_input_shape(spec, x);
  switch (spec.kind) {
    case LayerKind::Dense:
      return dense_forward(spec, params, x, cache);
    case LayerKind::Conv2d:
      return conv2d_forward(spec, params, x, cache);
    case LayerKind::MaxPool2d:
      return maxpool_forward(spec, x, cache);
    case LayerKind::Dropout:
      return dropout_forward(spec, x, rng, cache, dropout_active);
    case LayerKind::Flatten: {
      if (cache) cache->input = x;
      return x.flattened();
    }
  }
  throw ContractError("layer_forward: unknown layer kind");
}

namespace {

// Core VJP: grad_input is overwritten, parameter cotangents are ADDED into
// grads (which must already have the layer's parameter shapes, possibly zero).
void layer_vjp_into(const LayerSpec& spec, const LayerParams& params, const ForwardCache& cache,
                    const Tensor& v, LayerParams& grads, Tensor& grad_input);

}  // namespace

VjpResult layer_vjp(const LayerSpec& spec, const LayerParams& params, const ForwardCache& cache,
                    const Tensor& v) {
  VjpResult res;
  res.grad_params = zero_layer_params(spec);
  layer_vjp_into(spec, params, cache, v, res.grad_params, res.grad_input);
  return res;
}

namespace {

void layer_vjp_into(const LayerSpec& spec, const LayerParams& params, const ForwardCache& cache,
                    const Tensor& v, LayerParams& grads, Tensor& grad_input) {
  if (v.size() != spec.out_size())
    throw ContractError("layer_vjp: cotangent size does not match layer output");
  switch (spec.kind) {
    case LayerKind::Dense: {
      if (cache.pre.size() != spec.out_width)
        throw ContractError("layer_vjp: cache does not match dense spec");
      const int in = spec.in_width, out = spec.out_width;
      grad_input = Tensor({in});
      double* gw = grads.weight.data();
      double* gin = grad_input.data();
      const double* w = params.weight.data();
      const double* xv = cache.input.data();
      for (int i = 0; i < out; ++i) {
        const double d = v[i] * activation_derivative(spec.activation, cache.pre[i]);
        grads.bias[i] += d;
        double* gw_row = gw + static_cast<std::size_t>(i) * in;
        const double* w_row = w + static_cast<std::size_t>(i) * in;
        for (int j = 0; j < in; ++j) {
          gw_row[j] += d * xv[j];
          gin[j] += d * w_row[j];
        }
      }
      break;
    }
    case LayerKind::Conv2d: {
      const int R = spec.in_rows, C = spec.in_cols, K = spec.kernel, off = K / 2;
      if (cache.pre.size() != R * C) throw ContractError("layer_vjp: cache does not match conv spec");
      Tensor dz({R, C});
      for (int i = 0; i < dz.size(); ++i)
        dz[i] = v[i] * activation_derivative(spec.activation, cache.pre[i]);
      grad_input = Tensor({R, C});
      double bsum = 0;
      for (int i = 0; i < dz.size(); ++i) bsum += dz[i];
      grads.bias[0] += bsum;
      for (int r = 0; r < R; ++r) {
        for (int c = 0; c < C; ++c) {
          const double d = dz.at(r, c);
          if (d == 0.0) continue;
          for (int dr = 0; dr < K; ++dr) {
            int rr = r + dr - off;
            if (rr < 0 || rr >= R) continue;
            for (int dc = 0; dc < K; ++dc) {
              int cc = c + dc - off;
              if (cc < 0 || cc >= C) continue;
              grads.weight[dr * K + dc] += d * cache.input[rr * C + cc];
              grad_input[rr * C + cc] += d * params.weight[dr * K + dc];
            }
          }
        }
      }
      break;
    }
    case LayerKind::MaxPool2d: {
      const int OR = spec.out_rows(), OC = spec.out_cols();
      if (static_cast<int>(cache.argmax.size()) != OR * OC)
        throw ContractError("layer_vjp: cache does not match pool spec");
      grad_input = Tensor({spec.in_rows, spec.in_cols});
      for (int i = 0; i < OR * OC; ++i) grad_input[cache.argmax[i]] += v[i];
      break;
    }
    case LayerKind::Dropout: {
      if (!cache.mask.same_shape(cache.input))
        throw ContractError("layer_vjp: dropout cache missing mask");
      grad_input = Tensor(cache.input.shape());
      for (int i = 0; i < v.size(); ++i) grad_input[i] = v[i] * cache.mask[i];
      break;
    }
    case LayerKind::Flatten: {
      grad_input = Tensor(cache.input.shape());
      std::copy(v.data(), v.data() + v.size(), grad_input.data());
      break;
    }
  }
}

}  // namespace

StackParams init_stack_params(const StackSpec& specs, RandomStream& rng) {
  StackParams out;
  out.reserve(specs.size());
  for (const auto& s : specs) out.push_back(init_layer_params(s, rng));
  return out;
}

StackParams zero_stack_params(const StackSpec& specs) {
  StackParams out;
  out.reserve(specs.size());
  for (const auto& s : specs) out.push_back(zero_layer_params(s));
  return out;
}

Tensor stack_forward(const StackSpec& specs, const StackParams& params, const Tensor& x,
                     RandomStream* rng, StackCaches* caches, bool dropout_active) {
  if (specs.empty()) throw ContractError("stack_forward: empty stack");
  if (specs.size() != params.size()) throw ContractError("stack_forward: spec/param count mismatch");
  if (caches) caches->resize(specs.size());
  Tensor cur = x;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    ForwardCache* c = caches ? &(*caches)[i] : nullptr;
    cur = layer_forward(specs[i], params[i], cur, rng, c, dropout_active);
  }
  return cur;
}

Tensor stack_vjp_accumulate(const StackSpec& specs, const StackParams& params,
                            const StackCaches& caches, const Tensor& v, StackParams& grad_accum) {
  if (specs.empty()) throw ContractError("stack_vjp_accumulate: empty stack");
  if (caches.size() != specs.size() || grad_accum.size() != specs.size())
    throw ContractError("stack_vjp_accumulate: cache/accumulator count mismatch");
  Tensor cur = v;
  Tensor next;
  for (int i = static_cast<int>(specs.size()) - 1; i >= 0; --i) {
    layer_vjp_into(specs[i], params[i], caches[i], cur, grad_accum[static_cast<std::size_t>(i)],
                   next);
    cur = std::move(next);
  }
  return cur;
}

StackVjpResult stack_vjp(const StackSpec& specs, const StackParams& params,
                         const StackCaches& caches, const Tensor& v) {
  if (specs.empty()) throw ContractError("stack_vjp: empty stack");
  if (caches.size() != specs.size()) throw ContractError("stack_vjp: cache count mismatch");
  StackVjpResult res;
  res.grad_params.resize(specs.size());
  Tensor cur = v;
  for (int i = static_cast<int>(specs.size()) - 1; i >= 0; --i) {
    VjpResult r = layer_vjp(specs[i], params[i], caches[i], cur);
    res.grad_params[i] = std::move(r.grad_params);
    cur = std::move(r.grad_input);
  }
  res.grad_input = std::move(cur);
  return res;
}

std::vector<int> stack_out_shape(const StackSpec& specs, const std::vector<int>& in_shape) {
  std::vector<int> shape = in_shape;
  for (const auto& s : specs) {
    int in_n = 1;
    for (int d : shape) in_n *= d;
    if (in_n != s.in_size())
      throw ConfigError("stack_out_shape: layer input size mismatch in chained stack");
    shape = s.out_shape();
  }
  return shape;
}

}  // namespace son
