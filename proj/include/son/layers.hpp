#ifndef SON_LAYERS_HPP
#define SON_LAYERS_HPP

#include <vector>

#include "son/rng.hpp"
#include "son/tensor.hpp"

namespace son {

enum class LayerKind { Dense, Conv2d, MaxPool2d, Dropout, Flatten };
enum class Activation { Relu, Sigmoid, Arctan, Identity };

/// Static description of one layer. Parameter shapes and the output shape
/// are functions of this spec alone.
struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  Activation activation = Activation::Identity;

  // Dense.
  int in_width = 0;
  int out_width = 0;

  // Conv2d / MaxPool2d / Flatten operate on a rows x cols single-channel grid.
  int in_rows = 0;
  int in_cols = 0;
  int kernel = 0;       // conv window, odd, "same" zero padding, stride 1
  int pool = 0;         // pool window
  int pool_stride = 0;  // 0 -> equals pool window

  double dropout_rate = 0.0;  // drop probability

  int out_rows() const;
  int out_cols() const;
  std::vector<int> out_shape() const;
  std::vector<int> in_shape() const;
  int out_size() const;
  int in_size() const;
};

LayerSpec dense_spec(int in, int out, Activation act);
LayerSpec conv2d_spec(int rows, int cols, int kernel, Activation act);
LayerSpec maxpool2d_spec(int rows, int cols, int window, int stride = 0);
LayerSpec dropout_spec(int rows, int cols, double rate);
LayerSpec flatten_spec(int rows, int cols);

/// Weight/bias storage; empty tensors for parameter-free layers.
struct LayerParams {
  Tensor weight;
  Tensor bias;
};

/// Everything the VJP needs from the matching forward call.
struct ForwardCache {
  Tensor input;             // layer input
  Tensor pre;               // pre-activation (dense/conv)
  Tensor mask;              // dropout mask (0/1)
  std::vector<int> argmax;  // flat input index per pool output cell
};

struct VjpResult {
  Tensor grad_input;
  LayerParams grad_params;
};

double apply_activation(Activation act, double z);
double activation_derivative(Activation act, double z);

/// Fresh parameters: dense/conv weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)],
/// biases zero; parameter-free layers get empty tensors.
LayerParams init_layer_params(const LayerSpec& spec, RandomStream& rng);
LayerParams zero_layer_params(const LayerSpec& spec);

/// Forward evaluation. `rng` is consulted only by dropout and may be null
/// when the layer is deterministic or dropout is inactive. When
/// `dropout_active` is false a dropout layer is the identity map.
Tensor layer_forward(const LayerSpec& spec, const LayerParams& params, const Tensor& x,
                     RandomStream* rng, ForwardCache* cache, bool dropout_active = true);

/// v^T (dy/dx) and v^T (dy/dparams) for the cached forward call.
VjpResult layer_vjp(const LayerSpec& spec, const LayerParams& params, const ForwardCache& cache,
                    const Tensor& v);

// Composition of layers (the sub-networks mu, sigma, trunk, projections).
using StackSpec = std::vector<LayerSpec>;
using StackParams = std::vector<LayerParams>;
using StackCaches = std::vector<ForwardCache>;

struct StackVjpResult {
  Tensor grad_input;
  StackParams grad_params;  // one entry per layer
};

StackParams init_stack_params(const StackSpec& specs, RandomStream& rng);
StackParams zero_stack_params(const StackSpec& specs);

Tensor stack_forward(const StackSpec& specs, const StackParams& params, const Tensor& x,
                     RandomStream* rng, StackCaches* caches, bool dropout_active = true);
StackVjpResult stack_vjp(const StackSpec& specs, const StackParams& params,
                         const StackCaches& caches, const Tensor& v);

/// Like stack_vjp but adds the parameter cotangents into `grad_accum`
/// (shapes from zero_stack_params) instead of allocating fresh tensors.
Tensor stack_vjp_accumulate(const StackSpec& specs, const StackParams& params,
                            const StackCaches& caches, const Tensor& v, StackParams& grad_accum);

/// Output shape of a whole stack for a given input shape (validates chaining).
std::vector<int> stack_out_shape(const StackSpec& specs, const std::vector<int>& in_shape);

}  // namespace son

#endif  // SON_LAYERS_HPP
