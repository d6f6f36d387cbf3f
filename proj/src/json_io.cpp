#include "son/json_io.hpp"

#include "son/errors.hpp"

namespace son {

namespace {

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Dense:
      return "dense";
    case LayerKind::Conv2d:
      return "conv2d";
    case LayerKind::MaxPool2d:
      return "maxpool2d";
    case LayerKind::Dropout:
      return "dropout";
    case LayerKind::Flatten:
      return "flatten";
  }
  return "dense";
}

LayerKind kind_from(const std::string& s) {
  if (s == "dense") return LayerKind::Dense;
  if (s == "conv2d") return LayerKind::Conv2d;
  if (s == "maxpool2d") return LayerKind::MaxPool2d;
  if (s == "dropout") return LayerKind::Dropout;
  if (s == "flatten") return LayerKind::Flatten;
  throw ConfigError("unknown layer kind: " + s);
}

const char* act_name(Activation a) {
  switch (a) {
    case Activation::Relu:
      return "relu";
    case Activation::Sigmoid:
      return "sigmoid";
    case Activation::Arctan:
      return "arctan";
    case Activation::Identity:
      return "identity";
  }
  return "identity";
}

Activation act_from(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "arctan") return Activation::Arctan;
  if (s == "identity") return Activation::Identity;
  throw ConfigError("unknown activation: " + s);
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
  // get_to keeps the existing value as the base, so partial overlays of
  // nested configs only touch the keys they mention.
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

void to_json(json& j, const LayerSpec& s) {
  j = json{{"kind", kind_name(s.kind)},     {"activation", act_name(s.activation)},
           {"in_width", s.in_width},        {"out_width", s.out_width},
           {"in_rows", s.in_rows},          {"in_cols", s.in_cols},
           {"kernel", s.kernel},            {"pool", s.pool},
           {"pool_stride", s.pool_stride},  {"dropout_rate", s.dropout_rate}};
}

void from_json(const json& j, LayerSpec& s) {
  s.kind = kind_from(j.at("kind").get<std::string>());
  s.activation = act_from(j.value("activation", "identity"));
  maybe(j, "in_width", s.in_width);
  maybe(j, "out_width", s.out_width);
  maybe(j, "in_rows", s.in_rows);
  maybe(j, "in_cols", s.in_cols);
  maybe(j, "kernel", s.kernel);
  maybe(j, "pool", s.pool);
  maybe(j, "pool_stride", s.pool_stride);
  maybe(j, "dropout_rate", s.dropout_rate);
}

void to_json(json& j, const SensorGrid& g) {
  j = json{{"dim", g.dim},
           {"lo", g.lo},
           {"hi", g.hi},
           {"nx", g.axis_x.size()},
           {"ny", g.axis_y.size()}};
}

void from_json(const json& j, SensorGrid& g) {
  int dim = j.at("dim").get<int>();
  auto lo = j.at("lo").get<std::array<double, 2>>();
  auto hi = j.at("hi").get<std::array<double, 2>>();
  int nx = j.at("nx").get<int>();
  int ny = j.value("ny", 0);
  g = dim == 1 ? SensorGrid::uniform_1d(lo[0], hi[0], nx)
               : SensorGrid::uniform_2d(lo[0], hi[0], nx, lo[1], hi[1], ny);
}

void to_json(json& j, const KernelConfig& k) {
  j = json{{"length_scale", k.length_scale}, {"variance", k.variance}, {"jitter", k.jitter}};
}

void from_json(const json& j, KernelConfig& k) {
  maybe(j, "length_scale", k.length_scale);
  maybe(j, "variance", k.variance);
  maybe(j, "jitter", k.jitter);
}

void to_json(json& j, const QuerySpec& q) {
  const char* mode = q.mode == QuerySpec::Mode::RandomUniform      ? "random_uniform"
                     : q.mode == QuerySpec::Mode::UniformPartition ? "uniform_partition"
                     : q.mode == QuerySpec::Mode::Grid2d           ? "grid2d"
                                                                   : "grid_indices";
  j = json{{"mode", mode}, {"count", q.count}, {"nx", q.nx},          {"ny", q.ny},
           {"lo", q.lo},   {"hi", q.hi},       {"indices", q.indices}};
}

void from_json(const json& j, QuerySpec& q) {
  std::string mode = j.value("mode", "");
  if (mode.empty())
    ;  // keep the existing mode (overlay)
  else if (mode == "random_uniform")
    q.mode = QuerySpec::Mode::RandomUniform;
  else if (mode == "uniform_partition")
    q.mode = QuerySpec::Mode::UniformPartition;
  else if (mode == "grid2d")
    q.mode = QuerySpec::Mode::Grid2d;
  else if (mode == "grid_indices")
    q.mode = QuerySpec::Mode::GridIndices;
  else
    throw ConfigError("unknown query mode: " + mode);
  maybe(j, "count", q.count);
  maybe(j, "nx", q.nx);
  maybe(j, "ny", q.ny);
  maybe(j, "lo", q.lo);
  maybe(j, "hi", q.hi);
  maybe(j, "indices", q.indices);
}

void to_json(json& j, const DatasetSpec& d) {
  j = json{{"experiment", to_string(d.experiment)},
           {"sensors", d.sensors},
           {"kernel", d.kernel},
           {"l_lo", d.l_lo},
           {"l_hi", d.l_hi},
           {"n_functions", d.n_functions},
           {"queries", d.queries},
           {"noise_scale", d.noise_scale}};
}

void from_json(const json& j, DatasetSpec& d) {
  if (j.contains("experiment"))
    d.experiment = experiment_from_string(j.at("experiment").get<std::string>());
  if (j.contains("sensors")) d.sensors = j.at("sensors").get<SensorGrid>();
  if (j.contains("kernel")) from_json(j.at("kernel"), d.kernel);
  maybe(j, "l_lo", d.l_lo);
  maybe(j, "l_hi", d.l_hi);
  maybe(j, "n_functions", d.n_functions);
  if (j.contains("queries")) from_json(j.at("queries"), d.queries);
  maybe(j, "noise_scale", d.noise_scale);
}

void to_json(json& j, const BranchConfig& b) {
  j = json{{"steps", b.steps},
           {"terminal_time", b.terminal_time},
           {"pre_projection", b.pre_projection},
           {"drift_stack", b.drift_stack},
           {"diffusion_mode",
            b.diffusion_mode == DiffusionMode::PerStepVector ? "per_step_vector" : "network"},
           {"diffusion_size", b.diffusion_size},
           {"diffusion_stack", b.diffusion_stack},
           {"post_projection", b.post_projection},
           {"diffusion_init_mean", b.diffusion_init_mean},
           {"diffusion_init_std", b.diffusion_init_std},
           {"dropout_everywhere", b.dropout_everywhere},
           {"fresh_backward_noise", b.fresh_backward_noise},
           {"paper_indexing", b.paper_indexing},
           {"train_diffusion", b.train_diffusion}};
}

void from_json(const json& j, BranchConfig& b) {
  maybe(j, "steps", b.steps);
  maybe(j, "terminal_time", b.terminal_time);
  maybe(j, "pre_projection", b.pre_projection);
  maybe(j, "drift_stack", b.drift_stack);
  if (j.contains("diffusion_mode")) {
    std::string m = j.at("diffusion_mode").get<std::string>();
    if (m == "per_step_vector")
      b.diffusion_mode = DiffusionMode::PerStepVector;
    else if (m == "network")
      b.diffusion_mode = DiffusionMode::Network;
    else
      throw ConfigError("unknown diffusion mode: " + m);
  }
  maybe(j, "diffusion_size", b.diffusion_size);
  maybe(j, "diffusion_stack", b.diffusion_stack);
  maybe(j, "post_projection", b.post_projection);
  maybe(j, "diffusion_init_mean", b.diffusion_init_mean);
  maybe(j, "diffusion_init_std", b.diffusion_init_std);
  maybe(j, "dropout_everywhere", b.dropout_everywhere);
  maybe(j, "fresh_backward_noise", b.fresh_backward_noise);
  maybe(j, "paper_indexing", b.paper_indexing);
  maybe(j, "train_diffusion", b.train_diffusion);
}

void to_json(json& j, const TrunkConfig& t) {
  j = json{{"stack", t.stack}, {"p", t.p}, {"d_out", t.d_out}};
}

void from_json(const json& j, TrunkConfig& t) {
  maybe(j, "stack", t.stack);
  maybe(j, "p", t.p);
  maybe(j, "d_out", t.d_out);
}

void to_json(json& j, const SonConfig& c) {
  j = json{{"branch", c.branch},
           {"trunk", c.trunk},
           {"input_shape", c.input_shape},
           {"p", c.p},
           {"d_out", c.d_out}};
}

void from_json(const json& j, SonConfig& c) {
  maybe(j, "branch", c.branch);
  maybe(j, "trunk", c.trunk);
  maybe(j, "input_shape", c.input_shape);
  maybe(j, "p", c.p);
  maybe(j, "d_out", c.d_out);
}

void to_json(json& j, const BaselineConfig& c) {
  j = json{{"branch", c.branch},
           {"trunk", c.trunk},
           {"input_shape", c.input_shape},
           {"p", c.p},
           {"d_out", c.d_out}};
}

void from_json(const json& j, BaselineConfig& c) {
  maybe(j, "branch", c.branch);
  maybe(j, "trunk", c.trunk);
  maybe(j, "input_shape", c.input_shape);
  maybe(j, "p", c.p);
  maybe(j, "d_out", c.d_out);
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs", c.epochs},
           {"lr", c.lr},
           {"sched_factor", c.sched_factor},
           {"sched_interval", c.sched_interval},
           {"sched_activation", c.sched_activation},
           {"batch_size", c.batch_size},
           {"optimizer", c.optimizer == TrainConfig::Optimizer::Adam ? "adam" : "sgd"},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"eps_adam", c.eps_adam},
           {"seed", c.seed},
           {"checkpoint_every", c.checkpoint_every},
           {"block_size", c.block_size},
           {"workers", c.workers}};
  if (std::isfinite(c.proj_lo)) j["proj_lo"] = c.proj_lo;
  if (std::isfinite(c.proj_hi)) j["proj_hi"] = c.proj_hi;
}

void from_json(const json& j, TrainConfig& c) {
  maybe(j, "epochs", c.epochs);
  maybe(j, "lr", c.lr);
  maybe(j, "sched_factor", c.sched_factor);
  maybe(j, "sched_interval", c.sched_interval);
  maybe(j, "sched_activation", c.sched_activation);
  maybe(j, "batch_size", c.batch_size);
  if (j.contains("optimizer")) {
    std::string o = j.at("optimizer").get<std::string>();
    if (o == "adam")
      c.optimizer = TrainConfig::Optimizer::Adam;
    else if (o == "sgd")
      c.optimizer = TrainConfig::Optimizer::Sgd;
    else
      throw ConfigError("unknown optimizer: " + o);
  }
  maybe(j, "beta1", c.beta1);
  maybe(j, "beta2", c.beta2);
  maybe(j, "eps_adam", c.eps_adam);
  maybe(j, "proj_lo", c.proj_lo);
  maybe(j, "proj_hi", c.proj_hi);
  maybe(j, "seed", c.seed);
  maybe(j, "checkpoint_every", c.checkpoint_every);
  maybe(j, "block_size", c.block_size);
  maybe(j, "workers", c.workers);
}

}  // namespace son
