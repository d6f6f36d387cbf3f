#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "son/checkpoint.hpp"
#include "son/csv.hpp"
#include "son/diagnostics.hpp"
#include "son/errors.hpp"
#include "son/json_io.hpp"
#include "son/presets.hpp"
#include "son/training.hpp"

namespace fs = std::filesystem;
using namespace son;

namespace {

std::string utc_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

struct CommonArgs {
  std::string preset = "antiderivative";
  std::string scale = "paper";
  std::string config_file;
  std::string model = "son";
  std::uint64_t seed = 0;
  std::string data_dir;
  std::string out_dir;
};

ExperimentPreset resolve_preset(const CommonArgs& args) {
  ExperimentPreset preset = get_preset(args.preset, scale_from_string(args.scale));
  if (!args.config_file.empty()) {
    std::ifstream f(args.config_file);
    if (!f) throw IoError("cannot open config file " + args.config_file);
    json overlay = json::parse(f);
    if (overlay.contains("son")) from_json(overlay.at("son"), preset.son);
    if (overlay.contains("baseline")) from_json(overlay.at("baseline"), preset.baseline);
    if (overlay.contains("train")) from_json(overlay.at("train"), preset.train);
    if (overlay.contains("train_spec")) from_json(overlay.at("train_spec"), preset.train_spec);
    if (overlay.contains("test_spec")) from_json(overlay.at("test_spec"), preset.test_spec);
    if (overlay.contains("noise_reps")) preset.noise_reps = overlay.at("noise_reps").get<int>();
    if (overlay.contains("ensemble_count"))
      preset.ensemble_count = overlay.at("ensemble_count").get<int>();
  }
  return preset;
}

void check_compatible(const OperatorDataset& ds, const std::vector<int>& input_shape, int d_out) {
  if (ds.sensors.field_shape() != input_shape)
    throw ConfigError("dataset sensor layout does not match the model input shape");
  if (ds.d_out != d_out) throw ConfigError("dataset output dimension does not match the model");
}

int cmd_generate(const CommonArgs& args) {
  ExperimentPreset preset = resolve_preset(args);
  fs::path out = args.out_dir;
  fs::create_directories(out);

  OperatorDataset train = build_dataset(preset.train_spec, args.seed);
  save_dataset(train, out / "train");
  OperatorDataset test = build_dataset(preset.test_spec, args.seed + 1);
  save_dataset(test, out / "test");

  RunManifest manifest;
  manifest.command = "generate";
  manifest.preset_name = preset.name;
  manifest.scale = args.scale;
  manifest.seed = args.seed;
  manifest.out_dir = out.string();
  manifest.created_at = utc_now();
  manifest.artifacts["train"] = (out / "train").string();
  manifest.artifacts["test"] = (out / "test").string();
  save_manifest(manifest, out / "manifest.json");

  std::printf("generated %s (%s): train %d samples (%d x %d), test %d samples (%d x %d)\n",
              preset.name.c_str(), args.scale.c_str(), train.size(), train.n_functions,
              train.n_queries, test.size(), test.n_functions, test.n_queries);
  return 0;
}

int cmd_train(const CommonArgs& args, int epochs_override) {
  ExperimentPreset preset = resolve_preset(args);
  if (epochs_override >= 0) preset.train.epochs = epochs_override;
  preset.train.seed = args.seed;

  fs::path out = args.out_dir;
  fs::create_directories(out);
  OperatorDataset train_ds = load_dataset(fs::path(args.data_dir) / "train");

  RunManifest manifest;
  manifest.command = "train";
  manifest.preset_name = preset.name;
  manifest.scale = args.scale;
  manifest.model_type = args.model;
  manifest.seed = args.seed;
  manifest.data_dir = args.data_dir;
  manifest.out_dir = out.string();
  manifest.created_at = utc_now();

  History history;
  fs::path ckpt_path = out / "checkpoint.ckpt";
  if (args.model == "son") {
    check_compatible(train_ds, preset.son.input_shape, preset.son.d_out);
    RandomStream init(RandomStream(args.seed).substream(stream_tag::kInit).key());
    SonModel model = make_son_model(preset.son, init);
    auto hook = [&](int epoch) {
      save_son_checkpoint(model, epoch, out / ("ckpt_" + std::to_string(epoch) + ".ckpt"));
    };
    history = train_son(model, train_ds, preset.train, hook);
    save_son_checkpoint(model, preset.train.epochs, ckpt_path);
  } else if (args.model == "baseline") {
    check_compatible(train_ds, preset.baseline.input_shape, preset.baseline.d_out);
    RandomStream init(RandomStream(args.seed).substream(stream_tag::kInit).key());
    BaselineModel model = make_baseline_model(preset.baseline, init);
    auto hook = [&](int epoch) {
      save_baseline_checkpoint(model, epoch, out / ("ckpt_" + std::to_string(epoch) + ".ckpt"));
    };
    history = train_baseline(model, train_ds, preset.train, hook);
    save_baseline_checkpoint(model, preset.train.epochs, ckpt_path);
  } else {
    throw ConfigError("unknown model: " + args.model + " (expected son or baseline)");
  }

  save_history_csv(history, (out / "history.csv").string());
  manifest.artifacts["checkpoint"] = ckpt_path.string();
  manifest.artifacts["history"] = (out / "history.csv").string();
  save_manifest(manifest, out / "manifest.json");

  double final_loss = history.epochs.empty() ? 0.0 : history.epochs.back().mean_loss;
  std::printf("trained %s/%s for %d epochs: final train MSE %.6g, wall %.1f s\n",
              preset.name.c_str(), args.model.c_str(), preset.train.epochs, final_loss,
              history.total_wall_ms / 1000.0);
  return 0;
}

std::unique_ptr<StochasticPredictor> load_predictor(const std::string& ckpt,
                                                    std::unique_ptr<SonModel>& son_holder,
                                                    std::unique_ptr<BaselineModel>& base_holder,
                                                    std::vector<int>& input_shape, int& d_out) {
  std::string type = checkpoint_model_type(ckpt);
  if (type == "son") {
    son_holder = std::make_unique<SonModel>(load_son_checkpoint(ckpt).first);
    input_shape = son_holder->cfg.input_shape;
    d_out = son_holder->cfg.d_out;
    return std::make_unique<SonPredictor>(*son_holder);
  }
  base_holder = std::make_unique<BaselineModel>(load_baseline_checkpoint(ckpt).first);
  input_shape = base_holder->cfg.input_shape;
  d_out = base_holder->cfg.d_out;
  return std::make_unique<BaselinePredictor>(*base_holder);
}

int cmd_eval(const std::string& ckpt, const CommonArgs& args, const std::string& split) {
  OperatorDataset ds = load_dataset(fs::path(args.data_dir) / split);
  std::unique_ptr<SonModel> son_m;
  std::unique_ptr<BaselineModel> base_m;
  std::vector<int> input_shape;
  int d_out = 0;
  auto predictor = load_predictor(ckpt, son_m, base_m, input_shape, d_out);
  check_compatible(ds, input_shape, d_out);

  auto t0 = std::chrono::steady_clock::now();
  double mse = eval_mse(*predictor, ds, RandomStream(args.seed));
  double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                  .count();
  std::printf("eval %s split=%s: MSE %.6g over %d samples (%.1f ms)\n",
              to_string(ds.experiment).c_str(), split.c_str(), mse, ds.size(), ms);
  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    std::ofstream f(fs::path(args.out_dir) / "eval.csv");
    f << "experiment,split,samples,mse,wall_ms\n";
    f << to_string(ds.experiment) << "," << split << "," << ds.size() << "," << g17(mse) << ","
      << g17(ms) << "\n";
  }
  return 0;
}

int cmd_noise(const std::string& ckpt, const CommonArgs& args, const std::string& split, int reps) {
  OperatorDataset ds = load_dataset(fs::path(args.data_dir) / split);
  std::unique_ptr<SonModel> son_m;
  std::unique_ptr<BaselineModel> base_m;
  std::vector<int> input_shape;
  int d_out = 0;
  auto predictor = load_predictor(ckpt, son_m, base_m, input_shape, d_out);
  check_compatible(ds, input_shape, d_out);

  NoiseReport report = noise_recovery(*predictor, ds, reps, RandomStream(args.seed));
  std::printf("noise recovery (%d reps) on %s: overall %.6g", reps, report.dataset_id.c_str(),
              report.overall);
  for (std::size_t d = 0; d < report.per_dim_std.size(); ++d)
    std::printf("%s dim%zu %.6g", d == 0 ? ";" : ",", d, report.per_dim_std[d]);
  std::printf("\n");
  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    save_noise_report_csv(report, fs::path(args.out_dir) / "noise_report.csv");
  }
  return 0;
}

int cmd_ensemble(const std::string& ckpt, const CommonArgs& args, int count, double length_scale) {
  ExperimentPreset preset = resolve_preset(args);
  std::unique_ptr<SonModel> son_m;
  std::unique_ptr<BaselineModel> base_m;
  std::vector<int> input_shape;
  int d_out = 0;
  auto predictor = load_predictor(ckpt, son_m, base_m, input_shape, d_out);
  if (preset.train_spec.sensors.field_shape() != input_shape)
    throw ConfigError("preset sensor grid does not match the checkpoint input shape");

  KernelConfig kernel = preset.train_spec.kernel;
  kernel.length_scale = length_scale > 0 ? length_scale : preset.ensemble_length_scale;
  int members = count > 0 ? count : preset.ensemble_count;

  EllipticStudy study =
      elliptic_ensemble_study(*predictor, preset.train_spec.sensors,
                              preset.train_spec.queries.indices, kernel, members,
                              RandomStream(args.seed));

  fs::path out = args.out_dir.empty() ? fs::path(".") : fs::path(args.out_dir);
  fs::create_directories(out);
  save_matrix_csv(study.cov.reference, out / "covariance_ref.csv");
  save_matrix_csv(study.cov.estimate, out / "covariance_est.csv");
  save_matrix_csv(study.cov.difference, out / "covariance_diff.csv");

  std::ofstream band(out / "band.csv");
  band << "y,mean,lo,hi\n";
  for (std::size_t i = 0; i < study.query_x.size(); ++i) {
    double m = study.model_mean[i];
    double sd = std::sqrt(std::max(0.0, study.cov.estimate.at(static_cast<int>(i),
                                                              static_cast<int>(i))));
    band << g17(study.query_x[i]) << "," << g17(m) << "," << g17(m - 2 * sd) << ","
         << g17(m + 2 * sd) << "\n";
  }

  json summary;
  summary["members"] = members;
  summary["length_scale"] = kernel.length_scale;
  summary["cov_max_abs_diff"] = study.cov.max_abs;
  summary["cov_frobenius_diff"] = study.cov.frobenius;
  summary["mc_floor_max_abs"] = study.mc_floor_max_abs;
  summary["frac_within_3se"] = study.frac_within_3se;
  std::ofstream(out / "ensemble_summary.json") << summary.dump(2) << "\n";

  std::printf("ensemble study (%d members, l=%.3g): cov max-abs diff %.3e (MC floor %.3e, ratio "
              "%.2f); mean within 3 SE at %.1f%% of grid points\n",
              members, kernel.length_scale, study.cov.max_abs, study.mc_floor_max_abs,
              study.cov.max_abs / std::max(study.mc_floor_max_abs, 1e-300),
              100.0 * study.frac_within_3se);
  return 0;
}

int cmd_compare(const CommonArgs& args, int reps) {
  ExperimentPreset preset = resolve_preset(args);
  preset.train.seed = args.seed;
  OperatorDataset train_ds = load_dataset(fs::path(args.data_dir) / "train");
  OperatorDataset test_ds = load_dataset(fs::path(args.data_dir) / "test");
  check_compatible(train_ds, preset.son.input_shape, preset.son.d_out);

  RandomStream init_a(RandomStream(args.seed).substream(stream_tag::kInit).key());
  SonModel son_model = make_son_model(preset.son, init_a);
  History son_hist = train_son(son_model, train_ds, preset.train);

  RandomStream init_b(RandomStream(args.seed).substream(stream_tag::kInit, 2).key());
  BaselineModel base_model = make_baseline_model(preset.baseline, init_b);
  History base_hist = train_baseline(base_model, train_ds, preset.train);

  SonPredictor son_pred(son_model);
  BaselinePredictor base_pred(base_model);
  int use_reps = reps > 0 ? reps : preset.noise_reps;

  double son_mse = eval_mse(son_pred, test_ds, RandomStream(args.seed + 11));
  double base_mse = eval_mse(base_pred, test_ds, RandomStream(args.seed + 12));
  NoiseReport son_noise = noise_recovery(son_pred, test_ds, use_reps, RandomStream(args.seed + 13));
  NoiseReport base_noise =
      noise_recovery(base_pred, test_ds, use_reps, RandomStream(args.seed + 14));

  std::printf("%-10s %14s %12s %16s %12s\n", "model", "train_mse", "test_mse", "recovered_noise",
              "wall_s");
  std::printf("%-10s %14.6g %12.6g %16.6g %12.2f\n", "son",
              son_hist.epochs.back().mean_loss, son_mse, son_noise.overall,
              son_hist.total_wall_ms / 1000.0);
  std::printf("%-10s %14.6g %12.6g %16.6g %12.2f\n", "baseline",
              base_hist.epochs.back().mean_loss, base_mse, base_noise.overall,
              base_hist.total_wall_ms / 1000.0);

  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    std::ofstream f(fs::path(args.out_dir) / "compare.csv");
    f << "model,train_mse,test_mse,recovered_noise,wall_s\n";
    f << "son," << g17(son_hist.epochs.back().mean_loss) << "," << g17(son_mse) << ","
      << g17(son_noise.overall) << "," << g17(son_hist.total_wall_ms / 1000.0) << "\n";
    f << "baseline," << g17(base_hist.epochs.back().mean_loss) << "," << g17(base_mse) << ","
      << g17(base_noise.overall) << "," << g17(base_hist.total_wall_ms / 1000.0) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic Operator Network: data generation, training, and diagnostics"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string ckpt, split = "test";
  int reps = 0, epochs_override = -1, ensemble_members = 0;
  double ensemble_l = 0;

  auto add_common = [&](CLI::App* cmd, bool needs_data, bool needs_out) {
    cmd->add_option("--preset", args.preset, "experiment preset name");
    cmd->add_option("--scale", args.scale, "preset scale: small or paper");
    cmd->add_option("--config", args.config_file, "JSON config overlay file");
    cmd->add_option("--seed", args.seed, "master seed");
    auto* d = cmd->add_option("--data", args.data_dir, "dataset directory");
    auto* o = cmd->add_option("--out", args.out_dir, "output directory");
    if (needs_data) d->required();
    if (needs_out) o->required();
  };

  CLI::App* generate = app.add_subcommand("generate", "build and persist train/test datasets");
  add_common(generate, false, true);

  CLI::App* train = app.add_subcommand("train", "train a model on a generated dataset");
  add_common(train, true, true);
  train->add_option("--model", args.model, "son or baseline");
  train->add_option("--epochs", epochs_override, "override the preset epoch count");

  CLI::App* eval = app.add_subcommand("eval", "stochastic-prediction MSE of a checkpoint");
  add_common(eval, true, false);
  eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval->add_option("--split", split, "dataset split: train or test");

  CLI::App* noise = app.add_subcommand("noise", "noise-scaling recovery report");
  add_common(noise, true, false);
  noise->add_option("--ckpt", ckpt, "checkpoint file")->required();
  noise->add_option("--split", split, "dataset split: train or test");
  noise->add_option("--reps", reps, "predictions per sample (default: preset)");

  CLI::App* ensemble = app.add_subcommand("ensemble", "elliptic ensemble band and covariance study");
  add_common(ensemble, false, true);
  ensemble->add_option("--ckpt", ckpt, "checkpoint file")->required();
  ensemble->add_option("--count", ensemble_members, "ensemble members (default: preset)");
  ensemble->add_option("--length-scale", ensemble_l, "field length scale (default: preset)");

  CLI::App* compare = app.add_subcommand("compare", "train SON and baseline side by side");
  add_common(compare, true, true);
  compare->add_option("--reps", reps, "noise-recovery repetitions");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(args);
    if (train->parsed()) return cmd_train(args, epochs_override);
    if (eval->parsed()) return cmd_eval(ckpt, args, split);
    if (noise->parsed()) return cmd_noise(ckpt, args, split, reps > 0 ? reps : 100);
    if (ensemble->parsed()) return cmd_ensemble(ckpt, args, ensemble_members, ensemble_l);
    if (compare->parsed()) return cmd_compare(args, reps);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
