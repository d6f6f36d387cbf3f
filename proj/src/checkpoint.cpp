#include "son/checkpoint.hpp"

#include <chrono>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "son/errors.hpp"
#include "son/json_io.hpp"
#include "son/training.hpp"

namespace son {

namespace {

constexpr char kMagic[8] = {'S', 'O', 'N', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ofstream& f, std::uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::ifstream& f) {
  std::uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void write_tensor(std::ofstream& f, const std::string& name, const Tensor& t) {
  write_u64(f, name.size());
  f.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u64(f, static_cast<std::uint64_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) write_u64(f, static_cast<std::uint64_t>(t.dim(i)));
  f.write(reinterpret_cast<const char*>(t.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
}

void read_tensor(std::ifstream& f, const std::string& expect_name, Tensor& t) {
  std::uint64_t name_len = read_u64(f);
  std::string name(name_len, '\0');
  f.read(name.data(), static_cast<std::streamsize>(name_len));
  if (name != expect_name)
    throw IoError("checkpoint: tensor order mismatch, expected " + expect_name + " got " + name);
  std::uint64_t ndim = read_u64(f);
  std::vector<int> shape(ndim);
  for (auto& d : shape) d = static_cast<int>(read_u64(f));
  // Rank 0 marks a parameter-free slot (pool/dropout/flatten), not a scalar.
  Tensor loaded = ndim == 0 ? Tensor() : Tensor(shape);
  f.read(reinterpret_cast<char*>(loaded.data()),
         static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(loaded.size())));
  if (!t.shape().empty() && !(t.shape() == loaded.shape()))
    throw IoError("checkpoint: tensor shape mismatch for " + expect_name);
  t = std::move(loaded);
}

void write_header(std::ofstream& f, const json& header) {
  std::string blob = header.dump();
  f.write(kMagic, sizeof(kMagic));
  write_u64(f, blob.size());
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

json read_header(std::ifstream& f, const std::filesystem::path& path) {
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("checkpoint: bad magic in " + path.string());
  std::uint64_t len = read_u64(f);
  std::string blob(len, '\0');
  f.read(blob.data(), static_cast<std::streamsize>(len));
  return json::parse(blob);
}

}  // namespace

void save_son_checkpoint(const SonModel& model, int epoch, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_son_checkpoint: cannot write " + path.string());
  json header;
  header["model_type"] = "son";
  header["epoch"] = epoch;
  header["config"] = model.cfg;
  write_header(f, header);

  SonModel& mutable_model = const_cast<SonModel&>(model);
  auto refs = tensor_refs(mutable_model.params);
  auto names = tensor_names(model);
  write_u64(f, refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) write_tensor(f, names[i], *refs[i]);
  f.write(reinterpret_cast<const char*>(&model.params.b0), sizeof(double));
  if (!f) throw IoError("save_son_checkpoint: write failed for " + path.string());
}

std::pair<SonModel, int> load_son_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_son_checkpoint: cannot open " + path.string());
  json header = read_header(f, path);
  if (header.at("model_type").get<std::string>() != "son")
    throw IoError("load_son_checkpoint: not a SON checkpoint");
  SonModel model;
  model.cfg = header.at("config").get<SonConfig>();
  model.params.branch = zero_branch_params(model.cfg.branch, model.cfg.input_shape);
  model.params.trunk = zero_stack_params(model.cfg.trunk.stack);

  auto refs = tensor_refs(model.params);
  auto names = tensor_names(model);
  std::uint64_t count = read_u64(f);
  if (count != refs.size()) throw IoError("load_son_checkpoint: tensor count mismatch");
  for (std::size_t i = 0; i < refs.size(); ++i) read_tensor(f, names[i], *refs[i]);
  f.read(reinterpret_cast<char*>(&model.params.b0), sizeof(double));
  if (!f) throw IoError("load_son_checkpoint: truncated file " + path.string());
  return {std::move(model), header.at("epoch").get<int>()};
}

void save_baseline_checkpoint(const BaselineModel& model, int epoch,
                              const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_baseline_checkpoint: cannot write " + path.string());
  json header;
  header["model_type"] = "baseline";
  header["epoch"] = epoch;
  header["config"] = model.cfg;
  write_header(f, header);

  BaselineModel& mutable_model = const_cast<BaselineModel&>(model);
  auto refs = tensor_refs(mutable_model);
  auto names = tensor_names(model);
  write_u64(f, refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) write_tensor(f, names[i], *refs[i]);
  f.write(reinterpret_cast<const char*>(&model.b0), sizeof(double));
  if (!f) throw IoError("save_baseline_checkpoint: write failed for " + path.string());
}

std::pair<BaselineModel, int> load_baseline_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_baseline_checkpoint: cannot open " + path.string());
  json header = read_header(f, path);
  if (header.at("model_type").get<std::string>() != "baseline")
    throw IoError("load_baseline_checkpoint: not a baseline checkpoint");
  BaselineModel model;
  model.cfg = header.at("config").get<BaselineConfig>();
  model.branch_params = zero_stack_params(model.cfg.branch);
  model.trunk_params = zero_stack_params(model.cfg.trunk.stack);

  auto refs = tensor_refs(model);
  auto names = tensor_names(model);
  std::uint64_t count = read_u64(f);
  if (count != refs.size()) throw IoError("load_baseline_checkpoint: tensor count mismatch");
  for (std::size_t i = 0; i < refs.size(); ++i) read_tensor(f, names[i], *refs[i]);
  f.read(reinterpret_cast<char*>(&model.b0), sizeof(double));
  if (!f) throw IoError("load_baseline_checkpoint: truncated file " + path.string());
  return {std::move(model), header.at("epoch").get<int>()};
}

std::string checkpoint_model_type(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint_model_type: cannot open " + path.string());
  json header = read_header(f, path);
  return header.at("model_type").get<std::string>();
}

void save_manifest(const RunManifest& manifest, const std::filesystem::path& path) {
  json j;
  j["command"] = manifest.command;
  j["preset"] = manifest.preset_name;
  j["scale"] = manifest.scale;
  j["model"] = manifest.model_type;
  j["seed"] = manifest.seed;
  j["data_dir"] = manifest.data_dir;
  j["out_dir"] = manifest.out_dir;
  j["created_at"] = manifest.created_at;
  j["artifacts"] = manifest.artifacts;
  std::ofstream f(path);
  if (!f) throw IoError("save_manifest: cannot write " + path.string());
  f << j.dump(2) << "\n";
}

RunManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_manifest: cannot open " + path.string());
  json j = json::parse(f);
  RunManifest m;
  m.command = j.value("command", "");
  m.preset_name = j.value("preset", "");
  m.scale = j.value("scale", "paper");
  m.model_type = j.value("model", "son");
  m.seed = j.value("seed", std::uint64_t{0});
  m.data_dir = j.value("data_dir", "");
  m.out_dir = j.value("out_dir", "");
  m.created_at = j.value("created_at", "");
  if (j.contains("artifacts")) m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
  return m;
}

}  // namespace son
