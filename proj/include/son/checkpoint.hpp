#ifndef SON_CHECKPOINT_HPP
#define SON_CHECKPOINT_HPP

#include <filesystem>
#include <map>
#include <string>
#include <utility>

#include "son/son_model.hpp"

namespace son {

// Binary checkpoint: magic, JSON header (model type, config, epoch), then the
// raw tensor bytes keyed by module path. Round-trips are bit-exact.

void save_son_checkpoint(const SonModel& model, int epoch, const std::filesystem::path& path);
std::pair<SonModel, int> load_son_checkpoint(const std::filesystem::path& path);

void save_baseline_checkpoint(const BaselineModel& model, int epoch,
                              const std::filesystem::path& path);
std::pair<BaselineModel, int> load_baseline_checkpoint(const std::filesystem::path& path);

/// "son" or "baseline" without loading the tensors.
std::string checkpoint_model_type(const std::filesystem::path& path);

/// Everything needed to replay a run bit-identically plus the artifact paths.
struct RunManifest {
  std::string command;
  std::string preset_name;
  std::string scale;
  std::string model_type;
  std::uint64_t seed = 0;
  std::string data_dir;
  std::string out_dir;
  std::string created_at;  // ISO-8601 UTC
  std::map<std::string, std::string> artifacts;
};

void save_manifest(const RunManifest& manifest, const std::filesystem::path& path);
RunManifest load_manifest(const std::filesystem::path& path);

}  // namespace son

#endif  // SON_CHECKPOINT_HPP
