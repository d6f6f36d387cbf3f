#ifndef SON_PRESETS_HPP
#define SON_PRESETS_HPP

#include <string>
#include <vector>

#include "son/oracles.hpp"
#include "son/son_model.hpp"
#include "son/training.hpp"

namespace son {

enum class Scale { Small, Paper };

Scale scale_from_string(const std::string& s);
std::string to_string(Scale s);

/// Everything one experiment needs: data generation for both splits, the SON
/// and baseline architectures, and the training schedule.
struct ExperimentPreset {
  std::string name;
  ExperimentId experiment = ExperimentId::Antiderivative;
  Scale scale = Scale::Paper;
  DatasetSpec train_spec;
  DatasetSpec test_spec;
  SonConfig son;
  BaselineConfig baseline;
  TrainConfig train;
  int noise_reps = 100;
  int ensemble_count = 1000;      // elliptic study members
  double ensemble_length_scale = 1.5;
};

std::vector<std::string> preset_names();
ExperimentPreset get_preset(const std::string& name, Scale scale);

}  // namespace son

#endif  // SON_PRESETS_HPP
