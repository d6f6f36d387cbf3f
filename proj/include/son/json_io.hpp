#ifndef SON_JSON_IO_HPP
#define SON_JSON_IO_HPP

#include <json.hpp>

#include "son/branch_sde.hpp"
#include "son/grf.hpp"
#include "son/layers.hpp"
#include "son/oracles.hpp"
#include "son/son_model.hpp"
#include "son/training.hpp"

namespace son {

using nlohmann::json;

void to_json(json& j, const LayerSpec& s);
void from_json(const json& j, LayerSpec& s);

void to_json(json& j, const SensorGrid& g);
void from_json(const json& j, SensorGrid& g);

void to_json(json& j, const KernelConfig& k);
void from_json(const json& j, KernelConfig& k);

void to_json(json& j, const QuerySpec& q);
void from_json(const json& j, QuerySpec& q);

void to_json(json& j, const DatasetSpec& d);
void from_json(const json& j, DatasetSpec& d);

void to_json(json& j, const BranchConfig& b);
void from_json(const json& j, BranchConfig& b);

void to_json(json& j, const TrunkConfig& t);
void from_json(const json& j, TrunkConfig& t);

void to_json(json& j, const SonConfig& c);
void from_json(const json& j, SonConfig& c);

void to_json(json& j, const BaselineConfig& c);
void from_json(const json& j, BaselineConfig& c);

void to_json(json& j, const TrainConfig& c);
void from_json(const json& j, TrainConfig& c);

}  // namespace son

#endif  // SON_JSON_IO_HPP
