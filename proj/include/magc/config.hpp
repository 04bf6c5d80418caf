#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>

#include "magc/simcore.hpp"

namespace magc {

using Json = nlohmann::ordered_json;

/// Scenario file <-> in-memory scenario. Relative model / calibration paths
/// are resolved against `base_dir`.
Scenario scenario_from_json(const Json& j, const std::filesystem::path& base_dir = {});
Json scenario_to_json(const Scenario& s);

Scenario load_scenario(const std::filesystem::path& path);
void save_scenario(const std::filesystem::path& path, const Scenario& s);

Json model_to_json(const DiscreteModel& m);
DiscreteModel model_from_json(const Json& j);

Json calibration_to_json(const DetectorCalibration& c);
DetectorCalibration calibration_from_json(const Json& j);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

}  // namespace magc
