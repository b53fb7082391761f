#pragma once

#include <json.hpp>

#include "fedmesh/scenario.hpp"

namespace fedmesh {

nlohmann::json scenario_to_json(const ScenarioConfig& cfg);
ScenarioConfig scenario_from_json(const nlohmann::json& doc);

}  // namespace fedmesh
