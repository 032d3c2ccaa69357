#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "sedforest/forest.hpp"

namespace sedforest {

inline constexpr int kModelFormatVersion = 1;

/// JSON model document. Nodes are listed in pre-order with a "type"
/// discriminant ("split" or "leaf"); children are implied by the order.
/// Doubles are written in shortest round-trip form, so reading back yields
/// bit-identical values.
std::string serialize_forest(const Forest& forest);
Forest deserialize_forest(const std::string& text);

nlohmann::ordered_json to_json(const ForestConfig& cfg);
// Keys missing from `j` keep the value from `base`.
ForestConfig forest_config_from_json(const nlohmann::ordered_json& j, ForestConfig base = {});
nlohmann::ordered_json to_json(const FeatureConfig& cfg);
FeatureConfig feature_config_from_json(const nlohmann::ordered_json& j, FeatureConfig base = {});

void save_forest(const std::filesystem::path& path, const Forest& forest);
Forest load_forest(const std::filesystem::path& path);

}  // namespace sedforest
