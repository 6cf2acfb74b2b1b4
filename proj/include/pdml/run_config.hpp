#pragma once

#include <array>
#include <string>

#include "json.hpp"
#include "pdml/trainer.hpp"

namespace pdml {

/// Serialization of a full training configuration, used by checkpoint
/// manifests (round-trip including data-derived bands and classes).
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// A run configuration file: training hyperparameters plus split ratios.
/// Every field is optional and defaults to the standard recipe (patch 5,
/// alpha 0.2, 3 samples, unit loss weights, batch 16, lr 1e-4, 300 epochs).
struct RunConfig {
    TrainConfig train;
    std::array<double, 3> ratios{0.2, 0.1, 0.7};
};

/// Parses a config document. Unknown keys are rejected, as are the
/// data-derived keys bands and classes (they come from the input files).
RunConfig parse_run_config(const std::string& json_text);

}  // namespace pdml
