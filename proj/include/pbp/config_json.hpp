// SPDX-License-Identifier: Apache-2.0
#pragma once

// JSON forms of the configuration types. Readers start from the given
// defaults, accept partial objects and reject unknown keys or wrong types
// with ConfigError naming the offending key.

#include <json.hpp>

#include "pbp/data.hpp"
#include "pbp/layers.hpp"
#include "pbp/mfcc.hpp"
#include "pbp/perforation.hpp"
#include "pbp/sweep.hpp"
#include "pbp/training.hpp"

namespace pbp {

using Json = nlohmann::ordered_json;

std::string_view growth_name(GrowthMode m);
std::string_view function_name(DendriteFunction f);
std::string_view mode_name(DendriteMode m);
std::string_view target_name(PerforateTarget t);
GrowthMode parse_growth(std::string_view s);
DendriteFunction parse_function(std::string_view s);
DendriteMode parse_mode(std::string_view s);
PerforateTarget parse_target(std::string_view s);

Json to_json(const ArchitectureSpec& spec);
Json to_json(const DendriteConfig& config);
Json to_json(const TrainConfig& config);
Json to_json(const MfccConfig& config);
Json to_json(const SplitRatios& ratios);
Json to_json(const SweepSpace& space);
Json to_json(const TrialResult& result);

ArchitectureSpec architecture_from_json(const Json& j, ArchitectureSpec defaults = {});
DendriteConfig dendrite_from_json(const Json& j, DendriteConfig defaults = {});
/// "dendrite": null disables dendrites.
TrainConfig train_from_json(const Json& j, TrainConfig defaults = {});
MfccConfig mfcc_from_json(const Json& j, MfccConfig defaults = {});
SplitRatios split_from_json(const Json& j, SplitRatios defaults = {});
SweepSpace sweep_space_from_json(const Json& j, SweepSpace defaults = {});

/// SHA-256 of the compact JSON of (architecture, train config).
std::string config_digest(const ArchitectureSpec& spec, const TrainConfig& config);

}  // namespace pbp
