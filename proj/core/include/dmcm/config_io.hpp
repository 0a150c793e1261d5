/*
 * Copyright 2026 dmcm-lab authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <filesystem>

#include <json.hpp>

#include "dmcm/experiments.hpp"

namespace dmcm {

// Fully resolved config, every defaulted field included; a manifest built
// from this is enough to re-launch the run.
nlohmann::json config_to_json(const ExperimentConfig& cfg);

// Accepts either a bare config object or a manifest ({"config": {...}}).
// Errors name the offending field path.
ExperimentConfig config_from_json(const nlohmann::json& j);

// TOML for human-authored configs, JSON for machine-written manifests;
// chosen by file extension (.toml / .json).
ExperimentConfig load_config_file(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& path,
                    const ExperimentConfig& cfg,
                    const std::string& subcommand,
                    double wall_seconds = 0.0);

}  // namespace dmcm
