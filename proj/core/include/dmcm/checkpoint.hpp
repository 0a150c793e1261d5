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
#include <memory>

#include "dmcm/experiments.hpp"

namespace dmcm {

inline constexpr int kCheckpointVersion = 1;

// JSON checkpoint: config snapshot, theta (bit-exact), chain state,
// optimizer moments, random-stream states, step counter, and the metric
// rows emitted so far. load(save(x)) restores theta bitwise and resuming
// reproduces an uninterrupted run's rows.
void save_checkpoint(const std::filesystem::path& path, Trainer& trainer);
std::unique_ptr<Trainer> load_checkpoint(const std::filesystem::path& path);

}  // namespace dmcm
