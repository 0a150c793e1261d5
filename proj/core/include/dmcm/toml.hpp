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

#include <string>

#include <json.hpp>

namespace dmcm {

// Reader for the TOML subset used by the experiment configs: [section]
// and [[array-of-tables]] headers, bare keys, strings, integers, floats,
// booleans, (nested) arrays, and # comments. Throws std::invalid_argument
// with a line number on malformed input.
nlohmann::json parse_toml(const std::string& text);

}  // namespace dmcm
