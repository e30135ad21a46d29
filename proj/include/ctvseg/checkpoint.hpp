/*
 * Copyright 2026 The ctvseg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "ctvseg/nets.hpp"

namespace ctvseg {

struct CheckpointMeta {
  NetConfig net;
  std::uint64_t seed = 0;
  int epoch = 0;
  nlohmann::json extra = nlohmann::json::object();
};

// Writes <stem>.pt (weights) and <stem>.json (sidecar with the config hash).
void save_checkpoint(SegNet& net, const CheckpointMeta& meta, const std::filesystem::path& stem);

struct LoadedNet {
  SegNet net{nullptr};
  CheckpointMeta meta;
};

/// Rebuilds the network from the sidecar config and loads the weights.
/// Throws DataError when files are missing or the config hash does not match.
LoadedNet load_checkpoint(const std::filesystem::path& stem);

}  // namespace ctvseg
