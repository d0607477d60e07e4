/* Copyright 2026 The voxelstruct Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <filesystem>
#include <string>

#include "voxelstruct/dataset.hpp"
#include "voxelstruct/nets.hpp"
#include "voxelstruct/training.hpp"

namespace voxelstruct {

/// Everything a run depends on. JSON sections: "net", "train", "loss", "data".
/// Missing fields keep their defaults; unknown keys throw ConfigError.
struct RunConfig {
  NetConfig net;
  TrainConfig train;
  DatasetConfig data;

  void validate() const;
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  /// content_hash of the canonical JSON.
  std::string hash() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Hash of the architecture alone; checkpoints are comparable iff it matches.
std::string net_config_hash(const NetConfig& net);

std::string net_to_json(const NetConfig& net);
NetConfig net_from_json(const std::string& text);

}  // namespace voxelstruct
