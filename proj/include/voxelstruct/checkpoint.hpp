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

#include "voxelstruct/nets.hpp"

namespace voxelstruct {

// Binary layout (all integers little-endian uint64):
//   "VSCKPT1" | count | { key_len | key bytes | rank | dims... | float32 values }*
// Entries are written in key order. Any subset of encoder / generator /
// detector may be present; they are told apart by the "enc/", "gen/", "det/"
// key prefix.

void write_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams read_checkpoint(const std::filesystem::path& path);

/// Rounds every value through float32, i.e. what a save/load cycle preserves.
ParamMap quantized(const ParamMap& params);

}  // namespace voxelstruct
