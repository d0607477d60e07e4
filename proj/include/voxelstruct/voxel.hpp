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

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "voxelstruct/tensor.hpp"

namespace voxelstruct {

/// Cubic occupancy grid, values in [0,1]. Linear index is x + D·(y + D·z);
/// z is height. As a tensor the axis order is therefore [z, y, x].
class VoxelGrid {
 public:
  VoxelGrid() = default;
  explicit VoxelGrid(std::size_t dim, double fill = 0.0);
  VoxelGrid(std::size_t dim, std::vector<double> values);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return values_.size(); }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return x + dim_ * (y + dim_ * z); }
  double at(std::size_t x, std::size_t y, std::size_t z) const { return values_[index(x, y, z)]; }
  double& at(std::size_t x, std::size_t y, std::size_t z) { return values_[index(x, y, z)]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  bool is_binary() const;
  bool in_unit_range() const;
  std::size_t count_above(double threshold = 0.5) const;
  double occupancy_fraction(double threshold = 0.5) const;
  /// Copy with every value mapped to 1 if > threshold else 0.
  VoxelGrid binarized(double threshold = 0.5) const;

  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

using Vec3 = std::array<double, 3>;

inline constexpr std::size_t kNumLandmarks = 10;

/// Fixed semantic order of the chair landmarks.
inline constexpr std::array<std::string_view, kNumLandmarks> kLandmarkNames = {
    "back-topleft",  "back-topright",  "leg-frontright", "leg-frontleft",  "leg-backleft",
    "leg-backright", "seat-backleft",  "seat-backright", "seat-frontleft", "seat-frontright",
};

/// Ten points in normalized [0,1]^3 coordinates, in kLandmarkNames order.
using LandmarkSet = std::array<Vec3, kNumLandmarks>;

/// Normalized coordinate → voxel space (voxel centers at integer coordinates).
inline double to_voxel_coord(double p, std::size_t dim) { return p * static_cast<double>(dim) - 0.5; }
inline double to_normalized_coord(double v, std::size_t dim) { return (v + 0.5) / static_cast<double>(dim); }

LandmarkSet clamped(const LandmarkSet& l);

/// Stack grids into a [B,1,D,D,D] tensor.
Tensor grids_to_tensor(std::span<const VoxelGrid> grids);
/// Split a [B,1,D,D,D] tensor into grids.
std::vector<VoxelGrid> tensor_to_grids(const Tensor& t);

/// Stack landmark sets into a [B,30] tensor.
Tensor landmarks_to_tensor(std::span<const LandmarkSet> sets);
/// Interpret rows of a [B,30] tensor as landmark sets; clamps to [0,1]^3 when asked.
std::vector<LandmarkSet> tensor_to_landmarks(const Tensor& t, bool clamp_to_box = true);

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes "VOXB1" (binary grids, one byte per voxel) or "VOXF1" (float32 values).
void write_voxel_file(const std::filesystem::path& path, const VoxelGrid& grid, bool binary);
VoxelGrid read_voxel_file(const std::filesystem::path& path);

/// JSON with "order" (landmark names) and "points" (10 [x,y,z] triples).
void write_landmark_file(const std::filesystem::path& path, const LandmarkSet& landmarks);
LandmarkSet read_landmark_file(const std::filesystem::path& path);

}  // namespace voxelstruct
