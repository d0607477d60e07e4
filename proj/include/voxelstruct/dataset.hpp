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

// Procedural chair dataset with analytic landmarks.
//
// Chairs are unions of axis-aligned boxes in the unit cube: four legs standing
// on the floor plane z = 0.05, a seat slab, and a back rising from the rear
// edge of the seat (the rear is +y, "left" is −x). Everything is a pure
// function of the seed, so regenerating a dataset gives byte-identical files.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "voxelstruct/voxel.hpp"

namespace voxelstruct {

enum class BackStyle { full_panel, two_post, slatted };
enum class LegStyle { straight, tapered };

inline constexpr double kFloorZ = 0.05;
inline constexpr double kBoxMax = 0.95;

struct ChairParams {
  double seat_width = 0.6;
  double seat_depth = 0.5;
  double seat_thickness = 0.1;
  double seat_height = 0.4;  // bottom of the seat slab = top of the legs
  double leg_thickness = 0.1;
  double back_height = 0.3;
  double back_thickness = 0.1;
  BackStyle back_style = BackStyle::full_panel;
  LegStyle leg_style = LegStyle::straight;
  /// 4 for the regular generator; 0 (pedestal) or 5 (star base) for hard cases.
  int leg_count = 4;

  double seat_top() const { return seat_height + seat_thickness; }
  double back_top() const { return seat_top() + back_height; }

  friend bool operator==(const ChairParams&, const ChairParams&) = default;
};

std::string to_string(BackStyle s);
std::string to_string(LegStyle s);

/// Checks fit inside [0.05,0.95]^3, floor contact, back above seat and minimum
/// thickness 2/target_dim. Returns an empty string when valid, else the reason.
std::string chair_violation(const ChairParams& p, std::size_t target_dim);

/// Draws parameters from fixed uniform ranges. Thicknesses start at 2/target_dim.
/// With `hard`, about a quarter of chairs get zero or five legs.
ChairParams sample_chair(std::uint64_t seed, std::size_t target_dim = 32, bool hard = false);

struct Box {
  double lo[3];
  double hi[3];
};

/// The boxes whose union is the chair.
std::vector<Box> chair_boxes(const ChairParams& p);

/// Voxel-center-inside rasterization of chair_boxes.
VoxelGrid voxelize(const ChairParams& p, std::size_t dim);

/// Leg tips on the floor at the leg axes, seat corners on the seat's top
/// surface, back tips at the top outer corners. Only defined for 4-leg chairs.
LandmarkSet analytic_landmarks(const ChairParams& p);

/// Largest per-axis distance (voxel units) from a landmark to its nearest
/// occupied voxel, maximized over landmarks. Infinity for an empty grid.
double max_landmark_surface_gap(const VoxelGrid& grid, const LandmarkSet& l);

struct Sample {
  std::uint64_t id = 0;
  VoxelGrid shape;
  std::optional<LandmarkSet> landmarks;
  std::optional<ChairParams> params;
  bool clipped = false;  // set by augment_scale when content left the box
};

/// Anisotropic scaling about the box center (0.5,0.5,0.5). The grid is
/// resampled nearest-neighbor through the inverse map; landmarks move by the
/// forward map and are clamped to [0,1].
Sample augment_scale(const Sample& s, double sx, double sy, double sz);

/// Draws three factors uniformly from [0.7, 1.3).
std::array<double, 3> draw_scale_factors(std::uint64_t seed);

/// Zeroes each occupied voxel independently with probability `level`.
VoxelGrid sparsify(const VoxelGrid& s, double level, std::uint64_t seed);

/// Iterated 6-neighborhood binary dilation.
VoxelGrid dilate(const VoxelGrid& s, int iterations);

/// Removes the slab covering `fraction` of the box along `axis` (0=x,1=y,2=z),
/// taken from the high end when `from_high`.
VoxelGrid crop(const VoxelGrid& s, int axis, double fraction, bool from_high);

struct Degradation {
  double sparsify_level = 0.0;
  int dilation_iters = 0;
  int crop_axis = -1;  // -1: no crop
  double crop_fraction = 0.0;
  bool crop_from_high = false;

  bool is_identity() const { return sparsify_level == 0.0 && dilation_iters == 0 && crop_axis < 0; }
};

/// crop, then sparsify, then dilate.
VoxelGrid degrade(const VoxelGrid& s, const Degradation& d, std::uint64_t seed);

struct DatasetSplit {
  std::vector<std::uint64_t> train;
  std::vector<std::uint64_t> test;
  std::vector<std::uint64_t> annotated_train;
  std::vector<std::uint64_t> annotated_test;
  std::uint64_t seed = 0;
};

/// Deterministic disjoint split. |test| = round(n·test_frac); annotated subsets
/// take round(annotated_frac·|split|) ids from each split.
DatasetSplit make_split(std::size_t n_total, double test_frac, double annotated_frac, std::uint64_t seed);

struct DatasetConfig {
  std::size_t count = 1000;
  std::size_t dim = 32;
  std::uint64_t seed = 0;
  double test_frac = 0.2;
  double annotated_frac = 0.24;
  bool hard = false;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct Dataset {
  DatasetConfig config;
  std::string config_hash;
  std::vector<Sample> samples;  // indexed by id
  DatasetSplit split;

  std::vector<const Sample*> select(const std::vector<std::uint64_t>& ids) const;
};

std::string dataset_config_hash(const DatasetConfig& cfg);

/// Samples are annotated only if their id is in an annotated subset; landmarks
/// of other samples are dropped. Hard (non-4-leg) chairs are never annotated.
Dataset generate_dataset(const DatasetConfig& cfg);

/// Writes voxels/, landmarks/ and manifest.json under `dir`.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

/// Builds a dataset from externally produced VOXB1/VOXF1 files (*.vox*) in
/// `src`, picking up "<stem>.json" landmark files next to them when present.
Dataset import_voxel_directory(const std::filesystem::path& src, double test_frac, std::uint64_t seed);

}  // namespace voxelstruct
