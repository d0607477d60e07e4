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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "voxelstruct/dataset.hpp"
#include "voxelstruct/nets.hpp"

namespace voxelstruct {

/// |a ∩ b| / |a ∪ b| after thresholding (value > threshold). 1.0 when both are empty.
double iou(const VoxelGrid& a, const VoxelGrid& b, double threshold = 0.5);

struct EvalRow {
  std::vector<std::string> tags;  // one entry per EvalReport::tag_columns
  std::vector<double> values;     // one entry per EvalReport::columns
};

struct EvalReport {
  std::string protocol;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> tag_columns;
  std::vector<std::string> columns;
  std::vector<EvalRow> rows;

  std::size_t column(const std::string& name) const;
  double mean(const std::string& name) const;
  /// Population standard deviation.
  double stddev(const std::string& name) const;

  /// `<prefix>.csv` with every row and `<prefix>.json` with the aggregates.
  void write(const std::filesystem::path& prefix) const;
};

/// Per sample: degrade, encode (mean), generate, IoU against the clean shape.
/// Columns: iou, both_empty.
EvalReport completion_eval(const ModelParams& model, const NetConfig& net, const std::vector<const Sample*>& samples,
                           const Degradation& degradation, std::uint64_t seed, double threshold = 0.5);

/// One row per (model, level): mean and std of completion IoU over samples and seeds.
EvalReport sparseness_sweep(const std::vector<std::pair<std::string, const ModelParams*>>& models, const NetConfig& net,
                            const std::vector<const Sample*>& samples, const std::vector<double>& levels,
                            const std::vector<std::uint64_t>& seeds, double threshold = 0.5);

struct InterpolationTrack {
  std::uint64_t a_id = 0;
  std::uint64_t b_id = 0;
  std::vector<double> t;
  std::vector<Tensor> codes;  // each [latent_dim]
  std::vector<VoxelGrid> grids;
  std::optional<std::vector<LandmarkSet>> landmarks;
};

/// z_t = (1−t)·mu(a) + t·mu(b) at t = i/(K−1); grids generated per step, and
/// detected landmarks when a detector is supplied.
InterpolationTrack interpolate(const ModelParams& model, const NetConfig& net, const Sample& a, const Sample& b,
                               std::size_t k, bool with_landmarks = false);

/// Mean IoU between consecutive frames.
double track_smoothness(const InterpolationTrack& track, double threshold = 0.5);

/// n prior samples, generated and detected; per-landmark consistency M_k and
/// their mean ("overall") per sample.
EvalReport consistency_report(const ModelParams& model, const NetConfig& net, std::size_t n_samples,
                              std::uint64_t seed);

/// Mid-axis slices as binary PGM (<prefix>_xy.pgm, _xz.pgm, _yz.pgm) and the
/// voxels above 0.5 as "x y z value" lines (<prefix>_points.txt).
void export_views(const VoxelGrid& grid, const std::filesystem::path& prefix);

}  // namespace voxelstruct
