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
#include <span>

#include "voxelstruct/autodiff.hpp"
#include "voxelstruct/voxel.hpp"

namespace voxelstruct {

struct LossWeights {
  double alpha1 = 0.1;   // shape loss
  double alpha2 = 27.0;  // shape-structure consistency
  double struct_correctness = 1.0;
  double struct_robustness = 1.0;
  double kl_weight = 1.0;

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// Per-voxel binary cross-entropy summed over the grid, averaged over the batch.
/// Predictions are clamped to [1e-7, 1 - 1e-7]. `target` must be binary.
Var recon_loss(Var pred, const Tensor& target);

/// Closed-form KL(N(mu, exp(logvar)) || N(0, I)) summed over latent dims, batch mean.
Var kl_loss(Var mu, Var logvar);

/// Mean Euclidean landmark distance: over the 10 landmarks, then over the batch.
/// Both tensors are [B,30] normalized coordinates.
Var landmark_error(Var pred, const Tensor& truth);
double landmark_error(const Tensor& pred, const Tensor& truth);

/// w_c · landmark_error(pred_clean) + w_r · landmark_error(pred_recon).
Var struct_loss(Var pred_clean, Var pred_recon, const Tensor& truth, const LossWeights& w);

/// Gaussian width and truncation radius in voxel units.
struct ConsistencyKernel {
  double sigma = 2.0;
  double trunc = 4.0;
};

/// sigma = max(1, 2·D/64) and trunc = 2·sigma: the 64^3 setting scaled to grid dim D.
ConsistencyKernel consistency_kernel_for(std::size_t grid_dim);

struct ConsistencyScore {
  std::array<double, kNumLandmarks> per_landmark{};
  double total = 0.0;
};

/// Best Gaussian-weighted voxel inside the truncation ball around one landmark.
struct LandmarkPeak {
  bool found = false;          // false when the ball contains no voxel
  std::size_t index = 0;       // linear voxel index of the maximizer
  double value = 0.0;          // s(v*) · w(v*)
  double weight = 0.0;         // w(v*)
  Vec3 offset{};               // v* − c in voxel units
};

/// `grid` is D^3 values in VoxelGrid order; `center` in voxel space.
LandmarkPeak landmark_peak(std::span<const double> grid, std::size_t dim, const Vec3& center,
                           const ConsistencyKernel& kernel);

/// Per landmark: max over voxels within trunc of s(v)·exp(−|v−c|²/(2σ²)); summed into total.
/// Landmarks are clamped to the unit box first.
ConsistencyScore consistency_measure(const VoxelGrid& s, const LandmarkSet& l, const ConsistencyKernel& kernel);

/// Batch mean of 1/(M + eps). Gradient reaches each landmark's maximizing voxel
/// and the landmark coordinates through its Gaussian weight; the maximizer is
/// held fixed during backward.
Var consistency_loss(Var grids, Var landmarks, const ConsistencyKernel& kernel, double eps = 1e-6);

/// alpha1 · (recon + kl_weight · kl) + alpha2 · consist.
Var shape_total_loss(Var recon, Var kl, Var consist, const LossWeights& w);

}  // namespace voxelstruct
