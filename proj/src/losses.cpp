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
#include "voxelstruct/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "voxelstruct/ops.hpp"

namespace voxelstruct {
namespace {

constexpr double kProbClamp = 1e-7;

void check_landmark_tensor(const char* op, const Tensor& t) {
  if (t.rank() != 2 || t.dim(1) != 3 * kNumLandmarks) {
    throw DimensionError(std::string(op) + ": expected [B,30] landmarks, got " + shape_str(t.shape()));
  }
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {alpha1, alpha2, struct_correctness, struct_robustness, kl_weight}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and non-negative");
  }
}

Var recon_loss(Var pred, const Tensor& target) {
  const Tensor& p = pred.value();
  if (p.shape() != target.shape() || p.rank() < 1) {
    throw DimensionError("recon_loss: prediction " + shape_str(p.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  for (double t : target.data()) {
    if (t != 0.0 && t != 1.0) throw std::invalid_argument("recon_loss: target grid must be binary");
  }
  const double batch = static_cast<double>(p.dim(0));
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
    total -= target[i] == 1.0 ? std::log(q) : std::log1p(-q);
  }
  auto tgt = std::make_shared<Tensor>(target);
  return pred.tape().record("recon_loss", Tensor::scalar(total / batch), {pred}, [tgt, batch](BackwardContext& ctx) {
    Tensor* g = ctx.input_grad(0);
    const Tensor& p = ctx.input(0);
    const double up = ctx.out_grad()[0] / batch;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] < kProbClamp || p[i] > 1.0 - kProbClamp) continue;
      (*g)[i] += up * ((*tgt)[i] == 1.0 ? -1.0 / p[i] : 1.0 / (1.0 - p[i]));
    }
  });
}

Var kl_loss(Var mu, Var logvar) {
  const Tensor& m = mu.value();
  const Tensor& lv = logvar.value();
  if (m.shape() != lv.shape() || m.rank() != 2) {
    throw DimensionError("kl_loss: mu " + shape_str(m.shape()) + " vs logvar " + shape_str(lv.shape()));
  }
  const double batch = static_cast<double>(m.dim(0));
  double total = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) total += 0.5 * (m[i] * m[i] + std::exp(lv[i]) - 1.0 - lv[i]);
  return mu.tape().record("kl_loss", Tensor::scalar(total / batch), {mu, logvar}, [batch](BackwardContext& ctx) {
    const double up = ctx.out_grad()[0] / batch;
    if (Tensor* gm = ctx.input_grad(0)) {
      for (std::size_t i = 0; i < gm->size(); ++i) (*gm)[i] += up * ctx.input(0)[i];
    }
    if (Tensor* gl = ctx.input_grad(1)) {
      for (std::size_t i = 0; i < gl->size(); ++i) (*gl)[i] += up * 0.5 * (std::exp(ctx.input(1)[i]) - 1.0);
    }
  });
}

double landmark_error(const Tensor& pred, const Tensor& truth) {
  check_landmark_tensor("landmark_error", pred);
  if (pred.shape() != truth.shape()) {
    throw DimensionError("landmark_error: " + shape_str(pred.shape()) + " vs " + shape_str(truth.shape()));
  }
  const std::size_t batch = pred.dim(0);
  double total = 0.0;
  for (std::size_t j = 0; j < batch * kNumLandmarks; ++j) {
    double d2 = 0.0;
    for (std::size_t a = 0; a < 3; ++a) {
      const double d = pred[3 * j + a] - truth[3 * j + a];
      d2 += d * d;
    }
    total += std::sqrt(d2);
  }
  return total / static_cast<double>(batch * kNumLandmarks);
}

Var landmark_error(Var pred, const Tensor& truth) {
  const double value = landmark_error(pred.value(), truth);
  auto tgt = std::make_shared<Tensor>(truth);
  const double denom = static_cast<double>(pred.value().dim(0) * kNumLandmarks);
  return pred.tape().record("landmark_error", Tensor::scalar(value), {pred}, [tgt, denom](BackwardContext& ctx) {
    Tensor* g = ctx.input_grad(0);
    const Tensor& p = ctx.input(0);
    const double up = ctx.out_grad()[0] / denom;
    for (std::size_t j = 0; j < p.size() / 3; ++j) {
      double d[3];
      double d2 = 0.0;
      for (std::size_t a = 0; a < 3; ++a) {
        d[a] = p[3 * j + a] - (*tgt)[3 * j + a];
        d2 += d[a] * d[a];
      }
      if (d2 == 0.0) continue;  // subgradient 0 at the kink
      const double inv = 1.0 / std::sqrt(d2);
      for (std::size_t a = 0; a < 3; ++a) (*g)[3 * j + a] += up * d[a] * inv;
    }
  });
}

Var struct_loss(Var pred_clean, Var pred_recon, const Tensor& truth, const LossWeights& w) {
  check_landmark_tensor("struct_loss", pred_clean.value());
  if (pred_clean.shape() != pred_recon.shape() || pred_clean.shape() != truth.shape()) {
    throw DimensionError("struct_loss: shapes " + shape_str(pred_clean.shape()) + ", " +
                         shape_str(pred_recon.shape()) + ", " + shape_str(truth.shape()));
  }
  return add(scale(landmark_error(pred_clean, truth), w.struct_correctness),
             scale(landmark_error(pred_recon, truth), w.struct_robustness));
}

ConsistencyKernel consistency_kernel_for(std::size_t grid_dim) {
  ConsistencyKernel k;
  k.sigma = std::max(1.0, 2.0 * static_cast<double>(grid_dim) / 64.0);
  k.trunc = 2.0 * k.sigma;
  return k;
}

LandmarkPeak landmark_peak(std::span<const double> grid, std::size_t dim, const Vec3& center,
                           const ConsistencyKernel& kernel) {
  LandmarkPeak best;
  const double inv_two_var = 1.0 / (2.0 * kernel.sigma * kernel.sigma);
  const double r2max = kernel.trunc * kernel.trunc;
  const long hi = static_cast<long>(dim) - 1;
  long lo_i[3], hi_i[3];
  for (int a = 0; a < 3; ++a) {
    lo_i[a] = std::max(0L, static_cast<long>(std::ceil(center[a] - kernel.trunc)));
    hi_i[a] = std::min(hi, static_cast<long>(std::floor(center[a] + kernel.trunc)));
  }
  // z, y, x ascending == ascending linear index, so the first maximum wins ties.
  for (long z = lo_i[2]; z <= hi_i[2]; ++z) {
    const double dz = static_cast<double>(z) - center[2];
    for (long y = lo_i[1]; y <= hi_i[1]; ++y) {
      const double dy = static_cast<double>(y) - center[1];
      for (long x = lo_i[0]; x <= hi_i[0]; ++x) {
        const double dx = static_cast<double>(x) - center[0];
        const double r2 = dx * dx + dy * dy + dz * dz;
        if (r2 > r2max) continue;
        const double w = std::exp(-r2 * inv_two_var);
        const std::size_t idx = static_cast<std::size_t>(x) + dim * (static_cast<std::size_t>(y) + dim * static_cast<std::size_t>(z));
        const double v = grid[idx] * w;
        if (!best.found || v > best.value) {
          best.found = true;
          best.index = idx;
          best.value = v;
          best.weight = w;
          best.offset = {dx, dy, dz};
        }
      }
    }
  }
  return best;
}

ConsistencyScore consistency_measure(const VoxelGrid& s, const LandmarkSet& l, const ConsistencyKernel& kernel) {
  if (!(kernel.sigma > 0.0) || !(kernel.trunc >= 0.0)) throw ConfigError("consistency kernel needs sigma > 0");
  ConsistencyScore score;
  const LandmarkSet lc = clamped(l);
  for (std::size_t k = 0; k < kNumLandmarks; ++k) {
    Vec3 c;
    for (int a = 0; a < 3; ++a) c[a] = to_voxel_coord(lc[k][a], s.dim());
    const LandmarkPeak peak = landmark_peak(s.values(), s.dim(), c, kernel);
    score.per_landmark[k] = peak.found ? peak.value : 0.0;
    score.total += score.per_landmark[k];
  }
  return score;
}

Var consistency_loss(Var grids, Var landmarks, const ConsistencyKernel& kernel, double eps) {
  const Tensor& g = grids.value();
  const Tensor& l = landmarks.value();
  if (g.rank() != 5 || g.dim(1) != 1 || g.dim(2) != g.dim(3) || g.dim(3) != g.dim(4)) {
    throw DimensionError("consistency_loss: expected [B,1,D,D,D] grids, got " + shape_str(g.shape()));
  }
  check_landmark_tensor("consistency_loss", l);
  if (l.dim(0) != g.dim(0)) {
    throw DimensionError("consistency_loss: batch mismatch " + shape_str(g.shape()) + " vs " + shape_str(l.shape()));
  }
  const std::size_t batch = g.dim(0), dim = g.dim(2), vox = dim * dim * dim;
  auto peaks = std::make_shared<std::vector<LandmarkPeak>>(batch * kNumLandmarks);
  auto clamped_axis = std::make_shared<std::vector<bool>>(batch * 3 * kNumLandmarks);
  auto totals = std::make_shared<std::vector<double>>(batch);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    std::span<const double> grid(g.data().data() + b * vox, vox);
    double m = 0.0;
    for (std::size_t k = 0; k < kNumLandmarks; ++k) {
      Vec3 c;
      for (std::size_t a = 0; a < 3; ++a) {
        const double p = l[b * 3 * kNumLandmarks + 3 * k + a];
        (*clamped_axis)[b * 3 * kNumLandmarks + 3 * k + a] = p < 0.0 || p > 1.0;
        c[a] = to_voxel_coord(std::clamp(p, 0.0, 1.0), dim);
      }
      LandmarkPeak& peak = (*peaks)[b * kNumLandmarks + k];
      peak = landmark_peak(grid, dim, c, kernel);
      if (peak.found) m += peak.value;
    }
    (*totals)[b] = m;
    loss += 1.0 / (m + eps);
  }
  loss /= static_cast<double>(batch);
  const double inv_var = 1.0 / (kernel.sigma * kernel.sigma);
  return grids.tape().record(
      "consistency_loss", Tensor::scalar(loss), {grids, landmarks},
      [=](BackwardContext& ctx) {
        Tensor* gg = ctx.input_grad(0);
        Tensor* gl = ctx.input_grad(1);
        const double up = ctx.out_grad()[0] / static_cast<double>(batch);
        for (std::size_t b = 0; b < batch; ++b) {
          const double me = (*totals)[b] + eps;
          const double dm = -up / (me * me);
          for (std::size_t k = 0; k < kNumLandmarks; ++k) {
            const LandmarkPeak& peak = (*peaks)[b * kNumLandmarks + k];
            if (!peak.found) continue;
            if (gg) (*gg)[b * vox + peak.index] += dm * peak.weight;
            if (gl) {
              // dM_k/dc = M_k·(v*−c)/σ², dc/dp = D.
              for (std::size_t a = 0; a < 3; ++a) {
                const std::size_t idx = b * 3 * kNumLandmarks + 3 * k + a;
                if ((*clamped_axis)[idx]) continue;
                (*gl)[idx] += dm * peak.value * peak.offset[a] * inv_var * static_cast<double>(dim);
              }
            }
          }
        }
      });
}

Var shape_total_loss(Var recon, Var kl, Var consist, const LossWeights& w) {
  for (Var v : {recon, kl, consist}) {
    if (v.value().size() != 1) throw DimensionError("shape_total_loss: inputs must be scalars");
  }
  return add(scale(add(recon, scale(kl, w.kl_weight)), w.alpha1), scale(consist, w.alpha2));
}

}  // namespace voxelstruct
