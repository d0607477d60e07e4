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
#include "voxelstruct/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <numeric>

#include "voxelstruct/hash.hpp"
#include "voxelstruct/rng.hpp"

namespace voxelstruct {

using nlohmann::json;

std::string to_string(BackStyle s) {
  switch (s) {
    case BackStyle::full_panel: return "full-panel";
    case BackStyle::two_post: return "two-post";
    case BackStyle::slatted: return "slatted";
  }
  return "?";
}

std::string to_string(LegStyle s) { return s == LegStyle::straight ? "straight" : "tapered"; }

namespace {

BackStyle back_style_from(const std::string& s) {
  if (s == "full-panel") return BackStyle::full_panel;
  if (s == "two-post") return BackStyle::two_post;
  if (s == "slatted") return BackStyle::slatted;
  throw IoError("unknown back_style '" + s + "'");
}

LegStyle leg_style_from(const std::string& s) {
  if (s == "straight") return LegStyle::straight;
  if (s == "tapered") return LegStyle::tapered;
  throw IoError("unknown leg_style '" + s + "'");
}

double x_min(const ChairParams& p) { return 0.5 - 0.5 * p.seat_width; }
double x_max(const ChairParams& p) { return 0.5 + 0.5 * p.seat_width; }
double y_min(const ChairParams& p) { return 0.5 - 0.5 * p.seat_depth; }
double y_max(const ChairParams& p) { return 0.5 + 0.5 * p.seat_depth; }

Box box(double x0, double x1, double y0, double y1, double z0, double z1) { return Box{{x0, y0, z0}, {x1, y1, z1}}; }

}  // namespace

std::string chair_violation(const ChairParams& p, std::size_t target_dim) {
  const double tmin = 2.0 / static_cast<double>(target_dim) - 1e-12;
  if (x_min(p) < kFloorZ || x_max(p) > kBoxMax || y_min(p) < kFloorZ || y_max(p) > kBoxMax) {
    return "seat footprint leaves the box";
  }
  if (p.seat_height <= kFloorZ) return "seat below the floor";
  if (p.back_top() > kBoxMax + 1e-12) return "back leaves the box";
  if (p.back_height <= 0.0) return "back does not rise above the seat";
  if (p.seat_thickness < tmin || p.leg_thickness < tmin || p.back_thickness < tmin) return "part thinner than 2 voxels";
  if (p.leg_style == LegStyle::tapered && 0.7 * p.leg_thickness < tmin) return "tapered leg thinner than 2 voxels";
  if (2.0 * p.leg_thickness > std::min(p.seat_width, p.seat_depth)) return "legs overlap";
  if (p.back_thickness > 0.5 * p.seat_depth) return "back thicker than half the seat";
  for (const Box& b : chair_boxes(p)) {
    if (b.lo[2] < kFloorZ - 1e-12) return "part below the floor";
  }
  if (p.leg_count == 4) {
    // Legs must touch the floor.
    bool touches = false;
    for (const Box& b : chair_boxes(p)) touches = touches || std::abs(b.lo[2] - kFloorZ) < 1e-12;
    if (!touches) return "legs do not reach the floor";
  }
  return {};
}

ChairParams sample_chair(std::uint64_t seed, std::size_t target_dim, bool hard) {
  Rng rng(stream_seed(seed, {key(Stream::chair)}));
  const double d = static_cast<double>(target_dim);
  const double tmin = 2.0 / d;
  // Lengths are snapped to the target lattice so part faces land on voxel
  // boundaries at target_dim and every multiple of it.
  auto snap = [d](double v) { return std::round(v * d) / d; };
  auto snap_even = [d](double v) { return 2.0 * std::round(0.5 * v * d) / d; };
  ChairParams p;
  p.seat_width = snap_even(rng.uniform(0.45, 0.75));
  p.seat_depth = snap_even(rng.uniform(0.40, 0.65));
  p.seat_height = snap(rng.uniform(0.30, 0.45));
  p.seat_thickness = std::max(tmin, snap(rng.uniform(tmin, tmin + 0.05)));
  p.back_thickness = std::max(tmin, snap(rng.uniform(tmin, tmin + 0.04)));
  const double room = std::floor((kBoxMax - p.seat_top()) * d + 1e-9) / d;
  p.back_height = std::min(room, snap(rng.uniform(0.2, std::min(0.45, room))));
  p.back_style = static_cast<BackStyle>(rng.below(3));
  p.leg_style = static_cast<LegStyle>(rng.below(2));
  const double leg_min = std::ceil((p.leg_style == LegStyle::tapered ? tmin / 0.7 : tmin) * d - 1e-9) / d;
  const double leg_max = std::floor(0.45 * std::min(p.seat_width, p.seat_depth) * d) / d;
  p.leg_thickness = std::clamp(snap(rng.uniform(leg_min, leg_min + 0.05)), leg_min, std::max(leg_min, leg_max));
  p.leg_count = 4;
  if (hard && rng.uniform() < 0.25) p.leg_count = rng.bernoulli(0.5) ? 0 : 5;
  return p;
}

std::vector<Box> chair_boxes(const ChairParams& p) {
  std::vector<Box> boxes;
  const double x0 = x_min(p), x1 = x_max(p), y0 = y_min(p), y1 = y_max(p);
  const double lt = p.leg_thickness;
  const double sh = p.seat_height, st = p.seat_top(), top = p.back_top();

  if (p.leg_count == 4) {
    const double cx[2] = {x0 + 0.5 * lt, x1 - 0.5 * lt};
    const double cy[2] = {y0 + 0.5 * lt, y1 - 0.5 * lt};
    for (double lx : cx)
      for (double ly : cy) {
        if (p.leg_style == LegStyle::straight) {
          boxes.push_back(box(lx - 0.5 * lt, lx + 0.5 * lt, ly - 0.5 * lt, ly + 0.5 * lt, kFloorZ, sh));
        } else {
          // Full section in the upper half, narrower lower half on the same axis.
          const double mid = 0.5 * (kFloorZ + sh);
          const double nt = 0.7 * lt;
          boxes.push_back(box(lx - 0.5 * lt, lx + 0.5 * lt, ly - 0.5 * lt, ly + 0.5 * lt, mid, sh));
          boxes.push_back(box(lx - 0.5 * nt, lx + 0.5 * nt, ly - 0.5 * nt, ly + 0.5 * nt, kFloorZ, mid));
        }
      }
  } else {
    // Pedestal column plus a base plate (0 legs) or five radial feet.
    const double c = 0.5, h = 0.5 * lt;
    boxes.push_back(box(c - h, c + h, c - h, c + h, kFloorZ, sh));
    if (p.leg_count == 0) {
      boxes.push_back(box(c - 2 * lt, c + 2 * lt, c - 2 * lt, c + 2 * lt, kFloorZ, kFloorZ + p.seat_thickness));
    } else {
      const double reach = 0.5 * std::min(p.seat_width, p.seat_depth);
      for (int k = 0; k < 5; ++k) {
        const double a = 2.0 * 3.14159265358979323846 * k / 5.0;
        const double fx = c + reach * std::cos(a), fy = c + reach * std::sin(a);
        const double lx = std::min(c, fx) - h, hx = std::max(c, fx) + h;
        const double ly = std::min(c, fy) - h, hy = std::max(c, fy) + h;
        // Thin bar approximated by its bounding box only along the dominant axis.
        if (std::abs(fx - c) >= std::abs(fy - c)) {
          boxes.push_back(box(lx, hx, fy - h, fy + h, kFloorZ, kFloorZ + lt));
        } else {
          boxes.push_back(box(fx - h, fx + h, ly, hy, kFloorZ, kFloorZ + lt));
        }
      }
    }
  }

  boxes.push_back(box(x0, x1, y0, y1, sh, st));

  const double bt = p.back_thickness;
  const double by0 = y1 - bt;
  switch (p.back_style) {
    case BackStyle::full_panel:
      boxes.push_back(box(x0, x1, by0, y1, st, top));
      break;
    case BackStyle::two_post:
    case BackStyle::slatted: {
      const double pw = std::max(lt, bt);
      boxes.push_back(box(x0, x0 + pw, by0, y1, st, top));
      boxes.push_back(box(x1 - pw, x1, by0, y1, st, top));
      const double rail = std::min(bt, 0.5 * p.back_height);
      boxes.push_back(box(x0, x1, by0, y1, top - rail, top));
      if (p.back_style == BackStyle::slatted) {
        for (double f : {0.3, 0.6}) {
          const double zc = st + f * (p.back_height - rail);
          boxes.push_back(box(x0, x1, by0, y1, zc, std::min(top, zc + 0.5 * rail + 1e-9)));
        }
      }
      break;
    }
  }
  return boxes;
}

VoxelGrid voxelize(const ChairParams& p, std::size_t dim) {
  if (dim < 16) throw ConfigError("voxelize: dim must be >= 16");
  VoxelGrid g(dim);
  const double d = static_cast<double>(dim);
  for (const Box& b : chair_boxes(p)) {
    long lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::max(0L, static_cast<long>(std::ceil(b.lo[a] * d - 0.5)));
      hi[a] = std::min(static_cast<long>(dim) - 1, static_cast<long>(std::floor(b.hi[a] * d - 0.5)));
    }
    for (long z = lo[2]; z <= hi[2]; ++z)
      for (long y = lo[1]; y <= hi[1]; ++y)
        for (long x = lo[0]; x <= hi[0]; ++x)
          g.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z)) = 1.0;
  }
  return g;
}

LandmarkSet analytic_landmarks(const ChairParams& p) {
  if (p.leg_count != 4) throw ConfigError("analytic_landmarks: only defined for four-legged chairs");
  const double x0 = x_min(p), x1 = x_max(p), y0 = y_min(p), y1 = y_max(p);
  const double h = 0.5 * p.leg_thickness;
  const double st = p.seat_top(), top = p.back_top();
  const double by = y1 - 0.5 * p.back_thickness;
  return LandmarkSet{{
      {x0, by, top},                   // back-topleft
      {x1, by, top},                   // back-topright
      {x1 - h, y0 + h, kFloorZ},       // leg-frontright
      {x0 + h, y0 + h, kFloorZ},       // leg-frontleft
      {x0 + h, y1 - h, kFloorZ},       // leg-backleft
      {x1 - h, y1 - h, kFloorZ},       // leg-backright
      {x0, y1, st},                    // seat-backleft
      {x1, y1, st},                    // seat-backright
      {x0, y0, st},                    // seat-frontleft
      {x1, y0, st},                    // seat-frontright
  }};
}

double max_landmark_surface_gap(const VoxelGrid& grid, const LandmarkSet& l) {
  const std::size_t d = grid.dim();
  double worst = 0.0;
  for (const Vec3& p : l) {
    Vec3 c;
    for (int a = 0; a < 3; ++a) c[a] = to_voxel_coord(p[a], d);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t z = 0; z < d; ++z)
      for (std::size_t y = 0; y < d; ++y)
        for (std::size_t x = 0; x < d; ++x) {
          if (grid.at(x, y, z) <= 0.5) continue;
          const double gap = std::max({std::abs(static_cast<double>(x) - c[0]), std::abs(static_cast<double>(y) - c[1]),
                                       std::abs(static_cast<double>(z) - c[2])});
          best = std::min(best, gap);
        }
    worst = std::max(worst, best);
  }
  return worst;
}

Sample augment_scale(const Sample& s, double sx, double sy, double sz) {
  const double f[3] = {sx, sy, sz};
  for (double v : f) {
    if (!(v > 0.0)) throw ConfigError("augment_scale: factors must be positive");
  }
  Sample out = s;
  out.params.reset();  // the scaled chair is no longer described by its params
  const std::size_t d = s.shape.dim();
  const double dd = static_cast<double>(d);
  bool clipped = s.clipped;

  // Source index for each output index, per axis.
  std::vector<long> src[3];
  for (int a = 0; a < 3; ++a) {
    src[a].resize(d);
    for (std::size_t i = 0; i < d; ++i) {
      const double p = (static_cast<double>(i) + 0.5) / dd;
      const double q = 0.5 + (p - 0.5) / f[a];
      const long j = static_cast<long>(std::floor(q * dd));
      src[a][i] = (j >= 0 && j < static_cast<long>(d)) ? j : -1;
    }
  }
  VoxelGrid g(d);
  for (std::size_t z = 0; z < d; ++z) {
    if (src[2][z] < 0) continue;
    for (std::size_t y = 0; y < d; ++y) {
      if (src[1][y] < 0) continue;
      for (std::size_t x = 0; x < d; ++x) {
        if (src[0][x] < 0) continue;
        g.at(x, y, z) = s.shape.at(static_cast<std::size_t>(src[0][x]), static_cast<std::size_t>(src[1][y]),
                                   static_cast<std::size_t>(src[2][z]));
      }
    }
  }
  // Flag occupancy whose forward image leaves the box.
  for (std::size_t z = 0; z < d && !clipped; ++z)
    for (std::size_t y = 0; y < d && !clipped; ++y)
      for (std::size_t x = 0; x < d && !clipped; ++x) {
        if (s.shape.at(x, y, z) <= 0.0) continue;
        const std::size_t idx[3] = {x, y, z};
        for (int a = 0; a < 3; ++a) {
          const double q = 0.5 + ((static_cast<double>(idx[a]) + 0.5) / dd - 0.5) * f[a];
          if (q < 0.0 || q > 1.0) clipped = true;
        }
      }
  out.shape = std::move(g);
  if (s.landmarks) {
    LandmarkSet l = *s.landmarks;
    for (Vec3& p : l)
      for (int a = 0; a < 3; ++a) {
        const double q = p[a] * f[a] + 0.5 * (1.0 - f[a]);  // exact for f = 1
        if (q < 0.0 || q > 1.0) clipped = true;
        p[a] = std::clamp(q, 0.0, 1.0);
      }
    out.landmarks = l;
  }
  out.clipped = clipped;
  return out;
}

std::array<double, 3> draw_scale_factors(std::uint64_t seed) {
  Rng rng(seed);
  return {rng.uniform(0.7, 1.3), rng.uniform(0.7, 1.3), rng.uniform(0.7, 1.3)};
}

VoxelGrid sparsify(const VoxelGrid& s, double level, std::uint64_t seed) {
  if (!(level >= 0.0 && level <= 1.0)) throw ConfigError("sparsify: level must be in [0,1]");
  Rng rng(stream_seed(seed, {key(Stream::sparsify)}));
  VoxelGrid out = s;
  for (double& v : out.values()) {
    if (v <= 0.0) continue;
    if (rng.uniform() < level) v = 0.0;
  }
  return out;
}

VoxelGrid dilate(const VoxelGrid& s, int iterations) {
  if (iterations < 0) throw ConfigError("dilate: iterations must be >= 0");
  VoxelGrid cur = s;
  const long d = static_cast<long>(s.dim());
  for (int it = 0; it < iterations; ++it) {
    VoxelGrid next = cur;
    for (long z = 0; z < d; ++z)
      for (long y = 0; y < d; ++y)
        for (long x = 0; x < d; ++x) {
          if (cur.at(x, y, z) <= 0.5) continue;
          const long nb[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z}, {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
          for (const auto& n : nb) {
            if (n[0] < 0 || n[1] < 0 || n[2] < 0 || n[0] >= d || n[1] >= d || n[2] >= d) continue;
            next.at(static_cast<std::size_t>(n[0]), static_cast<std::size_t>(n[1]), static_cast<std::size_t>(n[2])) = 1.0;
          }
        }
    cur = std::move(next);
  }
  return cur;
}

VoxelGrid crop(const VoxelGrid& s, int axis, double fraction, bool from_high) {
  if (axis < 0 || axis > 2) throw ConfigError("crop: axis must be 0, 1 or 2");
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("crop: fraction must be in [0,1]");
  VoxelGrid out = s;
  const std::size_t d = s.dim();
  const auto cut = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(d)));
  for (std::size_t z = 0; z < d; ++z)
    for (std::size_t y = 0; y < d; ++y)
      for (std::size_t x = 0; x < d; ++x) {
        const std::size_t c = axis == 0 ? x : axis == 1 ? y : z;
        const bool removed = from_high ? c >= d - cut : c < cut;
        if (removed) out.at(x, y, z) = 0.0;
      }
  return out;
}

VoxelGrid degrade(const VoxelGrid& s, const Degradation& d, std::uint64_t seed) {
  VoxelGrid out = s;
  if (d.crop_axis >= 0) out = crop(out, d.crop_axis, d.crop_fraction, d.crop_from_high);
  if (d.sparsify_level > 0.0) out = sparsify(out, d.sparsify_level, seed);
  if (d.dilation_iters > 0) out = dilate(out, d.dilation_iters);
  return out;
}

DatasetSplit make_split(std::size_t n_total, double test_frac, double annotated_frac, std::uint64_t seed) {
  if (!(test_frac > 0.0 && test_frac < 1.0)) throw ConfigError("make_split: test_frac must be in (0,1)");
  if (!(annotated_frac >= 0.0 && annotated_frac <= 1.0)) throw ConfigError("make_split: annotated_frac must be in [0,1]");
  const auto n_test = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(n_total)));
  if (n_test == 0 || n_test >= n_total) throw ConfigError("make_split: n_total too small for a train/test split");
  const std::size_t n_train = n_total - n_test;
  const auto n_ann_train = static_cast<std::size_t>(std::llround(annotated_frac * static_cast<double>(n_train)));
  const auto n_ann_test = static_cast<std::size_t>(std::llround(annotated_frac * static_cast<double>(n_test)));
  if (annotated_frac > 0.0 && (n_ann_train == 0 || n_ann_test == 0)) {
    throw ConfigError("make_split: n_total too small for non-empty annotated sets");
  }
  std::vector<std::uint64_t> perm(n_total);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(stream_seed(seed, {key(Stream::split)}));
  for (std::size_t i = n_total; i-- > 1;) std::swap(perm[i], perm[rng.below(i + 1)]);

  DatasetSplit split;
  split.seed = seed;
  split.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  split.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
  split.annotated_test.assign(split.test.begin(), split.test.begin() + static_cast<std::ptrdiff_t>(n_ann_test));
  split.annotated_train.assign(split.train.begin(), split.train.begin() + static_cast<std::ptrdiff_t>(n_ann_train));
  for (auto* v : {&split.train, &split.test, &split.annotated_train, &split.annotated_test}) std::sort(v->begin(), v->end());
  return split;
}

std::vector<const Sample*> Dataset::select(const std::vector<std::uint64_t>& ids) const {
  std::vector<const Sample*> out;
  out.reserve(ids.size());
  for (std::uint64_t id : ids) out.push_back(&samples.at(id));
  return out;
}

namespace {

json config_json(const DatasetConfig& c) {
  return json{{"count", c.count},         {"dim", c.dim}, {"seed", c.seed}, {"test_frac", c.test_frac},
              {"annotated_frac", c.annotated_frac}, {"hard", c.hard}};
}

json params_json(const ChairParams& p) {
  return json{{"seat_width", p.seat_width},
              {"seat_depth", p.seat_depth},
              {"seat_thickness", p.seat_thickness},
              {"seat_height", p.seat_height},
              {"leg_thickness", p.leg_thickness},
              {"back_height", p.back_height},
              {"back_thickness", p.back_thickness},
              {"back_style", to_string(p.back_style)},
              {"leg_style", to_string(p.leg_style)},
              {"leg_count", p.leg_count}};
}

ChairParams params_from_json(const json& j) {
  ChairParams p;
  p.seat_width = j.at("seat_width").get<double>();
  p.seat_depth = j.at("seat_depth").get<double>();
  p.seat_thickness = j.at("seat_thickness").get<double>();
  p.seat_height = j.at("seat_height").get<double>();
  p.leg_thickness = j.at("leg_thickness").get<double>();
  p.back_height = j.at("back_height").get<double>();
  p.back_thickness = j.at("back_thickness").get<double>();
  p.back_style = back_style_from(j.at("back_style").get<std::string>());
  p.leg_style = leg_style_from(j.at("leg_style").get<std::string>());
  p.leg_count = j.at("leg_count").get<int>();
  return p;
}

std::string sample_stem(std::uint64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05llu", static_cast<unsigned long long>(id));
  return buf;
}

void filter_annotated(Dataset& ds) {
  auto keep = [&](std::vector<std::uint64_t>& ids) {
    std::erase_if(ids, [&](std::uint64_t id) { return !ds.samples.at(id).landmarks.has_value(); });
  };
  // Drop analytic landmarks outside the annotated subsets first.
  std::vector<bool> annotated(ds.samples.size(), false);
  for (auto id : ds.split.annotated_train) annotated[id] = true;
  for (auto id : ds.split.annotated_test) annotated[id] = true;
  for (Sample& s : ds.samples) {
    if (!annotated[s.id]) s.landmarks.reset();
  }
  keep(ds.split.annotated_train);
  keep(ds.split.annotated_test);
}

}  // namespace

std::string dataset_config_hash(const DatasetConfig& cfg) { return content_hash(config_json(cfg).dump()); }

Dataset generate_dataset(const DatasetConfig& cfg) {
  if (cfg.count < 2) throw ConfigError("generate_dataset: count must be >= 2");
  Dataset ds;
  ds.config = cfg;
  ds.config_hash = dataset_config_hash(cfg);
  ds.samples.resize(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) {
    Sample& s = ds.samples[i];
    s.id = i;
    const ChairParams p = sample_chair(stream_seed(cfg.seed, {key(Stream::chair), i}), cfg.dim, cfg.hard);
    s.params = p;
    s.shape = voxelize(p, cfg.dim);
    if (p.leg_count == 4) s.landmarks = analytic_landmarks(p);
  }
  if (cfg.annotated_frac > 0.0) {
    ds.split = make_split(cfg.count, cfg.test_frac, cfg.annotated_frac, cfg.seed);
  } else {
    ds.split = make_split(cfg.count, cfg.test_frac, 0.0, cfg.seed);
  }
  filter_annotated(ds);
  return ds;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "voxels", ec);
  fs::create_directories(dir / "landmarks", ec);
  if (ec) throw IoError("cannot create dataset directory '" + dir.string() + "': " + ec.message());

  std::vector<std::string> membership(ds.samples.size(), "train");
  for (auto id : ds.split.test) membership[id] = "test";

  json samples = json::array();
  for (const Sample& s : ds.samples) {
    const std::string stem = sample_stem(s.id);
    const std::string vox_rel = "voxels/" + stem + ".voxb";
    const bool binary = s.shape.is_binary();
    write_voxel_file(dir / vox_rel, s.shape, binary);
    json entry{{"id", s.id}, {"voxels", vox_rel}, {"split", membership[s.id]}, {"annotated", s.landmarks.has_value()}};
    if (s.landmarks) {
      const std::string lm_rel = "landmarks/" + stem + ".json";
      write_landmark_file(dir / lm_rel, *s.landmarks);
      entry["landmarks"] = lm_rel;
    } else {
      entry["landmarks"] = nullptr;
    }
    entry["params"] = s.params ? params_json(*s.params) : json(nullptr);
    samples.push_back(std::move(entry));
  }
  json manifest{{"format", "voxelstruct-dataset-1"},
                {"generator_seed", ds.config.seed},
                {"grid_dim", ds.config.dim},
                {"config", config_json(ds.config)},
                {"config_hash", ds.config_hash},
                {"split",
                 {{"seed", ds.split.seed},
                  {"train", ds.split.train},
                  {"test", ds.split.test},
                  {"annotated_train", ds.split.annotated_train},
                  {"annotated_test", ds.split.annotated_test}}},
                {"samples", std::move(samples)}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in '" + dir.string() + "'");
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("write failed for manifest in '" + dir.string() + "'");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no manifest.json in '" + dir.string() + "'");
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(std::string("invalid manifest: ") + e.what());
  }
  try {
    Dataset ds;
    const json& c = m.at("config");
    ds.config.count = c.at("count").get<std::size_t>();
    ds.config.dim = c.at("dim").get<std::size_t>();
    ds.config.seed = c.at("seed").get<std::uint64_t>();
    ds.config.test_frac = c.at("test_frac").get<double>();
    ds.config.annotated_frac = c.at("annotated_frac").get<double>();
    ds.config.hard = c.at("hard").get<bool>();
    ds.config_hash = m.at("config_hash").get<std::string>();
    const json& sp = m.at("split");
    ds.split.seed = sp.at("seed").get<std::uint64_t>();
    ds.split.train = sp.at("train").get<std::vector<std::uint64_t>>();
    ds.split.test = sp.at("test").get<std::vector<std::uint64_t>>();
    ds.split.annotated_train = sp.at("annotated_train").get<std::vector<std::uint64_t>>();
    ds.split.annotated_test = sp.at("annotated_test").get<std::vector<std::uint64_t>>();
    for (const json& e : m.at("samples")) {
      Sample s;
      s.id = e.at("id").get<std::uint64_t>();
      if (s.id != ds.samples.size()) throw IoError("manifest sample ids must be 0..n-1 in order");
      s.shape = read_voxel_file(dir / e.at("voxels").get<std::string>());
      if (!e.at("landmarks").is_null()) s.landmarks = read_landmark_file(dir / e.at("landmarks").get<std::string>());
      if (e.contains("params") && !e.at("params").is_null()) s.params = params_from_json(e.at("params"));
      ds.samples.push_back(std::move(s));
    }
    return ds;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  }
}

Dataset import_voxel_directory(const std::filesystem::path& src, double test_frac, std::uint64_t seed) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(src)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file() && ext.starts_with(".vox")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.size() < 2) throw IoError("import: need at least two voxel files in '" + src.string() + "'");
  Dataset ds;
  ds.config.count = files.size();
  ds.config.seed = seed;
  ds.config.test_frac = test_frac;
  for (std::size_t i = 0; i < files.size(); ++i) {
    Sample s;
    s.id = i;
    s.shape = read_voxel_file(files[i]);
    if (i > 0 && s.shape.dim() != ds.samples.front().shape.dim()) throw IoError("import: mixed grid dims");
    auto lm = files[i];
    lm.replace_extension(".json");
    if (fs::exists(lm)) s.landmarks = read_landmark_file(lm);
    ds.samples.push_back(std::move(s));
  }
  ds.config.dim = ds.samples.front().shape.dim();
  ds.split = make_split(files.size(), test_frac, 0.0, seed);
  for (auto id : ds.split.train) {
    if (ds.samples[id].landmarks) ds.split.annotated_train.push_back(id);
  }
  for (auto id : ds.split.test) {
    if (ds.samples[id].landmarks) ds.split.annotated_test.push_back(id);
  }
  std::size_t annotated = ds.split.annotated_train.size() + ds.split.annotated_test.size();
  ds.config.annotated_frac = static_cast<double>(annotated) / static_cast<double>(files.size());
  std::string fingerprint = config_json(ds.config).dump();
  for (const auto& f : files) fingerprint += "|" + f.filename().string();
  ds.config_hash = content_hash(fingerprint);
  return ds;
}

}  // namespace voxelstruct
