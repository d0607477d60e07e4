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
#include "voxelstruct/voxel.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <json.hpp>

namespace voxelstruct {

VoxelGrid::VoxelGrid(std::size_t dim, double fill) : dim_(dim), values_(dim * dim * dim, fill) {}

VoxelGrid::VoxelGrid(std::size_t dim, std::vector<double> values) : dim_(dim), values_(std::move(values)) {
  if (values_.size() != dim * dim * dim) {
    throw DimensionError("voxel grid of dim " + std::to_string(dim) + " needs " + std::to_string(dim * dim * dim) +
                         " values, got " + std::to_string(values_.size()));
  }
}

bool VoxelGrid::is_binary() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0 || v == 1.0; });
}

bool VoxelGrid::in_unit_range() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

std::size_t VoxelGrid::count_above(double threshold) const {
  return static_cast<std::size_t>(
      std::count_if(values_.begin(), values_.end(), [threshold](double v) { return v > threshold; }));
}

double VoxelGrid::occupancy_fraction(double threshold) const {
  return values_.empty() ? 0.0 : static_cast<double>(count_above(threshold)) / static_cast<double>(values_.size());
}

VoxelGrid VoxelGrid::binarized(double threshold) const {
  VoxelGrid out(dim_);
  for (std::size_t i = 0; i < values_.size(); ++i) out.values_[i] = values_[i] > threshold ? 1.0 : 0.0;
  return out;
}

LandmarkSet clamped(const LandmarkSet& l) {
  LandmarkSet out = l;
  for (auto& p : out)
    for (double& c : p) c = std::clamp(c, 0.0, 1.0);
  return out;
}

Tensor grids_to_tensor(std::span<const VoxelGrid> grids) {
  if (grids.empty()) throw DimensionError("grids_to_tensor: empty batch");
  const std::size_t d = grids.front().dim();
  Tensor t({grids.size(), 1, d, d, d});
  std::size_t offset = 0;
  for (const VoxelGrid& g : grids) {
    if (g.dim() != d) {
      throw DimensionError("grids_to_tensor: mixed grid dims " + std::to_string(d) + " and " + std::to_string(g.dim()));
    }
    std::copy(g.values().begin(), g.values().end(), t.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += g.size();
  }
  return t;
}

std::vector<VoxelGrid> tensor_to_grids(const Tensor& t) {
  if (t.rank() != 5 || t.dim(1) != 1 || t.dim(2) != t.dim(3) || t.dim(3) != t.dim(4)) {
    throw DimensionError("tensor_to_grids: expected [B,1,D,D,D], got " + shape_str(t.shape()));
  }
  const std::size_t d = t.dim(2), n = d * d * d;
  std::vector<VoxelGrid> out;
  out.reserve(t.dim(0));
  for (std::size_t b = 0; b < t.dim(0); ++b) {
    auto first = t.data().begin() + static_cast<std::ptrdiff_t>(b * n);
    out.emplace_back(d, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
  }
  return out;
}

Tensor landmarks_to_tensor(std::span<const LandmarkSet> sets) {
  Tensor t({sets.size(), 3 * kNumLandmarks});
  for (std::size_t b = 0; b < sets.size(); ++b)
    for (std::size_t k = 0; k < kNumLandmarks; ++k)
      for (std::size_t a = 0; a < 3; ++a) t[b * 3 * kNumLandmarks + 3 * k + a] = sets[b][k][a];
  return t;
}

std::vector<LandmarkSet> tensor_to_landmarks(const Tensor& t, bool clamp_to_box) {
  if (t.rank() != 2 || t.dim(1) != 3 * kNumLandmarks) {
    throw DimensionError("tensor_to_landmarks: expected [B,30], got " + shape_str(t.shape()));
  }
  std::vector<LandmarkSet> out(t.dim(0));
  for (std::size_t b = 0; b < t.dim(0); ++b)
    for (std::size_t k = 0; k < kNumLandmarks; ++k)
      for (std::size_t a = 0; a < 3; ++a) out[b][k][a] = t[b * 3 * kNumLandmarks + 3 * k + a];
  if (clamp_to_box)
    for (auto& l : out) l = clamped(l);
  return out;
}

namespace {

static_assert(std::endian::native == std::endian::little, "voxel files are written little-endian");

constexpr char kBinaryMagic[] = "VOXB1";
constexpr char kFloatMagic[] = "VOXF1";
constexpr std::size_t kMagicLen = 5;

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

}  // namespace

void write_voxel_file(const std::filesystem::path& path, const VoxelGrid& grid, bool binary) {
  if (binary && !grid.is_binary()) throw IoError("write_voxel_file: grid is not binary, use the float format");
  if (grid.dim() > 0xffffffffULL) throw IoError("write_voxel_file: dimension too large");
  auto out = open_out(path);
  out.write(binary ? kBinaryMagic : kFloatMagic, kMagicLen);
  const std::uint32_t d = static_cast<std::uint32_t>(grid.dim());
  out.write(reinterpret_cast<const char*>(&d), sizeof d);
  if (binary) {
    std::vector<char> bytes(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) bytes[i] = grid[i] == 1.0 ? 1 : 0;
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  } else {
    std::vector<float> vals(grid.values().begin(), grid.values().end());
    out.write(reinterpret_cast<const char*>(vals.data()), static_cast<std::streamsize>(vals.size() * sizeof(float)));
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

VoxelGrid read_voxel_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char magic[kMagicLen];
  std::uint32_t d = 0;
  in.read(magic, kMagicLen);
  in.read(reinterpret_cast<char*>(&d), sizeof d);
  if (!in) throw IoError("truncated voxel header in '" + path.string() + "'");
  const bool binary = std::memcmp(magic, kBinaryMagic, kMagicLen) == 0;
  if (!binary && std::memcmp(magic, kFloatMagic, kMagicLen) != 0) {
    throw IoError("bad voxel magic in '" + path.string() + "'");
  }
  const std::size_t n = static_cast<std::size_t>(d) * d * d;
  std::vector<double> values(n);
  if (binary) {
    std::vector<unsigned char> bytes(n);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
    if (!in) throw IoError("truncated voxel payload in '" + path.string() + "'");
    for (std::size_t i = 0; i < n; ++i) {
      if (bytes[i] > 1) throw IoError("non-binary byte in VOXB1 file '" + path.string() + "'");
      values[i] = bytes[i];
    }
  } else {
    std::vector<float> floats(n);
    in.read(reinterpret_cast<char*>(floats.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw IoError("truncated voxel payload in '" + path.string() + "'");
    std::copy(floats.begin(), floats.end(), values.begin());
  }
  if (in.peek() != std::ifstream::traits_type::eof()) throw IoError("trailing bytes in '" + path.string() + "'");
  return VoxelGrid(d, std::move(values));
}

void write_landmark_file(const std::filesystem::path& path, const LandmarkSet& landmarks) {
  nlohmann::json j;
  j["order"] = nlohmann::json::array();
  for (auto name : kLandmarkNames) j["order"].push_back(std::string(name));
  j["points"] = nlohmann::json::array();
  for (const Vec3& p : landmarks) j["points"].push_back({p[0], p[1], p[2]});
  auto out = open_out(path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

LandmarkSet read_landmark_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid landmark JSON in '" + path.string() + "': " + e.what());
  }
  const auto& order = j.at("order");
  const auto& points = j.at("points");
  if (order.size() != kNumLandmarks || points.size() != kNumLandmarks) {
    throw IoError("landmark file '" + path.string() + "' must list exactly 10 landmarks");
  }
  LandmarkSet out{};
  for (std::size_t k = 0; k < kNumLandmarks; ++k) {
    if (order[k].get<std::string>() != kLandmarkNames[k]) {
      throw IoError("landmark file '" + path.string() + "' has unexpected name at position " + std::to_string(k));
    }
    for (std::size_t a = 0; a < 3; ++a) out[k][a] = points[k].at(a).get<double>();
  }
  return out;
}

}  // namespace voxelstruct
