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
#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <json.hpp>

#include "voxelstruct/eval.hpp"
#include "voxelstruct/rng.hpp"

namespace voxelstruct {
namespace {

NetConfig tiny_net() {
  NetConfig c;
  c.grid_dim = 16;
  c.latent_dim = 4;
  c.encoder_channels = {2, 4, 4};
  c.detector_channels = {2, 4};
  c.detector_kernels = {3, 3};
  c.detector_fc = {8};
  return c;
}

std::vector<Sample> chairs(std::size_t n) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.id = i;
    s.shape = voxelize(sample_chair(i, 16), 16);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<const Sample*> ptrs(const std::vector<Sample>& v) {
  std::vector<const Sample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(Iou, HandCases) {
  VoxelGrid a(4), b(4);
  EXPECT_EQ(iou(a, b), 1.0);
  for (std::size_t x = 0; x < 2; ++x)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t z = 0; z < 2; ++z) a.at(x, y, z) = 1.0;
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, b), 0.0);
  // b: 8 voxels, 4 shared with a.
  for (std::size_t x = 1; x < 3; ++x)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t z = 0; z < 2; ++z) b.at(x, y, z) = 1.0;
  EXPECT_DOUBLE_EQ(iou(a, b), 4.0 / 12.0);
  EXPECT_EQ(iou(a, b), iou(b, a));
  VoxelGrid soft = a;
  soft.at(0, 0, 0) = 0.5;  // not above threshold
  EXPECT_DOUBLE_EQ(iou(soft, a), 7.0 / 8.0);
  EXPECT_DOUBLE_EQ(iou(soft, a, 0.4), 1.0);
  EXPECT_THROW(iou(VoxelGrid(4), VoxelGrid(8)), DimensionError);
}

TEST(EvalReport, AggregatesAndFiles) {
  EvalReport r;
  r.protocol = "demo";
  r.config_hash = "abc";
  r.seeds = {1, 2};
  r.tag_columns = {"name"};
  r.columns = {"x", "y"};
  r.rows = {{{"a"}, {1.0, 4.0}}, {{"b"}, {3.0, 4.0}}};
  EXPECT_EQ(r.column("y"), 1u);
  EXPECT_THROW(r.column("z"), std::out_of_range);
  EXPECT_DOUBLE_EQ(r.mean("x"), 2.0);
  EXPECT_DOUBLE_EQ(r.stddev("x"), 1.0);
  EXPECT_DOUBLE_EQ(r.stddev("y"), 0.0);
  const auto prefix = std::filesystem::temp_directory_path() / "vs_eval_report";
  r.write(prefix);
  const std::string csv = slurp(prefix.string() + ".csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "name,x,y");
  const auto j = nlohmann::json::parse(slurp(prefix.string() + ".json"));
  EXPECT_EQ(j["protocol"], "demo");
  EXPECT_EQ(j["config_hash"], "abc");
  EXPECT_DOUBLE_EQ(j["aggregates"]["x"]["mean"].get<double>(), 2.0);
  std::filesystem::remove(prefix.string() + ".csv");
  std::filesystem::remove(prefix.string() + ".json");
}

TEST(Completion, ZeroDegradationIsRoundTrip) {
  const NetConfig net = tiny_net();
  const ModelParams m = init_params(net, 3);
  const auto data = chairs(4);
  const EvalReport r = completion_eval(m, net, ptrs(data), Degradation{}, 0);
  ASSERT_EQ(r.rows.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto rec = reconstruct(m, std::span(&data[i].shape, 1), net);
    EXPECT_EQ(r.rows[i].values[r.column("iou")], iou(rec[0], data[i].shape));
  }
  EXPECT_EQ(completion_eval(m, net, ptrs(data), Degradation{}, 0).rows[2].values, r.rows[2].values);
}

TEST(Sweep, LevelZeroMatchesCompletionAndRowsPerModelLevel) {
  const NetConfig net = tiny_net();
  const ModelParams a = init_params(net, 3), b = init_params(net, 4);
  const auto data = chairs(3);
  const EvalReport s = sparseness_sweep({{"a", &a}, {"b", &b}}, net, ptrs(data), {0.0, 0.5}, {1, 2});
  ASSERT_EQ(s.rows.size(), 4u);
  EXPECT_EQ(s.rows[0].tags, (std::vector<std::string>{"a", "0"}));
  const double base = completion_eval(a, net, ptrs(data), Degradation{}, 1).mean("iou");
  EXPECT_NEAR(s.rows[0].values[s.column("iou_mean")], base, 1e-12);
  EXPECT_EQ(s.rows[0].values[s.column("n")], 6.0);
}

TEST(Interpolate, EndpointsAndAffineCodes) {
  const NetConfig net = tiny_net();
  const ModelParams m = init_params(net, 5);
  const auto data = chairs(2);
  const InterpolationTrack two = interpolate(m, net, data[0], data[1], 2);
  ASSERT_EQ(two.grids.size(), 2u);
  EXPECT_EQ(two.grids[0], reconstruct(m, std::span(&data[0].shape, 1), net)[0]);
  EXPECT_EQ(two.grids[1], reconstruct(m, std::span(&data[1].shape, 1), net)[0]);
  const InterpolationTrack t = interpolate(m, net, data[0], data[1], 5, true);
  ASSERT_EQ(t.codes.size(), 5u);
  ASSERT_TRUE(t.landmarks.has_value());
  EXPECT_EQ(t.landmarks->size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_DOUBLE_EQ(t.t[i], i / 4.0);
    for (std::size_t j = 0; j < net.latent_dim; ++j)
      EXPECT_NEAR(t.codes[i][j], (1 - t.t[i]) * t.codes[0][j] + t.t[i] * t.codes[4][j], 1e-12);
  }
  const double sm = track_smoothness(t);
  EXPECT_GE(sm, 0.0);
  EXPECT_LE(sm, 1.0);
  EXPECT_THROW(interpolate(m, net, data[0], data[1], 1), ConfigError);
}

TEST(ConsistencyReport, RangeAndOverallIsLandmarkMean) {
  const NetConfig net = tiny_net();
  const ModelParams m = init_params(net, 6);
  const EvalReport r = consistency_report(m, net, 8, 1);
  ASSERT_EQ(r.rows.size(), 8u);
  ASSERT_EQ(r.columns.size(), kNumLandmarks + 1);
  for (std::size_t k = 0; k < kNumLandmarks; ++k) EXPECT_EQ(r.columns[k], kLandmarkNames[k]);
  double lm_mean = 0;
  for (std::size_t k = 0; k < kNumLandmarks; ++k) lm_mean += r.mean(r.columns[k]) / kNumLandmarks;
  EXPECT_NEAR(lm_mean, r.mean("overall"), 1e-12);
  for (const auto& row : r.rows)
    for (double v : row.values) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  EXPECT_EQ(consistency_report(m, net, 8, 1).rows[3].values, r.rows[3].values);
}

TEST(ExportViews, PgmFormatAndPoints) {
  const auto prefix = std::filesystem::temp_directory_path() / "vs_views";
  export_views(VoxelGrid(16), prefix);
  const std::string header = "P5\n16 16\n255\n";
  const std::string xy = slurp(prefix.string() + "_xy.pgm");
  ASSERT_EQ(xy.size(), header.size() + 256);
  EXPECT_EQ(xy.substr(0, header.size()), header);
  for (std::size_t i = header.size(); i < xy.size(); ++i) EXPECT_EQ(xy[i], 0);
  EXPECT_EQ(slurp(prefix.string() + "_points.txt"), "");

  VoxelGrid g(16);
  g.at(8, 8, 8) = 1.0;
  export_views(g, prefix);
  for (const char* view : {"_xy.pgm", "_xz.pgm", "_yz.pgm"}) {
    const std::string img = slurp(prefix.string() + view);
    ASSERT_EQ(img.size(), header.size() + 256) << view;
    std::size_t bright = 0;
    for (std::size_t i = header.size(); i < img.size(); ++i) bright += static_cast<unsigned char>(img[i]) == 255;
    EXPECT_EQ(bright, 1u) << view;
  }
  EXPECT_EQ(slurp(prefix.string() + "_points.txt"), "8 8 8 1\n");
  for (const char* f : {"_xy.pgm", "_xz.pgm", "_yz.pgm", "_points.txt"}) std::filesystem::remove(prefix.string() + f);
  EXPECT_THROW(export_views(g, "/nonexistent-dir/x"), IoError);
}

}  // namespace
}  // namespace voxelstruct
