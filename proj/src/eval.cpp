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
#include "voxelstruct/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "voxelstruct/losses.hpp"
#include "voxelstruct/rng.hpp"

namespace voxelstruct {
namespace {

constexpr std::size_t kChunk = 32;

// Encoder means and reconstructions, evaluated chunk by chunk.
std::vector<VoxelGrid> reconstruct_all(const ModelParams& m, const NetConfig& net, const std::vector<VoxelGrid>& in) {
  std::vector<VoxelGrid> out;
  out.reserve(in.size());
  for (std::size_t i = 0; i < in.size(); i += kChunk) {
    const std::size_t n = std::min(kChunk, in.size() - i);
    auto part = reconstruct(m, std::span<const VoxelGrid>(in.data() + i, n), net);
    for (auto& g : part) out.push_back(std::move(g));
  }
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double iou(const VoxelGrid& a, const VoxelGrid& b, double threshold) {
  if (a.dim() != b.dim()) {
    throw DimensionError("iou: grid dims differ (" + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()) + ")");
  }
  std::size_t inter = 0, uni = 0;
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    const bool x = av[i] > threshold, y = bv[i] > threshold;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::size_t EvalReport::column(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw std::out_of_range("EvalReport: no column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

double EvalReport::mean(const std::string& name) const {
  const std::size_t c = column(name);
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.values.at(c);
  return s / static_cast<double>(rows.size());
}

double EvalReport::stddev(const std::string& name) const {
  const std::size_t c = column(name);
  if (rows.empty()) return 0.0;
  const double m = mean(name);
  double s = 0.0;
  for (const auto& r : rows) s += (r.values.at(c) - m) * (r.values.at(c) - m);
  return std::sqrt(s / static_cast<double>(rows.size()));
}

void EvalReport::write(const std::filesystem::path& prefix) const {
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  auto csv_path = prefix;
  csv_path += ".csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw IoError("cannot write report '" + csv_path.string() + "'");
  bool first = true;
  for (const auto& c : tag_columns) csv << (first ? "" : ",") << c, first = false;
  for (const auto& c : columns) csv << (first ? "" : ",") << c, first = false;
  csv << "\n";
  for (const auto& r : rows) {
    first = true;
    for (const auto& t : r.tags) csv << (first ? "" : ",") << t, first = false;
    for (double v : r.values) csv << (first ? "" : ",") << fmt(v), first = false;
    csv << "\n";
  }
  if (!csv) throw IoError("write failed for '" + csv_path.string() + "'");

  nlohmann::ordered_json j;
  j["protocol"] = protocol;
  j["config_hash"] = config_hash;
  j["seeds"] = seeds;
  j["rows"] = rows.size();
  nlohmann::ordered_json agg = nlohmann::ordered_json::object();
  for (const auto& c : columns) agg[c] = {{"mean", mean(c)}, {"std", stddev(c)}};
  j["aggregates"] = agg;
  auto json_path = prefix;
  json_path += ".json";
  std::ofstream js(json_path, std::ios::trunc);
  if (!js) throw IoError("cannot write report '" + json_path.string() + "'");
  js << j.dump(2) << "\n";
  if (!js) throw IoError("write failed for '" + json_path.string() + "'");
}

EvalReport completion_eval(const ModelParams& model, const NetConfig& net, const std::vector<const Sample*>& samples,
                           const Degradation& degradation, std::uint64_t seed, double threshold) {
  EvalReport rep;
  rep.protocol = "complete";
  rep.seeds = {seed};
  rep.tag_columns = {"sample"};
  rep.columns = {"iou", "both_empty"};
  std::vector<VoxelGrid> inputs;
  inputs.reserve(samples.size());
  for (const Sample* s : samples) {
    inputs.push_back(degradation.is_identity()
                         ? s->shape
                         : degrade(s->shape, degradation, stream_seed(seed, {key(Stream::degrade), s->id})));
  }
  const auto out = reconstruct_all(model, net, inputs);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double v = iou(out[i], samples[i]->shape, threshold);
    const bool both_empty = out[i].count_above(threshold) == 0 && samples[i]->shape.count_above(threshold) == 0;
    rep.rows.push_back({{std::to_string(samples[i]->id)}, {v, both_empty ? 1.0 : 0.0}});
  }
  return rep;
}

EvalReport sparseness_sweep(const std::vector<std::pair<std::string, const ModelParams*>>& models, const NetConfig& net,
                            const std::vector<const Sample*>& samples, const std::vector<double>& levels,
                            const std::vector<std::uint64_t>& seeds, double threshold) {
  if (seeds.empty()) throw ConfigError("sparseness_sweep: at least one seed required");
  EvalReport rep;
  rep.protocol = "sweep";
  rep.seeds = seeds;
  rep.tag_columns = {"model", "level"};
  rep.columns = {"iou_mean", "iou_std", "n"};
  for (const auto& [name, model] : models) {
    for (double level : levels) {
      if (!(level >= 0.0 && level <= 1.0)) throw ConfigError("sparseness_sweep: levels must be in [0,1]");
      Degradation d;
      d.sparsify_level = level;
      std::vector<double> all;
      for (std::uint64_t s : seeds) {
        const auto r = completion_eval(*model, net, samples, d, s, threshold);
        for (const auto& row : r.rows) all.push_back(row.values[0]);
      }
      double m = 0.0;
      for (double v : all) m += v;
      m /= static_cast<double>(all.size());
      double var = 0.0;
      for (double v : all) var += (v - m) * (v - m);
      rep.rows.push_back({{name, fmt(level)}, {m, std::sqrt(var / static_cast<double>(all.size())),
                                               static_cast<double>(all.size())}});
    }
  }
  return rep;
}

InterpolationTrack interpolate(const ModelParams& model, const NetConfig& net, const Sample& a, const Sample& b,
                               std::size_t k, bool with_landmarks) {
  if (k < 2) throw ConfigError("interpolate: K must be >= 2");
  InterpolationTrack tr;
  tr.a_id = a.id;
  tr.b_id = b.id;
  const std::vector<VoxelGrid> ends{a.shape, b.shape};
  const Tensor mu = encode(model.encoder, ends, net).mu;
  const std::size_t z = net.latent_dim;
  Tensor codes({k, z});
  for (std::size_t i = 0; i < k; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(k - 1);
    tr.t.push_back(t);
    Tensor code({z});
    for (std::size_t j = 0; j < z; ++j) {
      // Exact endpoints so frame 0 and K-1 match direct reconstructions bit for bit.
      code[j] = i == 0 ? mu[j] : i + 1 == k ? mu[z + j] : (1.0 - t) * mu[j] + t * mu[z + j];
      codes[i * z + j] = code[j];
    }
    tr.codes.push_back(std::move(code));
  }
  for (std::size_t i = 0; i < k; i += kChunk) {
    const std::size_t n = std::min(kChunk, k - i);
    Tensor part({n, z}, std::vector<double>(codes.storage().begin() + static_cast<std::ptrdiff_t>(i * z),
                                            codes.storage().begin() + static_cast<std::ptrdiff_t>((i + n) * z)));
    for (auto& g : generate(model.generator, part, net)) tr.grids.push_back(std::move(g));
  }
  if (with_landmarks) tr.landmarks = tensor_to_landmarks(detect(model.detector, tr.grids, net));
  return tr;
}

double track_smoothness(const InterpolationTrack& track, double threshold) {
  if (track.grids.size() < 2) return 1.0;
  double s = 0.0;
  for (std::size_t i = 1; i < track.grids.size(); ++i) s += iou(track.grids[i - 1], track.grids[i], threshold);
  return s / static_cast<double>(track.grids.size() - 1);
}

EvalReport consistency_report(const ModelParams& model, const NetConfig& net, std::size_t n_samples,
                              std::uint64_t seed) {
  if (n_samples == 0) throw ConfigError("consistency_report: n must be >= 1");
  EvalReport rep;
  rep.protocol = "consistency";
  rep.seeds = {seed};
  rep.tag_columns = {"sample"};
  for (const auto& name : kLandmarkNames) rep.columns.emplace_back(name);
  rep.columns.push_back("overall");
  const ConsistencyKernel kernel = consistency_kernel_for(net.grid_dim);
  const Tensor z = Rng(stream_seed(seed, {key(Stream::prior)})).normal_tensor({n_samples, net.latent_dim});
  const std::size_t zd = net.latent_dim;
  for (std::size_t i = 0; i < n_samples; i += kChunk) {
    const std::size_t n = std::min(kChunk, n_samples - i);
    Tensor part({n, zd}, std::vector<double>(z.storage().begin() + static_cast<std::ptrdiff_t>(i * zd),
                                             z.storage().begin() + static_cast<std::ptrdiff_t>((i + n) * zd)));
    const auto grids = generate(model.generator, part, net);
    const auto lms = tensor_to_landmarks(detect(model.detector, grids, net));
    for (std::size_t j = 0; j < n; ++j) {
      const auto score = consistency_measure(grids[j], lms[j], kernel);
      EvalRow row{{std::to_string(i + j)}, {}};
      for (double v : score.per_landmark) row.values.push_back(v);
      row.values.push_back(score.total / static_cast<double>(kNumLandmarks));
      rep.rows.push_back(std::move(row));
    }
  }
  return rep;
}

void export_views(const VoxelGrid& grid, const std::filesystem::path& prefix) {
  const std::size_t d = grid.dim();
  const std::size_t mid = d / 2;
  auto open = [&](const std::string& suffix) {
    auto p = prefix;
    p += suffix;
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + p.string() + "'");
    return out;
  };
  auto pixel = [](double v) { return static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); };
  // (row axis, column axis, fixed axis) for each slice.
  const struct {
    const char* suffix;
    int row, col, fixed;
  } slices[] = {{"_xy.pgm", 1, 0, 2}, {"_xz.pgm", 2, 0, 1}, {"_yz.pgm", 2, 1, 0}};
  for (const auto& s : slices) {
    auto out = open(s.suffix);
    out << "P5\n" << d << " " << d << "\n255\n";
    std::vector<unsigned char> buf(d * d);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        std::size_t idx[3];
        idx[s.row] = r;
        idx[s.col] = c;
        idx[s.fixed] = mid;
        buf[r * d + c] = pixel(grid.at(idx[0], idx[1], idx[2]));
      }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed for slice '" + prefix.string() + s.suffix + "'");
  }
  auto pts = open("_points.txt");
  for (std::size_t z = 0; z < d; ++z)
    for (std::size_t y = 0; y < d; ++y)
      for (std::size_t x = 0; x < d; ++x) {
        const double v = grid.at(x, y, z);
        if (v > 0.5) pts << x << " " << y << " " << z << " " << fmt(v) << "\n";
      }
  if (!pts) throw IoError("write failed for '" + prefix.string() + "_points.txt'");
}

}  // namespace voxelstruct
