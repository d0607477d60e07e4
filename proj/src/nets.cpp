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
#include "voxelstruct/nets.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "voxelstruct/ops.hpp"

namespace voxelstruct {
namespace {

constexpr std::size_t kLadderKernel = 4;
constexpr std::size_t kLadderStride = 2;
constexpr std::size_t kLadderPad = 1;
constexpr double kBnEps = 1e-5;

/// Spatial extent left after the encoder's stride-2 layers.
std::size_t valid_kernel(const NetConfig& cfg) {
  return cfg.grid_dim >> (cfg.encoder_channels.size() - 1);
}

void add_bn_specs(std::vector<ParamSpec>& specs, const std::string& base, std::size_t ch) {
  specs.push_back({base + "bn_gamma", {ch}, 0, false, true, 1.0, false});
  specs.push_back({base + "bn_beta", {ch}, 0, false, true, 0.0, false});
  specs.push_back({base + "bn_mean", {ch}, 0, false, false, 0.0, false});
  specs.push_back({base + "bn_var", {ch}, 0, false, false, 1.0, false});
}

const Var& at(const BoundParams& p, const std::string& key) {
  auto it = p.find(key);
  if (it == p.end()) throw ConfigError("missing parameter '" + key + "'");
  return it->second;
}

void trace(const ForwardMode& mode, Var v) {
  if (mode.trace) mode.trace->push_back(v.value());
}

// Bias (+ optional batch norm) + activation applied after a conv layer.
Var finish_conv(Var h, const BoundParams& p, const std::string& base, bool bn, Activation act,
                const ForwardMode& mode) {
  h = add_channel_bias(h, at(p, base + "b"));
  if (bn) {
    if (mode.training) {
      Tensor m, v;
      h = batch_norm_train(h, at(p, base + "bn_gamma"), at(p, base + "bn_beta"), kBnEps, &m, &v);
      if (mode.batch_stats) (*mode.batch_stats)[base] = {std::move(m), std::move(v)};
    } else {
      h = batch_norm_eval(h, at(p, base + "bn_gamma"), at(p, base + "bn_beta"), at(p, base + "bn_mean").value(),
                          at(p, base + "bn_var").value(), kBnEps);
    }
  }
  h = activation(h, act);
  trace(mode, h);
  return h;
}

}  // namespace

void NetConfig::validate() const {
  if (grid_dim < 16 || !std::has_single_bit(grid_dim)) {
    throw ConfigError("grid_dim must be a power of two >= 16, got " + std::to_string(grid_dim));
  }
  if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
  if (encoder_channels.empty() || detector_channels.empty() || detector_fc.empty()) {
    throw ConfigError("channel lists must be non-empty");
  }
  auto has_zero = [](const std::vector<std::size_t>& v) { return std::find(v.begin(), v.end(), 0) != v.end(); };
  if (has_zero(encoder_channels) || has_zero(detector_channels) || has_zero(detector_fc)) {
    throw ConfigError("channel and layer widths must be positive");
  }
  if ((std::size_t{1} << (encoder_channels.size() - 1)) > grid_dim) {
    throw ConfigError("too many encoder layers for grid_dim " + std::to_string(grid_dim));
  }
  if (detector_kernels.size() != detector_channels.size()) {
    throw ConfigError("detector_kernels and detector_channels must have equal length");
  }
  for (std::size_t k : detector_kernels) {
    if (k % 2 == 0) throw ConfigError("detector kernels must be odd");
  }
  if ((std::size_t{1} << (detector_channels.size() - 1)) > grid_dim) {
    throw ConfigError("too many detector pooling stages for grid_dim " + std::to_string(grid_dim));
  }
  if (n_landmarks != kNumLandmarks) throw ConfigError("the chair structure has exactly 10 landmarks");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0,1)");
}

NetConfig NetConfig::full_scale() {
  NetConfig cfg;
  cfg.grid_dim = 64;
  cfg.latent_dim = 200;
  cfg.encoder_channels = {64, 128, 256, 512, 400};
  cfg.detector_channels = {16, 32, 64, 128};
  cfg.detector_kernels = {5, 3, 3, 3};
  cfg.detector_fc = {4096, 1024};
  return cfg;
}

std::vector<std::size_t> encoder_layer_channels(const NetConfig& cfg) { return cfg.encoder_channels; }

std::vector<std::size_t> encoder_spatial_ladder(const NetConfig& cfg) {
  std::vector<std::size_t> dims{cfg.grid_dim};
  for (std::size_t i = 0; i + 1 < cfg.encoder_channels.size(); ++i) dims.push_back(dims.back() / 2);
  dims.push_back(1);
  return dims;
}

std::vector<ParamSpec> encoder_param_specs(const NetConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  const auto& ch = cfg.encoder_channels;
  const std::size_t n = ch.size();
  std::size_t in_ch = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i + 1 < n ? kLadderKernel : valid_kernel(cfg);
    const std::string base = "enc/conv" + std::to_string(i) + "/";
    specs.push_back({base + "w", {ch[i], in_ch, k, k, k}, in_ch * k * k * k, true, true, 0.0, true});
    specs.push_back({base + "b", {ch[i]}, 0, false, true, 0.0, false});
    if (cfg.batch_norm) add_bn_specs(specs, base, ch[i]);
    in_ch = ch[i];
  }
  for (const char* head : {"mu", "logvar"}) {
    const std::string base = std::string("enc/") + head + "/";
    specs.push_back({base + "w", {in_ch, cfg.latent_dim}, in_ch, false, true, 0.0, true});
    specs.push_back({base + "b", {cfg.latent_dim}, 0, false, true, 0.0, false});
  }
  return specs;
}

std::vector<ParamSpec> generator_param_specs(const NetConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  const auto& ch = cfg.encoder_channels;
  const std::size_t n = ch.size();
  specs.push_back({"gen/fc/w", {cfg.latent_dim, ch[n - 1]}, cfg.latent_dim, true, true, 0.0, true});
  specs.push_back({"gen/fc/b", {ch[n - 1]}, 0, false, true, 0.0, false});
  if (cfg.batch_norm) add_bn_specs(specs, "gen/fc/", ch[n - 1]);
  // deconv{i} inverts encoder conv{i}: ch[i] channels in, ch[i-1] (or 1) out.
  for (std::size_t i = n; i-- > 0;) {
    const bool valid = i + 1 == n;
    const std::size_t k = valid ? valid_kernel(cfg) : kLadderKernel;
    const std::size_t stride = valid ? 1 : kLadderStride;
    const std::size_t out_ch = i == 0 ? 1 : ch[i - 1];
    const std::size_t taps = std::max<std::size_t>(1, (k * k * k) / (stride * stride * stride));
    const std::string base = "gen/deconv" + std::to_string(i) + "/";
    specs.push_back({base + "w", {ch[i], out_ch, k, k, k}, ch[i] * taps, i != 0, true, 0.0, true});
    specs.push_back({base + "b", {out_ch}, 0, false, true, 0.0, false});
    if (cfg.batch_norm && i != 0) add_bn_specs(specs, base, out_ch);
  }
  return specs;
}

std::vector<ParamSpec> detector_param_specs(const NetConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  std::size_t in_ch = 1;
  std::size_t extent = cfg.grid_dim;
  const std::size_t nconv = cfg.detector_channels.size();
  for (std::size_t i = 0; i < nconv; ++i) {
    const std::size_t k = cfg.detector_kernels[i];
    const std::size_t c = cfg.detector_channels[i];
    const std::string base = "det/conv" + std::to_string(i) + "/";
    specs.push_back({base + "w", {c, in_ch, k, k, k}, in_ch * k * k * k, true, true, 0.0, true});
    specs.push_back({base + "b", {c}, 0, false, true, 0.0, false});
    if (cfg.batch_norm) add_bn_specs(specs, base, c);
    in_ch = c;
    if (i + 1 < nconv) extent /= 2;
  }
  std::size_t in = in_ch * extent * extent * extent;
  for (std::size_t i = 0; i < cfg.detector_fc.size(); ++i) {
    const std::string base = "det/fc" + std::to_string(i) + "/";
    specs.push_back({base + "w", {in, cfg.detector_fc[i]}, in, true, true, 0.0, true});
    specs.push_back({base + "b", {cfg.detector_fc[i]}, 0, false, true, 0.0, false});
    in = cfg.detector_fc[i];
  }
  specs.push_back({"det/out/w", {in, 3 * cfg.n_landmarks}, in, false, true, 0.0, true});
  // Landmark outputs start at the box center.
  specs.push_back({"det/out/b", {3 * cfg.n_landmarks}, 0, false, true, 0.5, false});
  return specs;
}

namespace {

ParamMap init_from_specs(const std::vector<ParamSpec>& specs, Rng& rng) {
  ParamMap out;
  for (const ParamSpec& s : specs) {
    Tensor t(s.shape, s.init_value);
    if (s.random) {
      const double bound = std::sqrt((s.relu_follows ? 6.0 : 3.0) / static_cast<double>(s.fan_in));
      for (double& v : t.data()) v = rng.uniform(-bound, bound);
    }
    out.emplace(s.key, std::move(t));
  }
  return out;
}

}  // namespace

ModelParams init_params(const NetConfig& cfg, std::uint64_t seed) {
  ModelParams p;
  Rng enc_rng(stream_seed(seed, {key(Stream::init), 0}));
  Rng gen_rng(stream_seed(seed, {key(Stream::init), 1}));
  Rng det_rng(stream_seed(seed, {key(Stream::init), 2}));
  p.encoder = init_from_specs(encoder_param_specs(cfg), enc_rng);
  p.generator = init_from_specs(generator_param_specs(cfg), gen_rng);
  p.detector = init_from_specs(detector_param_specs(cfg), det_rng);
  return p;
}

std::size_t param_count(const ParamMap& params) {
  std::size_t n = 0;
  for (const auto& [k, t] : params) {
    if (is_trainable_key(k)) n += t.size();
  }
  return n;
}

bool is_trainable_key(const std::string& key) {
  auto ends_with = [&](std::string_view s) { return key.size() >= s.size() && key.ends_with(s); };
  return !ends_with("bn_mean") && !ends_with("bn_var");
}

void check_param_keys(const ParamMap& params, const std::vector<ParamSpec>& specs, const std::string& what) {
  if (params.size() != specs.size()) {
    throw ConfigError(what + ": expected " + std::to_string(specs.size()) + " parameter tensors, got " +
                      std::to_string(params.size()));
  }
  for (const ParamSpec& s : specs) {
    auto it = params.find(s.key);
    if (it == params.end()) throw ConfigError(what + ": missing parameter '" + s.key + "'");
    if (it->second.shape() != s.shape) {
      throw ConfigError(what + ": parameter '" + s.key + "' has shape " + shape_str(it->second.shape()) +
                        ", expected " + shape_str(s.shape));
    }
  }
}

BoundParams bind(Tape& tape, const ParamMap& params, bool trainable) {
  BoundParams out;
  for (const auto& [k, t] : params) out.emplace(k, tape.leaf(t, trainable && is_trainable_key(k), k));
  return out;
}

EncoderOutput encode(const BoundParams& enc, Var grids, const NetConfig& cfg, const ForwardMode& mode) {
  const auto& gv = grids.value();
  if (gv.rank() != 5 || gv.dim(1) != 1 || gv.dim(2) != cfg.grid_dim || gv.dim(3) != cfg.grid_dim ||
      gv.dim(4) != cfg.grid_dim) {
    throw DimensionError("encode: expected [B,1," + std::to_string(cfg.grid_dim) + "^3] input, got " +
                         shape_str(gv.shape()));
  }
  const std::size_t n = cfg.encoder_channels.size();
  Var h = grids;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string base = "enc/conv" + std::to_string(i) + "/";
    const bool valid = i + 1 == n;
    h = conv3d(h, at(enc, base + "w"), valid ? 1 : kLadderStride, valid ? 0 : kLadderPad);
    h = finish_conv(h, enc, base, cfg.batch_norm, Activation::relu, mode);
  }
  h = reshape(h, {gv.dim(0), cfg.encoder_channels.back()});
  EncoderOutput out;
  out.mu = dense(h, at(enc, "enc/mu/w"), at(enc, "enc/mu/b"));
  out.logvar = dense(h, at(enc, "enc/logvar/w"), at(enc, "enc/logvar/b"));
  trace(mode, out.mu);
  trace(mode, out.logvar);
  return out;
}

Var generate(const BoundParams& gen, Var z, const NetConfig& cfg, const ForwardMode& mode) {
  const auto& zv = z.value();
  if (zv.rank() != 2 || zv.dim(1) != cfg.latent_dim) {
    throw DimensionError("generate: expected [B," + std::to_string(cfg.latent_dim) + "] latent, got " +
                         shape_str(zv.shape()));
  }
  const auto& ch = cfg.encoder_channels;
  const std::size_t n = ch.size();
  const std::size_t batch = zv.dim(0);
  Var h = dense(z, at(gen, "gen/fc/w"), at(gen, "gen/fc/b"));
  h = reshape(h, {batch, ch[n - 1], 1, 1, 1});
  if (cfg.batch_norm) {
    // Bias was already added by the dense layer; run bn + relu on the 1^3 map.
    if (mode.training) {
      Tensor m, v;
      h = batch_norm_train(h, at(gen, "gen/fc/bn_gamma"), at(gen, "gen/fc/bn_beta"), kBnEps, &m, &v);
      if (mode.batch_stats) (*mode.batch_stats)["gen/fc/"] = {std::move(m), std::move(v)};
    } else {
      h = batch_norm_eval(h, at(gen, "gen/fc/bn_gamma"), at(gen, "gen/fc/bn_beta"), at(gen, "gen/fc/bn_mean").value(),
                          at(gen, "gen/fc/bn_var").value(), kBnEps);
    }
  }
  h = relu(h);
  trace(mode, h);
  for (std::size_t i = n; i-- > 0;) {
    const std::string base = "gen/deconv" + std::to_string(i) + "/";
    const bool valid = i + 1 == n;
    h = conv_transpose3d(h, at(gen, base + "w"), valid ? 1 : kLadderStride, valid ? 0 : kLadderPad);
    h = finish_conv(h, gen, base, cfg.batch_norm && i != 0, i == 0 ? Activation::sigmoid : Activation::relu, mode);
  }
  return h;
}

Var detect(const BoundParams& det, Var grids, const NetConfig& cfg, const ForwardMode& mode) {
  const auto& gv = grids.value();
  if (gv.rank() != 5 || gv.dim(1) != 1 || gv.dim(2) != cfg.grid_dim || gv.dim(3) != cfg.grid_dim ||
      gv.dim(4) != cfg.grid_dim) {
    throw DimensionError("detect: expected [B,1," + std::to_string(cfg.grid_dim) + "^3] input, got " +
                         shape_str(gv.shape()));
  }
  if (mode.training && cfg.dropout_rate > 0.0 && !mode.dropout_rng) {
    throw ConfigError("detect: training mode with dropout needs a dropout RNG");
  }
  const std::size_t batch = gv.dim(0);
  const std::size_t nconv = cfg.detector_channels.size();
  Var h = grids;
  for (std::size_t i = 0; i < nconv; ++i) {
    const std::string base = "det/conv" + std::to_string(i) + "/";
    const std::size_t k = cfg.detector_kernels[i];
    h = conv3d(h, at(det, base + "w"), 1, k / 2);
    h = finish_conv(h, det, base, cfg.batch_norm, Activation::relu, mode);
    if (i + 1 < nconv) h = maxpool3d(h, 2);
  }
  h = reshape(h, {batch, h.value().size() / batch});
  for (std::size_t i = 0; i < cfg.detector_fc.size(); ++i) {
    const std::string base = "det/fc" + std::to_string(i) + "/";
    h = relu(dense(h, at(det, base + "w"), at(det, base + "b")));
    trace(mode, h);
    if (mode.training && cfg.dropout_rate > 0.0) {
      const double keep = 1.0 - cfg.dropout_rate;
      Tensor mask(h.shape());
      for (double& m : mask.data()) m = mode.dropout_rng->bernoulli(keep) ? 1.0 / keep : 0.0;
      h = apply_mask(h, mask);
    }
  }
  Var out = dense(h, at(det, "det/out/w"), at(det, "det/out/b"));
  trace(mode, out);
  return out;
}

Moments encode(const ParamMap& enc, std::span<const VoxelGrid> grids, const NetConfig& cfg) {
  Tape tape;
  auto bound = voxelstruct::bind(tape, enc, false);
  auto out = encode(bound, tape.constant(grids_to_tensor(grids)), cfg);
  return {out.mu.value(), out.logvar.value()};
}

std::vector<VoxelGrid> generate(const ParamMap& gen, const Tensor& z, const NetConfig& cfg) {
  Tape tape;
  auto bound = voxelstruct::bind(tape, gen, false);
  return tensor_to_grids(generate(bound, tape.constant(z), cfg).value());
}

Tensor detect(const ParamMap& det, std::span<const VoxelGrid> grids, const NetConfig& cfg) {
  Tape tape;
  auto bound = voxelstruct::bind(tape, det, false);
  return detect(bound, tape.constant(grids_to_tensor(grids)), cfg).value();
}

std::vector<VoxelGrid> reconstruct(const ModelParams& params, std::span<const VoxelGrid> grids, const NetConfig& cfg) {
  return generate(params.generator, encode(params.encoder, grids, cfg).mu, cfg);
}

void update_running_stats(ParamMap& params, const BatchStats& stats, double momentum) {
  for (const auto& [base, mv] : stats) {
    auto mean_it = params.find(base + "bn_mean");
    auto var_it = params.find(base + "bn_var");
    if (mean_it == params.end() || var_it == params.end()) continue;
    for (std::size_t c = 0; c < mean_it->second.size(); ++c) {
      mean_it->second[c] = (1.0 - momentum) * mean_it->second[c] + momentum * mv.first[c];
      var_it->second[c] = (1.0 - momentum) * var_it->second[c] + momentum * mv.second[c];
    }
  }
}

}  // namespace voxelstruct
