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

// Shape encoder, shape generator and structure detector.
//
// Encoder: (n-1) stride-2 convolutions (k=4, pad=1) followed by one 'valid'
// convolution that collapses the remaining extent to 1^3, then two dense heads
// for the latent mean and log-variance. The generator mirrors it: a dense layer
// back to the last encoder width, then transposed convolutions retracing the
// encoder's spatial ladder in reverse, ending in a sigmoid.
//
// Detector: convolutions with the configured odd kernels (stride 1, same
// padding), 2x max-pooling after all but the last, then fully connected layers
// with ReLU + dropout and a linear 3·N output.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "voxelstruct/autodiff.hpp"
#include "voxelstruct/rng.hpp"
#include "voxelstruct/tensor.hpp"
#include "voxelstruct/voxel.hpp"

namespace voxelstruct {

struct NetConfig {
  std::size_t grid_dim = 32;
  std::size_t latent_dim = 32;
  std::vector<std::size_t> encoder_channels{16, 32, 64, 128};
  std::vector<std::size_t> detector_channels{8, 16, 32, 64};
  std::vector<std::size_t> detector_kernels{5, 3, 3, 3};
  std::vector<std::size_t> detector_fc{512, 128};
  std::size_t n_landmarks = kNumLandmarks;
  double dropout_rate = 0.5;
  /// Statistical normalization after hidden convolutions. Off by default.
  bool batch_norm = false;

  /// Throws ConfigError on any violated constraint.
  void validate() const;

  /// Architecture at the full 64^3 grid with a 200-D code.
  static NetConfig full_scale();

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// Named parameter tensors. Keys carry the module prefix ("enc/", "gen/", "det/").
using ParamMap = std::map<std::string, Tensor>;
using BoundParams = std::map<std::string, Var>;

struct ModelParams {
  ParamMap encoder;
  ParamMap generator;
  ParamMap detector;
};

struct ParamSpec {
  std::string key;
  Shape shape;
  std::size_t fan_in = 0;
  bool relu_follows = true;
  bool trainable = true;
  double init_value = 0.0;  // for non-random entries (biases, bn stats)
  bool random = false;
};

std::vector<ParamSpec> encoder_param_specs(const NetConfig& cfg);
std::vector<ParamSpec> generator_param_specs(const NetConfig& cfg);
std::vector<ParamSpec> detector_param_specs(const NetConfig& cfg);

/// Uniform fan-in initialization (He bound sqrt(6/fan_in) before ReLU,
/// sqrt(3/fan_in) otherwise), zero biases. Pure function of (cfg, seed).
ModelParams init_params(const NetConfig& cfg, std::uint64_t seed);

std::size_t param_count(const ParamMap& params);
/// True for keys that are optimized (running statistics are not).
bool is_trainable_key(const std::string& key);

/// Throws ConfigError unless `params` has exactly the keys and shapes of `specs`.
void check_param_keys(const ParamMap& params, const std::vector<ParamSpec>& specs, const std::string& what);

/// Puts every tensor on the tape; trainable keys become gradient leaves when `trainable`.
BoundParams bind(Tape& tape, const ParamMap& params, bool trainable);

/// Batch statistics produced by a training-mode forward pass with batch_norm on.
using BatchStats = std::map<std::string, std::pair<Tensor, Tensor>>;

struct ForwardMode {
  bool training = false;
  Rng* dropout_rng = nullptr;    // required for training-mode detector passes
  BatchStats* batch_stats = nullptr;
  std::vector<Tensor>* trace = nullptr;  // post-activation output of each layer
};

struct EncoderOutput {
  Var mu;
  Var logvar;
};

EncoderOutput encode(const BoundParams& enc, Var grids, const NetConfig& cfg, const ForwardMode& mode = {});
Var generate(const BoundParams& gen, Var z, const NetConfig& cfg, const ForwardMode& mode = {});
Var detect(const BoundParams& det, Var grids, const NetConfig& cfg, const ForwardMode& mode = {});

// Forward-only conveniences (inference mode).
struct Moments {
  Tensor mu;
  Tensor logvar;
};
Moments encode(const ParamMap& enc, std::span<const VoxelGrid> grids, const NetConfig& cfg);
std::vector<VoxelGrid> generate(const ParamMap& gen, const Tensor& z, const NetConfig& cfg);
Tensor detect(const ParamMap& det, std::span<const VoxelGrid> grids, const NetConfig& cfg);
/// generate(encode(s).mu): deterministic reconstruction through the latent mean.
std::vector<VoxelGrid> reconstruct(const ModelParams& params, std::span<const VoxelGrid> grids, const NetConfig& cfg);

/// Exponential moving update of running batch-norm statistics.
void update_running_stats(ParamMap& params, const BatchStats& stats, double momentum = 0.1);

/// Channel count after each encoder convolution and the spatial extent of each
/// encoder activation (input first).
std::vector<std::size_t> encoder_layer_channels(const NetConfig& cfg);
std::vector<std::size_t> encoder_spatial_ladder(const NetConfig& cfg);

}  // namespace voxelstruct
