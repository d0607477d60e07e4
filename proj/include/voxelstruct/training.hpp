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
#include <map>
#include <span>
#include <string>
#include <vector>

#include "voxelstruct/dataset.hpp"
#include "voxelstruct/losses.hpp"
#include "voxelstruct/nets.hpp"

namespace voxelstruct {

using GradMap = std::map<std::string, Tensor>;

struct AdamState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  ParamMap m;
  ParamMap v;
};

/// Bias-corrected Adam on every key present in `grads`. All gradients are
/// checked before anything is modified; a non-finite entry throws NumericError
/// naming the key.
void adam_step(ParamMap& params, const GradMap& grads, AdamState& state);

double global_norm(const GradMap& grads);
/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`
/// (no-op when max_norm <= 0). Returns the norm before clipping.
double clip_global_norm(GradMap& grads, double max_norm);

struct PhaseConfig {
  double lr = 3e-4;
  std::size_t batch = 16;
  std::size_t epochs = 60;
  friend bool operator==(const PhaseConfig&, const PhaseConfig&) = default;
};

struct Stage1Config {
  double lr = 1e-2;
  std::size_t batch = 32;
  std::size_t iters = 150;
  double fine_lr = 1e-3;
  std::vector<std::size_t> batch_sequence{16, 8, 4, 2};
  std::size_t iters_per_batch = 20;
  friend bool operator==(const Stage1Config&, const Stage1Config&) = default;
};

struct Stage2Config {
  double lr = 1e-6;
  std::size_t batch = 32;
  std::size_t epochs = 50;
  friend bool operator==(const Stage2Config&, const Stage2Config&) = default;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  double prior_mu = 0.0;
  double prior_sigma = 1.0;
  PhaseConfig vae{3e-4, 16, 60};
  PhaseConfig detector{1e-4, 16, 150};
  Stage1Config stage1;
  Stage2Config stage2;
  double detector_collab_lr = 1e-4;
  LossWeights loss;
  bool augment = true;
  /// Global gradient norm cap for the collaborative phases; 0 disables.
  double clip_norm = 10.0;
  std::size_t checkpoint_every = 10;  // epochs

  void validate() const;
  static TrainConfig full_scale();
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct LogRecord {
  std::size_t step = 0;
  std::string stage;
  double l_rec = 0.0;
  double l_kl = 0.0;
  double l_struct_c = 0.0;
  double l_struct_r = 0.0;
  double l_consist = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

class TrainLog {
 public:
  /// Assigns the next step number and appends.
  void append(LogRecord r);
  const std::vector<LogRecord>& records() const { return records_; }
  std::vector<LogRecord> stage(const std::string& name) const;
  bool empty() const { return records_.empty(); }

  /// CSV with a fixed header. With `wall_time` false the wall_ms column is
  /// written as 0 so repeated runs produce identical files.
  void write_csv(const std::filesystem::path& path, bool wall_time) const;

 private:
  std::vector<LogRecord> records_;
};

/// `steps` optimizer steps at `batch` with learning rate `lr`.
struct ScheduleSegment {
  double lr = 0.0;
  std::size_t batch = 1;
  std::size_t steps = 0;
};

/// Optimizer steps needed for `epochs` passes over `n` samples.
std::size_t steps_for_epochs(std::size_t epochs, std::size_t n, std::size_t batch);

/// Stage 1: (lr, batch, iters) then fine_lr at each size of batch_sequence.
/// Stage 2: stage2.epochs passes over `n_phi` samples.
std::vector<ScheduleSegment> stage_schedule(const TrainConfig& cfg, int stage, std::size_t n_phi);

/// Seed used by stage `stage` of the collaborative loop for its shape phase.
std::uint64_t collab_stage_seed(std::uint64_t seed, int stage);

/// Epoch-wise shuffled batches over positions 0..n-1. The last batch of an
/// epoch may be short; the batch size can change between calls.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::uint64_t seed);

  struct Batch {
    std::vector<std::size_t> positions;
    std::size_t epoch = 0;
    bool epoch_start = false;
    bool epoch_end = false;
  };
  Batch next(std::size_t batch);
  std::size_t epoch() const { return epoch_; }

 private:
  void reshuffle();
  std::size_t n_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

/// Copies of the selected samples, scale-augmented with a per-(epoch, id) stream
/// when `augment` is set.
std::vector<Sample> assemble_batch(const std::vector<const Sample*>& data, const std::vector<std::size_t>& positions,
                                   std::size_t epoch, std::uint64_t seed, bool augment);

/// Optional on-disk side effects of training.
struct TrainHooks {
  std::filesystem::path checkpoint_dir;  // empty: nothing written
  bool wall_time = true;
};

struct VaeSchedule {
  std::vector<ScheduleSegment> segments;
  bool train_encoder = true;
  std::uint64_t seed = 0;
  bool augment = true;
  double clip_norm = 0.0;
  double kl_weight = 1.0;
  /// Multiplies the whole objective (alpha1 to mirror the collaborative shape phase).
  double loss_scale = 1.0;
  std::size_t checkpoint_every = 10;
};

struct VaeResult {
  ParamMap encoder;
  ParamMap generator;
  TrainLog log;
};

/// Minimizes recon_loss + kl_weight·kl_loss over `data` following `schedule`.
VaeResult run_vae(ParamMap encoder, ParamMap generator, const std::vector<const Sample*>& data, const NetConfig& net,
                  const VaeSchedule& schedule, const TrainHooks& hooks = {});

/// VAE pretraining from init_params(net, cfg.seed) (or `init`) with cfg.vae.
VaeResult pretrain_vae(const std::vector<const Sample*>& data, const NetConfig& net, const TrainConfig& cfg,
                       const TrainHooks& hooks = {}, const ModelParams* init = nullptr);

struct DetectorResult {
  ParamMap detector;
  TrainLog log;
};

/// Detector pretraining on annotated samples. When `shape_model` is given its
/// encoder/generator produce stochastic reconstructions of every batch, which
/// enter through the robustness term.
DetectorResult pretrain_detector(const std::vector<const Sample*>& annotated, const ModelParams* shape_model,
                                 const NetConfig& net, const TrainConfig& cfg, const TrainHooks& hooks = {},
                                 const ParamMap* init = nullptr);

/// Gradients of one collaborative phase for all three parameter sets. Sets
/// that the phase keeps frozen come back as zero tensors.
struct PhaseGrads {
  GradMap encoder;
  GradMap generator;
  GradMap detector;
  LogRecord record;
  BatchStats batch_stats;
};

/// Detector phase: structure loss on clean inputs and on reconstructions;
/// only the detector is differentiated.
PhaseGrads detector_phase_grads(const ModelParams& params, std::span<const Sample> batch, const NetConfig& net,
                                const LossWeights& w, std::uint64_t noise_seed, std::uint64_t dropout_seed);

/// Shape phase: alpha1·(recon + kl) + alpha2·consistency of prior samples
/// scored by the (frozen) detector. The encoder is differentiated only when
/// `train_encoder`.
PhaseGrads shape_phase_grads(const ModelParams& params, std::span<const Sample> batch, bool train_encoder,
                             const NetConfig& net, const TrainConfig& cfg, std::uint64_t reparam_seed,
                             std::uint64_t prior_seed);

struct CollabResult {
  ModelParams params;
  TrainLog log;
};

/// Alternates detector and shape phases. At the start of every pass over
/// `phi` the detector trains for one pass over `labeled`; then shape steps run
/// until the stage's schedule is used up. Stage 1 keeps the encoder fixed,
/// stage 2 trains everything.
CollabResult collaborative_train(ModelParams params, const std::vector<const Sample*>& labeled,
                                 const std::vector<const Sample*>& phi, const NetConfig& net, const TrainConfig& cfg,
                                 const TrainHooks& hooks = {});

}  // namespace voxelstruct
