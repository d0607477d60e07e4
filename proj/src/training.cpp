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
#include "voxelstruct/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "voxelstruct/checkpoint.hpp"
#include "voxelstruct/ops.hpp"
#include "voxelstruct/rng.hpp"

namespace voxelstruct {
namespace {

constexpr std::uint64_t kDetectorPhaseTag = 0xde7;
constexpr std::uint64_t kStageTag = 0x57a6e;

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(what) + " must be > 0");
}

void require_count(std::size_t v, const char* what) {
  if (v < 1) throw ConfigError(std::string(what) + " must be >= 1");
}

void check_data(const std::vector<const Sample*>& data, const NetConfig& net, const char* what) {
  if (data.empty()) throw ConfigError(std::string(what) + ": empty training set");
  for (const Sample* s : data) {
    if (s->shape.dim() != net.grid_dim) {
      throw ConfigError(std::string(what) + ": sample " + std::to_string(s->id) + " has grid dim " +
                        std::to_string(s->shape.dim()) + ", network expects " + std::to_string(net.grid_dim));
    }
  }
}

void check_schedule(const std::vector<ScheduleSegment>& segments) {
  for (const auto& s : segments) {
    require_positive(s.lr, "learning rate");
    require_count(s.batch, "batch size");
  }
}

std::vector<VoxelGrid> grids_of(std::span<const Sample> batch) {
  std::vector<VoxelGrid> out;
  out.reserve(batch.size());
  for (const Sample& s : batch) out.push_back(s.shape);
  return out;
}

Tensor landmarks_of(std::span<const Sample> batch) {
  std::vector<LandmarkSet> sets;
  sets.reserve(batch.size());
  for (const Sample& s : batch) {
    if (!s.landmarks) throw ConfigError("sample " + std::to_string(s.id) + " has no landmarks");
    sets.push_back(*s.landmarks);
  }
  return landmarks_to_tensor(sets);
}

GradMap collect_grads(Tape& tape, const BoundParams& bound) {
  GradMap out;
  for (const auto& [k, v] : bound) {
    if (is_trainable_key(k)) out.emplace(k, tape.grad(v));
  }
  return out;
}

GradMap zero_grads(const ParamMap& params) {
  GradMap out;
  for (const auto& [k, t] : params) {
    if (is_trainable_key(k)) out.emplace(k, Tensor(t.shape()));
  }
  return out;
}

// Stochastic reconstruction without a tape: z = mu + exp(logvar/2)·eps.
std::vector<VoxelGrid> sampled_reconstruction(const ModelParams& m, const std::vector<VoxelGrid>& grids,
                                              const NetConfig& net, std::uint64_t seed) {
  Moments mo = encode(m.encoder, grids, net);
  Tensor eps = Rng(seed).normal_tensor(mo.mu.shape());
  Tensor z(mo.mu.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = mo.mu[i] + std::exp(0.5 * mo.logvar[i]) * eps[i];
  return generate(m.generator, z, net);
}

void write_ckpt(const TrainHooks& hooks, const char* name, const ModelParams& p) {
  if (hooks.checkpoint_dir.empty()) return;
  std::filesystem::create_directories(hooks.checkpoint_dir);
  write_checkpoint(hooks.checkpoint_dir / name, p);
}

// Moves every "<prefix>..." key of `all` into its own map.
GradMap take_prefix(GradMap& all, const std::string& prefix) {
  GradMap out;
  for (auto it = all.begin(); it != all.end();) {
    if (it->first.starts_with(prefix)) {
      out.insert(std::move(*it));
      it = all.erase(it);
    } else {
      ++it;
    }
  }
  return out;
}

}  // namespace

void adam_step(ParamMap& params, const GradMap& grads, AdamState& state) {
  for (const auto& [k, g] : grads) {
    auto it = params.find(k);
    if (it == params.end()) throw ConfigError("adam_step: gradient for unknown parameter '" + k + "'");
    if (it->second.shape() != g.shape()) {
      throw DimensionError("adam_step: gradient shape " + shape_str(g.shape()) + " does not match parameter '" + k +
                           "' " + shape_str(it->second.shape()));
    }
    if (!g.all_finite()) throw NumericError("adam_step: non-finite gradient for parameter '" + k + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (const auto& [k, g] : grads) {
    Tensor& p = params.at(k);
    auto [mit, m_new] = state.m.try_emplace(k, g.shape());
    auto [vit, v_new] = state.v.try_emplace(k, g.shape());
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      p[i] -= state.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

double global_norm(const GradMap& grads) {
  double s = 0.0;
  for (const auto& [k, g] : grads) s += dot(g, g);
  return std::sqrt(s);
}

double clip_global_norm(GradMap& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& [k, g] : grads)
      for (double& x : g.data()) x *= f;
  }
  return norm;
}

void TrainConfig::validate() const {
  require_positive(prior_sigma, "prior_sigma");
  if (!std::isfinite(prior_mu)) throw ConfigError("prior_mu must be finite");
  for (const PhaseConfig* p : {&vae, &detector}) {
    require_positive(p->lr, "learning rate");
    require_count(p->batch, "batch size");
    require_count(p->epochs, "epoch count");
  }
  require_positive(stage1.lr, "stage1.lr");
  require_positive(stage1.fine_lr, "stage1.fine_lr");
  require_count(stage1.batch, "stage1.batch");
  require_count(stage1.iters, "stage1.iters");
  for (std::size_t b : stage1.batch_sequence) require_count(b, "stage1.batch_sequence entry");
  if (!stage1.batch_sequence.empty()) require_count(stage1.iters_per_batch, "stage1.iters_per_batch");
  require_positive(stage2.lr, "stage2.lr");
  require_count(stage2.batch, "stage2.batch");
  require_count(stage2.epochs, "stage2.epochs");
  require_positive(detector_collab_lr, "detector_collab_lr");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be >= 0");
  require_count(checkpoint_every, "checkpoint_every");
  loss.validate();
}

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.vae = {3e-4, 100, 200};
  c.detector = {1e-4, 32, 500};
  return c;
}

void TrainLog::append(LogRecord r) {
  r.step = records_.size();
  records_.push_back(std::move(r));
}

std::vector<LogRecord> TrainLog::stage(const std::string& name) const {
  std::vector<LogRecord> out;
  for (const auto& r : records_) {
    if (r.stage == name) out.push_back(r);
  }
  return out;
}

void TrainLog::write_csv(const std::filesystem::path& path, bool wall_time) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write training log '" + path.string() + "'");
  out << "step,stage,l_rec,l_kl,l_struct_c,l_struct_r,l_consist,total,grad_norm,wall_ms\n";
  char buf[512];
  for (const auto& r : records_) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n", r.step, r.stage.c_str(),
                  r.l_rec, r.l_kl, r.l_struct_c, r.l_struct_r, r.l_consist, r.total, r.grad_norm,
                  wall_time ? r.wall_ms : 0.0);
    out << buf;
  }
  if (!out) throw IoError("write failed for training log '" + path.string() + "'");
}

std::size_t steps_for_epochs(std::size_t epochs, std::size_t n, std::size_t batch) {
  return epochs * ((n + batch - 1) / batch);
}

std::vector<ScheduleSegment> stage_schedule(const TrainConfig& cfg, int stage, std::size_t n_phi) {
  std::vector<ScheduleSegment> out;
  if (stage == 1) {
    out.push_back({cfg.stage1.lr, cfg.stage1.batch, cfg.stage1.iters});
    for (std::size_t b : cfg.stage1.batch_sequence) out.push_back({cfg.stage1.fine_lr, b, cfg.stage1.iters_per_batch});
  } else if (stage == 2) {
    out.push_back({cfg.stage2.lr, cfg.stage2.batch, steps_for_epochs(cfg.stage2.epochs, n_phi, cfg.stage2.batch)});
  } else {
    throw ConfigError("stage must be 1 or 2");
  }
  return out;
}

std::uint64_t collab_stage_seed(std::uint64_t seed, int stage) {
  return stream_seed(seed, {kStageTag, static_cast<std::uint64_t>(stage)});
}

BatchStream::BatchStream(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {
  if (n == 0) throw ConfigError("BatchStream: no samples");
  reshuffle();
}

void BatchStream::reshuffle() {
  order_.resize(n_);
  for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
  Rng rng(stream_seed(seed_, {key(Stream::shuffle), epoch_}));
  for (std::size_t i = n_; i-- > 1;) std::swap(order_[i], order_[rng.below(i + 1)]);
  cursor_ = 0;
}

BatchStream::Batch BatchStream::next(std::size_t batch) {
  if (batch == 0) throw ConfigError("BatchStream: batch size must be >= 1");
  if (cursor_ == n_) {
    ++epoch_;
    reshuffle();
  }
  Batch b;
  b.epoch = epoch_;
  b.epoch_start = cursor_ == 0;
  const std::size_t take = std::min(batch, n_ - cursor_);
  b.positions.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                     order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + take));
  cursor_ += take;
  b.epoch_end = cursor_ == n_;
  return b;
}

std::vector<Sample> assemble_batch(const std::vector<const Sample*>& data, const std::vector<std::size_t>& positions,
                                   std::size_t epoch, std::uint64_t seed, bool augment) {
  std::vector<Sample> out;
  out.reserve(positions.size());
  for (std::size_t pos : positions) {
    const Sample& s = *data.at(pos);
    if (!augment) {
      out.push_back(s);
      continue;
    }
    const auto f = draw_scale_factors(stream_seed(seed, {key(Stream::augment), epoch, s.id}));
    out.push_back(augment_scale(s, f[0], f[1], f[2]));
  }
  return out;
}

VaeResult run_vae(ParamMap encoder, ParamMap generator, const std::vector<const Sample*>& data, const NetConfig& net,
                  const VaeSchedule& schedule, const TrainHooks& hooks) {
  check_data(data, net, "run_vae");
  check_schedule(schedule.segments);
  VaeResult res{std::move(encoder), std::move(generator), {}};
  AdamState enc_opt, gen_opt;
  BatchStream stream(data.size(), schedule.seed);
  std::size_t step = 0;
  std::size_t last_epoch = 0;
  for (const auto& seg : schedule.segments) {
    enc_opt.lr = gen_opt.lr = seg.lr;
    for (std::size_t i = 0; i < seg.steps; ++i, ++step) {
      const auto t0 = Clock::now();
      auto b = stream.next(seg.batch);
      if (b.epoch != last_epoch) {
        last_epoch = b.epoch;
        if (b.epoch % schedule.checkpoint_every == 0) write_ckpt(hooks, "vae_last.ckpt", {res.encoder, res.generator, {}});
      }
      const auto batch = assemble_batch(data, b.positions, b.epoch, schedule.seed, schedule.augment);

      Tape tape;
      auto enc = voxelstruct::bind(tape, res.encoder, schedule.train_encoder);
      auto gen = voxelstruct::bind(tape, res.generator, true);
      Var x = tape.constant(grids_to_tensor(grids_of(batch)));
      BatchStats stats;
      ForwardMode mode{true, nullptr, &stats, nullptr};
      ForwardMode enc_mode = schedule.train_encoder ? mode : ForwardMode{};
      auto [mu, logvar] = encode(enc, x, net, enc_mode);
      Tensor eps = Rng(stream_seed(schedule.seed, {key(Stream::reparam), step})).normal_tensor(mu.shape());
      Var pred = generate(gen, reparameterize(mu, logvar, eps), net, mode);
      Var rec = recon_loss(pred, x.value());
      Var kl = kl_loss(mu, logvar);
      Var total = scale(add(rec, scale(kl, schedule.kl_weight)), schedule.loss_scale);
      tape.backward(total);

      GradMap grads = collect_grads(tape, gen);
      if (schedule.train_encoder) grads.merge(collect_grads(tape, enc));
      LogRecord r;
      r.stage = "vae";
      r.l_rec = rec.value().item();
      r.l_kl = kl.value().item();
      r.total = total.value().item();
      r.grad_norm = clip_global_norm(grads, schedule.clip_norm);
      GradMap enc_grads = take_prefix(grads, "enc/");
      adam_step(res.generator, grads, gen_opt);
      if (schedule.train_encoder) adam_step(res.encoder, enc_grads, enc_opt);
      if (net.batch_norm) {
        update_running_stats(res.generator, stats);
        if (schedule.train_encoder) update_running_stats(res.encoder, stats);
      }
      r.wall_ms = elapsed_ms(t0);
      res.log.append(std::move(r));
    }
  }
  write_ckpt(hooks, "vae_last.ckpt", {res.encoder, res.generator, {}});
  return res;
}

VaeResult pretrain_vae(const std::vector<const Sample*>& data, const NetConfig& net, const TrainConfig& cfg,
                       const TrainHooks& hooks, const ModelParams* init) {
  net.validate();
  check_data(data, net, "pretrain_vae");
  ModelParams p = init ? *init : init_params(net, cfg.seed);
  check_param_keys(p.encoder, encoder_param_specs(net), "encoder");
  check_param_keys(p.generator, generator_param_specs(net), "generator");
  VaeSchedule sched;
  sched.segments.push_back({cfg.vae.lr, cfg.vae.batch, steps_for_epochs(cfg.vae.epochs, data.size(), cfg.vae.batch)});
  sched.seed = cfg.seed;
  sched.augment = cfg.augment;
  sched.kl_weight = cfg.loss.kl_weight;
  sched.checkpoint_every = cfg.checkpoint_every;
  return run_vae(std::move(p.encoder), std::move(p.generator), data, net, sched, hooks);
}

DetectorResult pretrain_detector(const std::vector<const Sample*>& annotated, const ModelParams* shape_model,
                                 const NetConfig& net, const TrainConfig& cfg, const TrainHooks& hooks,
                                 const ParamMap* init) {
  net.validate();
  check_data(annotated, net, "pretrain_detector");
  for (const Sample* s : annotated) {
    if (!s->landmarks) throw ConfigError("pretrain_detector: sample " + std::to_string(s->id) + " is not annotated");
  }
  require_positive(cfg.detector.lr, "detector lr");
  require_count(cfg.detector.batch, "detector batch");
  DetectorResult res;
  res.detector = init ? *init : init_params(net, cfg.seed).detector;
  check_param_keys(res.detector, detector_param_specs(net), "detector");
  if (shape_model) {
    check_param_keys(shape_model->encoder, encoder_param_specs(net), "encoder");
    check_param_keys(shape_model->generator, generator_param_specs(net), "generator");
  }
  const LossWeights& w = cfg.loss;
  AdamState opt;
  opt.lr = cfg.detector.lr;
  BatchStream stream(annotated.size(), cfg.seed);
  const std::size_t steps = steps_for_epochs(cfg.detector.epochs, annotated.size(), cfg.detector.batch);
  std::size_t last_epoch = 0;
  for (std::size_t step = 0; step < steps; ++step) {
    const auto t0 = Clock::now();
    auto b = stream.next(cfg.detector.batch);
    if (b.epoch != last_epoch) {
      last_epoch = b.epoch;
      if (b.epoch % cfg.checkpoint_every == 0) write_ckpt(hooks, "detector_last.ckpt", {{}, {}, res.detector});
    }
    const auto batch = assemble_batch(annotated, b.positions, b.epoch, cfg.seed, cfg.augment);
    const Tensor truth = landmarks_of(batch);
    const auto grids = grids_of(batch);

    Tape tape;
    auto det = voxelstruct::bind(tape, res.detector, true);
    Rng drop(stream_seed(cfg.seed, {key(Stream::dropout), step}));
    BatchStats stats;
    ForwardMode mode{true, &drop, &stats, nullptr};
    Var clean = detect(det, tape.constant(grids_to_tensor(grids)), net, mode);
    Var err_c = landmark_error(clean, truth);
    Var total = scale(err_c, w.struct_correctness);
    LogRecord r;
    r.stage = "detector";
    r.l_struct_c = err_c.value().item();
    if (shape_model) {
      const auto recon =
          sampled_reconstruction(*shape_model, grids, net, stream_seed(cfg.seed, {key(Stream::reparam), step}));
      Var noisy = detect(det, tape.constant(grids_to_tensor(recon)), net, mode);
      Var err_r = landmark_error(noisy, truth);
      total = add(total, scale(err_r, w.struct_robustness));
      r.l_struct_r = err_r.value().item();
    }
    tape.backward(total);
    GradMap grads = collect_grads(tape, det);
    r.total = total.value().item();
    r.grad_norm = global_norm(grads);
    adam_step(res.detector, grads, opt);
    if (net.batch_norm) update_running_stats(res.detector, stats);
    r.wall_ms = elapsed_ms(t0);
    res.log.append(std::move(r));
  }
  write_ckpt(hooks, "detector_last.ckpt", {{}, {}, res.detector});
  return res;
}

PhaseGrads detector_phase_grads(const ModelParams& params, std::span<const Sample> batch, const NetConfig& net,
                                const LossWeights& w, std::uint64_t noise_seed, std::uint64_t dropout_seed) {
  const Tensor truth = landmarks_of(batch);
  const auto grids = grids_of(batch);
  // Reconstructions come from the frozen shape model; only the detector is on the tape.
  const auto recon = sampled_reconstruction(params, grids, net, noise_seed);

  Tape tape;
  auto det = voxelstruct::bind(tape, params.detector, true);
  Rng drop(dropout_seed);
  PhaseGrads out;
  ForwardMode mode{true, &drop, &out.batch_stats, nullptr};
  Var l_dot = detect(det, tape.constant(grids_to_tensor(grids)), net, mode);
  Var l_hat = detect(det, tape.constant(grids_to_tensor(recon)), net, mode);
  Var err_c = landmark_error(l_dot, truth);
  Var err_r = landmark_error(l_hat, truth);
  Var total = add(scale(err_c, w.struct_correctness), scale(err_r, w.struct_robustness));
  tape.backward(total);

  out.detector = collect_grads(tape, det);
  out.encoder = zero_grads(params.encoder);
  out.generator = zero_grads(params.generator);
  out.record.l_struct_c = err_c.value().item();
  out.record.l_struct_r = err_r.value().item();
  out.record.total = total.value().item();
  return out;
}

PhaseGrads shape_phase_grads(const ModelParams& params, std::span<const Sample> batch, bool train_encoder,
                             const NetConfig& net, const TrainConfig& cfg, std::uint64_t reparam_seed,
                             std::uint64_t prior_seed) {
  const LossWeights& w = cfg.loss;
  Tape tape;
  auto enc = voxelstruct::bind(tape, params.encoder, train_encoder);
  auto gen = voxelstruct::bind(tape, params.generator, true);
  auto det = voxelstruct::bind(tape, params.detector, false);
  PhaseGrads out;
  ForwardMode mode{true, nullptr, &out.batch_stats, nullptr};

  Var x = tape.constant(grids_to_tensor(grids_of(batch)));
  auto [mu, logvar] = encode(enc, x, net, train_encoder ? mode : ForwardMode{});
  Tensor eps = Rng(reparam_seed).normal_tensor(mu.shape());
  Var pred = generate(gen, reparameterize(mu, logvar, eps), net, mode);
  Var rec = recon_loss(pred, x.value());
  Var kl = kl_loss(mu, logvar);

  Tensor zbar = Rng(prior_seed).normal_tensor({batch.size(), net.latent_dim});
  for (double& v : zbar.data()) v = cfg.prior_mu + cfg.prior_sigma * v;
  // Prior samples go through the generator in inference mode so they do not
  // disturb the batch statistics of the reconstruction pass.
  Var sbar = generate(gen, tape.constant(zbar), net);
  Var lbar = detect(det, sbar, net);
  Var consist = consistency_loss(sbar, lbar, consistency_kernel_for(net.grid_dim));
  Var total = shape_total_loss(rec, kl, consist, w);
  tape.backward(total);

  out.generator = collect_grads(tape, gen);
  out.encoder = train_encoder ? collect_grads(tape, enc) : zero_grads(params.encoder);
  out.detector = zero_grads(params.detector);
  out.record.l_rec = rec.value().item();
  out.record.l_kl = kl.value().item();
  out.record.l_consist = consist.value().item();
  out.record.total = total.value().item();
  return out;
}

CollabResult collaborative_train(ModelParams params, const std::vector<const Sample*>& labeled,
                                 const std::vector<const Sample*>& phi, const NetConfig& net, const TrainConfig& cfg,
                                 const TrainHooks& hooks) {
  net.validate();
  cfg.validate();
  check_data(labeled, net, "collaborative_train (labeled)");
  check_data(phi, net, "collaborative_train (phi)");
  check_param_keys(params.encoder, encoder_param_specs(net), "encoder");
  check_param_keys(params.generator, generator_param_specs(net), "generator");
  check_param_keys(params.detector, detector_param_specs(net), "detector");
  for (const Sample* s : labeled) {
    if (!s->landmarks) throw ConfigError("collaborative_train: labeled sample " + std::to_string(s->id) + " has no landmarks");
  }

  CollabResult res{std::move(params), {}};
  for (int stage = 1; stage <= 2; ++stage) {
    const bool train_encoder = stage == 2;
    const std::string tag = "stage" + std::to_string(stage);
    const std::uint64_t seed = collab_stage_seed(cfg.seed, stage);
    const std::uint64_t det_seed = stream_seed(seed, {kDetectorPhaseTag});
    BatchStream shape_stream(phi.size(), seed);
    BatchStream det_stream(labeled.size(), det_seed);
    AdamState enc_opt, gen_opt, det_opt;
    det_opt.lr = cfg.detector_collab_lr;
    std::size_t shape_step = 0, det_step = 0;

    for (const auto& seg : stage_schedule(cfg, stage, phi.size())) {
      enc_opt.lr = gen_opt.lr = seg.lr;
      for (std::size_t i = 0; i < seg.steps; ++i) {
        auto b = shape_stream.next(seg.batch);
        if (b.epoch_start) {
          // Detector phase: one pass over the labeled set with the shape model fixed.
          BatchStream::Batch db;
          do {
            const auto t0 = Clock::now();
            db = det_stream.next(seg.batch);
            const auto batch = assemble_batch(labeled, db.positions, db.epoch, det_seed, cfg.augment);
            PhaseGrads g = detector_phase_grads(res.params, batch, net, cfg.loss,
                                                stream_seed(det_seed, {key(Stream::reparam), det_step}),
                                                stream_seed(det_seed, {key(Stream::dropout), det_step}));
            g.record.stage = tag + "-det";
            g.record.grad_norm = clip_global_norm(g.detector, cfg.clip_norm);
            adam_step(res.params.detector, g.detector, det_opt);
            if (net.batch_norm) update_running_stats(res.params.detector, g.batch_stats);
            g.record.wall_ms = elapsed_ms(t0);
            res.log.append(std::move(g.record));
            ++det_step;
          } while (!db.epoch_end);
        }

        const auto t0 = Clock::now();
        const auto batch = assemble_batch(phi, b.positions, b.epoch, seed, cfg.augment);
        PhaseGrads g = shape_phase_grads(res.params, batch, train_encoder, net, cfg,
                                         stream_seed(seed, {key(Stream::reparam), shape_step}),
                                         stream_seed(seed, {key(Stream::prior), shape_step}));
        GradMap grads = std::move(g.generator);
        if (train_encoder) grads.merge(g.encoder);
        g.record.stage = tag + "-shape";
        g.record.grad_norm = clip_global_norm(grads, cfg.clip_norm);
        GradMap enc_grads = take_prefix(grads, "enc/");
        adam_step(res.params.generator, grads, gen_opt);
        if (train_encoder) adam_step(res.params.encoder, enc_grads, enc_opt);
        if (net.batch_norm) {
          update_running_stats(res.params.generator, g.batch_stats);
          if (train_encoder) update_running_stats(res.params.encoder, g.batch_stats);
        }
        g.record.wall_ms = elapsed_ms(t0);
        res.log.append(std::move(g.record));
        ++shape_step;
      }
    }
    write_ckpt(hooks, stage == 1 ? "stage1.ckpt" : "stage2.ckpt", res.params);
  }
  return res;
}

}  // namespace voxelstruct
