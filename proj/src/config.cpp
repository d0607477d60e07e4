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
#include "voxelstruct/config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "voxelstruct/hash.hpp"

namespace voxelstruct {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ConfigError("config: unknown key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

template <typename T>
void read(const json& j, const char* name, T& out, const std::string& where) {
  if (!j.contains(name)) return;
  try {
    out = j.at(name).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for '" + where + "." + name + "'");
  }
}

json net_json(const NetConfig& n) {
  return {{"grid_dim", n.grid_dim},
          {"latent_dim", n.latent_dim},
          {"encoder_channels", n.encoder_channels},
          {"detector_channels", n.detector_channels},
          {"detector_kernels", n.detector_kernels},
          {"detector_fc", n.detector_fc},
          {"n_landmarks", n.n_landmarks},
          {"dropout_rate", n.dropout_rate},
          {"batch_norm", n.batch_norm}};
}

NetConfig net_from(const json& j) {
  reject_unknown(j,
                 {"grid_dim", "latent_dim", "encoder_channels", "detector_channels", "detector_kernels", "detector_fc",
                  "n_landmarks", "dropout_rate", "batch_norm"},
                 "net");
  NetConfig n;
  read(j, "grid_dim", n.grid_dim, "net");
  read(j, "latent_dim", n.latent_dim, "net");
  read(j, "encoder_channels", n.encoder_channels, "net");
  read(j, "detector_channels", n.detector_channels, "net");
  read(j, "detector_kernels", n.detector_kernels, "net");
  read(j, "detector_fc", n.detector_fc, "net");
  read(j, "n_landmarks", n.n_landmarks, "net");
  read(j, "dropout_rate", n.dropout_rate, "net");
  read(j, "batch_norm", n.batch_norm, "net");
  return n;
}

json phase_json(const PhaseConfig& p) { return {{"lr", p.lr}, {"batch", p.batch}, {"epochs", p.epochs}}; }

PhaseConfig phase_from(const json& j, PhaseConfig p, const std::string& where) {
  reject_unknown(j, {"lr", "batch", "epochs"}, where);
  read(j, "lr", p.lr, where);
  read(j, "batch", p.batch, where);
  read(j, "epochs", p.epochs, where);
  return p;
}

json train_json(const TrainConfig& t) {
  return {{"seed", t.seed},
          {"prior_mu", t.prior_mu},
          {"prior_sigma", t.prior_sigma},
          {"vae", phase_json(t.vae)},
          {"detector", phase_json(t.detector)},
          {"stage1",
           {{"lr", t.stage1.lr},
            {"batch", t.stage1.batch},
            {"iters", t.stage1.iters},
            {"fine_lr", t.stage1.fine_lr},
            {"batch_sequence", t.stage1.batch_sequence},
            {"iters_per_batch", t.stage1.iters_per_batch}}},
          {"stage2", {{"lr", t.stage2.lr}, {"batch", t.stage2.batch}, {"epochs", t.stage2.epochs}}},
          {"detector_collab_lr", t.detector_collab_lr},
          {"augment", t.augment},
          {"clip_norm", t.clip_norm},
          {"checkpoint_every", t.checkpoint_every}};
}

TrainConfig train_from(const json& j) {
  reject_unknown(j,
                 {"seed", "prior_mu", "prior_sigma", "vae", "detector", "stage1", "stage2", "detector_collab_lr",
                  "augment", "clip_norm", "checkpoint_every"},
                 "train");
  TrainConfig t;
  read(j, "seed", t.seed, "train");
  read(j, "prior_mu", t.prior_mu, "train");
  read(j, "prior_sigma", t.prior_sigma, "train");
  if (j.contains("vae")) t.vae = phase_from(j["vae"], t.vae, "train.vae");
  if (j.contains("detector")) t.detector = phase_from(j["detector"], t.detector, "train.detector");
  if (j.contains("stage1")) {
    const json& s = j["stage1"];
    reject_unknown(s, {"lr", "batch", "iters", "fine_lr", "batch_sequence", "iters_per_batch"}, "train.stage1");
    read(s, "lr", t.stage1.lr, "train.stage1");
    read(s, "batch", t.stage1.batch, "train.stage1");
    read(s, "iters", t.stage1.iters, "train.stage1");
    read(s, "fine_lr", t.stage1.fine_lr, "train.stage1");
    read(s, "batch_sequence", t.stage1.batch_sequence, "train.stage1");
    read(s, "iters_per_batch", t.stage1.iters_per_batch, "train.stage1");
  }
  if (j.contains("stage2")) {
    const json& s = j["stage2"];
    reject_unknown(s, {"lr", "batch", "epochs"}, "train.stage2");
    read(s, "lr", t.stage2.lr, "train.stage2");
    read(s, "batch", t.stage2.batch, "train.stage2");
    read(s, "epochs", t.stage2.epochs, "train.stage2");
  }
  read(j, "detector_collab_lr", t.detector_collab_lr, "train");
  read(j, "augment", t.augment, "train");
  read(j, "clip_norm", t.clip_norm, "train");
  read(j, "checkpoint_every", t.checkpoint_every, "train");
  return t;
}

json loss_json(const LossWeights& w) {
  return {{"alpha1", w.alpha1},
          {"alpha2", w.alpha2},
          {"struct_correctness", w.struct_correctness},
          {"struct_robustness", w.struct_robustness},
          {"kl_weight", w.kl_weight}};
}

LossWeights loss_from(const json& j) {
  reject_unknown(j, {"alpha1", "alpha2", "struct_correctness", "struct_robustness", "kl_weight"}, "loss");
  LossWeights w;
  read(j, "alpha1", w.alpha1, "loss");
  read(j, "alpha2", w.alpha2, "loss");
  read(j, "struct_correctness", w.struct_correctness, "loss");
  read(j, "struct_robustness", w.struct_robustness, "loss");
  read(j, "kl_weight", w.kl_weight, "loss");
  return w;
}

json data_json(const DatasetConfig& d) {
  return {{"count", d.count},          {"dim", d.dim},
          {"seed", d.seed},            {"test_frac", d.test_frac},
          {"annotated_frac", d.annotated_frac}, {"hard", d.hard}};
}

DatasetConfig data_from(const json& j) {
  reject_unknown(j, {"count", "dim", "seed", "test_frac", "annotated_frac", "hard"}, "data");
  DatasetConfig d;
  read(j, "count", d.count, "data");
  read(j, "dim", d.dim, "data");
  read(j, "seed", d.seed, "data");
  read(j, "test_frac", d.test_frac, "data");
  read(j, "annotated_frac", d.annotated_frac, "data");
  read(j, "hard", d.hard, "data");
  return d;
}

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  net.validate();
  train.validate();
  if (data.count < 2) throw ConfigError("data.count must be >= 2");
  if (data.dim < 16) throw ConfigError("data.dim must be >= 16");
}

std::string RunConfig::to_json() const {
  json j{{"net", net_json(net)}, {"train", train_json(train)}, {"loss", loss_json(train.loss)}, {"data", data_json(data)}};
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  const json j = parse(text);
  reject_unknown(j, {"net", "train", "loss", "data", "config_hash"}, "");
  RunConfig c;
  if (j.contains("net")) c.net = net_from(j["net"]);
  if (j.contains("train")) c.train = train_from(j["train"]);
  if (j.contains("loss")) c.train.loss = loss_from(j["loss"]);
  if (j.contains("data")) c.data = data_from(j["data"]);
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string RunConfig::hash() const { return content_hash(to_json()); }

std::string net_to_json(const NetConfig& net) { return net_json(net).dump(2); }

NetConfig net_from_json(const std::string& text) { return net_from(parse(text)); }

std::string net_config_hash(const NetConfig& net) { return content_hash(net_json(net).dump()); }

}  // namespace voxelstruct
