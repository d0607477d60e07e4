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
#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "voxelstruct/checkpoint.hpp"
#include "voxelstruct/config.hpp"
#include "voxelstruct/dataset.hpp"
#include "voxelstruct/eval.hpp"
#include "voxelstruct/training.hpp"

namespace fs = std::filesystem;
using namespace voxelstruct;

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kArgs = 2, kIo = 3, kData = 4, kMismatch = 5 };

// Carries an exit code out of a subcommand.
struct CliError : std::runtime_error {
  CliError(int c, const std::string& msg) : std::runtime_error(msg), code(c) {}
  int code;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + p.string() + "'");
}

// config.json of a run: the full RunConfig plus its hashes.
void write_run_config(const fs::path& dir, const RunConfig& cfg, const std::string& data_hash) {
  auto j = nlohmann::ordered_json::parse(cfg.to_json());
  j["config_hash"] = cfg.hash();
  j["net_hash"] = net_config_hash(cfg.net);
  j["data_hash"] = data_hash;
  write_text(dir / "config.json", j.dump(2) + "\n");
}

struct LoadedModel {
  ModelParams params;
  NetConfig net;
  std::string net_hash;
};

// A checkpoint together with the network description stored next to it.
LoadedModel load_model(const fs::path& ckpt) {
  LoadedModel m;
  m.params = read_checkpoint(ckpt);
  const fs::path cfg_path = ckpt.parent_path() / "config.json";
  if (!fs::exists(cfg_path)) throw CliError(kMismatch, "no config.json next to checkpoint '" + ckpt.string() + "'");
  auto j = nlohmann::json::parse(read_text(cfg_path), nullptr, false);
  if (j.is_discarded() || !j.contains("net")) throw CliError(kMismatch, "unreadable config next to '" + ckpt.string() + "'");
  try {
    m.net = net_from_json(j["net"].dump());
    m.net.validate();
  } catch (const ConfigError& e) {
    throw CliError(kMismatch, std::string("checkpoint config: ") + e.what());
  }
  m.net_hash = net_config_hash(m.net);
  if (j.contains("net_hash") && j["net_hash"] != m.net_hash) {
    throw CliError(kMismatch, "config hash mismatch for '" + ckpt.string() + "'");
  }
  try {
    if (!m.params.encoder.empty()) check_param_keys(m.params.encoder, encoder_param_specs(m.net), "encoder");
    if (!m.params.generator.empty()) check_param_keys(m.params.generator, generator_param_specs(m.net), "generator");
    if (!m.params.detector.empty()) check_param_keys(m.params.detector, detector_param_specs(m.net), "detector");
  } catch (const ConfigError& e) {
    throw CliError(kMismatch, std::string("checkpoint '") + ckpt.string() + "' does not match its config: " + e.what());
  }
  return m;
}

// Merges several checkpoints; all must share one network config.
LoadedModel load_models(const std::vector<std::string>& paths) {
  LoadedModel merged;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    LoadedModel m = load_model(paths[i]);
    if (i == 0) {
      merged = std::move(m);
      continue;
    }
    if (m.net_hash != merged.net_hash) throw CliError(kMismatch, "checkpoints were trained with different configs");
    for (auto part : {&ModelParams::encoder, &ModelParams::generator, &ModelParams::detector}) {
      if (!(m.params.*part).empty()) merged.params.*part = std::move(m.params.*part);
    }
  }
  return merged;
}

std::vector<const Sample*> pick(const Dataset& ds, const std::vector<std::uint64_t>& ids) { return ds.select(ids); }

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string out;
  std::size_t count = 1000;
  std::size_t dim = 32;
  std::uint64_t seed = 0;
  double annotated_frac = 0.24;
  double test_frac = 0.2;
  bool hard = false;
};

int cmd_gen_data(const GenArgs& a) {
  DatasetConfig c;
  c.count = a.count;
  c.dim = a.dim;
  c.seed = a.seed;
  c.annotated_frac = a.annotated_frac;
  c.test_frac = a.test_frac;
  c.hard = a.hard;
  Dataset ds = generate_dataset(c);
  write_dataset(ds, a.out);
  std::cout << "samples " << ds.samples.size() << "\ntrain " << ds.split.train.size() << "\ntest "
            << ds.split.test.size() << "\nannotated_train " << ds.split.annotated_train.size()
            << "\nannotated_test " << ds.split.annotated_test.size() << "\nconfig_hash " << ds.config_hash << "\n";
  return kOk;
}

struct ImportArgs {
  std::string src;
  std::string out;
  double test_frac = 0.2;
  std::uint64_t seed = 0;
};

int cmd_import(const ImportArgs& a) {
  Dataset ds = import_voxel_directory(a.src, a.test_frac, a.seed);
  write_dataset(ds, a.out);
  std::cout << "samples " << ds.samples.size() << "\nannotated "
            << ds.split.annotated_train.size() + ds.split.annotated_test.size() << "\n";
  return kOk;
}

struct TrainArgs {
  std::string mode;
  std::string data;
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string init;
  bool wall_time = false;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg;
  bool dim_from_config = false;
  if (!a.config.empty()) {
    cfg = RunConfig::load(a.config);
    const auto j = nlohmann::json::parse(read_text(a.config), nullptr, false);
    dim_from_config = j.is_object() && j.contains("net") && j["net"].contains("grid_dim");
  }
  if (a.seed_given) cfg.train.seed = a.seed;

  const Dataset ds = read_dataset(a.data);
  if (!dim_from_config) cfg.net.grid_dim = ds.config.dim;
  if (cfg.net.grid_dim != ds.config.dim) {
    throw CliError(kMismatch, "config grid_dim " + std::to_string(cfg.net.grid_dim) + " does not match dataset dim " +
                                  std::to_string(ds.config.dim));
  }
  cfg.data = ds.config;
  cfg.validate();

  std::optional<LoadedModel> init;
  if (!a.init.empty()) {
    init = load_models(split_list(a.init));
    if (init->net_hash != net_config_hash(cfg.net)) {
      throw CliError(kMismatch, "--init checkpoint was trained with a different network config");
    }
  }

  fs::create_directories(a.out);
  write_run_config(a.out, cfg, ds.config_hash);
  TrainHooks hooks{a.out, a.wall_time};
  const auto train = pick(ds, ds.split.train);
  const auto annotated = pick(ds, ds.split.annotated_train);

  TrainLog log;
  ModelParams result;
  if (a.mode == "vae") {
    const ModelParams* start = init && !init->params.encoder.empty() ? &init->params : nullptr;
    auto r = pretrain_vae(train, cfg.net, cfg.train, hooks, start);
    result.encoder = std::move(r.encoder);
    result.generator = std::move(r.generator);
    log = std::move(r.log);
  } else if (a.mode == "detector") {
    if (annotated.empty()) throw CliError(kData, "dataset has no annotated training samples; detector training needs landmarks");
    const ModelParams* shape = nullptr;
    if (init && !init->params.encoder.empty() && !init->params.generator.empty()) shape = &init->params;
    const ParamMap* start = init && !init->params.detector.empty() ? &init->params.detector : nullptr;
    auto r = pretrain_detector(annotated, shape, cfg.net, cfg.train, hooks, start);
    result.detector = std::move(r.detector);
    log = std::move(r.log);
  } else {
    if (annotated.empty()) throw CliError(kData, "dataset has no annotated training samples; joint training needs landmarks");
    if (!init || init->params.encoder.empty() || init->params.generator.empty() || init->params.detector.empty()) {
      throw CliError(kArgs, "joint mode needs pretrained encoder, generator and detector via --init");
    }
    auto r = collaborative_train(init->params, annotated, train, cfg.net, cfg.train, hooks);
    result = std::move(r.params);
    log = std::move(r.log);
  }
  write_checkpoint(fs::path(a.out) / "model.ckpt", result);
  log.write_csv(fs::path(a.out) / "train_log.csv", a.wall_time);
  if (!log.empty()) {
    std::cout << "steps " << log.records().size() << "\ninitial_total " << log.records().front().total
              << "\nfinal_total " << log.records().back().total << "\n";
  }
  std::cout << "config_hash " << cfg.hash() << "\n";
  return kOk;
}

struct EvalArgs {
  std::string protocol;
  std::string models;
  std::string data;
  std::string out;
  std::string split = "test";
  double threshold = 0.5;
  double level = 0.0;
  int dilate = 0;
  int crop_axis = -1;
  double crop_frac = 0.0;
  bool crop_high = false;
  std::vector<double> levels{0.0, 0.25, 0.5, 0.75};
  std::vector<std::uint64_t> seeds{0};
  std::size_t k = 8;
  std::vector<std::uint64_t> pair;
  std::size_t n = 64;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a) {
  const auto paths = split_list(a.models);
  if (paths.empty()) throw CliError(kArgs, "--models needs at least one checkpoint");
  std::vector<LoadedModel> models;
  for (const auto& p : paths) models.push_back(load_model(p));
  for (const auto& m : models) {
    if (m.net_hash != models.front().net_hash) {
      throw CliError(kMismatch, "checkpoints were trained with different configs; refusing to compare");
    }
  }
  const NetConfig& net = models.front().net;
  const std::string hash = models.front().net_hash;
  fs::create_directories(a.out);

  auto need = [&](const LoadedModel& m, bool enc, bool gen, bool det) {
    if ((enc && m.params.encoder.empty()) || (gen && m.params.generator.empty()) ||
        (det && m.params.detector.empty())) {
      throw CliError(kData, "protocol '" + a.protocol + "' needs a checkpoint with " +
                                std::string(enc ? "encoder " : "") + (gen ? "generator " : "") + (det ? "detector" : ""));
    }
  };

  if (a.protocol == "consistency") {
    for (std::size_t i = 0; i < models.size(); ++i) {
      need(models[i], false, true, true);
      EvalReport r = consistency_report(models[i].params, net, a.n, a.seed);
      r.config_hash = hash;
      r.write(fs::path(a.out) / ("consistency_model" + std::to_string(i)));
      std::cout << "model" << i << " overall " << r.mean("overall") << "\n";
    }
    return kOk;
  }

  if (a.data.empty()) throw CliError(kArgs, "--data is required for protocol '" + a.protocol + "'");
  const Dataset ds = read_dataset(a.data);
  if (ds.config.dim != net.grid_dim) {
    throw CliError(kMismatch, "dataset dim " + std::to_string(ds.config.dim) + " does not match model grid_dim " +
                                  std::to_string(net.grid_dim));
  }
  const auto& ids = a.split == "train" ? ds.split.train : ds.split.test;
  const auto samples = pick(ds, ids);

  if (a.protocol == "iou" || a.protocol == "complete") {
    Degradation d;
    if (a.protocol == "complete") {
      d.sparsify_level = a.level;
      d.dilation_iters = a.dilate;
      d.crop_axis = a.crop_axis;
      d.crop_fraction = a.crop_frac;
      d.crop_from_high = a.crop_high;
    }
    for (std::size_t i = 0; i < models.size(); ++i) {
      need(models[i], true, true, false);
      EvalReport r = completion_eval(models[i].params, net, samples, d, a.seed, a.threshold);
      r.protocol = a.protocol;
      r.config_hash = hash;
      r.write(fs::path(a.out) / (a.protocol + "_model" + std::to_string(i)));
      std::cout << "model" << i << " iou " << r.mean("iou") << "\n";
    }
  } else if (a.protocol == "sweep") {
    std::vector<std::pair<std::string, const ModelParams*>> named;
    for (std::size_t i = 0; i < models.size(); ++i) {
      need(models[i], true, true, false);
      named.emplace_back("model" + std::to_string(i), &models[i].params);
    }
    EvalReport r = sparseness_sweep(named, net, samples, a.levels, a.seeds, a.threshold);
    r.config_hash = hash;
    r.write(fs::path(a.out) / "sweep");
    if (models.size() == 2) {
      // Paired comparison: one line per level with both models side by side.
      std::ofstream pc(fs::path(a.out) / "sweep_paired.csv", std::ios::trunc);
      if (!pc) throw IoError("cannot write paired comparison");
      pc << "level,model0_iou,model1_iou,difference\n";
      const std::size_t nl = a.levels.size();
      for (std::size_t l = 0; l < nl; ++l) {
        const double x = r.rows[l].values[0], y = r.rows[nl + l].values[0];
        pc << r.rows[l].tags[1] << "," << x << "," << y << "," << (y - x) << "\n";
      }
    }
    for (const auto& row : r.rows) std::cout << row.tags[0] << " level " << row.tags[1] << " iou " << row.values[0] << "\n";
  } else if (a.protocol == "interpolate") {
    need(models.front(), true, true, false);
    std::uint64_t ia = ids.size() > 0 ? ids[0] : 0, ib = ids.size() > 1 ? ids[1] : 0;
    if (!a.pair.empty()) {
      if (a.pair.size() != 2) throw CliError(kArgs, "--pair takes two sample ids");
      ia = a.pair[0];
      ib = a.pair[1];
    }
    if (ia >= ds.samples.size() || ib >= ds.samples.size()) throw CliError(kArgs, "--pair id out of range");
    const bool with_lm = !models.front().params.detector.empty();
    const auto track = interpolate(models.front().params, net, ds.samples[ia], ds.samples[ib], a.k, with_lm);
    nlohmann::ordered_json j;
    j["a"] = track.a_id;
    j["b"] = track.b_id;
    j["config_hash"] = hash;
    j["t"] = track.t;
    j["smoothness"] = track_smoothness(track, a.threshold);
    nlohmann::json frames = nlohmann::json::array();
    for (std::size_t i = 0; i < track.grids.size(); ++i) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "interp_%02zu", i);
      write_voxel_file(fs::path(a.out) / (std::string(stem) + ".voxf"), track.grids[i], false);
      export_views(track.grids[i], fs::path(a.out) / stem);
      nlohmann::json f{{"grid", std::string(stem) + ".voxf"}, {"code", track.codes[i].storage()}};
      if (track.landmarks) {
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& p : (*track.landmarks)[i]) pts.push_back({p[0], p[1], p[2]});
        f["landmarks"] = pts;
      }
      frames.push_back(std::move(f));
    }
    j["frames"] = frames;
    write_text(fs::path(a.out) / "interpolation.json", j.dump(2) + "\n");
    std::cout << "frames " << track.grids.size() << "\n";
  } else {
    throw CliError(kArgs, "unknown protocol '" + a.protocol + "'");
  }
  return kOk;
}

int parse_threads() {
  const char* env = std::getenv("VOXELSTRUCT_THREADS");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw CliError(kArgs, "VOXELSTRUCT_THREADS must be a positive integer");
  return static_cast<int>(n);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxelstruct: structure-aware voxel shape generation"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.footer(
      "Exit codes: 0 ok, 1 training diverged, 2 invalid arguments, 3 I/O failure, 4 missing data, "
      "5 config mismatch.\nEnvironment: VOXELSTRUCT_THREADS caps worker threads (default: logical cores).");

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a procedural chair dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--count", gen.count, "Number of chairs")->check(CLI::Range(2, 1000000));
  g->add_option("--dim", gen.dim, "Grid resolution D")->check(CLI::Range(16, 256));
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--annotated-frac", gen.annotated_frac, "Fraction of each split with landmarks")->check(CLI::Range(0.0, 1.0));
  g->add_option("--test-frac", gen.test_frac, "Fraction held out for testing")->check(CLI::Range(0.0, 1.0));
  g->add_flag("--hard", gen.hard, "Mix in zero- and five-legged chairs");

  ImportArgs imp;
  auto* im = app.add_subcommand("import-data", "Build a dataset from existing VOXB1/VOXF1 files");
  im->add_option("--src", imp.src, "Directory with *.vox* files (and optional <stem>.json landmarks)")->required();
  im->add_option("--out", imp.out, "Output directory")->required();
  im->add_option("--test-frac", imp.test_frac, "Fraction held out for testing")->check(CLI::Range(0.0, 1.0));
  im->add_option("--seed", imp.seed, "Split seed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the VAE, the detector, or both collaboratively");
  t->add_option("--mode", tr.mode, "vae | detector | joint")->required()->check(CLI::IsMember({"vae", "detector", "joint"}));
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--config", tr.config, "JSON run config (defaults when omitted)");
  t->add_option("--out", tr.out, "Run directory")->required();
  auto* seed_opt = t->add_option("--seed", tr.seed, "Training seed (overrides train.seed)");
  t->add_option("--init", tr.init, "Checkpoint(s) to start from, comma separated; joint mode needs all three networks");
  t->add_flag("--wall-time", tr.wall_time, "Record wall-clock time in the log (makes logs run-dependent)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate trained checkpoints");
  e->add_option("--protocol", ev.protocol, "iou | complete | sweep | interpolate | consistency")
      ->required()
      ->check(CLI::IsMember({"iou", "complete", "sweep", "interpolate", "consistency"}));
  e->add_option("--models", ev.models, "Checkpoint(s), comma separated")->required();
  e->add_option("--data", ev.data, "Dataset directory (all protocols except consistency)");
  e->add_option("--out", ev.out, "Report directory")->required();
  e->add_option("--split", ev.split, "Samples to evaluate: test | train")->check(CLI::IsMember({"test", "train"}));
  e->add_option("--threshold", ev.threshold, "Occupancy threshold")->check(CLI::Range(0.0, 1.0));
  e->add_option("--level", ev.level, "complete: sparseness level")->check(CLI::Range(0.0, 1.0));
  e->add_option("--dilate", ev.dilate, "complete: dilation iterations")->check(CLI::NonNegativeNumber);
  e->add_option("--crop-axis", ev.crop_axis, "complete: crop axis 0/1/2, -1 for none")->check(CLI::Range(-1, 2));
  e->add_option("--crop-frac", ev.crop_frac, "complete: cropped fraction of the box")->check(CLI::Range(0.0, 1.0));
  e->add_flag("--crop-high", ev.crop_high, "complete: crop from the high end of the axis");
  e->add_option("--levels", ev.levels, "sweep: sparseness levels")->delimiter(',');
  e->add_option("--seeds", ev.seeds, "sweep: degradation seeds")->delimiter(',');
  e->add_option("--k", ev.k, "interpolate: number of frames")->check(CLI::Range(2, 1000));
  e->add_option("--pair", ev.pair, "interpolate: two sample ids (default: first two of the split)")->delimiter(',');
  e->add_option("--n", ev.n, "consistency: number of prior samples")->check(CLI::Range(1, 1000000));
  e->add_option("--seed", ev.seed, "Degradation / prior sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kArgs;
  }

  try {
    parse_threads();
    if (*g) return cmd_gen_data(gen);
    if (*im) return cmd_import(imp);
    if (*t) {
      tr.seed_given = seed_opt->count() > 0;
      return cmd_train(tr);
    }
    if (*e) return cmd_eval(ev);
  } catch (const CliError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return err.code;
  } catch (const IoError& err) {
    std::cerr << "I/O error: " << err.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& err) {
    std::cerr << "I/O error: " << err.what() << "\n";
    return kIo;
  } catch (const NumericError& err) {
    std::cerr << "training diverged: " << err.what() << "\n";
    return kFailure;
  } catch (const ConfigError& err) {
    std::cerr << "invalid configuration: " << err.what() << "\n";
    return kArgs;
  } catch (const DimensionError& err) {
    std::cerr << "shape mismatch: " << err.what() << "\n";
    return kMismatch;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kFailure;
  }
  return kOk;
}
