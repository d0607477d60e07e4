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
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "voxelstruct/eval.hpp"
#include "voxelstruct/losses.hpp"
#include "voxelstruct/ops.hpp"
#include "voxelstruct/rng.hpp"
#include "voxelstruct/training.hpp"

namespace fs = std::filesystem;
using namespace voxelstruct;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Tensor rnd(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Uniform integer in [lo, hi].
std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Finite-difference gradients

Outcome gradients() {
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;
  auto check = [&](const std::string& name, const std::function<Var(Var)>& f, const Tensor& x, double eps = 1e-5) {
    const double e = gradient_check(f, x, eps);
    ++checks;
    if (!(e <= worst)) {
      worst = e;
      worst_name = name;
    }
  };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(1000 + seed);
    const Tensor w8 = rnd({2, 1, 8, 8, 8}, rng);
    auto probe = [w8](Var y) {
      Tensor w(y.shape());
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = w8[(i * 7919) % w8.size()];
      return sum(mul(y, y.tape().constant(w)));
    };

    const Tensor a = rnd({3, 4}, rng), b = rnd({3, 4}, rng);
    check("add", [&](Var v) { return probe(add(v, v.tape().constant(b))); }, a);
    check("sub", [&](Var v) { return probe(sub(v.tape().constant(b), v)); }, a);
    check("mul", [&](Var v) { return probe(mul(v, v.tape().constant(b))); }, a);
    check("scale", [&](Var v) { return probe(scale(v, -1.7)); }, a);
    check("add_scalar", [&](Var v) { return probe(add_scalar(v, 0.3)); }, a);
    check("sum", [](Var v) { return sum(mul(v, v)); }, a);
    check("mean", [](Var v) { return mean(mul(v, v)); }, a);
    check("reshape", [&](Var v) { return probe(reshape(v, {2, 6})); }, a);
    check("apply_mask", [&](Var v) { return probe(apply_mask(v, b)); }, a);

    const Tensor x = rnd({2, 5}, rng), w = rnd({5, 3}, rng), bias = rnd({3}, rng);
    check("dense.x", [&](Var v) { return probe(dense(v, v.tape().constant(w), v.tape().constant(bias))); }, x);
    check("dense.w", [&](Var v) { return probe(dense(v.tape().constant(x), v, v.tape().constant(bias))); }, w);
    check("dense.b", [&](Var v) { return probe(dense(v.tape().constant(x), v.tape().constant(w), v)); }, bias);

    const Tensor cx = rnd({1, 2, 8, 8, 8}, rng), k3 = rnd({2, 2, 3, 3, 3}, rng), k4 = rnd({2, 2, 4, 4, 4}, rng);
    check("conv3d.x", [&](Var v) { return probe(conv3d(v, v.tape().constant(k3), 1, 1)); }, cx);
    check("conv3d.k", [&](Var v) { return probe(conv3d(v.tape().constant(cx), v, 1, 1)); }, k3);
    check("conv3d.s2.x", [&](Var v) { return probe(conv3d(v, v.tape().constant(k4), 2, 1)); }, cx);
    check("conv3d.s2.k", [&](Var v) { return probe(conv3d(v.tape().constant(cx), v, 2, 1)); }, k4);
    const Tensor ty = rnd({1, 2, 4, 4, 4}, rng), tk = rnd({2, 2, 4, 4, 4}, rng);
    check("conv_transpose3d.y", [&](Var v) { return probe(conv_transpose3d(v, v.tape().constant(tk), 2, 1)); }, ty);
    check("conv_transpose3d.k", [&](Var v) { return probe(conv_transpose3d(v.tape().constant(ty), v, 2, 1)); }, tk);
    const Tensor cb = rnd({2}, rng);
    check("channel_bias.x", [&](Var v) { return probe(add_channel_bias(v, v.tape().constant(cb))); }, cx);
    check("channel_bias.b", [&](Var v) { return probe(add_channel_bias(v.tape().constant(cx), v)); }, cb);

    Tensor r = rnd({40}, rng, 0.05, 2.0);
    for (std::size_t i = 0; i < r.size(); i += 2) r[i] = -r[i];
    check("relu", [&](Var v) { return probe(relu(v)); }, r);
    check("sigmoid", [&](Var v) { return probe(sigmoid(v)); }, rnd({40}, rng, -5, 5));
    check("maxpool3d", [&](Var v) { return probe(maxpool3d(v, 2)); }, cx);

    const Tensor mu = rnd({2, 4}, rng), lv = rnd({2, 4}, rng), noise = rnd({2, 4}, rng, -2, 2);
    check("reparameterize.mu", [&](Var v) { return probe(reparameterize(v, v.tape().constant(lv), noise)); }, mu);
    check("reparameterize.logvar", [&](Var v) { return probe(reparameterize(v.tape().constant(mu), v, noise)); }, lv);

    const Tensor bx = rnd({4, 2, 2, 2, 2}, rng), gam = rnd({2}, rng, 0.5, 1.5), bet = rnd({2}, rng);
    auto bn = [&](Var xv, Var g, Var be) { return probe(batch_norm_train(xv, g, be, 1e-5, nullptr, nullptr)); };
    check("batch_norm.x", [&](Var v) { return bn(v, v.tape().constant(gam), v.tape().constant(bet)); }, bx);
    check("batch_norm.gamma", [&](Var v) { return bn(v.tape().constant(bx), v, v.tape().constant(bet)); }, gam);
    check("batch_norm.beta", [&](Var v) { return bn(v.tape().constant(bx), v.tape().constant(gam), v); }, bet);
    const Tensor rm = rnd({2}, rng), rv = rnd({2}, rng, 0.5, 2.0);
    check("batch_norm_eval.x",
          [&](Var v) { return probe(batch_norm_eval(v, v.tape().constant(gam), v.tape().constant(bet), rm, rv, 1e-5)); },
          bx);

    const Tensor pred = rnd({2, 1, 8, 8, 8}, rng, 0.05, 0.95);
    Tensor target(pred.shape());
    for (double& t : target.data()) t = rng.bernoulli(0.3) ? 1.0 : 0.0;
    check("recon_loss", [&](Var v) { return recon_loss(v, target); }, pred);
    check("kl_loss.mu", [&](Var v) { return kl_loss(v, v.tape().constant(lv)); }, mu);
    check("kl_loss.logvar", [&](Var v) { return kl_loss(v.tape().constant(mu), v); }, lv);

    const Tensor truth = rnd({2, 30}, rng, 0, 1), clean = rnd({2, 30}, rng, 0, 1), recon = rnd({2, 30}, rng, 0, 1);
    LossWeights lw;
    lw.struct_robustness = rng.uniform(0.1, 2.0);
    check("struct_loss.clean", [&](Var v) { return struct_loss(v, v.tape().constant(recon), truth, lw); }, clean);
    check("struct_loss.recon", [&](Var v) { return struct_loss(v.tape().constant(clean), v, truth, lw); }, recon);

    const ConsistencyKernel ck = consistency_kernel_for(8 * (1 + seed % 2));
    const Tensor grid = rnd({2, 1, 8, 8, 8}, rng, 0.1, 1.0), lm = rnd({2, 30}, rng, 0.1, 0.9);
    check("consistency_loss.grid", [&](Var v) { return consistency_loss(v, v.tape().constant(lm), ck); }, grid);
    check("consistency_loss.landmarks", [&](Var v) { return consistency_loss(v.tape().constant(grid), v, ck); }, lm,
          1e-7);

    Tensor parts = rnd({3}, rng, 0.1, 5.0);
    check("shape_total_loss", [&](Var v) {
      Tape& t = v.tape();
      Var r0 = sum(mul(v, t.constant(Tensor::from({3}, {1, 0, 0}))));
      Var k0 = sum(mul(v, t.constant(Tensor::from({3}, {0, 1, 0}))));
      Var c0 = sum(mul(v, t.constant(Tensor::from({3}, {0, 0, 1}))));
      return shape_total_loss(r0, k0, c0, LossWeights{});
    }, parts);
  }
  return {worst <= 1e-4, fmt("%zu checks over 10 seeds, max rel err %.2e (%s)", checks, worst, worst_name.c_str())};
}

// ---------------------------------------------------------------------------
// 2. Oracles

double brute_force_peak(const VoxelGrid& g, const Vec3& p, const ConsistencyKernel& k) {
  const std::size_t d = g.dim();
  Vec3 c;
  for (int a = 0; a < 3; ++a) c[a] = std::clamp(p[a], 0.0, 1.0) * d - 0.5;
  double best = 0;
  for (std::size_t z = 0; z < d; ++z)
    for (std::size_t y = 0; y < d; ++y)
      for (std::size_t x = 0; x < d; ++x) {
        const double r2 = (x - c[0]) * (x - c[0]) + (y - c[1]) * (y - c[1]) + (z - c[2]) * (z - c[2]);
        if (r2 > k.trunc * k.trunc) continue;
        best = std::max(best, g.at(x, y, z) * std::exp(-r2 / (2 * k.sigma * k.sigma)));
      }
  return best;
}

Outcome oracles() {
  Rng rng(2000);
  double cons_err = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t dim = rep % 3 == 0 ? 16 : 8;
    const ConsistencyKernel k = rep % 2 ? consistency_kernel_for(dim * 4) : ConsistencyKernel{1.5, 3.0};
    VoxelGrid g(dim);
    const double density = rng.uniform(0.05, 0.6);
    for (double& v : g.values()) v = rng.bernoulli(density) ? rng.uniform() : 0.0;
    LandmarkSet l;
    for (auto& p : l)
      for (double& c : p) c = rng.uniform(-0.1, 1.1);
    const auto s = consistency_measure(g, l, k);
    double total = 0;
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
      cons_err = std::max(cons_err, std::abs(s.per_landmark[i] - brute_force_peak(g, l[i], k)));
      total += s.per_landmark[i];
    }
    cons_err = std::max(cons_err, std::abs(s.total - total));
  }

  // Axis-aligned boxes: |A∩B| is the product of interval overlaps.
  std::size_t iou_bad = 0;
  auto fill = [](VoxelGrid& g, const int lo[3], const int hi[3], double v) {
    for (int z = lo[2]; z < hi[2]; ++z)
      for (int y = lo[1]; y < hi[1]; ++y)
        for (int x = lo[0]; x < hi[0]; ++x) g.at(x, y, z) = v;
  };
  for (int rep = 0; rep < 18; ++rep) {
    const int d = rep % 2 ? 12 : 8;
    int alo[3], ahi[3], blo[3], bhi[3];
    long va = 1, vb = 1, vi = 1;
    for (int a = 0; a < 3; ++a) {
      alo[a] = static_cast<int>(pick(rng, 0, d - 1));
      ahi[a] = static_cast<int>(pick(rng, alo[a] + 1, d));
      blo[a] = static_cast<int>(pick(rng, 0, d - 1));
      bhi[a] = static_cast<int>(pick(rng, blo[a] + 1, d));
      va *= ahi[a] - alo[a];
      vb *= bhi[a] - blo[a];
      vi *= std::max(0, std::min(ahi[a], bhi[a]) - std::max(alo[a], blo[a]));
    }
    VoxelGrid ga(d), gb(d);
    // Values straddling the threshold: only the >0.5 ones count.
    fill(ga, alo, ahi, rng.uniform(0.51, 1.0));
    fill(gb, blo, bhi, rng.uniform(0.51, 1.0));
    if (ga.at(d - 1, d - 1, d - 1) == 0.0) ga.at(d - 1, d - 1, d - 1) = 0.5;
    const double expect = static_cast<double>(vi) / static_cast<double>(va + vb - vi);
    if (std::abs(iou(ga, gb) - expect) > 1e-15 || std::abs(iou(gb, ga) - expect) > 1e-15) ++iou_bad;
  }
  {
    VoxelGrid e(8), f(8);
    if (iou(e, f) != 1.0) ++iou_bad;
    f.at(1, 2, 3) = 0.9;
    if (iou(e, f) != 0.0) ++iou_bad;
  }

  double kl_err = 0;
  for (int rep = 0; rep < 10; ++rep) {
    const Tensor mu = rnd({1, 3}, rng, -1.5, 1.5), lv = rnd({1, 3}, rng, -1.5, 1.5);
    Tape tape;
    const double kl = kl_loss(tape.constant(mu), tape.constant(lv)).value().item();
    Rng draw(3000 + rep);
    double acc = 0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        const double sd = std::exp(0.5 * lv[j]);
        const double e = draw.normal();
        const double z = mu[j] + sd * e;
        acc += -0.5 * e * e - std::log(sd) + 0.5 * z * z;  // log q(z) - log p(z)
      }
    kl_err = std::max(kl_err, std::abs(acc / n - kl) / kl);
  }
  return {cons_err <= 1e-12 && iou_bad == 0 && kl_err <= 1e-2,
          fmt("consistency max |diff| %.1e on 100 cases, iou %zu/20 mismatches, KL max rel err %.2e on 10 pairs",
              cons_err, iou_bad, kl_err)};
}

// ---------------------------------------------------------------------------
// 3. conv3d / conv_transpose3d adjointness

Outcome adjointness() {
  Rng rng(4000);
  double worst = 0;
  int done = 0;
  while (done < 50) {
    const std::size_t k = pick(rng, 1, 4), s = pick(rng, 1, 3), p = pick(rng, 0, k - 1);
    const std::size_t o = pick(rng, 1, 4);
    const long n = static_cast<long>((o - 1) * s + k) - 2 * static_cast<long>(p);
    if (n < 1 || n > 8) continue;
    const std::size_t batch = pick(rng, 1, 2), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
    const std::size_t e = static_cast<std::size_t>(n);
    const Tensor x = rnd({batch, cin, e, e, e}, rng), kern = rnd({cout, cin, k, k, k}, rng);
    Tape t;
    Var cx = conv3d(t.constant(x), t.constant(kern), s, p);
    const Tensor y = rnd(cx.shape(), rng);
    Var ty = conv_transpose3d(t.constant(y), t.constant(kern), s, p);
    if (ty.shape() != x.shape()) return {false, fmt("shape mismatch at k=%zu s=%zu p=%zu", k, s, p)};
    const double lhs = dot(cx.value(), y), rhs = dot(x, ty.value());
    worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
    ++done;
  }
  return {worst <= 1e-10, fmt("50 combos, max |<Cx,y>-<x,C'y>| %.1e", worst)};
}

// ---------------------------------------------------------------------------
// 4. CLI determinism

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(VOXELSTRUCT_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Number of files that differ or exist on one side only; -1 when a is empty.
long tree_diff(const fs::path& a, const fs::path& b) {
  long diff = 0, n = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++n;
    const fs::path o = b / fs::relative(e.path(), a);
    diff += !fs::exists(o) || slurp(e.path()) != slurp(o);
  }
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) diff += !fs::exists(a / fs::relative(e.path(), b));
  return n == 0 ? -1 : diff;
}

Outcome determinism(const fs::path& root) {
  const fs::path dir = root / "determinism";
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << R"({"net": {"grid_dim": 16}, "train": {"seed": 5, "vae": {"epochs": 5}}})";
  const fs::path log = dir / "log.txt";
  long files = 0, diffs = 0;
  for (const char* run : {"a", "b"}) {
    const fs::path data = dir / (std::string("data_") + run), out = dir / (std::string("train_") + run);
    if (run_cli("gen-data --out " + data.string() + " --count 50 --dim 16 --seed 11", log) != 0)
      return {false, "gen-data failed: " + slurp(log)};
    if (run_cli("train --mode vae --data " + data.string() + " --config " + (dir / "config.json").string() +
                    " --out " + out.string(),
                log) != 0)
      return {false, "train failed: " + slurp(log)};
  }
  for (const char* sub : {"data_", "train_"}) {
    const long d = tree_diff(dir / (std::string(sub) + "a"), dir / (std::string(sub) + "b"));
    if (d < 0) return {false, std::string("no output in ") + sub + "a"};
    diffs += d;
    for (const auto& e : fs::recursive_directory_iterator(dir / (std::string(sub) + "a"))) files += e.is_regular_file();
  }
  return {diffs == 0, fmt("%ld files compared, %ld differ", files, diffs)};
}

// ---------------------------------------------------------------------------
// Shared training setup

NetConfig desk_net() {
  NetConfig n;
  n.grid_dim = 16;
  n.latent_dim = 16;
  return n;
}

double mean_iou(const std::vector<VoxelGrid>& a, const std::vector<VoxelGrid>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m += iou(a[i], b[i]);
  return m / static_cast<double>(a.size());
}

std::vector<VoxelGrid> shapes(const std::vector<const Sample*>& s) {
  std::vector<VoxelGrid> g;
  for (const auto* x : s) g.push_back(x->shape);
  return g;
}

Tensor truth(const std::vector<const Sample*>& s) {
  std::vector<LandmarkSet> l;
  for (const auto* x : s) l.push_back(*x->landmarks);
  return landmarks_to_tensor(l);
}

// ---------------------------------------------------------------------------
// 5. VAE training smoke

Outcome vae_smoke() {
  DatasetConfig dc;
  dc.count = 200;
  dc.dim = 16;
  dc.seed = 1;
  const Dataset ds = generate_dataset(dc);
  std::vector<const Sample*> all;
  for (const auto& s : ds.samples) all.push_back(&s);
  const NetConfig net = desk_net();
  TrainConfig tc;
  tc.vae.epochs = 30;
  const VaeResult r = pretrain_vae(all, net, tc);
  const auto& rec = r.log.records();
  const std::size_t per_epoch = steps_for_epochs(1, all.size(), tc.vae.batch);
  double last = 0;
  for (std::size_t i = rec.size() - per_epoch; i < rec.size(); ++i) last += rec[i].total / per_epoch;
  const double first = rec.front().total;
  const ModelParams mp{r.encoder, r.generator, {}};
  const auto g = shapes(all);
  const double m = mean_iou(reconstruct(mp, g, net), g);
  return {last <= 0.5 * first && m >= 0.6,
          fmt("loss %.1f -> %.1f (%.1f%%), train round-trip IoU %.3f", first, last, 100 * last / first, m)};
}

// ---------------------------------------------------------------------------
// 6. Detector accuracy and robustness

Outcome detector_accuracy() {
  const NetConfig net = desk_net();
  double clean_err = 0, robust_err = 0, clean_on_rec = 0, robust_on_rec = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    DatasetConfig dc;
    dc.count = 250;
    dc.dim = 16;
    dc.seed = 200 + seed;
    dc.annotated_frac = 1.0;
    const Dataset ds = generate_dataset(dc);
    std::vector<const Sample*> train, held;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) (i < 200 ? train : held).push_back(&ds.samples[i]);
    TrainConfig tc;
    tc.seed = seed;
    tc.vae.epochs = 30;
    tc.detector.epochs = 30;
    const VaeResult v = pretrain_vae(train, net, tc);
    const ModelParams shape{v.encoder, v.generator, {}};
    const DetectorResult clean = pretrain_detector(train, nullptr, net, tc);
    const DetectorResult robust = pretrain_detector(train, &shape, net, tc);
    const auto g = shapes(held);
    const auto rg = reconstruct(shape, g, net);
    const Tensor t = truth(held);
    const double ce = landmark_error(detect(clean.detector, g, net), t);
    const double re = landmark_error(detect(robust.detector, g, net), t);
    const double cr = landmark_error(detect(clean.detector, rg, net), t);
    const double rr = landmark_error(detect(robust.detector, rg, net), t);
    per_seed += fmt(" [seed %llu: clean %.4f/%.4f robust %.4f/%.4f]", static_cast<unsigned long long>(seed), ce, cr, re,
                    rr);
    clean_err += ce / 3;
    robust_err += re / 3;
    clean_on_rec += cr / 3;
    robust_on_rec += rr / 3;
  }
  const double bound = 2.0 / 16;
  return {std::max(clean_err, robust_err) <= bound && robust_on_rec < clean_on_rec,
          fmt("held-out error clean-only %.4f, robust %.4f (bound %.4f); on reconstructions clean-only %.4f vs "
              "robust %.4f; per seed clean/recon:",
              clean_err, robust_err, bound, clean_on_rec, robust_on_rec) +
              per_seed};
}

// ---------------------------------------------------------------------------
// 7. Structure-aware effect

Outcome structure_effect() {
  const NetConfig net = desk_net();
  double cons_base = 0, cons_collab = 0, iou_base = 0, iou_collab = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    DatasetConfig dc;
    dc.count = 250;
    dc.dim = 16;
    dc.seed = 100 + seed;
    const Dataset ds = generate_dataset(dc);
    const auto train = ds.select(ds.split.train), test = ds.select(ds.split.test),
               labeled = ds.select(ds.split.annotated_train);
    TrainConfig tc;
    tc.seed = seed;
    tc.vae.epochs = 30;
    tc.detector.epochs = 30;
    tc.stage1.iters = 150;
    tc.stage2.epochs = 1;
    const VaeResult v = pretrain_vae(train, net, tc);
    ModelParams base{v.encoder, v.generator, {}};
    base.detector = pretrain_detector(labeled, &base, net, tc).detector;
    const CollabResult c = collaborative_train(base, labeled, train, net, tc);

    Degradation half;
    half.sparsify_level = 0.5;
    const double cb = consistency_report(base, net, 64, 900 + seed).mean("overall");
    const double cc = consistency_report(c.params, net, 64, 900 + seed).mean("overall");
    const double ib = completion_eval(base, net, test, half, 500 + seed).mean("iou");
    const double ic = completion_eval(c.params, net, test, half, 500 + seed).mean("iou");
    per_seed += fmt(" [seed %llu: M %.3f->%.3f, IoU %.3f->%.3f]", static_cast<unsigned long long>(seed), cb, cc, ib, ic);
    cons_base += cb / 3;
    cons_collab += cc / 3;
    iou_base += ib / 3;
    iou_collab += ic / 3;
  }
  return {cons_collab > cons_base && iou_collab > iou_base,
          fmt("consistency M pretrained %.3f vs collaborative %.3f; IoU at sparseness 0.5 shape-only %.3f vs "
              "structure-aware %.3f;",
              cons_base, cons_collab, iou_base, iou_collab) +
              per_seed};
}

// ---------------------------------------------------------------------------
// 8. Degenerate weights

Outcome degenerate_reduction() {
  DatasetConfig dc;
  dc.count = 60;
  dc.dim = 16;
  dc.seed = 8;
  dc.annotated_frac = 0.5;
  const Dataset ds = generate_dataset(dc);
  const auto train = ds.select(ds.split.train), labeled = ds.select(ds.split.annotated_train);
  const NetConfig net = desk_net();
  TrainConfig tc;
  tc.seed = 3;
  tc.loss.alpha2 = 0.0;
  tc.loss.struct_robustness = 0.0;
  tc.stage1.iters = 20;
  tc.stage1.batch_sequence = {16, 8};
  tc.stage1.iters_per_batch = 5;
  tc.stage2.epochs = 2;
  const ModelParams init = init_params(net, 4);
  const CollabResult collab = collaborative_train(init, labeled, train, net, tc);
  ModelParams cur = init;
  double worst = 0;
  std::size_t steps = 0;
  for (int stage = 1; stage <= 2; ++stage) {
    VaeSchedule s;
    s.segments = stage_schedule(tc, stage, train.size());
    s.train_encoder = stage == 2;
    s.seed = collab_stage_seed(tc.seed, stage);
    s.augment = tc.augment;
    s.clip_norm = tc.clip_norm;
    s.kl_weight = tc.loss.kl_weight;
    s.loss_scale = tc.loss.alpha1;
    const VaeResult v = run_vae(cur.encoder, cur.generator, train, net, s);
    const auto shape = collab.log.stage("stage" + std::to_string(stage) + "-shape");
    const auto& ref = v.log.records();
    if (shape.size() != ref.size())
      return {false, fmt("stage %d: %zu collaborative shape steps vs %zu VAE steps", stage, shape.size(), ref.size())};
    for (std::size_t i = 0; i < shape.size(); ++i) {
      worst = std::max(worst, std::abs(shape[i].total - ref[i].total) / std::max(1.0, std::abs(ref[i].total)));
      worst = std::max(worst, std::abs(shape[i].l_rec - ref[i].l_rec) / std::max(1.0, std::abs(ref[i].l_rec)));
      worst = std::max(worst, std::abs(shape[i].l_kl - ref[i].l_kl) / std::max(1.0, std::abs(ref[i].l_kl)));
    }
    steps += shape.size();
    cur.encoder = v.encoder;
    cur.generator = v.generator;
  }
  return {worst <= 1e-6 && steps > 0, fmt("%zu shape steps, max rel diff %.2e", steps, worst)};
}

// ---------------------------------------------------------------------------
// 9. Augmentation

Outcome augmentation() {
  Rng rng(9000);
  double lm_err = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    Sample s;
    s.shape = VoxelGrid(8);
    LandmarkSet l;
    for (auto& p : l)
      for (double& c : p) c = rng.uniform();
    s.landmarks = l;
    const double f[3] = {rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2)};
    const Sample out = augment_scale(s, f[0], f[1], f[2]);
    for (std::size_t k = 0; k < kNumLandmarks; ++k)
      for (int a = 0; a < 3; ++a)
        lm_err = std::max(lm_err, std::abs((*out.landmarks)[k][a] - std::clamp(0.5 + (l[k][a] - 0.5) * f[a], 0.0, 1.0)));
  }

  const int n = 200;
  double mean = 0, min_up = 1;
  double bin_sum[4] = {}, bin_n[4] = {};
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.shape = voxelize(sample_chair(static_cast<std::uint64_t>(5000 + i)), 32);
    const double f = rng.uniform(0.8, 1.2);
    const double v = iou(augment_scale(augment_scale(s, f, f, f), 1 / f, 1 / f, 1 / f).shape, s.shape);
    mean += v / n;
    if (f >= 1.0) min_up = std::min(min_up, v);
    const int b = std::min(3, static_cast<int>((f - 0.8) / 0.1));
    bin_sum[b] += v;
    bin_n[b] += 1;
  }
  std::string bins;
  for (int b = 0; b < 4; ++b)
    bins += fmt(" [%.1f,%.1f): %.3f", 0.8 + 0.1 * b, 0.9 + 0.1 * b, bin_n[b] ? bin_sum[b] / bin_n[b] : 0.0);
  return {lm_err <= 1e-12 && mean >= 0.85,
          fmt("landmark max err %.1e on 1000 cases; round-trip IoU mean %.3f over %d chairs, min for f>=1 %.3f; by "
              "factor:",
              lm_err, mean, n, min_up) +
              bins};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path root = fs::temp_directory_path() / fmt("voxelstruct_acceptance_%d", static_cast<int>(::getpid()));
  fs::create_directories(root);
  std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient integrity", gradients},
      {"oracle equivalence", oracles},
      {"conv adjointness", adjointness},
      {"determinism", [&] { return determinism(root); }},
      {"vae training smoke", vae_smoke},
      {"detector accuracy", detector_accuracy},
      {"structure-aware effect", structure_effect},
      {"degenerate-weight reduction", degenerate_reduction},
      {"augmentation exactness", augmentation},
  };
  // Optional: run a subset, e.g. `acceptance 1 3 9`.
  std::vector<bool> selected(criteria.size(), argc <= 1);
  for (int i = 1; i < argc; ++i) {
    const int k = std::atoi(argv[i]);
    if (k >= 1 && k <= static_cast<int>(criteria.size())) selected[k - 1] = true;
  }
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected[i]) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %zu (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  fs::remove_all(root);
  return failed == 0 ? 0 : 1;
}
