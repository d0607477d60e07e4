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

// Portable, seed-reproducible random numbers.
//
// std::mt19937_64's raw output is fixed by the standard, but the library
// distributions are not, so uniform and normal draws are derived here by hand.

#include <cstdint>
#include <initializer_list>
#include <random>

#include "voxelstruct/tensor.hpp"

namespace voxelstruct {

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Independent stream seed from a base seed and a list of keys (epoch, sample id, purpose...).
std::uint64_t stream_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  /// Standard normal via Box-Muller (one draw per call, the pair's sibling is cached).
  double normal();

  Tensor normal_tensor(Shape shape);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Purpose tags for stream_seed so different consumers never share a stream.
enum class Stream : std::uint64_t {
  init = 1,
  shuffle = 2,
  augment = 3,
  reparam = 4,
  prior = 5,
  dropout = 6,
  sparsify = 7,
  split = 8,
  chair = 9,
  degrade = 10,
};

inline std::uint64_t key(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace voxelstruct
