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
#include "voxelstruct/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace voxelstruct {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoints are written little-endian");

constexpr char kMagic[] = "VSCKPT1";
constexpr std::size_t kMagicLen = 7;

void put_u64(std::ofstream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t get_u64(std::ifstream& in, const std::filesystem::path& path) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("truncated checkpoint '" + path.string() + "'");
  return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::map<std::string, const Tensor*> all;
  for (const ParamMap* m : {&params.encoder, &params.generator, &params.detector})
    for (const auto& [k, t] : *m) all.emplace(k, &t);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(kMagic, kMagicLen);
  put_u64(out, all.size());
  for (const auto& [k, t] : all) {
    put_u64(out, k.size());
    out.write(k.data(), static_cast<std::streamsize>(k.size()));
    put_u64(out, t->rank());
    for (std::size_t d : t->shape()) put_u64(out, d);
    std::vector<float> vals(t->data().begin(), t->data().end());
    out.write(reinterpret_cast<const char*>(vals.data()), static_cast<std::streamsize>(vals.size() * sizeof(float)));
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

ModelParams read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0) throw IoError("bad checkpoint magic in '" + path.string() + "'");
  const std::uint64_t count = get_u64(in, path);
  ModelParams params;
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::uint64_t len = get_u64(in, path);
    if (len > 4096) throw IoError("implausible key length in '" + path.string() + "'");
    std::string k(len, '\0');
    in.read(k.data(), static_cast<std::streamsize>(len));
    const std::uint64_t rank = get_u64(in, path);
    if (rank > 8) throw IoError("implausible tensor rank in '" + path.string() + "'");
    Shape shape(rank);
    for (auto& d : shape) d = get_u64(in, path);
    std::vector<float> vals(shape_numel(shape));
    in.read(reinterpret_cast<char*>(vals.data()), static_cast<std::streamsize>(vals.size() * sizeof(float)));
    if (!in) throw IoError("truncated checkpoint '" + path.string() + "'");
    Tensor t(shape, std::vector<double>(vals.begin(), vals.end()));
    if (k.starts_with("enc/")) {
      params.encoder.emplace(k, std::move(t));
    } else if (k.starts_with("gen/")) {
      params.generator.emplace(k, std::move(t));
    } else if (k.starts_with("det/")) {
      params.detector.emplace(k, std::move(t));
    } else {
      throw IoError("checkpoint key '" + k + "' has no known module prefix");
    }
  }
  if (in.peek() != std::ifstream::traits_type::eof()) throw IoError("trailing bytes in '" + path.string() + "'");
  return params;
}

ParamMap quantized(const ParamMap& params) {
  ParamMap out = params;
  for (auto& [k, t] : out)
    for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

}  // namespace voxelstruct
