// Copyright 2026 The pastssm Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pastssm/autodiff/optim.hpp"
#include "pastssm/error.hpp"
#include "pastssm/events.hpp"

namespace pastssm {

// Binary layout (little endian):
//   "PSSM" u32 version u32 count
//   count x { u32 name_len, name, u32 rank, u64 dims[rank], u64 offset }
//   payload: f32 values, entry i starting `offset` bytes into the payload.
inline constexpr std::array<char, 4> kCheckpointMagic = {'P', 'S', 'S', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::vector<CheckpointTensor> tensors;
  nlohmann::json meta;  // sidecar contents

  const CheckpointTensor* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
};

inline std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  std::filesystem::path p = checkpoint;
  p += ".json";
  return p;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ad::ParamStore<T>& store, const nlohmann::json& meta) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kCheckpointMagic.data(), 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  std::uint64_t offset = 0;
  for (const auto& e : store.entries()) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) detail::put_le<std::uint64_t>(out, d);
    detail::put_le<std::uint64_t>(out, offset);
    offset += 4 * e.value.size();
  }
  for (const auto& e : store.entries()) {
    for (T v : e.value.data()) {
      detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
  std::ofstream side(sidecar_path(path));
  if (!side) throw IoError("cannot write " + sidecar_path(path).string());
  side << meta.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  const auto need = [&](std::size_t n) {
    if (pos + n > bytes.size()) throw FormatError("truncated checkpoint", pos);
  };
  const auto u32 = [&] {
    need(4);
    const auto v = detail::get_le<std::uint32_t>(bytes.data() + pos);
    pos += 4;
    return v;
  };
  const auto u64 = [&] {
    need(8);
    const auto v = detail::get_le<std::uint64_t>(bytes.data() + pos);
    pos += 8;
    return v;
  };
  need(4);
  if (std::memcmp(bytes.data(), kCheckpointMagic.data(), 4) != 0) throw FormatError("missing PSSM header", 0);
  pos = 4;
  const std::uint32_t version = u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const std::uint32_t count = u32();
  Checkpoint ck;
  std::vector<std::uint64_t> offsets;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const std::uint32_t len = u32();
    need(len);
    t.name.assign(reinterpret_cast<const char*>(bytes.data() + pos), len);
    pos += len;
    const std::uint32_t rank = u32();
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(static_cast<std::size_t>(u64()));
    offsets.push_back(u64());
    ck.tensors.push_back(std::move(t));
  }
  const std::size_t payload = pos;
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    auto& t = ck.tensors[i];
    std::size_t n = 1;
    for (std::size_t d : t.shape) n *= d;
    pos = payload + static_cast<std::size_t>(offsets[i]);
    need(4 * n);
    t.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      t.values[k] = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes.data() + pos + 4 * k));
    }
  }
  const auto side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    std::ifstream js(side);
    ck.meta = nlohmann::json::parse(js);
  }
  return ck;
}

/// Copies checkpoint values into every parameter of `store`. Every
/// parameter must be present with a matching shape.
template <typename T>
void restore_parameters(ad::ParamStore<T>& store, const Checkpoint& ck) {
  for (auto& e : store.entries()) {
    const CheckpointTensor* t = ck.find(e.name);
    if (!t) throw FormatError("checkpoint lacks parameter '" + e.name + "'", 0);
    if (t->shape != e.value.shape()) {
      throw ShapeError("checkpoint parameter '" + e.name + "' has shape " + ad::to_string(t->shape) +
                       ", model expects " + ad::to_string(e.value.shape()));
    }
    auto dst = e.value.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(t->values[i]);
  }
}

}  // namespace pastssm
