// Copyright 2026 The MRDL Authors. All Rights Reserved.
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

// Checkpoint files and flat key=value config text.
//
// Checkpoint layout (little-endian):
//   "MRDLCKPT" | u32 version=1
//   u32 len | len bytes of key=value lines (model + training config)
//   u32 groups | groups x { u32 name_len | name | u32 ndims | ndims x u32 | f32 payload }
//   u64 rng state

#ifndef MRDL_CHECKPOINT_HPP_
#define MRDL_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mrdl/common.hpp"
#include "mrdl/fusion.hpp"
#include "mrdl/optim.hpp"
#include "mrdl/texdata.hpp"

namespace mrdl {

// ---------------------------------------------------------------------------
// key=value text
// ---------------------------------------------------------------------------

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Parses "key=value" lines; blank lines and lines starting with '#' are skipped.
inline KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos && eq > 0, ErrorCode::kInvalidArgument,
            "config line " + std::to_string(lineno) + ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

inline std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      std::size_t pos = 0;
      const unsigned long v = std::stoul(item, &pos);
      require(pos == item.size(), ErrorCode::kInvalidArgument, "bad integer '" + item + "'");
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kInvalidArgument, "bad integer '" + item + "'");
    }
  }
  return out;
}

inline std::string join_sizes(std::span<const std::size_t> v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {

inline double to_double(const KeyValues& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    require(pos == it->second.size(), ErrorCode::kInvalidArgument, key + ": bad number");
    return v;
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::kInvalidArgument, key + ": bad number '" + it->second + "'");
  }
}

inline std::size_t to_size(const KeyValues& kv, const std::string& key, std::size_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  auto v = parse_size_list(it->second);
  require(v.size() == 1, ErrorCode::kInvalidArgument, key + ": expected one integer");
  return v[0];
}

}  // namespace detail

/// Synthetic spec from key=value text. Recognised keys: classes, image_size,
/// signal_amplitude, distractor_amplitude, orientation_jitter, noise,
/// group_size, seed, and class.<i>=<scale>,<frequency>,<orientation-degrees>.
/// Unlisted classes take the defaults for the class count.
inline SyntheticSpec synthetic_spec_from(const KeyValues& kv) {
  static const std::vector<std::string> known = {"classes", "image_size", "signal_amplitude",
                                                 "distractor_amplitude", "orientation_jitter", "noise",
                                                 "group_size", "seed"};
  for (const auto& [k, v] : kv) {
    const bool ok = std::find(known.begin(), known.end(), k) != known.end() || k.rfind("class.", 0) == 0;
    require(ok, ErrorCode::kInvalidArgument, "unknown spec key '" + k + "'");
  }
  SyntheticSpec spec = default_spec(detail::to_size(kv, "classes", 4));
  spec.image_size = detail::to_size(kv, "image_size", spec.image_size);
  spec.signal_amplitude = detail::to_double(kv, "signal_amplitude", spec.signal_amplitude);
  spec.distractor_amplitude = detail::to_double(kv, "distractor_amplitude", spec.distractor_amplitude);
  spec.orientation_jitter = detail::to_double(kv, "orientation_jitter", spec.orientation_jitter);
  spec.noise = detail::to_double(kv, "noise", spec.noise);
  spec.group_size = detail::to_size(kv, "group_size", spec.group_size);
  spec.seed = detail::to_size(kv, "seed", spec.seed);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    auto it = kv.find("class." + std::to_string(c));
    if (it == kv.end()) continue;
    std::istringstream in(it->second);
    std::string scale, freq, orient;
    require(std::getline(in, scale, ',') && std::getline(in, freq, ',') && std::getline(in, orient),
            ErrorCode::kInvalidArgument, it->first + ": expected scale,frequency,orientation");
    KeyValues tmp{{"f", trim(freq)}, {"o", trim(orient)}};
    spec.class_specs[c] = {parse_scale(trim(scale)), detail::to_double(tmp, "f", 0.0),
                           detail::to_double(tmp, "o", 0.0)};
  }
  validate(spec);
  return spec;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'M', 'R', 'D', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  Params params;
  std::uint64_t rng_state = 0;
};

inline KeyValues config_key_values(const ModelConfig& mc, const TrainConfig& tc) {
  return {
      {"model.in_channels", std::to_string(mc.in_channels)},
      {"model.image_size", std::to_string(mc.image_size)},
      {"model.widths", join_sizes(mc.widths)},
      {"model.levels", join_sizes(mc.levels)},
      {"model.dict_size", std::to_string(mc.dict_size)},
      {"model.shared_dim", std::to_string(mc.shared_dim)},
      {"model.classes", std::to_string(mc.classes)},
      {"train.lr", format_double(tc.lr)},
      {"train.momentum", format_double(tc.momentum)},
      {"train.batch_size", std::to_string(tc.batch_size)},
      {"train.epochs", std::to_string(tc.epochs)},
      {"train.seed", std::to_string(tc.seed)},
      {"train.decay_epoch", std::to_string(tc.decay_epoch)},
  };
}

inline std::pair<ModelConfig, TrainConfig> configs_from(const KeyValues& kv) {
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    require(it != kv.end(), ErrorCode::kInvalidArgument, "checkpoint config lacks " + k);
    return it->second;
  };
  ModelConfig mc;
  mc.in_channels = detail::to_size(kv, "model.in_channels", 0);
  mc.image_size = detail::to_size(kv, "model.image_size", 0);
  auto widths = parse_size_list(get("model.widths"));
  require(widths.size() == kMaxLevels, ErrorCode::kInvalidArgument, "checkpoint widths need 3 entries");
  std::copy(widths.begin(), widths.end(), mc.widths.begin());
  mc.levels = parse_size_list(get("model.levels"));
  mc.dict_size = detail::to_size(kv, "model.dict_size", 0);
  mc.shared_dim = detail::to_size(kv, "model.shared_dim", 0);
  mc.classes = detail::to_size(kv, "model.classes", 0);
  validate(mc);
  TrainConfig tc;
  tc.lr = detail::to_double(kv, "train.lr", tc.lr);
  tc.momentum = detail::to_double(kv, "train.momentum", tc.momentum);
  tc.batch_size = detail::to_size(kv, "train.batch_size", tc.batch_size);
  tc.epochs = detail::to_size(kv, "train.epochs", tc.epochs);
  tc.seed = detail::to_size(kv, "train.seed", tc.seed);
  tc.decay_epoch = detail::to_size(kv, "train.decay_epoch", tc.decay_epoch);
  tc.dict_size = mc.dict_size;
  tc.levels = mc.levels;
  tc.shared_dim = mc.shared_dim;
  tc.widths = mc.widths;
  return {mc, tc};
}

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out(kCheckpointMagic, 8);
  detail::put_u32(out, kCheckpointVersion);
  const std::string cfg = format_key_values(config_key_values(ck.model, ck.train));
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  const auto groups = param_groups(ck.params);
  detail::put_u32(out, static_cast<std::uint32_t>(groups.size()));
  for (const auto& g : groups) {
    detail::put_u32(out, static_cast<std::uint32_t>(g.name.size()));
    out += g.name;
    detail::put_u32(out, static_cast<std::uint32_t>(g.dims.size()));
    for (std::size_t d : g.dims) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : g.values) detail::put_f32(out, static_cast<float>(v));
  }
  detail::put_u32(out, static_cast<std::uint32_t>(ck.rng_state & 0xFFFFFFFFu));
  detail::put_u32(out, static_cast<std::uint32_t>(ck.rng_state >> 32));
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader rd(bytes);
  require(bytes.size() >= 8, ErrorCode::kTruncated, "checkpoint shorter than magic");
  require(std::memcmp(rd.take(8, "magic").data(), kCheckpointMagic, 8) == 0, ErrorCode::kBadMagic,
          "expected MRDLCKPT");
  const std::uint32_t version = rd.u32("version");
  require(version == kCheckpointVersion, ErrorCode::kBadVersion, "checkpoint version " + std::to_string(version));
  const std::uint32_t cfg_len = rd.u32("config length");
  const auto [mc, tc] = configs_from(parse_key_values(std::string(rd.take(cfg_len, "config"))));
  Checkpoint ck{mc, tc, zero_params(mc), 0};
  auto groups = param_groups(ck.params);
  const std::uint32_t count = rd.u32("group count");
  require(count == groups.size(), ErrorCode::kShapeMismatch,
          "checkpoint has " + std::to_string(count) + " parameter groups, config implies " +
              std::to_string(groups.size()));
  for (auto& g : groups) {
    const std::uint32_t name_len = rd.u32("group name");
    const std::string name(rd.take(name_len, "group name"));
    require(name == g.name, ErrorCode::kShapeMismatch, "expected group " + g.name + ", found " + name);
    const std::uint32_t ndims = rd.u32("group dims");
    std::vector<std::size_t> dims;
    for (std::uint32_t i = 0; i < ndims; ++i) dims.push_back(rd.u32("group dims"));
    require(dims == g.dims, ErrorCode::kShapeMismatch, "group " + name + " has unexpected dims");
    for (double& v : g.values) {
      v = rd.f32("group payload");
      require(std::isfinite(v), ErrorCode::kNonFinite, "group " + name);
    }
  }
  const std::uint64_t lo = rd.u32("rng state"), hi = rd.u32("rng state");
  ck.rng_state = lo | (hi << 32);
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  detail::write_file(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

}  // namespace mrdl

#endif  // MRDL_CHECKPOINT_HPP_
