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

// Synthetic multi-scale texture data, descriptor-map files, group-aware
// splitting and patch-to-image majority voting.

#ifndef MRDL_TEXDATA_HPP_
#define MRDL_TEXDATA_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mrdl/common.hpp"
#include "mrdl/encoding.hpp"
#include "mrdl/tensor.hpp"

namespace mrdl {

// ---------------------------------------------------------------------------
// In-memory dataset
// ---------------------------------------------------------------------------

struct LabeledImage {
  std::vector<double> pixels;  // channels x size x size, values in [0, 1]
  std::size_t label = 0;
  std::size_t group = 0;       // image of origin
  friend bool operator==(const LabeledImage&, const LabeledImage&) = default;
};

struct Dataset {
  std::size_t channels = 1;
  std::size_t image_size = 0;
  std::size_t classes = 0;
  std::vector<LabeledImage> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Stacks the selected samples into a batch tensor.
inline Tensor4 make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  Tensor4 t(indices.size(), ds.channels, ds.image_size, ds.image_size);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& px = ds.samples[indices[b]].pixels;
    std::copy(px.begin(), px.end(), t.sample(b).begin());
  }
  return t;
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

enum class Scale { kFine = 0, kMedium = 1, kCoarse = 2 };

inline const char* to_string(Scale s) {
  switch (s) {
    case Scale::kFine: return "fine";
    case Scale::kMedium: return "medium";
    case Scale::kCoarse: return "coarse";
  }
  return "?";
}

inline Scale parse_scale(const std::string& s) {
  if (s == "fine") return Scale::kFine;
  if (s == "medium") return Scale::kMedium;
  if (s == "coarse") return Scale::kCoarse;
  throw Error(ErrorCode::kInvalidArgument, "unknown scale '" + s + "'");
}

/// Grating frequencies (cycles/pixel) used for each scale.
struct ScaleBands {
  std::array<double, 3> frequency{0.375, 0.1875, 0.0625};
};

struct ClassSpec {
  Scale scale = Scale::kFine;
  double frequency = 0.375;  // cycles per pixel
  double orientation = 0.0;  // degrees
  // Fraction of cells (cell x cell pixel blocks) that carry the grating. The
  // amplitude is divided by the coverage, so the mean rectified energy is the
  // same for every coverage and only its spatial distribution changes.
  double coverage = 1.0;
  std::size_t cell = 4;
};

/// Every image carries one grating per scale. At its class's designated scale
/// the grating uses the class orientation and `signal_amplitude`; at the other
/// scales it uses a distractor orientation drawn from the orientations that no
/// class owns at that scale, with `distractor_amplitude`. Two classes whose
/// designated scale differs can therefore be told apart at either scale, while
/// two classes sharing a scale differ only there.
struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t image_size = 32;
  std::vector<ClassSpec> class_specs;
  ScaleBands bands;
  double signal_amplitude = 0.25;
  double distractor_amplitude = 0.15;
  double orientation_jitter = 8.0;  // degrees, uniform +/-
  double noise = 0.15;              // std-dev of band-limited noise
  std::size_t group_size = 4;       // patches per image of origin
  std::uint64_t seed = 0;
};

/// Default per-class parameters. Four classes form a fine-scale pair (0/90
/// degrees) and a coarse-scale pair (45/135 degrees); other counts cycle
/// through fine, medium and coarse scales.
inline std::vector<ClassSpec> default_class_specs(std::size_t classes, const ScaleBands& bands) {
  std::vector<ClassSpec> out;
  if (classes == 4) {
    out.push_back({Scale::kFine, bands.frequency[0], 0.0});
    out.push_back({Scale::kFine, bands.frequency[0], 90.0});
    out.push_back({Scale::kCoarse, bands.frequency[2], 45.0});
    out.push_back({Scale::kCoarse, bands.frequency[2], 135.0});
    return out;
  }
  std::array<std::size_t, 3> used{0, 0, 0};
  for (std::size_t c = 0; c < classes; ++c) {
    const auto s = static_cast<std::size_t>(c % 3);
    const double orient = std::fmod(static_cast<double>(used[s]++) * 90.0 + 45.0 * static_cast<double>(s % 2), 180.0);
    out.push_back({static_cast<Scale>(s), bands.frequency[s], orient});
  }
  return out;
}

inline SyntheticSpec default_spec(std::size_t classes = 4) {
  SyntheticSpec spec;
  spec.classes = classes;
  spec.class_specs = default_class_specs(classes, spec.bands);
  return spec;
}

namespace detail {

inline constexpr double kPi = 3.14159265358979323846;

inline double angle_distance(double a, double b) {
  double d = std::fmod(std::fabs(a - b), 180.0);
  return std::min(d, 180.0 - d);
}

/// Orientations at `scale` not owned by any class (the complement of the
/// class orientations on a 45-degree grid). Falls back to all four grid
/// orientations when every one is owned.
inline std::vector<double> distractor_orientations(const SyntheticSpec& spec, Scale scale) {
  std::vector<double> owned;
  for (const auto& cs : spec.class_specs)
    if (cs.scale == scale) owned.push_back(cs.orientation);
  std::vector<double> free;
  for (double o : {0.0, 45.0, 90.0, 135.0}) {
    bool taken = false;
    for (double w : owned) taken = taken || angle_distance(o, w) < 22.5;
    if (!taken) free.push_back(o);
  }
  if (free.empty()) free = {0.0, 45.0, 90.0, 135.0};
  return free;
}

inline void add_grating(std::vector<double>& img, std::size_t size, double freq, double orient_deg,
                        double phase, double amp) {
  const double th = orient_deg * kPi / 180.0;
  const double kx = 2.0 * kPi * freq * std::cos(th);
  const double ky = 2.0 * kPi * freq * std::sin(th);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      img[y * size + x] += amp * std::cos(kx * static_cast<double>(x) + ky * static_cast<double>(y) + phase);
}

/// White noise smoothed by a separable [1 2 1]/4 kernel (wrap-around), then
/// rescaled to unit variance before applying `sigma`.
inline void add_band_limited_noise(std::vector<double>& img, std::size_t size, double sigma, Rng& rng) {
  if (sigma <= 0.0) return;
  std::vector<double> w(size * size), tmp(size * size);
  for (double& v : w) v = rng.normal();
  auto at = [&](const std::vector<double>& a, std::size_t y, std::size_t x) { return a[y * size + x]; };
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      tmp[y * size + x] = 0.25 * at(w, y, (x + size - 1) % size) + 0.5 * at(w, y, x) +
                          0.25 * at(w, y, (x + 1) % size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      w[y * size + x] = 0.25 * at(tmp, (y + size - 1) % size, x) + 0.5 * at(tmp, y, x) +
                        0.25 * at(tmp, (y + 1) % size, x);
  // Variance of the [1 2 1]/4 smoother applied twice is (6/16)^2.
  const double gain = sigma / (6.0 / 16.0);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] += gain * w[i];
}

}  // namespace detail

inline void validate(const SyntheticSpec& spec) {
  require(spec.classes >= 1 && spec.class_specs.size() == spec.classes, ErrorCode::kInvalidArgument,
          "synthetic spec needs one class spec per class");
  require(spec.image_size >= 2, ErrorCode::kInvalidArgument, "image size must be >= 2");
  require(spec.group_size >= 1, ErrorCode::kInvalidArgument, "group size must be >= 1");
  require(spec.noise >= 0.0 && spec.signal_amplitude >= 0.0 && spec.distractor_amplitude >= 0.0,
          ErrorCode::kInvalidArgument, "amplitudes and noise must be non-negative");
}

/// Renders one image of class `label`. `rng` supplies phases, jitter,
/// distractor choices and noise.
inline std::vector<double> render_texture(const SyntheticSpec& spec, std::size_t label, Rng& rng) {
  const std::size_t size = spec.image_size;
  std::vector<double> img(size * size, 0.5);
  const ClassSpec& cs = spec.class_specs[label];
  for (std::size_t s = 0; s < 3; ++s) {
    const auto scale = static_cast<Scale>(s);
    const double phase = rng.uniform(0.0, 2.0 * detail::kPi);
    const double jitter = rng.uniform(-spec.orientation_jitter, spec.orientation_jitter);
    if (scale == cs.scale) {
      if (cs.coverage >= 1.0) {
        detail::add_grating(img, size, cs.frequency, cs.orientation + jitter, phase, spec.signal_amplitude);
      } else {
        std::vector<double> layer(size * size, 0.0);
        detail::add_grating(layer, size, cs.frequency, cs.orientation + jitter, phase,
                            spec.signal_amplitude / cs.coverage);
        const std::size_t cells = (size + cs.cell - 1) / cs.cell;
        std::vector<char> on(cells * cells);
        for (auto& c : on) c = rng.uniform() < cs.coverage;
        for (std::size_t y = 0; y < size; ++y)
          for (std::size_t x = 0; x < size; ++x)
            if (on[(y / cs.cell) * cells + x / cs.cell]) img[y * size + x] += layer[y * size + x];
      }
    } else {
      const auto free = detail::distractor_orientations(spec, scale);
      const double orient = free[rng.below(free.size())];
      detail::add_grating(img, size, spec.bands.frequency[s], orient + jitter, phase,
                          spec.distractor_amplitude);
    }
  }
  detail::add_band_limited_noise(img, size, spec.noise, rng);
  for (double& v : img) v = std::clamp(v, 0.0, 1.0);
  return img;
}

/// `n_per_class` images per class, class-major order, grouped into images of
/// origin of `group_size` consecutive patches. Deterministic in `spec.seed`.
inline Dataset generate(const SyntheticSpec& spec, std::size_t n_per_class) {
  validate(spec);
  Dataset ds;
  ds.channels = 1;
  ds.image_size = spec.image_size;
  ds.classes = spec.classes;
  ds.samples.resize(spec.classes * n_per_class);
  const Rng root(spec.seed);
  const std::size_t groups_per_class = (n_per_class + spec.group_size - 1) / spec.group_size;
  parallel_for(ds.samples.size(), [&](std::size_t idx) {
    const std::size_t label = idx / n_per_class, j = idx % n_per_class;
    Rng rng = root.split(idx);
    ds.samples[idx] = {render_texture(spec, label, rng), label, label * groups_per_class + j / spec.group_size};
  });
  return ds;
}

// ---------------------------------------------------------------------------
// Splitting and voting
// ---------------------------------------------------------------------------

/// Group-aware split: whole groups go to one side. `train_fraction` of the
/// groups (rounded) land in train, chosen by a seeded Fisher-Yates shuffle.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  require(train_fraction >= 0.0 && train_fraction <= 1.0, ErrorCode::kInvalidArgument,
          "split fraction must be in [0, 1]");
  std::vector<std::size_t> groups;
  for (const auto& s : ds.samples) groups.push_back(s.group);
  std::sort(groups.begin(), groups.end());
  groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
  Rng rng(seed);
  for (std::size_t i = groups.size(); i > 1; --i) std::swap(groups[i - 1], groups[rng.below(i)]);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(groups.size())));
  std::map<std::size_t, bool> in_train;
  for (std::size_t i = 0; i < groups.size(); ++i) in_train[groups[i]] = i < n_train;

  Dataset train{ds.channels, ds.image_size, ds.classes, {}};
  Dataset val{ds.channels, ds.image_size, ds.classes, {}};
  for (const auto& s : ds.samples) (in_train[s.group] ? train : val).samples.push_back(s);
  return {std::move(train), std::move(val)};
}

/// Most frequent label; ties go to the lowest class index.
inline std::size_t majority_vote(std::span<const std::size_t> labels) {
  require(!labels.empty(), ErrorCode::kInvalidArgument, "majority_vote needs at least one label");
  std::map<std::size_t, std::size_t> counts;
  for (std::size_t l : labels) ++counts[l];
  std::size_t best = counts.begin()->first, best_n = 0;
  for (const auto& [label, n] : counts) {
    if (n > best_n) {
      best = label;
      best_n = n;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Descriptor-map files
//
//   "MRDLDESC" | u32 version=1 | u32 L | L x { u32 N | u32 D | N*D f32 } | u32 label
//
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

inline constexpr char kDescriptorMagic[8] = {'M', 'R', 'D', 'L', 'D', 'E', 'S', 'C'};
inline constexpr std::uint32_t kDescriptorVersion = 1;

struct DescriptorFile {
  std::vector<DescriptorBatch> levels;
  std::uint32_t label = 0;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    require(pos_ + 4 <= bytes_.size(), ErrorCode::kTruncated,
            std::string("file ends inside ") + what + " at byte " + std::to_string(pos_));
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }

  std::string_view take(std::size_t n, const char* what) {
    require(pos_ + n <= bytes_.size(), ErrorCode::kTruncated,
            std::string("file ends inside ") + what + " at byte " + std::to_string(pos_));
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace detail

inline std::string encode_descriptor_file(const DescriptorFile& f) {
  std::string out(kDescriptorMagic, 8);
  detail::put_u32(out, kDescriptorVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(f.levels.size()));
  for (const auto& lvl : f.levels) {
    detail::put_u32(out, static_cast<std::uint32_t>(lvl.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(lvl.cols()));
    for (double v : lvl.flat()) detail::put_f32(out, static_cast<float>(v));
  }
  detail::put_u32(out, f.label);
  return out;
}

inline DescriptorFile decode_descriptor_file(std::string_view bytes) {
  detail::ByteReader rd(bytes);
  require(bytes.size() >= 8, ErrorCode::kTruncated, "file shorter than magic");
  require(std::memcmp(rd.take(8, "magic").data(), kDescriptorMagic, 8) == 0, ErrorCode::kBadMagic,
          "expected MRDLDESC");
  const std::uint32_t version = rd.u32("version");
  require(version == kDescriptorVersion, ErrorCode::kBadVersion,
          "descriptor file version " + std::to_string(version));
  const std::uint32_t levels = rd.u32("level count");
  require(levels >= 1, ErrorCode::kInvalidArgument, "descriptor file declares zero levels");
  DescriptorFile f;
  for (std::uint32_t l = 0; l < levels; ++l) {
    const std::uint32_t n = rd.u32("level header");
    const std::uint32_t d = rd.u32("level header");
    require(n >= 1 && d >= 1, ErrorCode::kInvalidArgument,
            "level " + std::to_string(l) + " has empty dims " + dims_str(n, d));
    const std::uint64_t count = static_cast<std::uint64_t>(n) * d;
    require(count * 4 <= rd.remaining(), ErrorCode::kTruncated,
            "level " + std::to_string(l) + " payload needs " + std::to_string(count * 4) + " bytes, " +
                std::to_string(rd.remaining()) + " left");
    DescriptorBatch m(n, d);
    for (double& v : m.flat()) {
      v = rd.f32("payload");
      require(std::isfinite(v), ErrorCode::kNonFinite, "level " + std::to_string(l) + " payload");
    }
    f.levels.push_back(std::move(m));
  }
  f.label = rd.u32("label");
  return f;
}

inline void write_descriptor_file(const std::filesystem::path& path, const DescriptorFile& f) {
  detail::write_file(path, encode_descriptor_file(f));
}

inline DescriptorFile load_descriptor_maps(const std::filesystem::path& path) {
  return decode_descriptor_file(detail::read_file(path));
}

// ---------------------------------------------------------------------------
// Dataset directories: one descriptor file per sample (images stored as a
// single level with N = H*W, D = channels) and manifest.csv with
// "path,label,group" lines.
// ---------------------------------------------------------------------------

inline DescriptorFile image_to_descriptor_file(const Dataset& ds, const LabeledImage& s) {
  const std::size_t hw = ds.image_size * ds.image_size;
  DescriptorBatch m(hw, ds.channels);
  for (std::size_t c = 0; c < ds.channels; ++c)
    for (std::size_t i = 0; i < hw; ++i) m(i, c) = s.pixels[c * hw + i];
  return {{std::move(m)}, static_cast<std::uint32_t>(s.label)};
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  std::string manifest;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%06zu.mrdl", i);
    write_descriptor_file(dir / name, image_to_descriptor_file(ds, ds.samples[i]));
    manifest += std::string(name) + "," + std::to_string(ds.samples[i].label) + "," +
                std::to_string(ds.samples[i].group) + "\n";
  }
  detail::write_file(dir / "manifest.csv", manifest);
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  const std::string manifest = detail::read_file(dir / "manifest.csv");
  Dataset ds;
  std::istringstream lines(manifest);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::array<std::string, 3> fields;
    std::istringstream ls(line);
    for (auto& f : fields)
      require(static_cast<bool>(std::getline(ls, f, ',')), ErrorCode::kInvalidArgument,
              "manifest line " + std::to_string(lineno) + " needs path,label,group");
    std::size_t label = 0, group = 0;
    try {
      label = std::stoul(fields[1]);
      group = std::stoul(fields[2]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidArgument, "manifest line " + std::to_string(lineno) + " is malformed");
    }
    DescriptorFile f = load_descriptor_maps(dir / fields[0]);
    require(f.levels.size() == 1, ErrorCode::kInvalidArgument,
            fields[0] + ": image samples must have exactly one level");
    const auto& m = f.levels[0];
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(m.rows()))));
    require(side * side == m.rows(), ErrorCode::kShapeMismatch,
            fields[0] + ": " + std::to_string(m.rows()) + " pixels is not a square image");
    if (ds.samples.empty()) {
      ds.channels = m.cols();
      ds.image_size = side;
    }
    require(side == ds.image_size && m.cols() == ds.channels, ErrorCode::kShapeMismatch,
            fields[0] + ": image shape differs from the first sample");
    require(label == f.label, ErrorCode::kInvalidArgument,
            fields[0] + ": manifest label " + std::to_string(label) + " != file label " +
                std::to_string(f.label));
    LabeledImage s;
    s.label = label;
    s.group = group;
    s.pixels.resize(m.size());
    const std::size_t hw = side * side;
    for (std::size_t c = 0; c < m.cols(); ++c)
      for (std::size_t i = 0; i < hw; ++i) s.pixels[c * hw + i] = m(i, c);
    ds.classes = std::max(ds.classes, label + 1);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace mrdl

#endif  // MRDL_TEXDATA_HPP_
