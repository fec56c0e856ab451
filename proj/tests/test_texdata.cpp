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

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <limits>
#include <set>

#include "mrdl/texdata.hpp"
#include "oracles.hpp"

namespace {

using mrdl::DescriptorFile;
using mrdl::ErrorCode;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const mrdl::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an mrdl::Error";
  return ErrorCode::kIo;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mrdl_texdata_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// |sum (x - mean) exp(-i 2 pi f (cos t * x + sin t * y))|: the discrete-time
/// Fourier magnitude of the image at one continuous frequency.
double dtft_magnitude(const std::vector<double>& img, std::size_t size, double freq, double orient_deg) {
  double mean = 0.0;
  for (double v : img) mean += v;
  mean /= static_cast<double>(img.size());
  const double th = orient_deg * 3.14159265358979323846 / 180.0;
  const double kx = 2.0 * 3.14159265358979323846 * freq * std::cos(th);
  const double ky = 2.0 * 3.14159265358979323846 * freq * std::sin(th);
  std::complex<double> acc = 0.0;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      acc += (img[y * size + x] - mean) *
             std::polar(1.0, -(kx * static_cast<double>(x) + ky * static_cast<double>(y)));
  return std::abs(acc);
}

// ---- generator --------------------------------------------------------------

TEST(Generate, CleanImagesPeakAtTheirClassFrequency) {
  auto spec = mrdl::default_spec(4);
  spec.noise = 0.0;
  spec.distractor_amplitude = 0.0;
  spec.orientation_jitter = 0.0;
  auto ds = mrdl::generate(spec, 8);
  for (const auto& s : ds.samples) {
    std::size_t best = 0;
    double best_mag = -1.0;
    for (std::size_t c = 0; c < spec.classes; ++c) {
      const auto& cs = spec.class_specs[c];
      const double mag = dtft_magnitude(s.pixels, spec.image_size, cs.frequency, cs.orientation);
      if (mag > best_mag) best_mag = mag, best = c;
    }
    EXPECT_EQ(best, s.label);
  }
}

TEST(Generate, DefaultNoiseStillFavoursTheClassGrating) {
  auto spec = mrdl::default_spec(4);
  auto ds = mrdl::generate(spec, 25);
  std::size_t hits = 0;
  for (const auto& s : ds.samples) {
    const auto& own = spec.class_specs[s.label];
    const auto& twin = spec.class_specs[s.label ^ 1u];  // same-scale partner
    hits += dtft_magnitude(s.pixels, spec.image_size, own.frequency, own.orientation) >
            dtft_magnitude(s.pixels, spec.image_size, twin.frequency, twin.orientation);
  }
  EXPECT_GE(hits, ds.size() * 9 / 10);
}

TEST(Generate, ShapeLabelsGroupsAndRange) {
  auto spec = mrdl::default_spec(4);
  spec.group_size = 3;
  auto ds = mrdl::generate(spec, 7);
  ASSERT_EQ(ds.size(), 28u);
  EXPECT_EQ(ds.classes, 4u);
  EXPECT_EQ(ds.image_size, 32u);
  std::map<std::size_t, std::set<std::size_t>> labels_per_group;
  std::map<std::size_t, std::size_t> group_sizes;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& s = ds.samples[i];
    EXPECT_EQ(s.label, i / 7);
    EXPECT_EQ(s.pixels.size(), 32u * 32u);
    for (double v : s.pixels) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    labels_per_group[s.group].insert(s.label);
    ++group_sizes[s.group];
  }
  EXPECT_EQ(group_sizes.size(), 4u * 3u);
  for (const auto& [g, labels] : labels_per_group) EXPECT_EQ(labels.size(), 1u) << "group " << g;
  for (const auto& [g, n] : group_sizes) EXPECT_LE(n, 3u);
}

TEST(Generate, DeterministicInSeed) {
  auto spec = mrdl::default_spec(4);
  spec.seed = 11;
  auto a = mrdl::generate(spec, 5);
  auto b = mrdl::generate(spec, 5);
  EXPECT_EQ(a, b);
  spec.seed = 12;
  EXPECT_NE(mrdl::generate(spec, 5), a);
}

TEST(Generate, DefaultClassCyclingCoversEveryScale) {
  auto specs = mrdl::default_class_specs(6, mrdl::ScaleBands{});
  std::map<mrdl::Scale, std::set<double>> orient;
  for (const auto& cs : specs) orient[cs.scale].insert(cs.orientation);
  EXPECT_EQ(orient.size(), 3u);
  for (const auto& [scale, o] : orient) EXPECT_EQ(o.size(), 2u) << mrdl::to_string(scale);
}

TEST(Generate, RejectsInconsistentSpec) {
  auto spec = mrdl::default_spec(4);
  spec.class_specs.pop_back();
  EXPECT_EQ(code_of([&] { mrdl::generate(spec, 1); }), ErrorCode::kInvalidArgument);
  spec = mrdl::default_spec(4);
  spec.noise = -1.0;
  EXPECT_EQ(code_of([&] { mrdl::generate(spec, 1); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { mrdl::parse_scale("huge"); }), ErrorCode::kInvalidArgument);
}

TEST(Generate, ScaleNamesRoundTrip) {
  for (auto s : {mrdl::Scale::kFine, mrdl::Scale::kMedium, mrdl::Scale::kCoarse})
    EXPECT_EQ(mrdl::parse_scale(mrdl::to_string(s)), s);
}

// ---- split ------------------------------------------------------------------

TEST(Split, KeepsGroupsWholeAndPartitionsSamples) {
  auto ds = mrdl::generate(mrdl::default_spec(4), 10);
  auto [tr, va] = mrdl::split(ds, 0.7, 3);
  EXPECT_EQ(tr.size() + va.size(), ds.size());
  std::set<std::size_t> g_tr, g_va;
  for (const auto& s : tr.samples) g_tr.insert(s.group);
  for (const auto& s : va.samples) g_va.insert(s.group);
  for (std::size_t g : g_tr) EXPECT_EQ(g_va.count(g), 0u) << "group " << g << " on both sides";
  const double total = static_cast<double>(g_tr.size() + g_va.size());
  EXPECT_EQ(g_tr.size(), static_cast<std::size_t>(std::llround(0.7 * total)));
  EXPECT_EQ(tr.image_size, ds.image_size);
  EXPECT_EQ(va.classes, ds.classes);
}

TEST(Split, ExtremeFractions) {
  auto ds = mrdl::generate(mrdl::default_spec(4), 4);
  auto [all, none] = mrdl::split(ds, 1.0, 1);
  EXPECT_EQ(all.size(), ds.size());
  EXPECT_TRUE(none.empty());
  auto [none2, all2] = mrdl::split(ds, 0.0, 1);
  EXPECT_TRUE(none2.empty());
  EXPECT_EQ(all2.size(), ds.size());
  EXPECT_EQ(code_of([&] { mrdl::split(ds, 1.5, 1); }), ErrorCode::kInvalidArgument);
}

TEST(Split, DeterministicInSeed) {
  auto ds = mrdl::generate(mrdl::default_spec(4), 12);
  EXPECT_EQ(mrdl::split(ds, 0.5, 9), mrdl::split(ds, 0.5, 9));
  EXPECT_NE(mrdl::split(ds, 0.5, 9).first, mrdl::split(ds, 0.5, 10).first);
}

// ---- majority vote ------------------------------------------------------------

TEST(MajorityVote, HandExamples) {
  const std::vector<std::size_t> a{1, 1, 2}, b{0, 1}, c{2, 1}, d{3};
  EXPECT_EQ(mrdl::majority_vote(a), 1u);
  EXPECT_EQ(mrdl::majority_vote(b), 0u);
  EXPECT_EQ(mrdl::majority_vote(c), 1u);
  EXPECT_EQ(mrdl::majority_vote(d), 3u);
}

TEST(MajorityVote, MatchesCountingOracleExhaustively) {
  for (std::size_t len = 1; len <= 6; ++len) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < len; ++i) total *= 3;
    for (std::size_t code = 0; code < total; ++code) {
      std::vector<std::size_t> labels(len);
      std::size_t c = code;
      for (auto& l : labels) l = c % 3, c /= 3;
      ASSERT_EQ(mrdl::majority_vote(labels), oracle::count_max(labels)) << "code " << code << " len " << len;
    }
  }
}

TEST(MajorityVote, RejectsEmpty) {
  EXPECT_EQ(code_of([] { mrdl::majority_vote({}); }), ErrorCode::kInvalidArgument);
}

// ---- descriptor files ------------------------------------------------------------

DescriptorFile small_file() {
  DescriptorFile f;
  mrdl::Matrix a(2, 3), b(1, 2);
  const double va[] = {0.5, -1.25, 3.0, 0.0, 1e-3f, -7.75};
  std::copy(std::begin(va), std::end(va), a.flat().begin());
  b(0, 0) = 2.0;
  b(0, 1) = -0.125;
  f.levels = {a, b};
  f.label = 5;
  return f;
}

TEST(DescriptorFile, GoldenBytes) {
  DescriptorFile f;
  mrdl::Matrix m(1, 2);
  m(0, 0) = 1.0;
  m(0, 1) = -2.0;
  f.levels = {m};
  f.label = 3;
  const unsigned char want[] = {'M', 'R', 'D', 'L', 'D', 'E', 'S', 'C',  //
                                1, 0, 0, 0,                              // version
                                1, 0, 0, 0,                              // levels
                                1, 0, 0, 0, 2, 0, 0, 0,                  // N, D
                                0x00, 0x00, 0x80, 0x3F,                  // 1.0f
                                0x00, 0x00, 0x00, 0xC0,                  // -2.0f
                                3, 0, 0, 0};                             // label
  EXPECT_EQ(mrdl::encode_descriptor_file(f), std::string(reinterpret_cast<const char*>(want), sizeof(want)));
}

TEST(DescriptorFile, RoundTripsThroughDisk) {
  auto dir = temp_dir("roundtrip");
  const auto f = small_file();
  mrdl::write_descriptor_file(dir / "a.mrdl", f);
  const auto g = mrdl::load_descriptor_maps(dir / "a.mrdl");
  ASSERT_EQ(g.levels.size(), 2u);
  EXPECT_EQ(g.levels[0], f.levels[0]);  // every value is exact in f32
  EXPECT_EQ(g.levels[1], f.levels[1]);
  EXPECT_EQ(g.label, 5u);
}

TEST(DescriptorFile, EveryTruncationIsReported) {
  const std::string bytes = mrdl::encode_descriptor_file(small_file());
  for (std::size_t n = 0; n < bytes.size(); ++n)
    EXPECT_EQ(code_of([&] { mrdl::decode_descriptor_file(std::string_view(bytes).substr(0, n)); }),
              ErrorCode::kTruncated)
        << "prefix " << n;
}

TEST(DescriptorFile, DistinctCodesForDistinctCorruptions) {
  const std::string good = mrdl::encode_descriptor_file(small_file());
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(code_of([&] { mrdl::decode_descriptor_file(bad_magic); }), ErrorCode::kBadMagic);

  std::string bad_version = good;
  bad_version[8] = 2;
  EXPECT_EQ(code_of([&] { mrdl::decode_descriptor_file(bad_version); }), ErrorCode::kBadVersion);

  std::string nan_payload = good;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(&nan_payload[24], &nan, 4);  // first value of level 0
  EXPECT_EQ(code_of([&] { mrdl::decode_descriptor_file(nan_payload); }), ErrorCode::kNonFinite);

  std::string zero_levels = good;
  zero_levels[12] = 0;
  EXPECT_EQ(code_of([&] { mrdl::decode_descriptor_file(zero_levels); }), ErrorCode::kInvalidArgument);

  EXPECT_EQ(code_of([] { mrdl::load_descriptor_maps("/nonexistent/mrdl/file"); }), ErrorCode::kIo);
}

// ---- dataset directories ------------------------------------------------------------

TEST(DatasetDir, RoundTripsToFloatPrecision) {
  auto dir = temp_dir("dataset");
  auto spec = mrdl::default_spec(4);
  spec.image_size = 8;
  auto ds = mrdl::generate(spec, 3);
  mrdl::write_dataset(dir, ds);
  auto back = mrdl::read_dataset(dir);
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.image_size, 8u);
  EXPECT_EQ(back.channels, 1u);
  EXPECT_EQ(back.classes, 4u);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.samples[i].label, ds.samples[i].label);
    EXPECT_EQ(back.samples[i].group, ds.samples[i].group);
    for (std::size_t p = 0; p < ds.samples[i].pixels.size(); ++p)
      EXPECT_EQ(back.samples[i].pixels[p], static_cast<double>(static_cast<float>(ds.samples[i].pixels[p])));
  }
}

TEST(DatasetDir, ManifestMustAgreeWithFiles) {
  auto dir = temp_dir("manifest");
  auto spec = mrdl::default_spec(4);
  spec.image_size = 4;
  mrdl::write_dataset(dir, mrdl::generate(spec, 1));
  mrdl::detail::write_file(dir / "manifest.csv", "sample_000000.mrdl,2,0\n");
  EXPECT_EQ(code_of([&] { mrdl::read_dataset(dir); }), ErrorCode::kInvalidArgument);
  mrdl::detail::write_file(dir / "manifest.csv", "sample_000000.mrdl,zero,0\n");
  EXPECT_EQ(code_of([&] { mrdl::read_dataset(dir); }), ErrorCode::kInvalidArgument);
  mrdl::detail::write_file(dir / "manifest.csv", "missing.mrdl,0,0\n");
  EXPECT_EQ(code_of([&] { mrdl::read_dataset(dir); }), ErrorCode::kIo);
}

TEST(DatasetDir, BatchStacksSelectedSamples) {
  auto spec = mrdl::default_spec(4);
  spec.image_size = 4;
  auto ds = mrdl::generate(spec, 2);
  const std::vector<std::size_t> idx{5, 0};
  auto t = mrdl::make_batch(ds, idx);
  ASSERT_EQ(t.batch(), 2u);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(t(b, 0, y, x), ds.samples[idx[b]].pixels[y * 4 + x]);
}

}  // namespace
