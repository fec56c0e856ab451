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

// Multi-resolution model: a three-stage conv feature extractor
// (conv3x3 -> relu -> avgpool2 per stage), one encoding layer on the pooled
// output of every active stage, a per-level projection to a shared width M,
// a convex combination of the projected encodings with weights
// omega = softmax(z), and a fully connected classifier.

#ifndef MRDL_FUSION_HPP_
#define MRDL_FUSION_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mrdl/common.hpp"
#include "mrdl/encoding.hpp"
#include "mrdl/numkernel.hpp"
#include "mrdl/tensor.hpp"

namespace mrdl {

inline constexpr std::size_t kMaxLevels = 3;

struct ModelConfig {
  std::size_t in_channels = 1;
  std::size_t image_size = 32;
  std::array<std::size_t, kMaxLevels> widths{8, 16, 32};
  std::vector<std::size_t> levels{1, 2, 3};  // 1-based, ascending
  std::size_t dict_size = 8;                 // K per level
  std::size_t shared_dim = 64;               // M
  std::size_t classes = 4;

  /// Stages that must run: up to the deepest active level.
  std::size_t stages() const { return levels.empty() ? 0 : levels.back(); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Validates and canonicalises a level subset of {1, 2, 3}.
inline std::vector<std::size_t> configure_levels(std::vector<std::size_t> levels) {
  require(!levels.empty(), ErrorCode::kInvalidArgument, "at least one level must be active");
  std::sort(levels.begin(), levels.end());
  for (std::size_t i = 0; i < levels.size(); ++i) {
    require(levels[i] >= 1 && levels[i] <= kMaxLevels, ErrorCode::kInvalidArgument,
            "level " + std::to_string(levels[i]) + " outside {1,2,3}");
    require(i == 0 || levels[i] != levels[i - 1], ErrorCode::kInvalidArgument,
            "level " + std::to_string(levels[i]) + " listed twice");
  }
  return levels;
}

inline void validate(const ModelConfig& cfg) {
  configure_levels(cfg.levels);
  require(cfg.in_channels >= 1 && cfg.dict_size >= 1 && cfg.shared_dim >= 1 && cfg.classes >= 2,
          ErrorCode::kInvalidArgument, "model config needs channels, K, M >= 1 and >= 2 classes");
  for (std::size_t s = 0; s < cfg.stages(); ++s)
    require(cfg.widths[s] >= 1, ErrorCode::kInvalidArgument, "stage width must be >= 1");
  const std::size_t div = std::size_t{1} << cfg.stages();
  require(cfg.image_size % div == 0, ErrorCode::kShapeMismatch,
          "image size " + std::to_string(cfg.image_size) + " not divisible by " + std::to_string(div));
}

struct ConvStage {
  Tensor4 kernels;            // out x in x 3 x 3
  std::vector<double> bias;   // out
  friend bool operator==(const ConvStage&, const ConvStage&) = default;
};

struct BackboneParams {
  std::vector<ConvStage> stages;
  friend bool operator==(const BackboneParams&, const BackboneParams&) = default;
};

struct LevelHead {
  std::size_t level = 0;  // 1-based stage index
  Codebook book;
  Matrix projection;      // K*D x M
  friend bool operator==(const LevelHead&, const LevelHead&) = default;
};

struct FusionHead {
  std::vector<LevelHead> levels;
  std::vector<double> fusion_logits;  // z, one per active level
  Matrix fc_weight;                   // M x classes
  std::vector<double> fc_bias;        // classes

  std::vector<double> omega() const { return nk::softmax(fusion_logits); }
  friend bool operator==(const FusionHead&, const FusionHead&) = default;
};

/// All learnable parameters. Gradients use the same type (GradBundle).
struct Params {
  BackboneParams backbone;
  FusionHead head;
  friend bool operator==(const Params&, const Params&) = default;
};

using GradBundle = Params;

struct Model {
  ModelConfig config;
  Params params;
};

/// Named view of one parameter group.
struct ParamRef {
  std::string name;
  std::vector<std::size_t> dims;
  std::span<double> values;
};

struct ConstParamRef {
  std::string name;
  std::vector<std::size_t> dims;
  std::span<const double> values;
};

/// Parameter groups in a fixed canonical order.
inline std::vector<ParamRef> param_groups(Params& p) {
  std::vector<ParamRef> out;
  for (std::size_t s = 0; s < p.backbone.stages.size(); ++s) {
    auto& st = p.backbone.stages[s];
    const std::string pre = "conv" + std::to_string(s + 1);
    out.push_back({pre + ".kernels",
                   {st.kernels.batch(), st.kernels.channels(), st.kernels.height(), st.kernels.width()},
                   st.kernels.flat()});
    out.push_back({pre + ".bias", {st.bias.size()}, st.bias});
  }
  for (auto& lh : p.head.levels) {
    const std::string pre = "level" + std::to_string(lh.level);
    out.push_back({pre + ".codewords", {lh.book.k(), lh.book.d()}, lh.book.codewords.flat()});
    out.push_back({pre + ".smoothing", {lh.book.smoothing.size()}, lh.book.smoothing});
    out.push_back({pre + ".projection", {lh.projection.rows(), lh.projection.cols()},
                   lh.projection.flat()});
  }
  out.push_back({"fusion.logits", {p.head.fusion_logits.size()}, p.head.fusion_logits});
  out.push_back({"fc.weight", {p.head.fc_weight.rows(), p.head.fc_weight.cols()}, p.head.fc_weight.flat()});
  out.push_back({"fc.bias", {p.head.fc_bias.size()}, p.head.fc_bias});
  return out;
}

inline std::vector<ConstParamRef> param_groups(const Params& p) {
  std::vector<ConstParamRef> out;
  for (auto& r : param_groups(const_cast<Params&>(p))) out.push_back({r.name, r.dims, r.values});
  return out;
}

inline std::size_t param_count(const Params& p) {
  std::size_t n = 0;
  for (const auto& g : param_groups(p)) n += g.values.size();
  return n;
}

/// Zero-filled parameters with the shapes implied by `cfg`.
inline Params zero_params(const ModelConfig& cfg) {
  validate(cfg);
  Params p;
  std::size_t in = cfg.in_channels;
  for (std::size_t s = 0; s < cfg.stages(); ++s) {
    p.backbone.stages.push_back({Tensor4(cfg.widths[s], in, 3, 3), std::vector<double>(cfg.widths[s], 0.0)});
    in = cfg.widths[s];
  }
  for (std::size_t lvl : cfg.levels) {
    const std::size_t d = cfg.widths[lvl - 1];
    p.head.levels.push_back({lvl,
                             Codebook{Matrix(cfg.dict_size, d), std::vector<double>(cfg.dict_size, 0.0)},
                             Matrix(cfg.dict_size * d, cfg.shared_dim)});
  }
  p.head.fusion_logits.assign(cfg.levels.size(), 0.0);
  p.head.fc_weight = Matrix(cfg.shared_dim, cfg.classes);
  p.head.fc_bias.assign(cfg.classes, 0.0);
  return p;
}

inline GradBundle zero_grads_like(const Params& p) {
  GradBundle g = p;
  for (auto& r : param_groups(g)) std::fill(r.values.begin(), r.values.end(), 0.0);
  return g;
}

/// He-uniform conv kernels, Glorot-uniform projections and classifier, zero
/// biases and fusion logits (uniform omega), codebooks from init_codebook.
inline Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
  Model m{cfg, zero_params(cfg)};
  Rng root(seed);
  std::uint64_t tag = 0;
  for (auto& st : m.params.backbone.stages) {
    Rng rng = root.split(tag++);
    const double fan_in = static_cast<double>(st.kernels.channels() * 9);
    const double bound = std::sqrt(6.0 / fan_in);
    for (double& v : st.kernels.flat()) v = rng.uniform(-bound, bound);
  }
  for (auto& lh : m.params.head.levels) {
    lh.book = init_codebook(cfg.dict_size, cfg.widths[lh.level - 1], root.split(100 + lh.level).next_u64());
    Rng rng = root.split(200 + lh.level);
    const double bound =
        std::sqrt(6.0 / static_cast<double>(lh.projection.rows() + lh.projection.cols()));
    for (double& v : lh.projection.flat()) v = rng.uniform(-bound, bound);
  }
  Rng rng = root.split(300);
  const double bound =
      std::sqrt(6.0 / static_cast<double>(m.params.head.fc_weight.rows() + m.params.head.fc_weight.cols()));
  for (double& v : m.params.head.fc_weight.flat()) v = rng.uniform(-bound, bound);
  return m;
}

// ---------------------------------------------------------------------------
// Backbone
// ---------------------------------------------------------------------------

struct StageCache {
  Tensor4 input;    // stage input (image or previous pooled map)
  Tensor4 preact;   // conv output
  Tensor4 pooled;   // avgpool2(relu(preact)), the level's descriptor map
};

struct BackboneCache {
  std::vector<StageCache> stages;
};

// Pixels arrive in [0, 1]; the first stage sees them centred on zero in
// [-1, 1]. A bias could absorb the shift, but starting centred makes the
// early epochs far better conditioned.
inline constexpr double kInputCenter = 0.5;
inline constexpr double kInputScale = 2.0;

inline BackboneCache backbone_forward(const Tensor4& images, const BackboneParams& bb) {
  require(!bb.stages.empty(), ErrorCode::kInvalidArgument, "backbone has no stages");
  const std::size_t div = std::size_t{1} << bb.stages.size();
  require(images.height() % div == 0 && images.width() % div == 0, ErrorCode::kShapeMismatch,
          "image " + dims_str(images) + " must have spatial dims divisible by " + std::to_string(div) +
              "; pad height by " + std::to_string((div - images.height() % div) % div) +
              " and width by " + std::to_string((div - images.width() % div) % div));
  BackboneCache cache;
  Tensor4 centred = images;
  for (double& v : centred.flat()) v = (v - kInputCenter) * kInputScale;
  const Tensor4* x = &centred;
  for (const auto& st : bb.stages) {
    StageCache sc;
    sc.input = *x;
    sc.preact = nk::conv2d_forward(sc.input, st.kernels, st.bias, 1, 1);
    sc.pooled = nk::avgpool2(nk::relu(sc.preact));
    cache.stages.push_back(std::move(sc));
    x = &cache.stages.back().pooled;
  }
  return cache;
}

/// Flattens sample `n` of a C x H x W map into H*W descriptors of dimension C.
inline DescriptorBatch descriptors_of(const Tensor4& map, std::size_t n) {
  const std::size_t c = map.channels(), h = map.height(), w = map.width();
  DescriptorBatch out(h * w, c);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out(y * w + x, ch) = map(n, ch, y, x);
  return out;
}

/// Adds an N x D descriptor gradient back into sample `n` of a map gradient.
inline void scatter_descriptor_grad(const Matrix& grad, Tensor4& map_grad, std::size_t n) {
  const std::size_t c = map_grad.channels(), h = map_grad.height(), w = map_grad.width();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) map_grad(n, ch, y, x) += grad(y * w + x, ch);
}

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

struct FuseResult {
  Matrix fused;                    // B x M
  std::vector<double> omega;       // L
  std::vector<Matrix> projected;   // per level, B x M
};

/// fused = sum_l omega_l * (e_l P_l), omega = softmax(z).
inline FuseResult fuse_forward(std::span<const Matrix> encodings, const FusionHead& head) {
  require(encodings.size() == head.levels.size() && head.fusion_logits.size() == head.levels.size(),
          ErrorCode::kShapeMismatch,
          std::to_string(encodings.size()) + " encodings for " + std::to_string(head.levels.size()) +
              " levels / " + std::to_string(head.fusion_logits.size()) + " fusion logits");
  FuseResult r;
  r.omega = head.omega();
  for (std::size_t l = 0; l < encodings.size(); ++l) {
    require(encodings[l].cols() == head.levels[l].projection.rows(), ErrorCode::kShapeMismatch,
            "level " + std::to_string(head.levels[l].level) + " encoding width " +
                std::to_string(encodings[l].cols()) + " != projection rows " +
                std::to_string(head.levels[l].projection.rows()));
    r.projected.push_back(nk::affine_forward(encodings[l], head.levels[l].projection, {}));
  }
  r.fused = Matrix(encodings.front().rows(), head.levels.front().projection.cols());
  for (std::size_t l = 0; l < r.projected.size(); ++l) {
    require(r.projected[l].rows() == r.fused.rows() && r.projected[l].cols() == r.fused.cols(),
            ErrorCode::kShapeMismatch, "projected encodings disagree in shape");
    auto src = r.projected[l].flat();
    auto dst = r.fused.flat();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += r.omega[l] * src[i];
  }
  return r;
}

// ---------------------------------------------------------------------------
// End to end
// ---------------------------------------------------------------------------

struct ModelOutput {
  Matrix logits;                    // B x classes
  std::vector<Matrix> encodings;    // per active level, B x K*D
  std::vector<double> omega;
};

struct ForwardCache {
  BackboneCache backbone;
  std::vector<std::vector<DescriptorBatch>> descriptors;  // [level][sample]
  std::vector<std::vector<EncodeCache>> encode;           // [level][sample]
  std::vector<Matrix> encodings;
  FuseResult fuse;
  std::size_t batch = 0;
};

struct ForwardResult {
  ModelOutput output;
  ForwardCache cache;
};

inline ForwardResult model_forward(const Tensor4& images, const Params& params) {
  require(params.head.levels.size() == params.head.fusion_logits.size(), ErrorCode::kShapeMismatch,
          "fusion logits do not match active levels");
  ForwardResult fr;
  ForwardCache& c = fr.cache;
  c.batch = images.batch();
  c.backbone = backbone_forward(images, params.backbone);
  const std::size_t levels = params.head.levels.size();
  c.descriptors.resize(levels);
  c.encode.resize(levels);
  c.encodings.resize(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    const auto& lh = params.head.levels[l];
    require(lh.level >= 1 && lh.level <= c.backbone.stages.size(), ErrorCode::kShapeMismatch,
            "level " + std::to_string(lh.level) + " has no backbone stage");
    const Tensor4& map = c.backbone.stages[lh.level - 1].pooled;
    c.descriptors[l].resize(c.batch);
    c.encode[l].resize(c.batch);
    c.encodings[l] = Matrix(c.batch, lh.book.k() * lh.book.d());
    parallel_for(c.batch, [&](std::size_t n) {
      c.descriptors[l][n] = descriptors_of(map, n);
      auto er = encode_forward(c.descriptors[l][n], lh.book);
      std::copy(er.encoding.values.begin(), er.encoding.values.end(), c.encodings[l].row(n).begin());
      c.encode[l][n] = std::move(er.cache);
    });
  }
  c.fuse = fuse_forward(c.encodings, params.head);
  fr.output.logits = nk::affine_forward(c.fuse.fused, params.head.fc_weight, params.head.fc_bias);
  fr.output.encodings = c.encodings;
  fr.output.omega = c.fuse.omega;
  return fr;
}

inline GradBundle model_backward(const Matrix& grad_logits, const Params& params, const ForwardCache& c) {
  const std::size_t levels = params.head.levels.size();
  require(c.encodings.size() == levels && c.backbone.stages.size() == params.backbone.stages.size() &&
              grad_logits.rows() == c.batch && grad_logits.cols() == params.head.fc_weight.cols(),
          ErrorCode::kCacheMismatch, "forward cache does not match parameters or grad_logits");
  GradBundle g = zero_grads_like(params);

  auto fc = nk::affine_backward(grad_logits, c.fuse.fused, params.head.fc_weight);
  g.head.fc_weight = std::move(fc.w);
  g.head.fc_bias = std::move(fc.bias);
  const Matrix& grad_fused = fc.x;

  // omega_l multiplies projected_l; softmax Jacobian maps d/domega to d/dz.
  std::vector<double> grad_omega(levels, 0.0);
  for (std::size_t l = 0; l < levels; ++l) {
    auto p = c.fuse.projected[l].flat();
    auto gf = grad_fused.flat();
    for (std::size_t i = 0; i < gf.size(); ++i) grad_omega[l] += gf[i] * p[i];
  }
  const auto& omega = c.fuse.omega;
  double mean = 0.0;
  for (std::size_t l = 0; l < levels; ++l) mean += omega[l] * grad_omega[l];
  for (std::size_t l = 0; l < levels; ++l) g.head.fusion_logits[l] = omega[l] * (grad_omega[l] - mean);

  std::vector<Tensor4> map_grads;
  for (const auto& sc : c.backbone.stages) map_grads.emplace_back(sc.pooled.dims());

  for (std::size_t l = 0; l < levels; ++l) {
    const auto& lh = params.head.levels[l];
    Matrix grad_proj = grad_fused;
    for (double& v : grad_proj.flat()) v *= omega[l];
    auto pg = nk::affine_backward(grad_proj, c.encodings[l], lh.projection);
    g.head.levels[l].projection = std::move(pg.w);

    std::vector<EncodeGrads> per_sample(c.batch);
    parallel_for(c.batch, [&](std::size_t n) {
      per_sample[n] = encode_backward(pg.x.row(n), c.descriptors[l][n], lh.book, c.encode[l][n]);
    });
    auto& gb = g.head.levels[l].book;
    Tensor4& mg = map_grads[lh.level - 1];
    for (std::size_t n = 0; n < c.batch; ++n) {
      auto gc = gb.codewords.flat();
      auto sc = per_sample[n].codewords.flat();
      for (std::size_t i = 0; i < gc.size(); ++i) gc[i] += sc[i];
      for (std::size_t k = 0; k < gb.smoothing.size(); ++k) gb.smoothing[k] += per_sample[n].smoothing[k];
      scatter_descriptor_grad(per_sample[n].x, mg, n);
    }
  }

  for (std::size_t s = c.backbone.stages.size(); s-- > 0;) {
    const auto& sc = c.backbone.stages[s];
    Tensor4 grad_act = nk::avgpool2_backward(map_grads[s]);
    Tensor4 grad_pre = nk::relu_backward(grad_act, sc.preact);
    auto cg = nk::conv2d_backward(grad_pre, sc.input, params.backbone.stages[s].kernels, 1, 1);
    g.backbone.stages[s].kernels = std::move(cg.kernels);
    g.backbone.stages[s].bias = std::move(cg.bias);
    if (s > 0) {
      auto dst = map_grads[s - 1].flat();
      auto src = cg.input.flat();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  return g;
}

}  // namespace mrdl

#endif  // MRDL_FUSION_HPP_
