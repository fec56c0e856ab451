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

#ifndef MRDL_OPTIM_HPP_
#define MRDL_OPTIM_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "mrdl/common.hpp"
#include "mrdl/fusion.hpp"
#include "mrdl/numkernel.hpp"
#include "mrdl/texdata.hpp"

namespace mrdl {

struct TrainConfig {
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t epochs = 12;
  std::uint64_t seed = 1;
  std::size_t dict_size = 8;
  std::vector<std::size_t> levels{1, 2, 3};
  std::size_t shared_dim = 64;
  std::array<std::size_t, kMaxLevels> widths{8, 16, 32};
  std::size_t decay_epoch = 0;  // 0 = constant learning rate, else lr *= 0.1 from this epoch (1-based)

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void validate(const TrainConfig& cfg) {
  require(cfg.lr > 0.0, ErrorCode::kInvalidArgument, "learning rate must be > 0");
  require(cfg.momentum >= 0.0 && cfg.momentum < 1.0, ErrorCode::kInvalidArgument, "momentum must be in [0, 1)");
  require(cfg.epochs >= 1, ErrorCode::kInvalidArgument, "epochs must be >= 1");
  require(cfg.batch_size >= 1, ErrorCode::kInvalidArgument, "batch size must be >= 1");
  configure_levels(cfg.levels);
}

inline ModelConfig model_config(const TrainConfig& cfg, std::size_t image_size, std::size_t classes,
                                std::size_t channels = 1) {
  ModelConfig mc;
  mc.in_channels = channels;
  mc.image_size = image_size;
  mc.widths = cfg.widths;
  mc.levels = configure_levels(cfg.levels);
  mc.dict_size = cfg.dict_size;
  mc.shared_dim = cfg.shared_dim;
  mc.classes = classes;
  validate(mc);
  return mc;
}

/// True when omega sums to one within `tol` and every entry is strictly inside (0, 1).
/// A single level is the degenerate simplex {1}.
inline bool on_open_simplex(std::span<const double> omega, double tol = 1e-12) {
  if (omega.empty()) return false;
  double sum = 0.0;
  for (double w : omega) {
    if (!std::isfinite(w)) return false;
    if (omega.size() > 1 && !(w > 0.0 && w < 1.0)) return false;
    sum += w;
  }
  return std::fabs(sum - 1.0) <= tol;
}

// ---------------------------------------------------------------------------
// SGD with momentum
// ---------------------------------------------------------------------------

using MomentumState = Params;

inline MomentumState make_momentum_state(const Params& p) { return zero_grads_like(p); }

/// v <- mu v - lr g;  p <- p + v, for every parameter group.
inline void sgd_step(Params& params, const GradBundle& grads, MomentumState& velocity, double lr,
                     double momentum) {
  auto p = param_groups(params);
  auto g = param_groups(grads);
  auto v = param_groups(velocity);
  require(p.size() == g.size() && p.size() == v.size(), ErrorCode::kShapeMismatch,
          "sgd_step: gradient bundle has " + std::to_string(g.size()) + " groups for " +
              std::to_string(p.size()) + " parameter groups");
  for (std::size_t i = 0; i < p.size(); ++i) {
    require(p[i].values.size() == g[i].values.size() && p[i].values.size() == v[i].values.size(),
            ErrorCode::kShapeMismatch, "sgd_step: group " + p[i].name + " size mismatch");
    for (std::size_t j = 0; j < p[i].values.size(); ++j) {
      v[i].values[j] = momentum * v[i].values[j] - lr * g[i].values[j];
      p[i].values[j] += v[i].values[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

struct GroupCheck {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  bool pass = true;
};

struct GradcheckReport {
  std::vector<GroupCheck> groups;
  bool all_pass() const {
    return std::all_of(groups.begin(), groups.end(), [](const GroupCheck& g) { return g.pass; });
  }
};

/// Relative error with an absolute floor: entries whose analytic and numeric
/// values are both below `floor` are compared on an absolute scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

/// Compares `analytic` against central differences of `loss` for every entry
/// of every group in `params`. `loss` is evaluated with the entry perturbed
/// in place; the entry is restored afterwards.
inline GradcheckReport gradcheck_groups(const std::vector<ParamRef>& params,
                                        const std::vector<ConstParamRef>& analytic,
                                        const std::function<double()>& loss, double h, double tol) {
  require(params.size() == analytic.size(), ErrorCode::kShapeMismatch, "gradcheck group count mismatch");
  GradcheckReport rep;
  for (std::size_t gi = 0; gi < params.size(); ++gi) {
    const auto& p = params[gi];
    require(p.values.size() == analytic[gi].values.size(), ErrorCode::kShapeMismatch,
            "gradcheck group " + p.name + " size mismatch");
    GroupCheck gc{p.name, p.values.size(), 0.0, true};
    for (std::size_t j = 0; j < p.values.size(); ++j) {
      const double saved = p.values[j];
      p.values[j] = saved + h;
      const double up = loss();
      p.values[j] = saved - h;
      const double down = loss();
      p.values[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      gc.max_rel_error = std::max(gc.max_rel_error, relative_error(analytic[gi].values[j], numeric));
    }
    gc.pass = gc.max_rel_error < tol;
    rep.groups.push_back(gc);
  }
  return rep;
}

struct GradcheckInstance {
  Model model;
  Tensor4 images;
  std::vector<std::size_t> labels;
};

/// Small random instance for an end-to-end check. Inputs are redrawn until
/// no conv pre-activation sits within `kink_margin` of the relu kink, so
/// central differences never straddle it.
inline GradcheckInstance make_gradcheck_instance(const ModelConfig& cfg, std::uint64_t seed,
                                                 std::size_t batch = 2, double kink_margin = 1e-3) {
  GradcheckInstance inst{init_model(cfg, seed), {}, std::vector<std::size_t>(batch)};
  Rng rng = Rng(seed).split(7);
  // Spread the smoothing factors and fusion logits so every term is exercised.
  for (auto& lh : inst.model.params.head.levels) {
    for (double& s : lh.book.smoothing) s = rng.uniform(0.2, 2.0);
  }
  for (double& z : inst.model.params.head.fusion_logits) z = rng.uniform(-1.0, 1.0);
  for (double& b : inst.model.params.head.fc_bias) b = rng.uniform(-0.1, 0.1);
  for (auto& st : inst.model.params.backbone.stages)
    for (double& b : st.bias) b = rng.uniform(-0.1, 0.1);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    inst.images = Tensor4(batch, cfg.in_channels, cfg.image_size, cfg.image_size);
    for (double& v : inst.images.flat()) v = rng.uniform();
    auto fr = model_forward(inst.images, inst.model.params);
    bool clear = true;
    for (const auto& sc : fr.cache.backbone.stages)
      for (double v : sc.preact.flat()) clear = clear && std::fabs(v) > kink_margin;
    if (clear) break;
  }
  for (auto& l : inst.labels) l = rng.below(cfg.classes);
  return inst;
}

using GradHook = std::function<void(GradBundle&)>;

/// End-to-end check of model_backward against central differences of the
/// mean cross-entropy on a random mini-instance. `corrupt` (optional) edits
/// the analytic gradients before comparison.
inline GradcheckReport gradcheck(const ModelConfig& cfg, std::uint64_t seed, double tol = 1e-4,
                                 double h = 1e-5, const GradHook& corrupt = {}) {
  GradcheckInstance inst = make_gradcheck_instance(cfg, seed);
  auto fr = model_forward(inst.images, inst.model.params);
  auto xent = nk::softmax_xent(fr.output.logits, inst.labels);
  GradBundle g = model_backward(xent.grad_logits, inst.model.params, fr.cache);
  if (corrupt) corrupt(g);
  Params& p = inst.model.params;
  auto loss = [&] { return nk::softmax_xent(model_forward(inst.images, p).output.logits, inst.labels).loss; };
  return gradcheck_groups(param_groups(p), param_groups(static_cast<const GradBundle&>(g)), loss, h, tol);
}

// ---------------------------------------------------------------------------
// Training and evaluation
// ---------------------------------------------------------------------------

struct RunMetrics {
  std::vector<double> loss;                 // mean training loss per epoch
  std::vector<double> val_accuracy;         // NaN when no validation set
  std::vector<std::vector<double>> omega;   // omega after each epoch
  std::size_t simplex_violations = 0;       // steps after which omega left the simplex
  std::size_t negative_smoothing = 0;       // smoothing factors < 0 at the end

  friend bool operator==(const RunMetrics&, const RunMetrics&) = default;
};

inline std::vector<std::size_t> predict(const Params& params, const Dataset& ds, std::size_t batch = 64) {
  std::vector<std::size_t> out;
  out.reserve(ds.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += batch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + batch); ++i) idx.push_back(i);
    auto logits = model_forward(make_batch(ds, idx), params).output.logits;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      auto row = logits.row(r);
      out.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

inline double accuracy(std::span<const std::size_t> predicted, const Dataset& ds) {
  require(predicted.size() == ds.size(), ErrorCode::kShapeMismatch, "prediction count mismatch");
  if (ds.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) hit += predicted[i] == ds.samples[i].label;
  return static_cast<double>(hit) / static_cast<double>(ds.size());
}

/// Image-level accuracy: each group's prediction is the majority vote of its
/// patch predictions, compared with the group's (shared) label.
inline double group_vote_accuracy(std::span<const std::size_t> predicted, const Dataset& ds) {
  require(predicted.size() == ds.size(), ErrorCode::kShapeMismatch, "prediction count mismatch");
  std::map<std::size_t, std::vector<std::size_t>> votes;
  std::map<std::size_t, std::size_t> truth;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    votes[ds.samples[i].group].push_back(predicted[i]);
    truth[ds.samples[i].group] = ds.samples[i].label;
  }
  if (votes.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t hit = 0;
  for (const auto& [group, v] : votes) hit += majority_vote(v) == truth[group];
  return static_cast<double>(hit) / static_cast<double>(votes.size());
}

using StepHook = std::function<void(std::size_t epoch, std::size_t step, const Params&)>;

/// Mini-batch SGD over `train_set`; validation accuracy is measured on
/// `val_set` after each epoch. Deterministic in `cfg.seed`.
inline RunMetrics train(Model& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                        const StepHook& on_step = {}) {
  validate(cfg);
  require(!train_set.empty(), ErrorCode::kInvalidArgument, "training set is empty");
  require(train_set.image_size == model.config.image_size && train_set.channels == model.config.in_channels,
          ErrorCode::kShapeMismatch,
          "dataset images " + dims_str(train_set.channels, train_set.image_size, train_set.image_size) +
              " do not match model input " +
              dims_str(model.config.in_channels, model.config.image_size, model.config.image_size));
  for (const auto& s : train_set.samples)
    require(s.label < model.config.classes, ErrorCode::kInvalidArgument,
            "label " + std::to_string(s.label) + " exceeds model class count");

  RunMetrics metrics;
  MomentumState velocity = make_momentum_state(model.params);
  const Rng shuffle_root = Rng(cfg.seed).split(0x5EED);
  std::vector<std::size_t> order(train_set.size());
  std::vector<std::size_t> batch_idx, batch_labels;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = (cfg.decay_epoch != 0 && epoch >= cfg.decay_epoch) ? cfg.lr * 0.1 : cfg.lr;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = shuffle_root.split(epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                       order.begin() + static_cast<std::ptrdiff_t>(end));
      batch_labels.clear();
      for (std::size_t i : batch_idx) batch_labels.push_back(train_set.samples[i].label);
      auto fr = model_forward(make_batch(train_set, batch_idx), model.params);
      auto xent = nk::softmax_xent(fr.output.logits, batch_labels);
      loss_sum += xent.loss * static_cast<double>(batch_idx.size());
      GradBundle g = model_backward(xent.grad_logits, model.params, fr.cache);
      sgd_step(model.params, g, velocity, lr, cfg.momentum);
      if (!on_open_simplex(model.params.head.omega())) ++metrics.simplex_violations;
      if (on_step) on_step(epoch, step, model.params);
      ++step;
    }
    metrics.loss.push_back(loss_sum / static_cast<double>(train_set.size()));
    metrics.val_accuracy.push_back(val_set.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                   : accuracy(predict(model.params, val_set), val_set));
    metrics.omega.push_back(model.params.head.omega());
  }
  for (const auto& lh : model.params.head.levels) metrics.negative_smoothing += negative_smoothing_count(lh.book);
  return metrics;
}

/// "epoch,loss,val_acc,omega_1,...,omega_L" with round-trippable doubles.
inline std::string metrics_csv(const RunMetrics& m) {
  std::string out = "epoch,loss,val_acc";
  const std::size_t levels = m.omega.empty() ? 0 : m.omega.front().size();
  for (std::size_t l = 0; l < levels; ++l) out += ",omega_" + std::to_string(l + 1);
  out += "\n";
  char buf[64];
  for (std::size_t e = 0; e < m.loss.size(); ++e) {
    out += std::to_string(e + 1);
    std::snprintf(buf, sizeof(buf), ",%.17g", m.loss[e]);
    out += buf;
    std::snprintf(buf, sizeof(buf), ",%.17g", m.val_accuracy[e]);
    out += buf;
    for (double w : m.omega[e]) {
      std::snprintf(buf, sizeof(buf), ",%.17g", w);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace mrdl

#endif  // MRDL_OPTIM_HPP_
