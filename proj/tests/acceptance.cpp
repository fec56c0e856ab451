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

// Acceptance checks. Each criterion prints one line
//
//   criterion N: PASS|FAIL  <what was measured>  (<seconds> s)
//
// Usage: acceptance [N ...]   (no arguments runs all ten)
// Exit status is 0 only if every selected criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "cli.hpp"
#include "mrdl/checkpoint.hpp"
#include "oracles.hpp"

namespace {

using mrdl::Matrix;
using mrdl::Rng;
using mrdl::Tensor4;

// ---- pinned tolerances and budgets ----------------------------------------

constexpr double kFdStep = 1e-5;
constexpr double kGradTol = 1e-4;
constexpr double kPermutationTol = 1e-12;
constexpr double kRowSumTol = 1e-12;
constexpr double kShiftAgreementTol = 1e-10;
constexpr double kConvOracleTol = 1e-12;
constexpr double kLogitRoundTripTol = 1e-6;
constexpr double kTrendSlack = 0.01;        // one percentage point per comparison
constexpr double kMultiLevelMargin = 0.03;  // l={1,2,3} over l={3}
constexpr double kDictSizeMargin = 0.02;    // K=16 over K=4

constexpr double kBudgetEncodeGrad = 10.0;
constexpr double kBudgetGradcheck = 60.0;
constexpr double kBudgetLevels = 15.0 * 60.0;
constexpr double kBudgetDictSize = 20.0 * 60.0;

constexpr std::size_t kTrendSeeds = 5;
constexpr std::size_t kTrainPerClass = 200;
constexpr std::size_t kValPerClass = 100;

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

mrdl::Codebook random_book(Rng& rng, std::size_t k, std::size_t d) {
  return {oracle::random_matrix(rng, k, d), oracle::random_vector(rng, k, 0.2, 2.0)};
}

// ---- 1: encoding-layer gradients --------------------------------------------

Outcome encode_gradients() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(7000 + seed);
    const std::size_t n = 1 + rng.below(8), k = 1 + rng.below(4), d = 1 + rng.below(5);
    Matrix x = oracle::random_matrix(rng, n, d);
    auto book = random_book(rng, k, d);
    const auto w = oracle::random_vector(rng, k * d);
    auto loss = [&] { return oracle::dot(w, mrdl::encode_forward(x, book).encoding.values); };
    auto fwd = mrdl::encode_forward(x, book);
    auto g = mrdl::encode_backward(w, x, book, fwd.cache);
    worst = std::max({worst, oracle::max_rel_error(g.x.flat(), oracle::central_diff(x.flat(), loss, kFdStep)),
                      oracle::max_rel_error(g.codewords.flat(),
                                            oracle::central_diff(book.codewords.flat(), loss, kFdStep)),
                      oracle::max_rel_error(g.smoothing, oracle::central_diff(book.smoothing, loss, kFdStep))});
  }
  return {worst < kGradTol, "20 seeds, grad_X/grad_C/grad_s max rel err " + fmt("%.2e", worst)};
}

// ---- 2: whole-model gradient check -------------------------------------------

Outcome model_gradcheck() {
  const auto cfg = mrdl::cli::gradcheck_config({1, 2, 3}, 2);
  const auto rep = mrdl::gradcheck(cfg, 1, kGradTol, kFdStep);
  double worst = 0.0;
  bool has_fusion = false;
  for (const auto& g : rep.groups) {
    worst = std::max(worst, g.max_rel_error);
    has_fusion = has_fusion || g.name == "fusion.logits";
  }
  return {rep.all_pass() && has_fusion && rep.groups.size() == 18,
          std::to_string(rep.groups.size()) + " groups incl. fusion logits, max rel err " + fmt("%.2e", worst)};
}

// ---- 3: orderless, fixed-length encoding -----------------------------------

Outcome orderless_fixed_length() {
  bool pass = true;
  double worst = 0.0;
  for (std::uint64_t inst = 0; inst < 10; ++inst) {
    Rng rng(7100 + inst);
    const std::size_t k = 1 + rng.below(4), d = 1 + rng.below(5);
    auto book = random_book(rng, k, d);
    for (std::size_t n : {1, 7, 64}) {
      Matrix x = oracle::random_matrix(rng, n, d);
      const auto e = mrdl::encode_forward(x, book).encoding.values;
      pass = pass && e.size() == k * d;
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      Matrix xp(n, d);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) xp(i, j) = x(perm[i], j);
      const auto ep = mrdl::encode_forward(xp, book).encoding.values;
      for (std::size_t j = 0; j < e.size(); ++j) worst = std::max(worst, std::abs(e[j] - ep[j]));
    }
  }
  pass = pass && worst <= kPermutationTol;
  return {pass, "10 instances x N in {1,7,64}: length K*D, permutation diff " + fmt("%.2e", worst)};
}

// ---- 4: shifted soft assignment ----------------------------------------------

Outcome stabilised_assignment() {
  bool finite = true;
  double row_err = 0.0, agree = 0.0, largest = 0.0;
  Rng rng(7200);
  for (double scale : {1.0, 1e2, 1e4, 1e6}) {
    for (int rep = 0; rep < 5; ++rep) {
      const std::size_t n = 8, k = 4, d = 3;
      Matrix x = oracle::random_matrix(rng, n, d);
      auto book = random_book(rng, k, d);
      // Rescale so the largest exponent s_k |r_ik|^2 reaches `scale`.
      auto c0 = mrdl::soft_assign(x, book);
      double top = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) top = std::max(top, book.smoothing[j] * c0.sq_norms(i, j));
      for (double& s : book.smoothing) s *= scale / top;
      auto c = mrdl::soft_assign(x, book);
      for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          finite = finite && std::isfinite(c.assignments(i, j));
          sum += c.assignments(i, j);
          largest = std::max(largest, book.smoothing[j] * c.sq_norms(i, j));
        }
        row_err = std::max(row_err, std::abs(sum - 1.0));
      }
    }
  }
  for (int rep = 0; rep < 20; ++rep) {
    Matrix x = oracle::random_matrix(rng, 8, 5, -2, 2);
    auto book = random_book(rng, 4, 5);
    const auto got = mrdl::soft_assign(x, book).assignments;
    const auto want = oracle::assignments_unshifted(x, book.codewords, book.smoothing);
    for (std::size_t i = 0; i < got.size(); ++i) agree = std::max(agree, std::abs(got.flat()[i] - want.flat()[i]));
  }
  return {finite && row_err <= kRowSumTol && agree <= kShiftAgreementTol && largest >= 1e6 * (1 - 1e-9),
          "exponents up to " + fmt("%.0e", largest) + ": finite, row-sum err " + fmt("%.1e", row_err) +
              "; benign shifted vs unshifted " + fmt("%.1e", agree)};
}

// ---- 5: simplex after every step ---------------------------------------------

mrdl::Dataset small_dataset(std::size_t per_class, std::uint64_t seed) {
  auto spec = mrdl::default_spec(4);
  spec.image_size = 8;
  spec.seed = seed;
  return mrdl::generate(spec, per_class);
}

mrdl::TrainConfig small_train(std::size_t epochs) {
  mrdl::TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 8;
  tc.lr = 0.05;
  tc.dict_size = 4;
  tc.shared_dim = 16;
  tc.widths = {4, 8, 16};
  return tc;
}

Outcome simplex_every_step() {
  const auto ds = small_dataset(16, 7300);
  const auto tc = small_train(50);
  auto model = mrdl::init_model(mrdl::model_config(tc, 8, 4), tc.seed);
  std::size_t steps = 0, violations = 0;
  double lo = 1.0, hi = 0.0;
  mrdl::train(model, ds, {}, tc, [&](std::size_t, std::size_t, const mrdl::Params& p) {
    const auto w = p.head.omega();
    ++steps;
    violations += !mrdl::on_open_simplex(w);
    for (double v : w) lo = std::min(lo, v), hi = std::max(hi, v);
  });
  return {steps == 50 * 8 && violations == 0,
          std::to_string(steps) + " steps over 50 epochs, " + std::to_string(violations) +
              " violations, omega range [" + fmt("%.4f", lo) + ", " + fmt("%.4f", hi) + "]"};
}

// ---- 6 and 7: trends on the synthetic multi-scale dataset ---------------------

/// Final validation accuracy averaged over seeds, default training settings.
double mean_val_accuracy(const std::vector<std::size_t>& levels, std::size_t dict_size) {
  double sum = 0.0;
  for (std::size_t s = 0; s < kTrendSeeds; ++s) {
    auto spec = mrdl::default_spec(4);
    spec.seed = 100 + s;
    const auto train_set = mrdl::generate(spec, kTrainPerClass);
    spec.seed = 5000 + s;
    const auto val_set = mrdl::generate(spec, kValPerClass);
    mrdl::TrainConfig tc;
    tc.levels = levels;
    tc.dict_size = dict_size;
    tc.seed = s + 1;
    auto model = mrdl::init_model(mrdl::model_config(tc, spec.image_size, spec.classes), tc.seed);
    sum += mrdl::train(model, train_set, val_set, tc).val_accuracy.back();
  }
  return sum / static_cast<double>(kTrendSeeds);
}

Outcome multi_level_trend(double& elapsed_budget) {
  elapsed_budget = kBudgetLevels;
  const double a3 = mean_val_accuracy({3}, 8);
  const double a23 = mean_val_accuracy({2, 3}, 8);
  const double a123 = mean_val_accuracy({1, 2, 3}, 8);
  const bool pass = a123 >= a23 - kTrendSlack && a23 >= a3 - kTrendSlack && a123 - a3 >= kMultiLevelMargin;
  return {pass, "mean val acc l={3} " + fmt("%.4f", a3) + ", l={2,3} " + fmt("%.4f", a23) + ", l={1,2,3} " +
                    fmt("%.4f", a123) + " (need monotone within 1 pt and +3 pts overall)"};
}

Outcome dict_size_trend(double& elapsed_budget) {
  elapsed_budget = kBudgetDictSize;
  const double k4 = mean_val_accuracy({1, 2, 3}, 4);
  const double k16 = mean_val_accuracy({1, 2, 3}, 16);
  return {k16 - k4 >= kDictSizeMargin,
          "mean val acc K=4 " + fmt("%.4f", k4) + ", K=16 " + fmt("%.4f", k16) + " (need K=16 ahead by 2 pts)"};
}

// ---- 8: majority vote -------------------------------------------------------

Outcome majority_vote() {
  std::size_t checked = 0, mismatches = 0;
  for (std::size_t len = 1; len <= 6; ++len) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < len; ++i) total *= 3;
    for (std::size_t code = 0; code < total; ++code) {
      std::vector<std::size_t> labels(len);
      std::size_t c = code;
      for (auto& l : labels) l = c % 3, c /= 3;
      ++checked;
      mismatches += mrdl::majority_vote(labels) != oracle::count_max(labels);
    }
  }
  const std::vector<std::size_t> tie_a{2, 0}, tie_b{1, 2, 2, 1}, clear{1, 1, 2};
  const bool ties = mrdl::majority_vote(tie_a) == 0 && mrdl::majority_vote(tie_b) == 1 &&
                    mrdl::majority_vote(clear) == 1;
  return {mismatches == 0 && ties, std::to_string(checked) + " label lists, " + std::to_string(mismatches) +
                                       " mismatches; ties go to the lowest class: " + (ties ? "yes" : "no")};
}

// ---- 9: determinism and checkpoint persistence ---------------------------------

Outcome determinism_and_persistence() {
  const auto ds = small_dataset(8, 7400);
  auto [train_set, val_set] = mrdl::split(ds, 0.75, 1);
  const auto tc = small_train(3);
  auto m1 = mrdl::init_model(mrdl::model_config(tc, 8, 4), tc.seed);
  auto m2 = mrdl::init_model(mrdl::model_config(tc, 8, 4), tc.seed);
  const std::string csv1 = mrdl::metrics_csv(mrdl::train(m1, train_set, val_set, tc));
  const std::string csv2 = mrdl::metrics_csv(mrdl::train(m2, train_set, val_set, tc));

  const auto path = std::filesystem::temp_directory_path() / "mrdl_acceptance.ckpt";
  mrdl::save_checkpoint(path, {m1.config, tc, m1.params, 0});
  const auto back = mrdl::load_checkpoint(path);
  std::filesystem::remove(path);
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto batch = mrdl::make_batch(ds, idx);
  const auto a = mrdl::model_forward(batch, m1.params).output.logits;
  const auto b = mrdl::model_forward(batch, back.params).output.logits;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a.flat()[i] - b.flat()[i]));
    den = std::max(den, std::abs(a.flat()[i]));
  }
  const double rel = num / den;
  const bool same_acc = mrdl::predict(m1.params, ds) == mrdl::predict(back.params, ds);
  return {csv1 == csv2 && rel <= kLogitRoundTripTol && same_acc,
          std::string("metrics CSV ") + (csv1 == csv2 ? "bitwise identical" : "DIFFERS") +
              "; checkpoint logits rel err " + fmt("%.2e", rel) + (same_acc ? ", predictions identical" : "")};
}

// ---- 10: numeric substrate ----------------------------------------------------

Outcome numeric_substrate() {
  double conv_oracle = 0.0, fd = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(7500 + seed);
    const std::size_t n = 1 + rng.below(2), ci = 1 + rng.below(3), co = 1 + rng.below(3);
    const std::size_t h = 4 + rng.below(4), w = 4 + rng.below(4), kk = 1 + 2 * rng.below(2);
    const std::size_t stride = 1 + rng.below(2), pad = rng.below(2);
    Tensor4 x = oracle::random_tensor(rng, n, ci, h, w);
    Tensor4 k = oracle::random_tensor(rng, co, ci, kk, kk);
    auto bias = oracle::random_vector(rng, co);

    const auto y = mrdl::nk::conv2d_forward(x, k, bias, stride, pad);
    const auto want = oracle::conv2d(x, k, bias, stride, pad);
    for (std::size_t i = 0; i < y.size(); ++i)
      conv_oracle = std::max(conv_oracle, std::abs(y.flat()[i] - want.flat()[i]) / std::max(1.0, std::abs(want.flat()[i])));

    // conv
    {
      const auto up = oracle::random_vector(rng, y.size());
      auto loss = [&] { return oracle::dot(up, mrdl::nk::conv2d_forward(x, k, bias, stride, pad).flat()); };
      Tensor4 gy(y.batch(), y.channels(), y.height(), y.width());
      std::copy(up.begin(), up.end(), gy.flat().begin());
      auto g = mrdl::nk::conv2d_backward(gy, x, k, stride, pad);
      fd = std::max({fd, oracle::max_rel_error(g.input.flat(), oracle::central_diff(x.flat(), loss, kFdStep)),
                     oracle::max_rel_error(g.kernels.flat(), oracle::central_diff(k.flat(), loss, kFdStep)),
                     oracle::max_rel_error(g.bias, oracle::central_diff(bias, loss, kFdStep))});
    }
    // avgpool (even sizes) and relu (inputs kept away from the kink)
    {
      Tensor4 p = oracle::random_tensor(rng, n, ci, 2 * (1 + rng.below(3)), 2 * (1 + rng.below(3)));
      const auto up = oracle::random_vector(rng, p.size() / 4);
      auto loss = [&] { return oracle::dot(up, mrdl::nk::avgpool2(p).flat()); };
      Tensor4 gy(n, ci, p.height() / 2, p.width() / 2);
      std::copy(up.begin(), up.end(), gy.flat().begin());
      fd = std::max(fd, oracle::max_rel_error(mrdl::nk::avgpool2_backward(gy).flat(),
                                              oracle::central_diff(p.flat(), loss, kFdStep)));

      for (double& v : p.flat()) v += v >= 0 ? 0.1 : -0.1;
      const auto up2 = oracle::random_vector(rng, p.size());
      auto loss2 = [&] { return oracle::dot(up2, mrdl::nk::relu(p).flat()); };
      Tensor4 gr(p.batch(), p.channels(), p.height(), p.width());
      std::copy(up2.begin(), up2.end(), gr.flat().begin());
      fd = std::max(fd, oracle::max_rel_error(mrdl::nk::relu_backward(gr, p).flat(),
                                              oracle::central_diff(p.flat(), loss2, kFdStep)));
    }
    // affine and softmax cross-entropy
    {
      const std::size_t rows = 1 + rng.below(4), in = 1 + rng.below(5), out = 2 + rng.below(4);
      Matrix a = oracle::random_matrix(rng, rows, in), wm = oracle::random_matrix(rng, in, out);
      auto b = oracle::random_vector(rng, out);
      const auto up = oracle::random_vector(rng, rows * out);
      auto loss = [&] { return oracle::dot(up, mrdl::nk::affine_forward(a, wm, b).flat()); };
      Matrix gy(rows, out);
      std::copy(up.begin(), up.end(), gy.flat().begin());
      auto g = mrdl::nk::affine_backward(gy, a, wm);
      fd = std::max({fd, oracle::max_rel_error(g.x.flat(), oracle::central_diff(a.flat(), loss, kFdStep)),
                     oracle::max_rel_error(g.w.flat(), oracle::central_diff(wm.flat(), loss, kFdStep)),
                     oracle::max_rel_error(g.bias, oracle::central_diff(b, loss, kFdStep))});

      Matrix logits = oracle::random_matrix(rng, rows, out, -3, 3);
      std::vector<std::size_t> labels(rows);
      for (auto& l : labels) l = rng.below(out);
      auto xloss = [&] { return mrdl::nk::softmax_xent(logits, labels).loss; };
      const auto analytic = mrdl::nk::softmax_xent(logits, labels).grad_logits;
      fd = std::max(fd, oracle::max_rel_error(analytic.flat(), oracle::central_diff(logits.flat(), xloss, kFdStep)));
    }
  }
  return {conv_oracle <= kConvOracleTol && fd < kGradTol,
          "conv vs sliding-window oracle " + fmt("%.1e", conv_oracle) +
              "; conv/avgpool/relu/affine/xent backward max rel err " + fmt("%.2e", fd)};
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

  bool all = true;
  for (int c : selected) {
    const auto t0 = std::chrono::steady_clock::now();
    double budget = 0.0;  // seconds; 0 = no runtime requirement
    Outcome o;
    try {
      switch (c) {
        case 1: budget = kBudgetEncodeGrad; o = encode_gradients(); break;
        case 2: budget = kBudgetGradcheck; o = model_gradcheck(); break;
        case 3: o = orderless_fixed_length(); break;
        case 4: o = stabilised_assignment(); break;
        case 5: o = simplex_every_step(); break;
        case 6: o = multi_level_trend(budget); break;
        case 7: o = dict_size_trend(budget); break;
        case 8: o = majority_vote(); break;
        case 9: o = determinism_and_persistence(); break;
        case 10: o = numeric_substrate(); break;
        default: o = {false, "no such criterion"};
      }
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    if (budget > 0.0 && secs > budget) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f", budget) + " s budget";
    }
    std::printf("criterion %d: %s  %s  (%.1f s)\n", c, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
