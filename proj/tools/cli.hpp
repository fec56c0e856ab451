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

// Subcommand implementations behind the `mrdl` executable. Kept in a header
// so tests can drive the exact code path the binary runs.

#ifndef MRDL_TOOLS_CLI_HPP_
#define MRDL_TOOLS_CLI_HPP_

#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mrdl/checkpoint.hpp"
#include "mrdl/optim.hpp"
#include "mrdl/texdata.hpp"

namespace mrdl::cli {

enum ExitCode : int { kOk = 0, kBadArguments = 2, kDataFormat = 3, kGradcheckFailed = 4 };

/// Argument problems map to 2; anything wrong with file contents maps to 3.
inline int exit_code_for(ErrorCode code) {
  return code == ErrorCode::kInvalidArgument ? kBadArguments : kDataFormat;
}

namespace detail {

// Flag values as strings, keyed by flag name without dashes. A --config file
// supplies the same keys; explicit flags win.
class Settings {
 public:
  void bind(CLI::App& app, const std::string& name, const std::string& help) {
    opts_[name] = app.add_option("--" + name, values_[name], help);
  }
  void bind_flag(CLI::App& app, const std::string& name, const std::string& help) {
    opts_[name] = app.add_flag("--" + name, flags_[name], help);
  }

  /// Layers the config file (if any) under the command-line flags.
  void resolve(const std::string& config_path) {
    if (!config_path.empty()) {
      for (const auto& [k, v] : parse_key_values(mrdl::detail::read_file(config_path))) {
        require(opts_.count(k) != 0, ErrorCode::kInvalidArgument,
                config_path + ": unknown key '" + k + "'");
        if (opts_[k]->count() == 0) {
          if (flags_.count(k) != 0)
            flags_[k] = v == "1" || v == "true" || v == "yes";
          else
            values_[k] = v;
        }
      }
    }
  }

  bool has(const std::string& name) const {
    auto it = values_.find(name);
    return it != values_.end() && !it->second.empty();
  }
  std::string str(const std::string& name, const std::string& fallback = "") const {
    return has(name) ? values_.at(name) : fallback;
  }
  std::string required(const std::string& name) const {
    require(has(name), ErrorCode::kInvalidArgument, "--" + name + " is required");
    return values_.at(name);
  }
  std::size_t size(const std::string& name, std::size_t fallback) const {
    if (!has(name)) return fallback;
    return mrdl::detail::to_size({{name, values_.at(name)}}, name, fallback);
  }
  double real(const std::string& name, double fallback) const {
    if (!has(name)) return fallback;
    return mrdl::detail::to_double({{name, values_.at(name)}}, name, fallback);
  }
  bool flag(const std::string& name) const {
    auto it = flags_.find(name);
    return it != flags_.end() && it->second;
  }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> flags_;
  std::map<std::string, CLI::Option*> opts_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  mrdl::detail::write_file(path, text);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

inline int cmd_generate(const detail::Settings& s, std::ostream& out) {
  KeyValues spec_kv;
  if (s.has("spec")) spec_kv = parse_key_values(mrdl::detail::read_file(s.str("spec")));
  SyntheticSpec spec = synthetic_spec_from(spec_kv);
  if (s.has("seed")) spec.seed = s.size("seed", spec.seed);
  const std::size_t n = s.size("n", 100);
  require(n >= 1, ErrorCode::kInvalidArgument, "--n must be >= 1");
  const std::string dir = s.required("out");
  Dataset ds = generate(spec, n);
  write_dataset(dir, ds);
  out << "wrote " << ds.size() << " samples (" << spec.classes << " classes) to " << dir << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline TrainConfig train_config_from(const detail::Settings& s) {
  TrainConfig tc;
  tc.lr = s.real("lr", tc.lr);
  tc.momentum = s.real("momentum", tc.momentum);
  tc.batch_size = s.size("batch-size", tc.batch_size);
  tc.epochs = s.size("epochs", tc.epochs);
  tc.seed = s.size("seed", tc.seed);
  tc.dict_size = s.size("dict-size", tc.dict_size);
  tc.shared_dim = s.size("shared-dim", tc.shared_dim);
  tc.decay_epoch = s.size("decay-epoch", tc.decay_epoch);
  if (s.has("levels")) tc.levels = parse_size_list(s.str("levels"));
  if (s.has("widths")) {
    auto w = parse_size_list(s.str("widths"));
    require(w.size() == kMaxLevels, ErrorCode::kInvalidArgument, "--widths needs exactly 3 values");
    std::copy(w.begin(), w.end(), tc.widths.begin());
  }
  tc.levels = configure_levels(tc.levels);
  validate(tc);
  return tc;
}

inline int cmd_train(const detail::Settings& s, std::ostream& out) {
  TrainConfig tc = train_config_from(s);
  const std::string ckpt_path = s.required("out");
  const double val_fraction = s.real("val-fraction", 0.2);
  require(val_fraction >= 0.0 && val_fraction < 1.0, ErrorCode::kInvalidArgument,
          "--val-fraction must be in [0, 1)");
  Dataset all = read_dataset(s.required("data"));
  require(!all.empty(), ErrorCode::kInvalidArgument, "dataset is empty");

  Dataset train_set = all, val_set;
  if (val_fraction > 0.0) std::tie(train_set, val_set) = split(all, 1.0 - val_fraction, tc.seed);

  Model model = init_model(model_config(tc, all.image_size, all.classes, all.channels), tc.seed);
  RunMetrics m = train(model, train_set, val_set, tc);

  const std::string csv_path = s.str("metrics", ckpt_path + ".metrics.csv");
  detail::write_text(csv_path, metrics_csv(m));
  Checkpoint ck{model.config, tc, model.params, Rng(tc.seed).split(0x5EED).state()};
  if (std::filesystem::path(ckpt_path).has_parent_path())
    std::filesystem::create_directories(std::filesystem::path(ckpt_path).parent_path());
  save_checkpoint(ckpt_path, ck);

  char buf[128];
  std::snprintf(buf, sizeof(buf), "final loss=%.6f val_acc=%.4f", m.loss.back(), m.val_accuracy.back());
  out << buf << "\nomega=";
  for (std::size_t l = 0; l < m.omega.back().size(); ++l) out << (l ? "," : "") << m.omega.back()[l];
  out << "\nmetrics: " << csv_path << "\ncheckpoint: " << ckpt_path << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline int cmd_eval(const detail::Settings& s, std::ostream& out) {
  Checkpoint ck = load_checkpoint(s.required("checkpoint"));
  Dataset ds = read_dataset(s.required("data"));
  require(ds.image_size == ck.model.image_size && ds.channels == ck.model.in_channels,
          ErrorCode::kShapeMismatch, "dataset images do not match the checkpoint's input shape");
  auto pred = predict(ck.params, ds);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "patch_accuracy=%.6f (%zu samples)\n", accuracy(pred, ds), ds.size());
  out << buf;
  if (s.flag("group-vote")) {
    std::snprintf(buf, sizeof(buf), "image_accuracy=%.6f\n", group_vote_accuracy(pred, ds));
    out << buf;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// encode
// ---------------------------------------------------------------------------

/// Fused M-vector for one input. A file whose levels match the checkpoint's
/// codebooks (count and descriptor width) is treated as precomputed
/// descriptor maps and skips the backbone; a single-level file of H*W pixels
/// x channels is treated as an image and runs the whole model.
inline std::vector<double> fused_vector(const Checkpoint& ck, const DescriptorFile& f) {
  const auto& head = ck.params.head;
  bool descriptors = f.levels.size() == head.levels.size();
  for (std::size_t l = 0; descriptors && l < f.levels.size(); ++l)
    descriptors = f.levels[l].cols() == head.levels[l].book.d();

  if (descriptors) {
    std::vector<Matrix> enc;
    for (std::size_t l = 0; l < f.levels.size(); ++l) {
      auto er = encode_forward(f.levels[l], head.levels[l].book);
      enc.emplace_back(1, er.encoding.values.size(), er.encoding.values);
    }
    auto fr = fuse_forward(enc, head);
    return fr.fused.vec();
  }

  const std::size_t side = ck.model.image_size;
  require(f.levels.size() == 1 && f.levels[0].rows() == side * side &&
              f.levels[0].cols() == ck.model.in_channels,
          ErrorCode::kShapeMismatch,
          "input is neither descriptor maps for the checkpoint's levels nor a " +
              dims_str(ck.model.in_channels, side, side) + " image");
  Tensor4 img(1, ck.model.in_channels, side, side);
  for (std::size_t c = 0; c < ck.model.in_channels; ++c)
    for (std::size_t i = 0; i < side * side; ++i) img.plane(0, c)[i] = f.levels[0](i, c);
  auto fr = model_forward(img, ck.params);
  return fr.cache.fuse.fused.vec();
}

inline int cmd_encode(const detail::Settings& s, std::ostream& out) {
  Checkpoint ck = load_checkpoint(s.required("checkpoint"));
  DescriptorFile f = load_descriptor_maps(s.required("input"));
  std::vector<double> v = fused_vector(ck, f);
  std::string text;
  char buf[40];
  for (double x : v) {
    std::snprintf(buf, sizeof(buf), "%.17g\n", x);
    text += buf;
  }
  if (s.has("out")) {
    detail::write_text(s.str("out"), text);
    out << "wrote " << v.size() << "-dim vector to " << s.str("out") << "\n";
  } else {
    out << text;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

/// The small model the gradient check runs on.
inline ModelConfig gradcheck_config(std::vector<std::size_t> levels, std::size_t dict_size) {
  ModelConfig cfg;
  cfg.in_channels = 1;
  cfg.image_size = 8;
  cfg.widths = {4, 8, 16};
  cfg.levels = configure_levels(std::move(levels));
  cfg.dict_size = dict_size;
  cfg.shared_dim = 6;
  cfg.classes = 2;
  validate(cfg);
  return cfg;
}

inline int cmd_gradcheck(const detail::Settings& s, std::ostream& out) {
  const auto levels = s.has("levels") ? parse_size_list(s.str("levels")) : std::vector<std::size_t>{1, 2, 3};
  const ModelConfig cfg = gradcheck_config(levels, s.size("dict-size", 2));
  const double tol = s.real("tol", 1e-4);
  require(tol > 0.0, ErrorCode::kInvalidArgument, "--tol must be positive");
  GradcheckReport rep = gradcheck(cfg, s.size("seed", 1), tol);
  char buf[160];
  for (const auto& g : rep.groups) {
    std::snprintf(buf, sizeof(buf), "%-20s n=%-5zu max_rel_err=%.3e %s\n", g.name.c_str(), g.count,
                  g.max_rel_error, g.pass ? "ok" : "FAIL");
    out << buf;
  }
  out << (rep.all_pass() ? "gradcheck passed\n" : "gradcheck FAILED\n");
  return rep.all_pass() ? kOk : kGradcheckFailed;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-resolution deep dictionary learning"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  struct Sub {
    CLI::App* app;
    detail::Settings settings;
    std::string config;
  };
  std::map<std::string, Sub> subs;
  auto add = [&](const std::string& name, const std::string& help) -> Sub& {
    Sub& sub = subs[name];
    sub.app = app.add_subcommand(name, help);
    sub.app->add_option("--config", sub.config, "key=value file; flags override it");
    return sub;
  };

  {
    Sub& g = add("generate", "write a synthetic multi-scale texture dataset");
    g.settings.bind(*g.app, "spec", "synthetic spec (key=value file)");
    g.settings.bind(*g.app, "out", "output directory");
    g.settings.bind(*g.app, "n", "samples per class (default 100)");
    g.settings.bind(*g.app, "seed", "overrides the spec seed");
  }
  {
    Sub& t = add("train", "train a model and write metrics CSV + checkpoint");
    const std::pair<const char*, const char*> flags[] = {
        {"data", "dataset directory"},
        {"levels", "active resolution levels, e.g. 1,2,3"},
        {"dict-size", "codewords per level (default 8)"},
        {"epochs", "training epochs (default 12)"},
        {"lr", "learning rate (default 0.05)"},
        {"seed", "model and shuffling seed (default 1)"},
        {"out", "checkpoint path"},
        {"momentum", "SGD momentum (default 0.9)"},
        {"batch-size", "mini-batch size (default 32)"},
        {"shared-dim", "per-level projection width M (default 64)"},
        {"widths", "conv widths of the three stages (default 8,16,32)"},
        {"decay-epoch", "epoch from which lr is scaled by 0.1 (default 0 = never)"},
        {"val-fraction", "fraction of image groups held out (default 0.2)"},
        {"metrics", "metrics CSV path (default <out>.metrics.csv)"}};
    for (const auto& [k, help] : flags) t.settings.bind(*t.app, k, help);
  }
  {
    Sub& e = add("eval", "patch (and optionally image) accuracy of a checkpoint");
    e.settings.bind(*e.app, "checkpoint", "checkpoint file");
    e.settings.bind(*e.app, "data", "dataset directory");
    e.settings.bind_flag(*e.app, "group-vote", "also report majority-vote image accuracy");
  }
  {
    Sub& c = add("encode", "emit the fused M-vector of one input file");
    c.settings.bind(*c.app, "checkpoint", "checkpoint file");
    c.settings.bind(*c.app, "input", "descriptor-map or image file");
    c.settings.bind(*c.app, "out", "output text file (default: stdout)");
  }
  {
    Sub& c = add("gradcheck", "finite-difference check of the full model");
    c.settings.bind(*c.app, "levels", "active levels (default 1,2,3)");
    c.settings.bind(*c.app, "dict-size", "codewords per level (default 2)");
    c.settings.bind(*c.app, "seed", "instance seed (default 1)");
    c.settings.bind(*c.app, "tol", "max relative error per group (default 1e-4)");
  }

  std::reverse(args.begin(), args.end());
  try {
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kBadArguments;
  }

  ThreadLimit limit(threads_from_env());
  for (auto& [name, sub] : subs) {
    if (!sub.app->parsed()) continue;
    try {
      sub.settings.resolve(sub.config);
      if (name == "generate") return cmd_generate(sub.settings, out);
      if (name == "train") return cmd_train(sub.settings, out);
      if (name == "eval") return cmd_eval(sub.settings, out);
      if (name == "encode") return cmd_encode(sub.settings, out);
      return cmd_gradcheck(sub.settings, out);
    } catch (const Error& e) {
      err << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
      return exit_code_for(e.code());
    }
  }
  return kBadArguments;
}

}  // namespace mrdl::cli

#endif  // MRDL_TOOLS_CLI_HPP_
