#pragma once

// edl command line: gen, train, eval, ood.
//
// Every option can also come from a `key = value` file given with --config
// (`#` starts a comment; `-` and `_` are interchangeable in keys). Flags on
// the command line win over the file. Each command writes the merged
// settings to <out>/resolved_config.txt, which replays the run when passed
// back through --config.
//
// Exit codes: 0 success, 2 bad arguments or configuration, 3 data, shape or
// checkpoint problems, 4 numerical failures.

#include <CLI11.hpp>

#include <charconv>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "edl/convnet.hpp"
#include "edl/dataset.hpp"
#include "edl/io.hpp"
#include "edl/metrics.hpp"
#include "edl/ood.hpp"
#include "edl/predict.hpp"
#include "edl/synthfundus.hpp"
#include "edl/trainer.hpp"

namespace edl::cli {

namespace fs = std::filesystem;

inline constexpr const char* kResolvedConfigName = "resolved_config.txt";
inline constexpr const char* kCheckpointName = "model.edlc";

// ---------------------------------------------------------------------------
// Settings registry shared by the flag parser and the config file reader.

namespace detail {

inline std::string normalize_key(std::string key) {
  for (char& c : key)
    if (c == '-') c = '_';
  return key;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_integer(const std::string& key, const std::string& text) {
  T v{};
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    throw ArgumentError("setting '" + key + "': expected an integer, got '" + text + "'");
  }
  return v;
}

inline std::string to_text(const std::string& v) { return v; }
inline std::string to_text(double v) { return io::format_double(v); }
inline std::string to_text(bool v) { return v ? "true" : "false"; }
template <typename T>
std::string to_text(T v) {
  return std::to_string(v);
}

inline void from_text(const std::string&, const std::string& text, std::string& v) { v = text; }
inline void from_text(const std::string& key, const std::string& text, double& v) {
  try {
    v = io::parse_double(text, key);
  } catch (const Error&) {
    throw ArgumentError("setting '" + key + "': expected a number, got '" + text + "'");
  }
}
inline void from_text(const std::string& key, const std::string& text, bool& v) {
  if (text == "true" || text == "1") {
    v = true;
  } else if (text == "false" || text == "0") {
    v = false;
  } else {
    throw ArgumentError("setting '" + key + "': expected true or false, got '" + text + "'");
  }
}
template <typename T>
void from_text(const std::string& key, const std::string& text, T& v) {
  v = parse_integer<T>(key, text);
}

}  // namespace detail

class Settings {
 public:
  explicit Settings(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "key = value settings file; flags take precedence");
  }

  template <typename T>
  CLI::Option* add(const std::string& key, T& var, const std::string& help) {
    CLI::Option* opt;
    const std::string flag = "--" + flag_name(key);
    if constexpr (std::is_same_v<T, bool>) {
      opt = app_->add_flag(flag, var, help);
    } else {
      opt = app_->add_option(flag, var, help)->capture_default_str();
    }
    entries_.push_back({key, opt, [&var, key](const std::string& text) { detail::from_text(key, text, var); },
                        [&var] { return detail::to_text(var); }});
    return opt;
  }

  /// Applies --config values to every setting not given on the command line.
  void merge_config_file() {
    if (config_path_.empty()) return;
    std::string text;
    try {
      text = io::read_file(config_path_);
    } catch (const DatasetError&) {
      throw ArgumentError("cannot read config file " + config_path_);
    }
    std::map<std::string, bool> seen;
    std::size_t line_no = 0;
    for (const auto& raw : io::split(text, '\n')) {
      ++line_no;
      std::string line = raw.substr(0, raw.find('#'));
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ArgumentError(config_path_ + ":" + std::to_string(line_no) + ": expected 'key = value'");
      }
      const std::string key = detail::normalize_key(detail::trim(line.substr(0, eq)));
      const std::string value = detail::trim(line.substr(eq + 1));
      auto* e = find(key);
      if (!e) throw ArgumentError(config_path_ + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
      if (seen[key]) throw ArgumentError(config_path_ + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
      seen[key] = true;
      if (e->option->count() == 0) e->set(value);
    }
  }

  std::string resolved() const {
    std::string out = "# " + app_->get_name() + "\n";
    for (const auto& e : entries_) out += e.key + " = " + e.get() + "\n";
    return out;
  }

 private:
  struct Entry {
    std::string key;
    CLI::Option* option;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
  };

  static std::string flag_name(std::string key) {
    for (char& c : key)
      if (c == '_') c = '-';
    return key;
  }

  Entry* find(const std::string& key) {
    for (auto& e : entries_)
      if (e.key == key) return &e;
    return nullptr;
  }

  CLI::App* app_;
  std::string config_path_;
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Option sets

struct SplitOptions {
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t split_seed = 0;

  void add_to(Settings& s) {
    s.add("val_fraction", val_fraction, "fraction of each class held out for validation");
    s.add("test_fraction", test_fraction, "fraction of each class held out for testing");
    s.add("split_seed", split_seed, "seed of the stratified train/val/test split");
  }
};

struct GenOptions {
  std::string out;
  std::size_t n = 2000;
  double balance = 0.5;
  std::size_t size = 64;
  std::uint64_t seed = 0;
  bool force = false;
};

struct TrainOptions {
  std::string data, out;
  int epochs = 20;
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::string optimizer = "adam";
  int anneal_step = 10;
  double alpha_max = kDefaultAlphaMax;
  int checkpoint_every = 0;
  bool augment = true;
  std::string filters = "16,32,64";
  std::size_t kernel = 3;
  std::size_t dense_width = 64;
  SplitOptions split;
};

struct EvalOptions {
  std::string model, data, out;
  std::string split_name = "test";
  SplitOptions split;
};

struct OodOptions {
  std::string model, data, out;
  std::string rule = "at_sens0.5";
  double cam_threshold = 0.5;
  std::string calibration_split = "val";
  std::string eval_split = "test";
  SplitOptions split;
};

// ---------------------------------------------------------------------------
// Helpers

inline void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ArgumentError(std::string("missing required --") + flag);
}

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  io::write_file_atomic(path, text);
}

struct LoadedData {
  std::vector<LabeledImage> items;
  DatasetSplit split;

  std::vector<int> labels() const {
    std::vector<int> y;
    for (const auto& it : items) y.push_back(it.label);
    return y;
  }

  std::vector<std::size_t> indices(const std::string& name) const {
    if (name != "all") return split.by_name(name);
    std::vector<std::size_t> all(items.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }

  LabeledSet subset(const std::vector<std::size_t>& idx) const {
    LabeledSet s;
    if (idx.empty()) return s;
    s.images = stack_images(items, idx);
    for (auto i : idx) s.labels.push_back(items[i].label);
    return s;
  }
};

inline LoadedData load_data(const std::string& dir, const SplitOptions& so) {
  LoadedData d;
  d.items = read_dataset(dir);
  const auto y = d.labels();
  d.split = split_dataset(y, so.val_fraction, so.test_fraction, so.split_seed);
  return d;
}

inline std::vector<ConvBlockConfig> parse_filters(const std::string& text, std::size_t kernel) {
  std::vector<ConvBlockConfig> blocks;
  for (const auto& part : io::split(text, ',')) {
    ConvBlockConfig b;
    b.filters = detail::parse_integer<std::size_t>("filters", detail::trim(part));
    b.kernel = kernel;
    blocks.push_back(b);
  }
  return blocks;
}

// ---------------------------------------------------------------------------
// Commands

inline void cmd_gen(const GenOptions& o, std::ostream& out) {
  require(o.out, "out");
  const fs::path dir = o.out;
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!o.force) {
      throw ArgumentError("output directory " + o.out + " is not empty (use --force to overwrite)");
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name == kManifestName || name == kResolvedConfigName ||
          (name.rfind("img_", 0) == 0 && entry.path().extension() == ".ppm")) {
        fs::remove(entry.path());
      }
    }
  }
  const auto samples = generate(o.n, o.balance, o.seed, o.size);
  write_dataset(samples, dir);
  std::size_t pos = 0;
  for (const auto& s : samples) pos += s.label;
  out << "class 0: " << samples.size() - pos << "\nclass 1: " << pos << "\n";
}

inline void cmd_train(const TrainOptions& o, std::ostream& out) {
  require(o.data, "data");
  require(o.out, "out");
  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.seed = o.seed;
  tc.batch_size = o.batch_size;
  tc.learning_rate = o.lr;
  if (o.optimizer == "adam") {
    tc.optimizer = OptimizerKind::adam;
  } else if (o.optimizer == "sgd") {
    tc.optimizer = OptimizerKind::sgd_momentum;
  } else {
    throw ArgumentError("--optimizer must be adam or sgd, got '" + o.optimizer + "'");
  }
  tc.anneal_step = o.anneal_step;
  tc.alpha_max = o.alpha_max;
  tc.checkpoint_every = o.checkpoint_every;
  if (!o.augment) tc.augment = AugmentConfig::disabled();
  tc.validate();

  const LoadedData data = load_data(o.data, o.split);
  ModelConfig mc;
  mc.input_size = data.items.front().image.dim(1);
  mc.conv_blocks = parse_filters(o.filters, o.kernel);
  mc.dense_width = o.dense_width;
  mc.seed = o.seed;
  mc.validate();
  Model model(mc);

  const fs::path dir = o.out;
  TrainHooks hooks;
  hooks.epoch_end = [&](const TrainLogRow& r) {
    out << "epoch " << r.epoch << "  a_t " << io::format_double(r.a_t) << "  loss " << r.loss_total
        << "  train_acc " << r.train_accuracy << "  val_auc " << r.val_auc << "  mean_u " << r.mean_u << "\n";
  };
  hooks.checkpoint = [&](int epoch, const Model& m) {
    fs::create_directories(dir);
    save_checkpoint(m, dir / ("checkpoint_epoch_" + std::to_string(epoch) + ".edlc"));
  };
  const TrainLog log =
      train(model, data.subset(data.split.train), data.subset(data.split.val), tc, hooks);
  fs::create_directories(dir);
  save_checkpoint(model, dir / kCheckpointName);
  write_text(dir / "train_log.csv", log.csv());
  out << "wrote " << (dir / kCheckpointName).string() << "\n";
}

inline void cmd_eval(const EvalOptions& o, std::ostream& out) {
  require(o.model, "model");
  require(o.data, "data");
  require(o.out, "out");
  const Model model = load_checkpoint(o.model);
  const LoadedData data = load_data(o.data, o.split);
  const auto idx = data.indices(o.split_name);
  if (idx.empty()) throw DatasetError("split '" + o.split_name + "' is empty");
  const LabeledSet set = data.subset(idx);
  const auto preds = predict(model, set.images);

  io::CsvWriter p({"filename", "p_referable", "u"});
  std::vector<double> pos, neg;
  double u_sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    p.cell(data.items[idx[i]].filename).cell(preds[i].p_referable).cell(preds[i].uncertainty).end_row();
    (set.labels[i] ? pos : neg).push_back(preds[i].p_referable);
    u_sum += preds[i].uncertainty;
  }
  const RocAnalysis r = roc(pos, neg);
  io::CsvWriter m({"metric", "value"});
  m.cell("pAUC").cell(partial_auc(r)).end_row();
  m.cell("TPR@95").cell(tpr_at_specificity(r)).end_row();
  m.cell("AUC").cell(r.auc).end_row();
  m.cell("mean_u").cell(u_sum / static_cast<double>(preds.size())).end_row();

  const fs::path dir = o.out;
  write_text(dir / "predictions.csv", p.str());
  write_text(dir / "metrics.csv", m.str());
  out << m.str();
}

inline ThresholdRule parse_rule(const std::string& name) {
  if (name == "at_sens0.5") return ThresholdRule::at_sensitivity(0.5);
  if (name == "youden") return ThresholdRule::youden();
  throw ArgumentError("--rule must be at_sens0.5 or youden, got '" + name + "'");
}

inline void cmd_ood(const OodOptions& o, std::ostream& out) {
  require(o.model, "model");
  require(o.data, "data");
  require(o.out, "out");
  const ThresholdRule rule = parse_rule(o.rule);
  OcclusionSpec{o.cam_threshold}.validate();
  const Model model = load_checkpoint(o.model);
  const LoadedData data = load_data(o.data, o.split);

  const auto cal_idx = data.indices(o.calibration_split);
  if (cal_idx.size() < kMinCalibrationImages) {
    throw DatasetError("calibration split '" + o.calibration_split + "' has " + std::to_string(cal_idx.size()) +
                       " images, need at least " + std::to_string(kMinCalibrationImages));
  }
  const Calibration cal = calibrate(model, data.subset(cal_idx).images, o.cam_threshold, rule);

  const auto test_idx = data.indices(o.eval_split);
  if (test_idx.empty()) throw DatasetError("split '" + o.eval_split + "' is empty");
  const OodReport rep = evaluate_ood(model, data.subset(test_idx).images, cal.chosen.threshold, o.cam_threshold);

  std::vector<GradabilityRow> rows;
  const auto& s = rep.scores;
  const auto flag = [&](double u) { return static_cast<int>(u > rep.u_star); };
  for (std::size_t i = 0; i < test_idx.size(); ++i) {
    const std::string& name = data.items[test_idx[i]].filename;
    rows.push_back({name, s.u_id[i], flag(s.u_id[i])});
    rows.push_back({name + ":occluded", s.u_occluded[i], flag(s.u_occluded[i])});
    rows.push_back({name + ":flipped", s.u_flipped[i], flag(s.u_flipped[i])});
  }

  io::CsvWriter summary({"metric", "value"});
  auto put = [&](std::string_view k, double v) { summary.cell(k).cell(v).end_row(); };
  put("gAUC_occluded", rep.gauc_occluded);
  put("gAUC_flipped", rep.gauc_flipped);
  put("kappa", rep.kappa);
  put("u_star", rep.u_star);
  put("median_u_id", rep.median_u_id);
  put("median_u_occluded", rep.median_u_occluded);
  put("at_sens0.5_threshold", cal.at_half_sensitivity.threshold);
  put("at_sens0.5_sensitivity", cal.at_half_sensitivity.sensitivity);
  put("at_sens0.5_specificity", cal.at_half_sensitivity.specificity);
  put("youden_threshold", cal.youden.threshold);
  put("youden_sensitivity", cal.youden.sensitivity);
  put("youden_specificity", cal.youden.specificity);

  const fs::path dir = o.out;
  write_text(dir / "gradability.csv", gradability_csv(rows));
  write_text(dir / "uncertainty_histogram.csv", histogram_csv(rep.histogram));
  write_text(dir / "roc_points.csv", roc_points_csv(cal.roc));
  write_text(dir / "ood_summary.csv", summary.str());
  out << summary.str();
}

// ---------------------------------------------------------------------------
// Entry point

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ArgumentError*>(&e) || dynamic_cast<const ConfigurationError*>(&e)) return 2;
  if (dynamic_cast<const DatasetError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
      dynamic_cast<const CorruptCheckpointError*>(&e) || dynamic_cast<const InvalidInputError*>(&e)) {
    return 3;
  }
  if (dynamic_cast<const TrainingDivergedError*>(&e) || dynamic_cast<const CalibrationDegenerateError*>(&e) ||
      dynamic_cast<const DomainError*>(&e)) {
    return 4;
  }
  return 1;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Evidential glaucoma screening with unsupervised ungradability detection", "edl"};
  app.require_subcommand(1);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "write a synthetic fundus dataset");
  Settings gen_set(gen_cmd);
  gen_set.add("out", gen.out, "output directory");
  gen_set.add("n", gen.n, "number of images");
  gen_set.add("balance", gen.balance, "fraction of referable images");
  gen_set.add("size", gen.size, "image side length in pixels (>= 32)");
  gen_set.add("seed", gen.seed, "generator seed");
  gen_set.add("force", gen.force, "overwrite a non-empty output directory");

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "train an evidential classifier");
  Settings train_set(train_cmd);
  train_set.add("data", tr.data, "dataset directory");
  train_set.add("out", tr.out, "output directory");
  train_set.add("epochs", tr.epochs, "training epochs");
  train_set.add("seed", tr.seed, "seed for initialization, batching and augmentation");
  train_set.add("batch_size", tr.batch_size, "even batch size");
  train_set.add("lr", tr.lr, "learning rate");
  train_set.add("optimizer", tr.optimizer, "adam or sgd (momentum 0.9)");
  train_set.add("anneal_step", tr.anneal_step, "epochs until the uniform term reaches full weight");
  train_set.add("alpha_max", tr.alpha_max, "target Dirichlet parameter of the true class");
  train_set.add("checkpoint_every", tr.checkpoint_every, "extra checkpoint every k epochs (0: off)");
  train_set.add("augment", tr.augment, "random flips, affine, blur and brightness");
  train_set.add("filters", tr.filters, "filters per conv block, comma separated");
  train_set.add("kernel", tr.kernel, "conv kernel size");
  train_set.add("dense_width", tr.dense_width, "hidden dense layer width");
  tr.split.add_to(train_set);

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "screening metrics on a split");
  Settings eval_set(eval_cmd);
  eval_set.add("model", ev.model, "checkpoint file");
  eval_set.add("data", ev.data, "dataset directory");
  eval_set.add("out", ev.out, "output directory");
  eval_set.add("split", ev.split_name, "train, val, test or all");
  ev.split.add_to(eval_set);

  OodOptions od;
  auto* ood_cmd = app.add_subcommand("ood", "calibrate and evaluate ungradability detection");
  Settings ood_set(ood_cmd);
  ood_set.add("model", od.model, "checkpoint file");
  ood_set.add("data", od.data, "dataset directory");
  ood_set.add("out", od.out, "output directory");
  ood_set.add("rule", od.rule, "threshold rule: at_sens0.5 or youden");
  ood_set.add("cam_threshold", od.cam_threshold, "Grad-CAM occlusion threshold in (0,1)");
  ood_set.add("calibration_split", od.calibration_split, "split used to choose u*");
  ood_set.add("eval_split", od.eval_split, "split used for the report");
  od.split.add_to(ood_set);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    auto finish = [](const Settings& s, const std::string& dir) {
      write_text(fs::path(dir) / kResolvedConfigName, s.resolved());
    };
    if (gen_cmd->parsed()) {
      gen_set.merge_config_file();
      cmd_gen(gen, out);
      finish(gen_set, gen.out);
    } else if (train_cmd->parsed()) {
      train_set.merge_config_file();
      cmd_train(tr, out);
      finish(train_set, tr.out);
    } else if (eval_cmd->parsed()) {
      eval_set.merge_config_file();
      cmd_eval(ev, out);
      finish(eval_set, ev.out);
    } else if (ood_cmd->parsed()) {
      ood_set.merge_config_file();
      cmd_ood(od, out);
      finish(ood_set, od.out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}

}  // namespace edl::cli
