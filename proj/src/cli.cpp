#include "coinnet/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "byte_io.hpp"
#include "coinnet/checks.hpp"
#include "coinnet/data.hpp"
#include "coinnet/error.hpp"
#include "coinnet/model.hpp"
#include "coinnet/train.hpp"

namespace coinnet::cli {

namespace {

using Json = nlohmann::ordered_json;

constexpr const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  1  internal error\n"
    "  2  usage error (unknown flag, bad value)\n"
    "  3  I/O failure (unreadable or unwritable path)\n"
    "  4  malformed input (feature file, manifest, checkpoint, groups file)\n"
    "  5  shape mismatch between checkpoint and features\n"
    "  6  training diverged (non-finite loss)\n"
    "  7  self-check failed (check-sketch, check-grad)\n";

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string shape_str(std::size_t h, std::size_t w, std::size_t c) {
  return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return kUsage;
    case ErrorKind::ShapeMismatch: return kShapeMismatch;
    case ErrorKind::Format: return kBadInput;
    case ErrorKind::Io: return kIo;
    case ErrorKind::Divergence: return kDiverged;
  }
  return kInternal;
}

void print_config(std::ostream& err, const std::string& command, const std::vector<std::pair<std::string, std::string>>& kv) {
  err << "# " << command << " configuration\n";
  for (const auto& [k, v] : kv) err << "#   " << k << " = " << v << "\n";
}

// Checks feature dims against a checkpoint, naming both shapes on mismatch.
void require_compatible(const data::Dataset& ds, const model::ModelConfig& c, bool check_labels) {
  if (ds.empty()) fail(ErrorKind::Format, "manifest has no samples");
  const auto& s = ds.front();
  if (s.alpha.height != c.height || s.alpha.width != c.width || s.alpha.channels != c.alpha_channels ||
      s.beta.channels != c.beta_channels) {
    fail(ErrorKind::ShapeMismatch, "features are alpha " + shape_str(s.alpha.height, s.alpha.width, s.alpha.channels) +
                                       " / beta " + shape_str(s.beta.height, s.beta.width, s.beta.channels) +
                                       " but the checkpoint expects alpha " +
                                       shape_str(c.height, c.width, c.alpha_channels) + " / beta " +
                                       shape_str(c.height, c.width, c.beta_channels));
  }
  for (const auto& x : ds) {
    if (check_labels && x.label >= c.classes) {
      fail(ErrorKind::ShapeMismatch, "sample '" + x.id + "' has class index " + std::to_string(x.label) +
                                         " but the checkpoint has " + std::to_string(c.classes) + " classes");
    }
  }
}

// Groups file: header "class<TAB>group", then one line per model class index.
std::map<std::size_t, std::int64_t> load_groups(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  std::map<std::size_t, std::int64_t> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      if (line != "class\tgroup") fail(ErrorKind::Format, path.string() + ": expected header 'class<TAB>group'");
      header = true;
      continue;
    }
    std::istringstream fields(line);
    long long k = -1, g = -1;
    std::string rest;
    if (!(fields >> k >> g) || (fields >> rest) || k < 0 || g < 0) {
      fail(ErrorKind::Format, path.string() + " line " + std::to_string(line_no) + ": expected '<class>\\t<group>'");
    }
    if (!out.emplace(static_cast<std::size_t>(k), g).second) {
      fail(ErrorKind::Format, path.string() + " line " + std::to_string(line_no) + ": class " + std::to_string(k) +
                                  " listed twice");
    }
  }
  if (!header) fail(ErrorKind::Format, path.string() + ": missing header");
  return out;
}

void write_json_line(std::ostream& out, const Json& j) { out << j.dump() << "\n"; }

// --- subcommand option holders --------------------------------------------

struct TrainOptions {
  std::string manifest;
  std::string out;
  std::size_t d = 2048;
  std::size_t blocks = 4;
  train::TrainConfig config;
  bool no_augment = false;
  std::string metrics;
  std::string split_dir;
  bool json = false;
};

struct EvalOptions {
  std::string manifest;
  std::string checkpoint;
  std::string groups;
  bool json = false;
};

struct SynthOptions {
  data::SynthConfig config;
  std::string out;
  double split = 0.3;
};

struct SketchOptions {
  std::size_t n = 64;
  std::size_t d = 32;
  std::size_t trials = 10000;
  std::uint64_t seed = 0;
};

int run_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  train::TrainConfig config = o.config;
  config.augment = !o.no_augment;
  print_config(err, "train",
               {{"manifest", o.manifest},
                {"out", o.out},
                {"metrics", o.metrics.empty() ? "-" : o.metrics},
                {"split_dir", o.split_dir.empty() ? "-" : o.split_dir},
                {"d", std::to_string(o.d)},
                {"blocks", std::to_string(o.blocks)},
                {"epochs", std::to_string(config.epochs)},
                {"batch", std::to_string(config.batch_size)},
                {"lr", num(config.lr0)},
                {"lr_drop_epoch", std::to_string(config.lr_drop_epoch)},
                {"lr_factor", num(config.lr_factor)},
                {"wd", num(config.weight_decay)},
                {"split", num(config.train_fraction)},
                {"seed", std::to_string(config.seed)},
                {"augment", config.augment ? "on" : "off"}});
  config.validate();
  const data::Manifest manifest = data::load_manifest(o.manifest);
  const data::Dataset all = data::load_dataset(manifest);
  const train::Split split = train::stratified_split(manifest, config.train_fraction, config.seed);
  const data::Dataset train_set = train::subset(all, split.train);
  const data::Dataset test_set = train::subset(all, split.test);

  if (!o.split_dir.empty()) {
    const std::filesystem::path dir(o.split_dir);
    std::filesystem::create_directories(dir);
    for (const auto& [name, idx] : {std::pair{"train.tsv", &split.train}, std::pair{"test.tsv", &split.test}}) {
      data::Manifest part;
      part.label_values = manifest.label_values;
      for (auto i : *idx) part.records.push_back(manifest.records[i]);
      detail::write_text_atomic(dir / name, data::format_manifest(part, dir));
    }
  }

  model::ModelConfig mc;
  const auto& first = all.front();
  mc.height = first.alpha.height;
  mc.width = first.alpha.width;
  mc.alpha_channels = first.alpha.channels;
  mc.beta_channels = first.beta.channels;
  mc.sketch_dim = o.d;
  mc.residual_blocks = o.blocks;
  mc.classes = manifest.class_count();
  err << "# model: grid " << mc.height << "x" << mc.width << ", channels " << mc.alpha_channels << "/"
      << mc.beta_channels << ", " << mc.classes << " classes, " << split.train.size() << " train / "
      << split.test.size() << " test samples\n";

  const auto result = train::train_loop(train_set, test_set, mc, config, [&](const train::Metrics& m) {
    if (o.json) {
      out << train::format_metrics_json_line(m) << "\n";
    } else {
      out << "epoch " << m.epoch << "  loss " << num(m.train_loss) << "  top1 " << num(m.top1);
      if (m.group_accuracy) out << "  group " << num(*m.group_accuracy);
      out << "\n";
    }
    out.flush();
  });
  model::save_checkpoint(result.params, o.out);
  if (!o.metrics.empty()) detail::write_text_atomic(o.metrics, train::format_metrics_table(result.history));
  const double final_top1 = result.history.empty() ? std::nan("") : result.history.back().top1;
  if (o.json) {
    Json j;
    j["final_top1"] = result.history.empty() ? Json(nullptr) : Json(final_top1);
    j["epochs"] = result.history.size();
    j["checkpoint"] = o.out;
    write_json_line(out, j);
  } else {
    out << "final top1 " << num(final_top1) << "\n";
  }
  return kOk;
}

int run_eval(const EvalOptions& o, bool disjoint, std::ostream& out, std::ostream& err) {
  print_config(err, disjoint ? "eval-disjoint" : "eval",
               {{"manifest", o.manifest}, {"checkpoint", o.checkpoint}, {"groups", o.groups.empty() ? "-" : o.groups},
                {"json", o.json ? "on" : "off"}});
  const model::ModelParams params = model::load_checkpoint(o.checkpoint);
  const data::Manifest manifest = data::load_manifest(o.manifest);
  const data::Dataset ds = data::load_dataset(manifest);

  if (!disjoint) {
    require_compatible(ds, params.config, true);
    const train::Top1 t = train::evaluate_top1(params, ds);
    if (o.json) {
      Json j;
      j["samples"] = ds.size();
      j["top1"] = t.accuracy;
      Json per = Json::array();
      for (double v : t.per_class) per.push_back(std::isnan(v) ? Json(nullptr) : Json(v));
      j["per_class"] = per;
      write_json_line(out, j);
    } else {
      out << "samples\t" << ds.size() << "\n";
      out << "top1\t" << num(t.accuracy) << "\n";
      out << "class\taccuracy\n";
      for (std::size_t k = 0; k < t.per_class.size(); ++k) out << k << "\t" << num(t.per_class[k]) << "\n";
    }
    return kOk;
  }

  // Disjoint samples carry unseen labels; only their groups are scored.
  require_compatible(ds, params.config, false);
  const auto groups = load_groups(o.groups);
  for (const auto& s : ds) {
    if (s.group < 0) fail(ErrorKind::Format, "sample '" + s.id + "' has no group_id; eval-disjoint needs one per sample");
  }
  const train::GroupAccuracy g = train::evaluate_group(params, ds, groups);
  if (g.unmapped_predictions > 0) {
    err << "# warning: " << g.unmapped_predictions << " prediction(s) fell on classes missing from the groups file\n";
  }
  if (o.json) {
    Json j;
    j["samples"] = ds.size();
    j["group_accuracy"] = g.overall;
    Json per = Json::array();
    for (const auto& [group, acc] : g.per_group) {
      Json row;
      row["group"] = group;
      row["samples"] = g.per_group_count.at(group);
      row["accuracy"] = acc;
      per.push_back(row);
    }
    j["per_group"] = per;
    j["unmapped_predictions"] = g.unmapped_predictions;
    write_json_line(out, j);
  } else {
    out << "group\tsamples\taccuracy\n";
    for (const auto& [group, acc] : g.per_group) out << group << "\t" << g.per_group_count.at(group) << "\t" << num(acc) << "\n";
    out << "overall\t" << ds.size() << "\t" << num(g.overall) << "\n";
  }
  return kOk;
}

int run_gen_synth(const SynthOptions& o, std::ostream& out, std::ostream& err) {
  const auto& c = o.config;
  print_config(err, "gen-synth",
               {{"out", o.out},
                {"classes", std::to_string(c.classes)},
                {"per_class", std::to_string(c.samples_per_class)},
                {"grid", shape_str(c.height, c.width, c.channels)},
                {"noise", num(c.noise)},
                {"max_shift", std::to_string(c.max_shift)},
                {"styles", std::to_string(c.styles_per_group)},
                {"seed", std::to_string(c.seed)},
                {"split", num(o.split)}});
  const data::Manifest manifest = data::generate_synthetic(c, o.out);
  const data::Dataset all = data::load_dataset(manifest);
  const train::Split split = train::stratified_split(manifest, o.split, c.seed);
  const double floor =
      train::nearest_centroid_accuracy(train::subset(all, split.train), train::subset(all, split.test),
                                       manifest.class_count());
  const std::string reference = "nearest_centroid_top1\t" + std::to_string(floor) + "\nsplit\t" + num(o.split) +
                                "\nseed\t" + std::to_string(c.seed) + "\n";
  detail::write_text_atomic(std::filesystem::path(o.out) / "reference.tsv", reference);
  out << "samples\t" << manifest.records.size() << "\n";
  out << "manifest\t" << (std::filesystem::path(o.out) / "manifest.tsv").string() << "\n";
  out << "nearest_centroid_top1\t" << num(floor) << "\n";
  return kOk;
}

int run_check_sketch(const SketchOptions& o, std::ostream& out, std::ostream& err) {
  print_config(err, "check-sketch",
               {{"n", std::to_string(o.n)}, {"d", std::to_string(o.d)}, {"trials", std::to_string(o.trials)},
                {"seed", std::to_string(o.seed)}});
  const auto eq = checks::check_sketch_equivalence(o.n, o.d, o.trials, o.seed);
  const auto ub = checks::check_unbiasedness(o.n, o.d, o.trials, o.seed);
  out << "tensor_sketch_vs_oracle\ttrials " << eq.trials << "\tmax_deviation " << num(eq.max_deviation) << "\t"
      << (eq.passed ? "PASS" : "FAIL") << "\n";
  out << "count_sketch_unbiasedness\ttrials " << ub.trials << "\texact " << num(ub.exact) << "\tmean " << num(ub.mean);
  if (ub.asserted) {
    out << "\tstandard_error " << num(ub.standard_error) << "\tbound " << num(3.0 * ub.standard_error) << "\t"
        << (ub.passed ? "PASS" : "FAIL") << "\n";
  } else {
    out << "\t(single trial: estimate only)\n";
  }
  bool ok = true;
  if (!eq.passed) {
    err << "check-sketch: oracle equivalence failed, worst case seed " << eq.worst_seed << "\n";
    ok = false;
  }
  if (!ub.passed) {
    err << "check-sketch: unbiasedness failed for seed " << o.seed << "\n";
    ok = false;
  }
  return ok ? kOk : kCheckFailed;
}

int run_check_grad(std::uint64_t seed, std::ostream& out, std::ostream& err) {
  print_config(err, "check-grad", {{"seed", std::to_string(seed)}});
  bool ok = true;
  for (const auto& c : checks::run_gradient_suite(seed)) {
    out << c.name << "\tinstances " << c.instances << "\tmax_rel_error " << num(c.max_relative_error) << "\ttolerance "
        << num(c.tolerance) << "\t" << (c.passed ? "PASS" : "FAIL") << "\n";
    if (!c.passed) {
      err << "check-grad: " << c.name << " failed, worst case seed " << c.worst_seed << "\n";
      ok = false;
    }
  }
  return ok ? kOk : kCheckFailed;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CoinNet head: compact bilinear pooling, residual fusion and soft attention over CNN feature maps",
               "coinnet"};
  app.footer(kExitCodeHelp);
  app.set_help_all_flag("--help-all", "Print help for every subcommand");
  app.require_subcommand(1);

  TrainOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "Train the head on a manifest with SGD");
  train_cmd->add_option("--manifest", train_opts.manifest, "Dataset manifest (TSV)")->required();
  train_cmd->add_option("--out", train_opts.out, "Checkpoint path to write")->required();
  train_cmd->add_option("--d", train_opts.d, "Sketch dimension")->capture_default_str();
  train_cmd->add_option("--blocks", train_opts.blocks, "Residual blocks in the group")->capture_default_str();
  train_cmd->add_option("--epochs", train_opts.config.epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--batch", train_opts.config.batch_size, "Mini-batch size")->capture_default_str();
  train_cmd->add_option("--lr", train_opts.config.lr0, "Initial learning rate")->capture_default_str();
  train_cmd->add_option("--lr-drop-epoch", train_opts.config.lr_drop_epoch, "Epoch at which the learning rate drops")
      ->capture_default_str();
  train_cmd->add_option("--lr-factor", train_opts.config.lr_factor, "Learning-rate multiplier at the drop")
      ->capture_default_str();
  train_cmd->add_option("--wd", train_opts.config.weight_decay, "Weight decay (biases excluded)")->capture_default_str();
  train_cmd->add_option("--split", train_opts.config.train_fraction, "Per-class training fraction")
      ->capture_default_str();
  train_cmd->add_option("--seed", train_opts.config.seed, "Seed for init, split, shuffling and augmentation")
      ->capture_default_str();
  train_cmd->add_flag("--no-augment", train_opts.no_augment, "Disable grid rotation/flip augmentation");
  train_cmd->add_option("--metrics", train_opts.metrics, "Write the per-epoch metrics table here");
  train_cmd->add_option("--split-dir", train_opts.split_dir, "Write train.tsv and test.tsv manifests here");
  train_cmd->add_flag("--json", train_opts.json, "Line-delimited JSON output");

  EvalOptions eval_opts;
  auto* eval_cmd = app.add_subcommand("eval", "Top-1 accuracy of a checkpoint on a manifest");
  eval_cmd->add_option("--manifest", eval_opts.manifest, "Dataset manifest (TSV)")->required();
  eval_cmd->add_option("--checkpoint", eval_opts.checkpoint, "Checkpoint to evaluate")->required();
  eval_cmd->add_flag("--json", eval_opts.json, "Line-delimited JSON output");

  EvalOptions disjoint_opts;
  auto* disjoint_cmd =
      app.add_subcommand("eval-disjoint", "Group accuracy on samples whose classes are scored by group");
  disjoint_cmd->add_option("--manifest", disjoint_opts.manifest, "Manifest; every row needs a group_id")->required();
  disjoint_cmd->add_option("--checkpoint", disjoint_opts.checkpoint, "Checkpoint to evaluate")->required();
  disjoint_cmd->add_option("--groups", disjoint_opts.groups, "TSV mapping model class index to group")->required();
  disjoint_cmd->add_flag("--json", disjoint_opts.json, "Line-delimited JSON output");

  SynthOptions synth_opts;
  auto* synth_cmd = app.add_subcommand("gen-synth", "Generate a synthetic motif-feature dataset");
  synth_cmd->add_option("--out", synth_opts.out, "Output directory")->required();
  synth_cmd->add_option("--classes", synth_opts.config.classes, "Class count")->capture_default_str();
  synth_cmd->add_option("--per-class", synth_opts.config.samples_per_class, "Samples per class")->capture_default_str();
  synth_cmd->add_option("--height", synth_opts.config.height, "Grid height")->capture_default_str();
  synth_cmd->add_option("--width", synth_opts.config.width, "Grid width")->capture_default_str();
  synth_cmd->add_option("--channels", synth_opts.config.channels, "Channels per map")->capture_default_str();
  synth_cmd->add_option("--noise", synth_opts.config.noise, "Gaussian noise standard deviation")->capture_default_str();
  synth_cmd->add_option("--max-shift", synth_opts.config.max_shift, "Largest circular shift per axis")
      ->capture_default_str();
  synth_cmd->add_option("--styles", synth_opts.config.styles_per_group, "Classes per group (1 = no groups)")
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth_opts.config.seed, "Generator seed")->capture_default_str();
  synth_cmd->add_option("--split", synth_opts.split, "Training fraction for the nearest-centroid reference")
      ->capture_default_str();

  SketchOptions sketch_opts;
  auto* sketch_cmd = app.add_subcommand("check-sketch", "Tensor Sketch oracle and unbiasedness self-checks");
  sketch_cmd->add_option("--n", sketch_opts.n, "Input vector length")->capture_default_str();
  sketch_cmd->add_option("--d", sketch_opts.d, "Sketch dimension")->capture_default_str();
  sketch_cmd->add_option("--trials", sketch_opts.trials, "Random pairs / projections")->capture_default_str();
  sketch_cmd->add_option("--seed", sketch_opts.seed, "Seed")->capture_default_str();

  std::uint64_t grad_seed = 0;
  auto* grad_cmd = app.add_subcommand("check-grad", "Finite-difference checks of every backward pass");
  grad_cmd->add_option("--seed", grad_seed, "Seed")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "coinnet: " << e.what() << "\n";
    err << "Run with --help for usage.\n";
    return kUsage;
  }

  try {
    if (*train_cmd) return run_train(train_opts, out, err);
    if (*eval_cmd) return run_eval(eval_opts, false, out, err);
    if (*disjoint_cmd) return run_eval(disjoint_opts, true, out, err);
    if (*synth_cmd) return run_gen_synth(synth_opts, out, err);
    if (*sketch_cmd) {
      if (sketch_opts.trials == 0) throw Error(ErrorKind::InvalidArgument, "--trials must be positive");
      return run_check_sketch(sketch_opts, out, err);
    }
    if (*grad_cmd) return run_check_grad(grad_seed, out, err);
  } catch (const Error& e) {
    err << "coinnet: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "coinnet: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    err << "coinnet: internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}

}  // namespace coinnet::cli
