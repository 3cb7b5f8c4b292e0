// scp: train, prune, evaluate and compare soft-channel-pruned models.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scp/checkpoint.hpp"
#include "scp/config.hpp"
#include "scp/pruner.hpp"
#include "scp/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw UsageError(what + " not found: " + p.string());
}

std::map<std::string, std::string> parse_overrides(const std::vector<std::string>& sets) {
  std::map<std::string, std::string> out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
    out[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return out;
}

scp::ExperimentConfig load_config(const fs::path& path, const std::map<std::string, std::string>& overrides) {
  require_exists(path, "config");
  auto cfg = scp::ExperimentConfig::load(path, overrides);
  cfg.check_paths();
  return cfg;
}

void print_epoch(const scp::EpochMetrics& m) {
  std::printf("epoch %3zu  lr %.4g  loss %.4f  sparsity %.4f  train_acc %.4f  test_acc %.4f  soft_prune %.4f\n",
              m.epoch, m.learning_rate, m.classification_loss, m.sparsity_loss, m.train_accuracy, m.test_accuracy,
              m.soft_prune_ratio);
  std::fflush(stdout);
}

int cmd_train(const fs::path& config_path, const std::vector<std::string>& sets, bool quiet) {
  const auto cfg = load_config(config_path, parse_overrides(sets));
  const auto data = scp::load_datasets(cfg.dataset);
  scp::TrainOptions opts;
  if (!quiet) opts.on_epoch = print_epoch;
  const auto result = scp::train(cfg, data, opts);
  std::printf("checkpoint written to %s\n", (cfg.output_dir / "checkpoint").string().c_str());
  (void)result;
  return 0;
}

int cmd_prune(const fs::path& ckpt_dir, const fs::path& out_dir) {
  require_exists(ckpt_dir / "manifest.json", "checkpoint");
  auto ck = scp::load_checkpoint(ckpt_dir);
  const auto masks = scp::extract_masks(ck.model);
  for (const auto& w : masks.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  scp::Checkpoint pruned{scp::surgery(ck.model, masks.masks), ck.meta};
  scp::save_checkpoint(pruned, out_dir);
  std::fputs(scp::format_report(scp::make_report(ck.model, pruned.model, ck.model.input_shape)).c_str(), stdout);
  return 0;
}

// Picks the normalization stored with the checkpoint's training config,
// falling back to the config defaults when the channel count differs.
scp::Normalization checkpoint_normalization(const scp::Checkpoint& ck) {
  scp::DatasetSpec spec;
  if (!ck.meta.config_text.empty()) {
    spec = scp::ExperimentConfig::from_doc(scp::KeyValueDoc::parse(ck.meta.config_text, "checkpoint config")).dataset;
  }
  const std::size_t channels = ck.model.input_shape.at(0);
  if (spec.mean.size() != channels) {
    spec.mean.assign(channels, 0.5f);
    spec.std.assign(channels, 0.25f);
  }
  return scp::normalization_of(spec);
}

int cmd_eval(const fs::path& ckpt_dir, const fs::path& data_path, const std::string& labels_arg) {
  require_exists(ckpt_dir / "manifest.json", "checkpoint");
  require_exists(data_path, "data");
  const auto ck = scp::load_checkpoint(ckpt_dir);
  const auto norm = checkpoint_normalization(ck);
  scp::Dataset data;
  if (data_path.extension() == ".bin") {
    data = scp::load_cifar_binary(data_path, norm);
  } else {
    fs::path labels = labels_arg;
    if (labels.empty()) {
      std::string name = data_path.filename().string();
      const auto pos = name.find("images-idx3");
      if (pos == std::string::npos) throw UsageError("cannot infer the label file for " + data_path.string() + "; pass --labels");
      name.replace(pos, 11, "labels-idx1");
      labels = data_path.parent_path() / name;
    }
    require_exists(labels, "labels");
    data = scp::load_idx(data_path, labels, norm);
  }
  std::printf("accuracy = %.6f\nsamples = %zu\n", scp::evaluate(ck.model, data), data.size());
  return 0;
}

int cmd_report(const fs::path& before_dir, const fs::path& after_dir) {
  require_exists(before_dir / "manifest.json", "checkpoint");
  require_exists(after_dir / "manifest.json", "checkpoint");
  const auto before = scp::load_checkpoint(before_dir);
  const auto after = scp::load_checkpoint(after_dir);
  std::fputs(scp::format_report(scp::make_report(before.model, after.model, before.model.input_shape)).c_str(), stdout);
  return 0;
}

int cmd_sweep(const fs::path& config_path, const std::vector<std::string>& sets, const std::string& lambdas,
              const std::string& s_values) {
  if (lambdas.empty() == s_values.empty()) throw UsageError("sweep needs exactly one of --lambda or --s");
  const bool over_lambda = !lambdas.empty();
  const auto values = scp::parse_number_list(over_lambda ? lambdas : s_values);
  if (values.empty()) throw UsageError("sweep: empty value list");
  auto overrides = parse_overrides(sets);
  const auto base = load_config(config_path, overrides);
  const auto data = scp::load_datasets(base.dataset);
  const char* key = over_lambda ? "lambda" : "s";

  std::string table = std::string(key) + ",test_accuracy,channels_reduction_pct,params_reduction_pct,flops_reduction_pct\n";
  std::printf("%-10s %10s %12s %12s %12s\n", key, "acc(%)", "channels-%", "params-%", "flops-%");
  for (double v : values) {
    auto cfg = base;
    (over_lambda ? cfg.sparsity.lambda : cfg.sparsity.s) = v;
    cfg.validate();
    char tag[64];
    std::snprintf(tag, sizeof tag, "%s_%g", key, v);
    cfg.output_dir = base.output_dir / tag;
    const auto result = scp::train(cfg, data);
    const auto masks = scp::extract_masks(result.model);
    const auto report = scp::make_report(result.model, scp::surgery(result.model, masks.masks), result.model.input_shape);
    const double acc = 100.0 * result.metrics.back().test_accuracy;
    std::printf("%-10g %10.2f %12.2f %12.2f %12.2f\n", v, acc, report.channel_reduction_pct(),
                report.param_reduction_pct(), report.flops_reduction_pct());
    std::fflush(stdout);
    char row[256];
    std::snprintf(row, sizeof row, "%.9g,%.4f,%.4f,%.4f,%.4f\n", v, acc, report.channel_reduction_pct(),
                  report.param_reduction_pct(), report.flops_reduction_pct());
    table += row;
  }
  fs::create_directories(base.output_dir);
  std::ofstream(base.output_dir / "sweep.csv") << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Soft channel pruning: train, prune, eval, report, sweep"};
  app.require_subcommand(1);

  fs::path config_path, ckpt, out_dir, data_path, before, after;
  std::string labels, lambdas, s_values;
  std::vector<std::string> sets;
  bool quiet = false;

  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("config", config_path, "config file")->required();
  train->add_option("--set", sets, "override a config entry, key=value");
  train->add_flag("--quiet", quiet, "no per-epoch output");

  auto* prune = app.add_subcommand("prune", "remove masked channels from a checkpoint");
  prune->add_option("checkpoint", ckpt, "checkpoint directory")->required();
  prune->add_option("--out", out_dir, "output checkpoint directory")->required();

  auto* eval = app.add_subcommand("eval", "top-1 accuracy of a checkpoint");
  eval->add_option("checkpoint", ckpt, "checkpoint directory")->required();
  eval->add_option("--data", data_path, "IDX image file or CIFAR-10 .bin file")->required();
  eval->add_option("--labels", labels, "IDX label file (inferred from --data when omitted)");

  auto* report = app.add_subcommand("report", "channel, parameter and FLOP reductions");
  report->add_option("before", before, "reference checkpoint")->required();
  report->add_option("after", after, "pruned checkpoint")->required();

  auto* sweep = app.add_subcommand("sweep", "train once per lambda or s value");
  sweep->add_option("config", config_path, "config file")->required();
  sweep->add_option("--lambda", lambdas, "comma-separated lambda values");
  sweep->add_option("--s", s_values, "comma-separated s values");
  sweep->add_option("--set", sets, "override a config entry, key=value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return kUsageError;
  }

  try {
    if (*train) return cmd_train(config_path, sets, quiet);
    if (*prune) return cmd_prune(ckpt, out_dir);
    if (*eval) return cmd_eval(ckpt, data_path, labels);
    if (*report) return cmd_report(before, after);
    if (*sweep) return cmd_sweep(config_path, sets, lambdas, s_values);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return kUsageError;
  } catch (const scp::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
