// lrnet: pretrain, train, evaluate and inspect networks with discrete weights.
//
//   lrnet pretrain --config cfg.json --out runs/pre
//   lrnet train --config cfg.json --init-from runs/pre/pretrained.ckpt --out runs/lr
//   lrnet eval runs/lr/model.ckpt --k 10 --out runs/lr
//   lrnet diagnose clt|entropy|gumbel [checkpoint] --config cfg.json --out runs/diag
//   lrnet export-kernels runs/lr/model.ckpt --out runs/kernels
//
// Settings come from the JSON config; flags override the matching fields.
// Without --config, eval/diagnose/export-kernels reuse the config stored in
// the checkpoint, and otherwise the built-in desk-scale defaults apply.
// Data is read from $LRNET_DATA_DIR (default ./data).

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lrnet/checkpoint.hpp"
#include "lrnet/commands.hpp"
#include "lrnet/config.hpp"
#include "lrnet/errors.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string init_from;
  std::string out = ".";
  std::string mode;
  std::optional<std::size_t> k;
  std::optional<std::size_t> epochs;
  std::string checkpoint;
  std::string which;
};

lrnet::AppConfig resolve_config(const Flags& f, const std::string& command) {
  lrnet::AppConfig cfg;
  if (!f.config.empty()) {
    cfg = lrnet::load_app_config(f.config);
  } else if (!f.checkpoint.empty()) {
    const std::string meta = lrnet::read_checkpoint(f.checkpoint).meta;
    if (!meta.empty()) cfg = lrnet::parse_app_config(meta);
  }
  if (f.seed) cfg.train.seed = *f.seed;
  if (!f.mode.empty()) {
    try {
      cfg.train.mode = lrnet::parse_weight_mode(f.mode);
    } catch (const lrnet::ConfigError& e) {
      throw lrnet::ConfigError(std::string("--mode: ") + e.what());
    }
    cfg.network.mode = cfg.train.mode;
  }
  if (f.k) cfg.eval.k = *f.k;
  if (f.epochs) {
    if (command == "pretrain") cfg.pretrain.epochs = *f.epochs;
    else if (command == "diagnose" && f.which == "gumbel") cfg.diagnostics.gumbel_epochs = *f.epochs;
    else cfg.train.epochs = *f.epochs;
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and evaluate networks with binary or ternary weights"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&f](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "Run seed (overrides train.seed)");
    sub->add_option("--out", f.out, "Output directory");
    sub->add_option("--mode", f.mode, "binary or ternary (overrides train.mode)");
    sub->add_option("--epochs", f.epochs, "Epoch count override");
  };

  auto* pretrain = app.add_subcommand("pretrain", "Train the full-precision reference network");
  common(pretrain);
  auto* train = app.add_subcommand("train", "Train a network with discrete weight distributions");
  common(train);
  train->add_option("--init-from", f.init_from, "Pretrained checkpoint to initialize from")->check(CLI::ExistingFile);
  auto* eval = app.add_subcommand("eval", "Sampled-weight evaluation");
  common(eval);
  eval->add_option("checkpoint", f.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--k", f.k, "Number of weight samples (overrides eval.k)");
  auto* diagnose = app.add_subcommand("diagnose", "CLT fidelity, entropy traces or the Gumbel-softmax comparison");
  common(diagnose);
  diagnose->add_option("which", f.which, "clt, entropy or gumbel")->required();
  diagnose->add_option("checkpoint", f.checkpoint, "Checkpoint to inspect (clt)")->check(CLI::ExistingFile);
  diagnose->add_option("--init-from", f.init_from, "Pretrained checkpoint to initialize from")
      ->check(CLI::ExistingFile);
  auto* kernels = app.add_subcommand("export-kernels", "Write first-layer kernels as PGM images");
  common(kernels);
  kernels->add_option("checkpoint", f.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : lrnet::kExitConfig;
  }

  try {
    const std::string command = app.get_subcommands().front()->get_name();
    const lrnet::AppConfig cfg = resolve_config(f, command);
    lrnet::CommandOptions opt;
    opt.out_dir = f.out;
    opt.data_root = lrnet::data_root();
    if (!f.init_from.empty()) opt.init_from = f.init_from;
    if (!f.checkpoint.empty()) opt.checkpoint = f.checkpoint;
    opt.log = &std::cout;

    if (command == "pretrain") lrnet::cmd_pretrain(cfg, opt);
    else if (command == "train") lrnet::cmd_train(cfg, opt);
    else if (command == "eval") lrnet::cmd_eval(cfg, opt);
    else if (command == "diagnose") lrnet::cmd_diagnose(f.which, cfg, opt);
    else lrnet::cmd_export_kernels(cfg, opt);
  } catch (const lrnet::DivergenceError& e) {
    std::cerr << "lrnet: divergence at layer " << e.layer_index() << ": " << e.what() << '\n';
    return lrnet::kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "lrnet: " << e.what() << '\n';
    return lrnet::exit_code_for(e);
  }
  return lrnet::kExitOk;
}
