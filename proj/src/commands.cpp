#include "lrnet/commands.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "lrnet/checkpoint.hpp"
#include "lrnet/csv.hpp"
#include "lrnet/diagnostics.hpp"
#include "lrnet/errors.hpp"
#include "lrnet/training.hpp"

namespace lrnet {

namespace fs = std::filesystem;

namespace {

void say(const CommandOptions& opt, const std::string& msg) {
  if (opt.log) *opt.log << msg << '\n' << std::flush;
}

fs::path prepare_out(const CommandOptions& opt) {
  std::error_code ec;
  fs::create_directories(opt.out_dir, ec);
  if (ec) throw Error("cannot create output directory " + opt.out_dir.string() + ": " + ec.message());
  return opt.out_dir;
}

fs::path root_of(const CommandOptions& opt) { return opt.data_root.empty() ? data_root() : opt.data_root; }

const fs::path& need_checkpoint(const CommandOptions& opt) {
  if (!opt.checkpoint) throw ConfigError("this command needs a checkpoint");
  return *opt.checkpoint;
}

// One row per log_interval steps, plus the mean entropy of every stochastic layer.
class TrainLog {
 public:
  TrainLog(const fs::path& path, Trainer& trainer) : trainer_(&trainer) {
    std::vector<std::string> header = {"epoch", "step", "loss", "lr"};
    for (const auto& ref : trainer.network().stochastic_layers()) {
      header.push_back("entropy_L" + std::to_string(ref.layer_index));
    }
    csv_ = std::make_unique<CsvWriter>(path, header);
    trainer.on_step = [this](const StepRecord& r) { write(r); };
  }

 private:
  void write(const StepRecord& r) {
    if (r.step % trainer_->config().log_interval != 0) return;
    std::vector<std::string> row = {std::to_string(r.epoch), std::to_string(r.step), format_real(r.loss.total()),
                                    format_real(r.lr)};
    for (Real h : layer_entropies(trainer_->network())) row.push_back(format_real(h));
    csv_->row(row);
  }

  Trainer* trainer_;
  std::unique_ptr<CsvWriter> csv_;
};

void attach_augmentation(const AppConfig& cfg, Trainer& trainer) {
  if (cfg.data.dataset == "cifar10") trainer.augment = augment_cifar;
}

void log_epochs(const CommandOptions& opt, Trainer& trainer) {
  trainer.on_epoch = [&opt, previous = trainer.on_epoch](std::size_t epoch, Network& net) {
    if (previous) previous(epoch, net);
    if (epoch > 0) say(opt, "epoch " + std::to_string(epoch) + " done");
  };
}

Dataset take(const Dataset& d, std::size_t begin, std::size_t count, const std::string& name) {
  return d.slice(begin, count, name);
}

std::uint64_t eval_seed(const AppConfig& cfg) { return mix_seed(cfg.train.seed, 3); }
std::uint64_t diagnose_seed(const AppConfig& cfg) { return mix_seed(cfg.train.seed, 4); }

std::string fmt_pct(Real fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", static_cast<double>(fraction) * 100);
  return buf;
}

}  // namespace

Splits load_splits(const AppConfig& cfg, const fs::path& root) {
  Dataset train_full, test_full;
  if (cfg.data.dataset == "mnist") {
    const MnistFiles f = locate_mnist(root);
    train_full = load_mnist_idx(f.train_images, f.train_labels);
    test_full = load_mnist_idx(f.test_images, f.test_labels);
  } else {
    const fs::path dir = fs::exists(root / "cifar-10-batches-bin") ? root / "cifar-10-batches-bin" : root;
    std::vector<fs::path> batches;
    for (int i = 1; i <= 5; ++i) batches.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    const std::vector<fs::path> test = {dir / "test_batch.bin"};
    train_full = load_cifar10(batches);
    test_full = load_cifar10(test);
  }
  const Shape expected = {cfg.network.input[0], cfg.network.input[1], cfg.network.input[2]};
  if (train_full.example_shape() != expected) {
    throw ConfigError("network.input " + shape_string(expected) + " does not match the data " +
                      shape_string(train_full.example_shape()));
  }
  const std::size_t n = train_full.size();
  if (cfg.data.val_size >= n) {
    throw ConfigError("data.val_size " + std::to_string(cfg.data.val_size) + " leaves no training examples");
  }
  const std::size_t pool = n - cfg.data.val_size;
  Splits s;
  s.val = take(train_full, pool, cfg.data.val_size, "val");
  const std::size_t n_train = cfg.data.train_subset == 0 ? pool : cfg.data.train_subset;
  if (n_train > pool) throw ConfigError("data.train_subset exceeds the " + std::to_string(pool) + " available examples");
  s.train = take(train_full, 0, n_train, "train");
  const std::size_t n_test = cfg.data.test_subset == 0 ? test_full.size() : cfg.data.test_subset;
  if (n_test > test_full.size()) throw ConfigError("data.test_subset exceeds the test split");
  s.test = take(test_full, 0, n_test, "test");
  return s;
}

std::unique_ptr<Network> build_stochastic_network(const AppConfig& cfg, const std::optional<fs::path>& init_from) {
  const NetworkConfig& ncfg = cfg.network;
  if (ncfg.scheme == WeightScheme::FullPrecision) {
    throw ConfigError("network.scheme must be 'lr' or 'gumbel' for stochastic training");
  }
  Rng init_rng(init_seed_for(cfg.train.seed));
  auto net = std::make_unique<Network>(ncfg, init_rng);
  if (init_from) {
    const Checkpoint ck = read_checkpoint(*init_from);
    auto pretrained = network_from_checkpoint(ck);
    initialize_from_pretrained(*net, *pretrained, cfg.init.p_min, cfg.init.p_max);
  } else {
    const InitConfig init{cfg.init.p_min, cfg.init.p_max, ncfg.mode};
    for (auto& ref : net->stochastic_layers()) {
      const Tensor continuous = sample_standard_normal(init_rng, ref.kernel->weight_shape());
      ref.kernel->set_dist(init_from_pretrained(normalize_pretrained(continuous), init));
    }
  }
  return net;
}

fs::path cmd_pretrain(const AppConfig& cfg, const CommandOptions& opt) {
  const fs::path out = prepare_out(opt);
  const Splits data = load_splits(cfg, root_of(opt));
  NetworkConfig ncfg = cfg.network;
  ncfg.scheme = WeightScheme::FullPrecision;
  Rng init_rng(init_seed_for(cfg.train.seed));
  Network net(ncfg, init_rng);

  TrainConfig tcfg = cfg.train;
  tcfg.epochs = cfg.pretrain.epochs;
  tcfg.lr = cfg.pretrain.lr;
  tcfg.batch_size = cfg.pretrain.batch_size;
  tcfg.lr_drops.clear();
  Trainer trainer(net, tcfg);
  attach_augmentation(cfg, trainer);
  TrainLog log(out / "train_log.csv", trainer);
  log_epochs(opt, trainer);
  trainer.fit(data.train);

  const fs::path ckpt = out / "pretrained.ckpt";
  trainer.save(ckpt, serialize_app_config(cfg));
  say(opt, "pretrained test accuracy " + fmt_pct(accuracy(net, data.test)) + ", checkpoint " + ckpt.string());
  return ckpt;
}

fs::path cmd_train(const AppConfig& cfg, const CommandOptions& opt) {
  const fs::path out = prepare_out(opt);
  const Splits data = load_splits(cfg, root_of(opt));
  auto net = build_stochastic_network(cfg, opt.init_from);

  Trainer trainer(*net, cfg.train);
  attach_augmentation(cfg, trainer);
  EntropyTrace trace;
  trace.attach(trainer);
  TrainLog log(out / "train_log.csv", trainer);
  log_epochs(opt, trainer);
  trainer.fit(data.train);
  trace.write_csv(out / "entropy.csv");

  const fs::path ckpt = out / "model.ckpt";
  trainer.save(ckpt, serialize_app_config(cfg));
  say(opt, "mean-network test accuracy " + fmt_pct(evaluate_mean_network(*net, data.test)) + ", checkpoint " +
               ckpt.string());
  return ckpt;
}

SampledEvaluation cmd_eval(const AppConfig& cfg, const CommandOptions& opt) {
  const fs::path out = prepare_out(opt);
  auto net = network_from_checkpoint(read_checkpoint(need_checkpoint(opt)));
  const Splits data = load_splits(cfg, root_of(opt));
  std::optional<Dataset> recal;
  if (cfg.eval.bn_recalibration > 0) {
    recal = data.train.slice(0, std::min(cfg.eval.bn_recalibration, data.train.size()), "recalibration");
  }
  SampledEvaluation ev =
      evaluate_sampled(*net, data.val, &data.test, eval_seed(cfg), cfg.eval.k, recal ? &*recal : nullptr);
  write_eval_csv(out / "eval.csv", ev);
  say(opt, "best of " + std::to_string(cfg.eval.k) + " samples: #" + std::to_string(ev.best) + " val " +
               fmt_pct(ev.best_val_accuracy) + " test " + fmt_pct(ev.best_test_accuracy) + " (test error " +
               fmt_pct(1 - ev.best_test_accuracy) + ")");
  return ev;
}

void cmd_diagnose(const std::string& which, const AppConfig& cfg, const CommandOptions& opt) {
  const fs::path out = prepare_out(opt);
  if (which == "clt") {
    std::unique_ptr<Network> net = opt.checkpoint ? network_from_checkpoint(read_checkpoint(*opt.checkpoint))
                                                  : build_stochastic_network(cfg, opt.init_from);
    const Splits data = load_splits(cfg, root_of(opt));
    const std::size_t idx = cfg.diagnostics.clt_example;
    if (idx >= data.test.size()) throw ConfigError("diagnostics.clt_example is outside the test split");
    const Tensor example = data.test.slice(idx, 1, "example").images.reshaped(data.test.example_shape());
    Rng rng(diagnose_seed(cfg));
    const CltReport r =
        clt_fidelity(*net, example, cfg.diagnostics.clt_layer, cfg.diagnostics.clt_neuron, cfg.diagnostics.clt_draws, rng);
    write_clt_csv(out / "clt.csv", r);
    say(opt, "layer " + std::to_string(r.layer) + " neuron " + std::to_string(r.neuron) + ": KS " +
                 format_real(static_cast<Real>(r.ks)) + (r.degenerate ? " (degenerate)" : ""));
  } else if (which == "entropy") {
    const Splits data = load_splits(cfg, root_of(opt));
    for (const bool decay : {true, false}) {
      auto net = build_stochastic_network(cfg, opt.init_from);
      TrainConfig tcfg = cfg.train;
      if (!decay) tcfg.probability_decay = 0;
      Trainer trainer(*net, tcfg);
      attach_augmentation(cfg, trainer);
      EntropyTrace trace;
      trace.attach(trainer);
      log_epochs(opt, trainer);
      trainer.fit(data.train);
      trace.write_csv(out / (decay ? "entropy.csv" : "entropy_no_decay.csv"));
      for (const auto& ref : net->stochastic_layers()) {
        say(opt, std::string(decay ? "with" : "without") + " decay, layer " + std::to_string(ref.layer_index) +
                     ": final entropy " + format_real(trace.final_entropy(ref.layer_index)));
      }
    }
  } else if (which == "gumbel") {
    const Splits data = load_splits(cfg, root_of(opt));
    AppConfig lr_cfg = cfg;
    lr_cfg.network.scheme = WeightScheme::LocalReparam;
    AppConfig gs_cfg = cfg;
    gs_cfg.network.scheme = WeightScheme::Gumbel;
    auto lr_net = build_stochastic_network(lr_cfg, opt.init_from);
    auto gs_net = build_stochastic_network(gs_cfg, opt.init_from);
    const auto rows = compare_gumbel(*lr_net, *gs_net, data.train, cfg.train, cfg.diagnostics.gumbel_epochs);
    write_gumbel_csv(out / "gumbel_compare.csv", rows);
    for (const auto& r : rows) {
      if (r.epoch == cfg.diagnostics.gumbel_epochs) {
        say(opt, r.method + ": final-epoch mean loss " + format_real(r.mean_epoch_loss));
      }
    }
  } else {
    throw ConfigError("unknown diagnostic '" + which + "' (expected clt, entropy or gumbel)");
  }
}

std::vector<fs::path> cmd_export_kernels(const AppConfig& cfg, const CommandOptions& opt) {
  auto net = network_from_checkpoint(read_checkpoint(need_checkpoint(opt)));
  auto paths = export_kernels(*net, opt.out_dir, cfg.diagnostics.kernels);
  say(opt, "wrote " + std::to_string(paths.size()) + " kernels to " + opt.out_dir.string());
  return paths;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&e)) return kExitData;
  if (dynamic_cast<const DivergenceError*>(&e)) return kExitDivergence;
  return kExitFailure;
}

}  // namespace lrnet
