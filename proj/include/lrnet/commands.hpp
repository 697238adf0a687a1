#pragma once

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lrnet/config.hpp"
#include "lrnet/data.hpp"
#include "lrnet/eval.hpp"
#include "lrnet/network.hpp"

namespace lrnet {

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Validation is the last data.val_size examples of the official train split;
/// train_subset and test_subset keep leading examples (0 keeps all).
Splits load_splits(const AppConfig& cfg, const std::filesystem::path& root);

struct CommandOptions {
  std::filesystem::path out_dir = ".";
  std::filesystem::path data_root;
  std::optional<std::filesystem::path> init_from;
  std::optional<std::filesystem::path> checkpoint;
  std::ostream* log = nullptr;  // progress messages; null is silent
};

/// Stochastic network for `cfg`: converted from the pretrained checkpoint
/// when given, otherwise from a fresh normal tensor per layer.
std::unique_ptr<Network> build_stochastic_network(const AppConfig& cfg,
                                                  const std::optional<std::filesystem::path>& init_from);

/// Writes pretrained.ckpt and train_log.csv; returns the checkpoint path.
std::filesystem::path cmd_pretrain(const AppConfig& cfg, const CommandOptions& opt);

/// Writes model.ckpt, train_log.csv (epoch,step,loss,lr,entropy_L<i>...) and entropy.csv.
std::filesystem::path cmd_train(const AppConfig& cfg, const CommandOptions& opt);

/// Needs opt.checkpoint. Writes eval.csv and prints a summary line.
SampledEvaluation cmd_eval(const AppConfig& cfg, const CommandOptions& opt);

/// which: "clt" (clt.csv), "entropy" (entropy.csv, entropy_no_decay.csv) or
/// "gumbel" (gumbel_compare.csv).
void cmd_diagnose(const std::string& which, const AppConfig& cfg, const CommandOptions& opt);

/// Needs opt.checkpoint. Writes kernel_NN.pgm files.
std::vector<std::filesystem::path> cmd_export_kernels(const AppConfig& cfg, const CommandOptions& opt);

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDivergence = 4;

int exit_code_for(const std::exception& e);

}  // namespace lrnet
