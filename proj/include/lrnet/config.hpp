#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "lrnet/network.hpp"
#include "lrnet/training.hpp"

namespace lrnet {

inline constexpr int kConfigSchemaVersion = 1;

/// Full topology, including weight mode; used for checkpoint headers.
nlohmann::json network_to_json(const NetworkConfig& cfg);
NetworkConfig network_from_json(const nlohmann::json& j);

nlohmann::json train_to_json(const TrainConfig& cfg);
TrainConfig train_from_json(const nlohmann::json& j);

struct InitSection {
  Real p_min = Real(0.05);
  Real p_max = Real(0.95);

  friend bool operator==(const InitSection&, const InitSection&) = default;
};

struct PretrainSection {
  std::size_t epochs = 3;
  Real lr = Real(0.01);
  std::size_t batch_size = 64;

  friend bool operator==(const PretrainSection&, const PretrainSection&) = default;
};

struct DataSection {
  std::string dataset = "mnist";  // "mnist" or "cifar10"
  std::size_t train_subset = 0;   // 0 keeps the whole training pool
  std::size_t val_size = 5000;    // held out from the end of the official train split
  std::size_t test_subset = 0;

  friend bool operator==(const DataSection&, const DataSection&) = default;
};

struct EvalSection {
  std::size_t k = 10;
  // Leading training examples used to re-estimate batch-norm statistics for
  // each weight sample; 0 keeps the statistics gathered during training.
  std::size_t bn_recalibration = 0;

  friend bool operator==(const EvalSection&, const EvalSection&) = default;
};

struct DiagnosticsSection {
  std::size_t clt_draws = 10000;
  std::size_t clt_layer = 0;    // ordinal among stochastic layers
  std::size_t clt_neuron = 0;   // output unit; channel * pixels + pixel for convolutions
  std::size_t clt_example = 0;  // index into the test split
  std::size_t gumbel_epochs = 10;
  std::size_t kernels = 25;

  friend bool operator==(const DiagnosticsSection&, const DiagnosticsSection&) = default;
};

/// Top-level JSON document:
///
///   { "schema_version": 1,
///     "network":     { input, conv: [{channels, kernel}], fc_width, num_classes, dropout,
///                      bn_momentum, bn_eps, scheme, gumbel_tau },
///     "train":       { batch_size, lr, lr_drops: [{epoch, divisor}], epochs, weight_decay,
///                      probability_decay, beta_param, mode, seed,
///                      adam: {beta1, beta2, eps}, log_interval },
///     "init":        { p_min, p_max },
///     "pretrain":    { epochs, lr, batch_size },
///     "data":        { dataset, train_subset, val_size, test_subset },
///     "eval":        { k, bn_recalibration },
///     "diagnostics": { clt_draws, clt_layer, clt_neuron, clt_example, gumbel_epochs, kernels } }
///
/// Every field is required and unknown fields are rejected. The network's
/// weight mode is taken from train.mode.
struct AppConfig {
  NetworkConfig network = NetworkConfig::desk_mnist();
  TrainConfig train;
  InitSection init;
  PretrainSection pretrain;
  DataSection data;
  EvalSection eval;
  DiagnosticsSection diagnostics;

  void validate() const;

  friend bool operator==(const AppConfig&, const AppConfig&) = default;
};

nlohmann::json app_to_json(const AppConfig& cfg);
AppConfig app_from_json(const nlohmann::json& j);

AppConfig parse_app_config(const std::string& text);
std::string serialize_app_config(const AppConfig& cfg);
AppConfig load_app_config(const std::filesystem::path& path);

}  // namespace lrnet
