#include "lrnet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "lrnet/errors.hpp"

namespace lrnet {

using nlohmann::json;

namespace {

// Strict object reader: every requested field must exist with the right
// type, and finish() rejects anything left unread.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  const json& raw(const std::string& name) {
    const auto it = j_.find(name);
    if (it == j_.end()) throw ConfigError("missing field " + where(name));
    seen_.insert(name);
    return *it;
  }

  std::size_t count(const std::string& name) { return as_count(raw(name), where(name)); }
  std::uint64_t u64(const std::string& name) {
    const json& v = raw(name);
    if (!non_negative_integer(v)) throw ConfigError("field " + where(name) + " must be a non-negative integer");
    return v.get<std::uint64_t>();
  }
  Real real(const std::string& name) { return as_real(raw(name), where(name)); }
  std::string str(const std::string& name) {
    const json& v = raw(name);
    if (!v.is_string()) throw ConfigError("field " + where(name) + " must be a string");
    return v.get<std::string>();
  }
  const json& array(const std::string& name) {
    const json& v = raw(name);
    if (!v.is_array()) throw ConfigError("field " + where(name) + " must be an array");
    return v;
  }
  const json& object(const std::string& name) {
    const json& v = raw(name);
    if (!v.is_object()) throw ConfigError("field " + where(name) + " must be an object");
    return v;
  }

  std::string where(const std::string& name) const { return path_.empty() ? name : path_ + "." + name; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown field " + where(key));
    }
  }

  static std::size_t as_count(const json& v, const std::string& where) {
    if (!non_negative_integer(v)) throw ConfigError("field " + where + " must be a non-negative integer");
    return v.get<std::size_t>();
  }
  // Values built in code are signed even when non-negative.
  static bool non_negative_integer(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
  }
  static Real as_real(const json& v, const std::string& where) {
    if (!v.is_number()) throw ConfigError("field " + where + " must be a number");
    return static_cast<Real>(v.get<double>());
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
auto wrap_enum(const std::string& where, F&& parse) {
  try {
    return parse();
  } catch (const ConfigError& e) {
    throw ConfigError("field " + where + ": " + e.what());
  }
}

json network_json(const NetworkConfig& cfg, bool with_mode) {
  json conv = json::array();
  for (const auto& c : cfg.conv) conv.push_back({{"channels", c.channels}, {"kernel", c.kernel}});
  json j = {{"input", {cfg.input[0], cfg.input[1], cfg.input[2]}},
            {"conv", conv},
            {"fc_width", cfg.fc_width},
            {"num_classes", cfg.num_classes},
            {"dropout", static_cast<double>(cfg.dropout)},
            {"bn_momentum", static_cast<double>(cfg.bn_momentum)},
            {"bn_eps", static_cast<double>(cfg.bn_eps)},
            {"scheme", to_string(cfg.scheme)},
            {"gumbel_tau", static_cast<double>(cfg.gumbel_tau)}};
  if (with_mode) j["mode"] = to_string(cfg.mode);
  return j;
}

NetworkConfig network_parse(const json& j, const std::string& path, bool with_mode) {
  Fields f(j, path);
  NetworkConfig cfg;
  const json& input = f.array("input");
  if (input.size() != 3) throw ConfigError("field " + f.where("input") + " must list [channels, height, width]");
  for (std::size_t i = 0; i < 3; ++i) cfg.input[i] = Fields::as_count(input[i], f.where("input"));
  cfg.conv.clear();
  for (const auto& c : f.array("conv")) {
    Fields cf(c, f.where("conv[]"));
    cfg.conv.push_back({cf.count("channels"), cf.count("kernel")});
    cf.finish();
  }
  cfg.fc_width = f.count("fc_width");
  cfg.num_classes = f.count("num_classes");
  cfg.dropout = f.real("dropout");
  cfg.bn_momentum = f.real("bn_momentum");
  cfg.bn_eps = f.real("bn_eps");
  const std::string scheme = f.str("scheme");
  cfg.scheme = wrap_enum(f.where("scheme"), [&] { return parse_weight_scheme(scheme); });
  cfg.gumbel_tau = f.real("gumbel_tau");
  if (with_mode) {
    const std::string mode = f.str("mode");
    cfg.mode = wrap_enum(f.where("mode"), [&] { return parse_weight_mode(mode); });
  }
  f.finish();
  return cfg;
}

TrainConfig train_parse(const json& j, const std::string& path) {
  Fields f(j, path);
  TrainConfig cfg;
  cfg.batch_size = f.count("batch_size");
  cfg.lr = f.real("lr");
  cfg.lr_drops.clear();
  for (const auto& d : f.array("lr_drops")) {
    Fields df(d, f.where("lr_drops[]"));
    cfg.lr_drops.push_back({df.count("epoch"), df.real("divisor")});
    df.finish();
  }
  cfg.epochs = f.count("epochs");
  cfg.weight_decay = f.real("weight_decay");
  cfg.probability_decay = f.real("probability_decay");
  cfg.beta_param = f.real("beta_param");
  const std::string mode = f.str("mode");
  cfg.mode = wrap_enum(f.where("mode"), [&] { return parse_weight_mode(mode); });
  cfg.seed = f.u64("seed");
  Fields af(f.object("adam"), f.where("adam"));
  cfg.adam.beta1 = af.real("beta1");
  cfg.adam.beta2 = af.real("beta2");
  cfg.adam.eps = af.real("eps");
  af.finish();
  cfg.log_interval = f.count("log_interval");
  f.finish();
  return cfg;
}

}  // namespace

json network_to_json(const NetworkConfig& cfg) { return network_json(cfg, true); }
NetworkConfig network_from_json(const json& j) { return network_parse(j, "network", true); }

json train_to_json(const TrainConfig& cfg) {
  json drops = json::array();
  for (const auto& d : cfg.lr_drops) drops.push_back({{"epoch", d.epoch}, {"divisor", static_cast<double>(d.divisor)}});
  return {{"batch_size", cfg.batch_size},
          {"lr", static_cast<double>(cfg.lr)},
          {"lr_drops", drops},
          {"epochs", cfg.epochs},
          {"weight_decay", static_cast<double>(cfg.weight_decay)},
          {"probability_decay", static_cast<double>(cfg.probability_decay)},
          {"beta_param", static_cast<double>(cfg.beta_param)},
          {"mode", to_string(cfg.mode)},
          {"seed", cfg.seed},
          {"adam",
           {{"beta1", static_cast<double>(cfg.adam.beta1)},
            {"beta2", static_cast<double>(cfg.adam.beta2)},
            {"eps", static_cast<double>(cfg.adam.eps)}}},
          {"log_interval", cfg.log_interval}};
}

TrainConfig train_from_json(const json& j) { return train_parse(j, "train"); }

void AppConfig::validate() const {
  network.validate();
  train.validate();
  if (network.mode != train.mode) throw ConfigError("network mode and train.mode disagree");
  InitConfig{init.p_min, init.p_max, train.mode}.validate();
  if (pretrain.epochs == 0) throw ConfigError("pretrain.epochs must be positive");
  if (!(pretrain.lr >= 0)) throw ConfigError("pretrain.lr must be non-negative");
  if (pretrain.batch_size == 0) throw ConfigError("pretrain.batch_size must be positive");
  if (data.dataset != "mnist" && data.dataset != "cifar10") {
    throw ConfigError("data.dataset must be 'mnist' or 'cifar10', got '" + data.dataset + "'");
  }
  if (eval.k < 1) throw ConfigError("eval.k must be at least 1");
  if (diagnostics.clt_draws < 1000) throw ConfigError("diagnostics.clt_draws must be at least 1000");
  if (diagnostics.kernels < 1) throw ConfigError("diagnostics.kernels must be at least 1");
}

json app_to_json(const AppConfig& cfg) {
  return {{"schema_version", kConfigSchemaVersion},
          {"network", network_json(cfg.network, false)},
          {"train", train_to_json(cfg.train)},
          {"init", {{"p_min", static_cast<double>(cfg.init.p_min)}, {"p_max", static_cast<double>(cfg.init.p_max)}}},
          {"pretrain",
           {{"epochs", cfg.pretrain.epochs},
            {"lr", static_cast<double>(cfg.pretrain.lr)},
            {"batch_size", cfg.pretrain.batch_size}}},
          {"data",
           {{"dataset", cfg.data.dataset},
            {"train_subset", cfg.data.train_subset},
            {"val_size", cfg.data.val_size},
            {"test_subset", cfg.data.test_subset}}},
          {"eval", {{"k", cfg.eval.k}, {"bn_recalibration", cfg.eval.bn_recalibration}}},
          {"diagnostics",
           {{"clt_draws", cfg.diagnostics.clt_draws},
            {"clt_layer", cfg.diagnostics.clt_layer},
            {"clt_neuron", cfg.diagnostics.clt_neuron},
            {"clt_example", cfg.diagnostics.clt_example},
            {"gumbel_epochs", cfg.diagnostics.gumbel_epochs},
            {"kernels", cfg.diagnostics.kernels}}}};
}

AppConfig app_from_json(const json& j) {
  Fields f(j, "");
  const json& version = f.raw("schema_version");
  if (!version.is_number_integer() || version.get<long long>() != kConfigSchemaVersion) {
    throw ConfigError("field schema_version must be " + std::to_string(kConfigSchemaVersion));
  }
  AppConfig cfg;
  cfg.train = train_parse(f.object("train"), "train");
  cfg.network = network_parse(f.object("network"), "network", false);
  cfg.network.mode = cfg.train.mode;

  Fields init(f.object("init"), "init");
  cfg.init.p_min = init.real("p_min");
  cfg.init.p_max = init.real("p_max");
  init.finish();

  Fields pre(f.object("pretrain"), "pretrain");
  cfg.pretrain.epochs = pre.count("epochs");
  cfg.pretrain.lr = pre.real("lr");
  cfg.pretrain.batch_size = pre.count("batch_size");
  pre.finish();

  Fields data(f.object("data"), "data");
  cfg.data.dataset = data.str("dataset");
  cfg.data.train_subset = data.count("train_subset");
  cfg.data.val_size = data.count("val_size");
  cfg.data.test_subset = data.count("test_subset");
  data.finish();

  Fields ev(f.object("eval"), "eval");
  cfg.eval.k = ev.count("k");
  cfg.eval.bn_recalibration = ev.count("bn_recalibration");
  ev.finish();

  Fields diag(f.object("diagnostics"), "diagnostics");
  cfg.diagnostics.clt_draws = diag.count("clt_draws");
  cfg.diagnostics.clt_layer = diag.count("clt_layer");
  cfg.diagnostics.clt_neuron = diag.count("clt_neuron");
  cfg.diagnostics.clt_example = diag.count("clt_example");
  cfg.diagnostics.gumbel_epochs = diag.count("gumbel_epochs");
  cfg.diagnostics.kernels = diag.count("kernels");
  diag.finish();

  f.finish();
  cfg.validate();
  return cfg;
}

AppConfig parse_app_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return app_from_json(j);
}

std::string serialize_app_config(const AppConfig& cfg) { return app_to_json(cfg).dump(2) + "\n"; }

AppConfig load_app_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_app_config(ss.str());
}

}  // namespace lrnet
