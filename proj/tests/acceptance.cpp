// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// The training criteria run the shipped desk-scale configs through the same
// command functions the CLI uses, so this takes a while on one core.

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "lrnet/checkpoint.hpp"
#include "lrnet/commands.hpp"
#include "lrnet/diagnostics.hpp"
#include "lrnet/errors.hpp"
#include "lrnet/layers.hpp"
#include "support.hpp"

using namespace lrnet;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

const fs::path kConfigs = LRNET_CONFIG_DIR;
const fs::path kFixtures = LRNET_FIXTURE_DIR;

int failures = 0;

void report(int n, bool ok, const std::string& what) {
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << n << ": " << what << std::endl;
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

std::vector<std::uint8_t> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

fs::path data_root() {
  const char* env = std::getenv("LRNET_DATA_DIR");
  return env ? env : "data";
}

CommandOptions options(const fs::path& out, std::ostream& log) {
  CommandOptions o;
  o.out_dir = out;
  o.data_root = data_root();
  o.log = &log;
  return o;
}

// sum(r * layer(x)) with the noise replayed from a fixed seed on every call.
double layer_fd_error(Layer& layer, Tensor x, std::uint64_t seed) {
  const Rng base(seed);
  Tensor r;
  auto loss = [&]() {
    Rng rng = base;
    ForwardContext ctx{Mode::Train, &rng};
    const Tensor y = layer.forward(x, ctx);
    if (r.empty()) {
      Rng rr(seed + 1);
      r = oracle::random_tensor(y.shape(), rr);
    }
    return oracle::dot(y, r);
  };
  loss();
  layer.zero_grad();
  {
    Rng rng = base;
    ForwardContext ctx{Mode::Train, &rng};
    layer.forward(x, ctx);
  }
  const Tensor dx = layer.backward(r);
  double worst = oracle::rel_error(oracle::as_vector(dx), oracle::numeric_grad(x, loss));
  for (auto& p : layer.params()) {
    worst = std::max(worst, oracle::rel_error(oracle::as_vector(*p.grad), oracle::numeric_grad(*p.value, loss)));
  }
  return worst;
}

WeightDist random_dist(const Shape& shape, WeightMode mode, Rng& rng) {
  if (mode == WeightMode::Ternary) {
    return TernaryDist{oracle::random_tensor(shape, rng, -3, 3), oracle::random_tensor(shape, rng, -3, 3)};
  }
  return BinaryDist{oracle::random_tensor(shape, rng, -3, 3)};
}

void criterion_gradients() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0;
  std::size_t configs = 0;
  for (int i = 0; i < 20; ++i, ++configs) {
    const std::size_t fan_in = 3 + rng.uniform_int(62), out = 1 + rng.uniform_int(8), batch = 1 + rng.uniform_int(4);
    const WeightMode mode = i % 2 ? WeightMode::Binary : WeightMode::Ternary;
    DenseLayer layer(std::make_unique<LrKernel>(Shape{out, fan_in}, random_dist({out, fan_in}, mode, rng)), false);
    worst = std::max(worst, layer_fd_error(layer, oracle::random_tensor({batch, fan_in}, rng), 1000 + i));
  }
  for (int i = 0; i < 10; ++i, ++configs) {
    std::size_t cin, k;
    do {
      cin = 1 + rng.uniform_int(6);
      k = 1 + rng.uniform_int(4);
    } while (cin * k * k < 3 || cin * k * k > 64);
    const std::size_t cout = 1 + rng.uniform_int(4), side = k + rng.uniform_int(4), pad = rng.uniform_int(2);
    const WeightMode mode = i % 2 ? WeightMode::Binary : WeightMode::Ternary;
    ConvGeometry g{cin, side, side, k, k, 1, pad};
    ConvLayer layer(std::make_unique<LrKernel>(Shape{cout, cin, k, k}, random_dist({cout, cin, k, k}, mode, rng)), g);
    worst = std::max(worst, layer_fd_error(layer, oracle::random_tensor({2, cin, side, side}, rng), 2000 + i));
  }
  const double secs = seconds_since(t0);
  report(1, worst < 1e-6 && secs < 60,
         std::to_string(configs) + " LR dense/conv configs, max relative gradient error " + num(worst, 3) + " in " +
             num(secs, 3) + " s");
}

void criterion_moments() {
  Rng rng(102);
  const Tensor a = oracle::random_tensor({1000}, rng, -6, 6), b = oracle::random_tensor({1000}, rng, -6, 6);
  const auto m = moments(TernaryDist{a, b});
  double worst = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const double p0 = 1 / (1 + std::exp(-a[i])), q = 1 / (1 + std::exp(-b[i]));
    const double pp = (1 - p0) * q, pm = (1 - p0) * (1 - q);
    // Exhaustive over the outcomes -1, 0, +1.
    const double mean = -1 * pm + 0 * p0 + 1 * pp;
    const double var = (-1 - mean) * (-1 - mean) * pm + mean * mean * p0 + (1 - mean) * (1 - mean) * pp;
    worst = std::max({worst, std::abs(m.mean[i] - mean), std::abs(m.var[i] - var)});
  }
  report(2, worst < 1e-12, "ternary moments on 1000 draws, max deviation " + num(worst, 3));
}

void criterion_init() {
  Rng rng(103);
  const Tensor w = oracle::random_tensor({10000}, rng, -0.045 / 0.19, 0.045 / 0.19);
  const auto d = std::get<TernaryDist>(init_from_pretrained(w, InitConfig{}));
  const auto m = moments(d);
  double worst = 0;
  for (std::size_t i = 0; i < w.size(); ++i) worst = std::max(worst, std::abs(m.mean[i] - w[i]));

  const Tensor wide = oracle::random_tensor({10000}, rng, -4, 4);
  const auto c = std::get<TernaryDist>(init_from_pretrained(wide, InitConfig{}));
  double lo = 1, hi = 0;
  for (std::size_t i = 0; i < wide.size(); ++i) {
    for (double p : {1 / (1 + std::exp(-c.a[i])), 1 / (1 + std::exp(-c.b[i]))}) {
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
  }
  const bool bounded = lo >= 0.05 - 1e-15 && hi <= 0.95 + 1e-15 && std::abs(lo - 0.05) < 1e-15 &&
                       std::abs(hi - 0.95) < 1e-15;
  report(3, worst < 1e-12 && bounded,
         "unclipped mean error " + num(worst, 3) + ", clipped probabilities in [" + num(lo, 17) + ", " + num(hi, 17) +
             "]");
}

void criterion_clt() {
  Rng wr(104);
  Tensor w({1, 27});
  for (Real& v : w.data()) v = static_cast<Real>(wr.normal());
  const WeightDist init = init_from_pretrained(normalize_pretrained(w), InitConfig{});
  std::vector<Real> h(27);
  for (Real& v : h) v = static_cast<Real>(wr.uniform());
  Rng rng(105);
  const CltReport good = clt_fidelity(init, 0, h, 10000, rng);

  TernaryDist sharp{Tensor({1, 27}), Tensor({1, 27})};
  for (std::size_t i = 0; i < 27; ++i) {
    sharp.a[i] = wr.uniform() < 0.4 ? 6 : -6;
    sharp.b[i] = wr.uniform() < 0.5 ? -6 : 6;
  }
  const CltReport bad = clt_fidelity(sharp, 0, h, 10000, rng);
  report(4, good.ks < 0.03 && bad.ks > 0.1,
         "fan-in 27 init-level KS " + num(good.ks) + " (< 0.03), near-deterministic KS " + num(bad.ks) + " (> 0.1)");
}

struct Pipeline {
  SampledEvaluation eval;
  fs::path pretrained;
  double seconds = 0;
};

Pipeline run_pipeline(const AppConfig& cfg, const fs::path& out, std::ostream& log) {
  const auto t0 = Clock::now();
  Pipeline p;
  p.pretrained = cmd_pretrain(cfg, options(out / "pretrain", log));
  CommandOptions train = options(out / "train", log);
  train.init_from = p.pretrained;
  const fs::path model = cmd_train(cfg, train);
  CommandOptions ev = options(out / "eval", log);
  ev.checkpoint = model;
  p.eval = cmd_eval(cfg, ev);
  p.seconds = seconds_since(t0);
  return p;
}

double sample_std_pp(const std::vector<Real>& xs) {
  double m = 0;
  for (Real x : xs) m += x;
  m /= xs.size();
  double s = 0;
  for (Real x : xs) s += (x - m) * (x - m);
  return 100 * std::sqrt(s / (xs.size() - 1));
}

std::size_t weight_count(const StochasticLayerRef& ref) {
  return std::visit([](const auto& d) { return d.b.size(); }, ref.kernel->dist());
}

// Final-epoch entropy per layer index from an entropy trace CSV.
std::map<std::size_t, double> final_entropies(const fs::path& p) {
  std::map<std::size_t, double> out;
  std::size_t last = 0;
  for (const auto& r : read_csv(p)) last = std::max<std::size_t>(last, std::stoul(r[0]));
  for (const auto& r : read_csv(p)) {
    if (std::stoul(r[0]) == last) out[std::stoul(r[1])] = std::stod(r[2]);
  }
  return out;
}

void criterion_entropy(const AppConfig& cfg, const fs::path& pretrained, const fs::path& out, std::ostream& log) {
  CommandOptions o = options(out, log);
  o.init_from = pretrained;
  cmd_diagnose("entropy", cfg, o);
  const auto with = final_entropies(out / "entropy.csv"), without = final_entropies(out / "entropy_no_decay.csv");
  const auto net = build_stochastic_network(cfg, pretrained);
  double sw = 0, so = 0, n = 0;
  std::string layers;
  for (const auto& ref : net->stochastic_layers()) {
    const double c = static_cast<double>(weight_count(ref));
    sw += c * with.at(ref.layer_index);
    so += c * without.at(ref.layer_index);
    n += c;
    layers += " L" + std::to_string(ref.layer_index) + " " + num(with.at(ref.layer_index)) + "/" +
              num(without.at(ref.layer_index));
  }
  report(6, sw / n >= so / n,
         "weight-averaged final entropy with decay " + num(sw / n) + " >= without " + num(so / n) + " bits;" + layers);
}

void criterion_gumbel(AppConfig cfg, const fs::path& pretrained, const fs::path& out, std::ostream& log) {
  const auto t0 = Clock::now();
  cfg.diagnostics.gumbel_epochs = 10;
  cfg.network.gumbel_tau = Real(0.1);
  CommandOptions o = options(out, log);
  o.init_from = pretrained;
  cmd_diagnose("gumbel", cfg, o);
  double lr = NAN, gs = NAN;
  for (const auto& r : read_csv(out / "gumbel_compare.csv")) {
    if (std::stoul(r[0]) != 10) continue;
    (r[1] == "gumbel" ? gs : lr) = std::stod(r[2]);
  }
  const double secs = seconds_since(t0);
  report(5, lr < gs && secs <= 1800,
         "final-epoch mean training loss LR " + num(lr) + " < Gumbel-softmax " + num(gs) + " on " +
             std::to_string(cfg.data.train_subset) + " examples, " + num(secs, 4) + " s");
}

bool same_tree(const fs::path& a, const fs::path& b, std::string& detail) {
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    if (!fs::exists(b / rel) || bytes_of(e.path()) != bytes_of(b / rel)) {
      detail = rel.string() + " differs";
      return false;
    }
    ++files;
  }
  detail = std::to_string(files) + " files identical";
  return files > 0;
}

void criterion_determinism(AppConfig cfg, const fs::path& out, std::ostream& log) {
  cfg.data.train_subset = 2000;
  cfg.pretrain.epochs = 1;
  cfg.train.epochs = 1;
  cfg.eval.k = 3;
  cfg.eval.bn_recalibration = 1000;
  cfg.diagnostics.clt_draws = 2000;
  for (const char* run : {"a", "b"}) {
    const fs::path dir = out / run;
    const Pipeline p = run_pipeline(cfg, dir, log);
    CommandOptions clt = options(dir / "clt", log);
    clt.checkpoint = dir / "train" / "model.ckpt";
    cmd_diagnose("clt", cfg, clt);
    CommandOptions kernels = options(dir / "kernels", log);
    kernels.checkpoint = clt.checkpoint;
    cmd_export_kernels(cfg, kernels);
  }
  std::string detail;
  const bool ok = same_tree(out / "a", out / "b", detail) && same_tree(out / "b", out / "a", detail);
  report(9, ok, "pretrain, train, eval, diagnose clt and export-kernels rerun: " + detail);
}

template <class F>
bool throws_data_error(F&& f) {
  try {
    f();
  } catch (const DataError&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

void criterion_formats(const fs::path& out) {
  bool ok = true;
  for (const char* name : {"tiny-images-idx3-ubyte", "tiny-labels-idx1-ubyte"}) {
    const auto raw = bytes_of(kFixtures / name);
    ok &= encode_idx(parse_idx(raw)) == raw;
  }
  const auto cifar = bytes_of(kFixtures / "tiny_cifar.bin");
  ok &= encode_cifar10(parse_cifar10(cifar)) == cifar;
  const Dataset d = load_mnist_idx(kFixtures / "tiny-images-idx3-ubyte", kFixtures / "tiny-labels-idx1-ubyte");
  ok &= d.images[3] == Real(127) / 255 && d.images[5] == 1 && d.labels == std::vector<int>{7, 2};
  const bool round_trip = ok;

  fs::create_directories(out);
  auto images = bytes_of(kFixtures / "tiny-images-idx3-ubyte");
  {
    std::ofstream f(out / "labels-with-image-magic", std::ios::binary);
    f.write(reinterpret_cast<const char*>(images.data()), static_cast<std::streamsize>(images.size()));
  }
  std::size_t rejected = 0, cases = 0;
  auto expect = [&](bool b) {
    ++cases;
    rejected += b;
  };
  expect(throws_data_error(
      [&] { load_mnist_idx(kFixtures / "tiny-images-idx3-ubyte", out / "labels-with-image-magic"); }));
  auto cut = images;
  cut.pop_back();
  expect(throws_data_error([&] { parse_idx(cut); }));
  auto extra = images;
  extra.push_back(0);
  expect(throws_data_error([&] { parse_idx(extra); }));
  auto short_cifar = cifar;
  short_cifar.pop_back();
  expect(throws_data_error([&] { parse_cifar10(short_cifar); }));
  auto bad_label = cifar;
  bad_label[0] = 10;
  expect(throws_data_error([&] { parse_cifar10(bad_label); }));
  report(10, round_trip && rejected == cases,
         std::string("IDX and CIFAR fixtures ") + (round_trip ? "round-trip byte-exactly" : "do NOT round-trip") +
             ", " + std::to_string(rejected) + "/" + std::to_string(cases) + " malformed fixtures rejected");
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "lrnet_acceptance";
  fs::remove_all(out);
  fs::create_directories(out);
  std::ofstream log(out / "progress.log");
  std::cout << "outputs in " << out << std::endl;

  try {
    criterion_gradients();
    criterion_moments();
    criterion_init();
    criterion_clt();
    criterion_formats(out / "formats");

    const AppConfig ternary = load_app_config(kConfigs / "mnist_desk_ternary.json");
    const AppConfig binary = load_app_config(kConfigs / "mnist_desk_binary.json");
    const Pipeline t = run_pipeline(ternary, out / "ternary", log);
    const Pipeline b = run_pipeline(binary, out / "binary", log);
    const double te = 1 - t.eval.best_test_accuracy, be = 1 - b.eval.best_test_accuracy;
    report(7, te <= 0.05 && be <= 0.08 && t.seconds <= 1200 && b.seconds <= 1200,
           "sampled test error ternary " + num(100 * te) + "% (" + num(t.seconds, 4) + " s), binary " +
               num(100 * be) + "% (" + num(b.seconds, 4) + " s)");
    const double sd = sample_std_pp(t.eval.test_accuracies());
    report(8, sd < 0.5,
           "ternary test accuracy std over k=" + std::to_string(t.eval.samples.size()) + " samples " + num(sd, 3) +
               " pp (binary " + num(sample_std_pp(b.eval.test_accuracies()), 3) + " pp)");

    criterion_gumbel(ternary, t.pretrained, out / "gumbel", log);
    criterion_entropy(ternary, t.pretrained, out / "entropy", log);
    criterion_determinism(ternary, out / "determinism", log);
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures ? "FAILED " + std::to_string(failures) + " criteria" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
