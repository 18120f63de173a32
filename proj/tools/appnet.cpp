// appnet: dataset generation, normal estimation, training, evaluation,
// cost benchmarks and numeric self-checks.
//
// exit codes: 0 ok, 1 runtime failure, 2 usage error

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "appnet/appnet.hpp"
#include "appnet/bench.hpp"
#include "appnet/selfcheck.hpp"

using namespace appnet;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kFamilies{"lin", "exp", "sin", "cos"};
const std::vector<std::string> kStyles{"aw", "pw"};
const std::vector<std::string> kInputs{"xyz", "normal", "nc", "normal+curvature"};
const std::vector<std::string> kPoolings{"avgmax", "max", "avg", "adaptive"};
const std::vector<std::string> kUpdates{"concat", "noconcat", "residual", "identity"};
const std::vector<std::string> kPosencs{"global", "local", "none"};
const std::vector<std::string> kPulls{"diff", "zero"};
const std::vector<std::string> kSamplers{"random", "fps"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// "key = value" lines; '#' starts a comment
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CLI::FileError::Missing(path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CLI::ConversionError(path + ":" + std::to_string(no) + ": expected 'key = value'");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

bool given(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args)
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  return false;
}

// Appends "--key value" for every config entry whose flag is not already on
// the command line, so explicit flags win.
std::vector<std::string> merge_config(const CLI::App& app, std::vector<std::string> args) {
  if (args.size() < 2) return args;
  const CLI::App* sub = nullptr;
  for (const auto* s : app.get_subcommands({}))
    if (s->get_name() == args[1]) sub = s;
  if (!sub) return args;
  std::string path;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  for (const auto& [key, value] : read_config_file(path)) {
    const std::string flag = "--" + key;
    const auto* opt = sub->get_option_no_throw(flag);
    if (!opt || key == "config") throw CLI::ExtrasError("unknown config key '" + key + "' in " + path, CLI::ExitCodes::ExtrasError);
    if (given(args, flag)) continue;
    if (opt->get_expected_min() == 0) {
      if (value == "true" || value == "1") args.push_back(flag);
      else if (value != "false" && value != "0") throw CLI::ConversionError(key + " expects true or false");
    } else {
      args.push_back(flag);
      args.push_back(value);
    }
  }
  return args;
}

struct GenArgs {
  DatasetSpec spec;
  std::string out;
};

struct NormalsArgs {
  std::string in, out;
  std::size_t k = 16;
};

struct NetArgs {
  std::string family = "exp", style = "aw", input = "nc", pooling = "avgmax", update = "concat", posenc = "global",
              pull = "diff", sampler = "random";
  std::size_t depth = 3, embed = 32;
  std::vector<std::size_t> widths, ra, rd, hidden;
  double dropout = 0.5;
};

struct TrainArgs {
  std::string data, checkpoint;
  int epochs = 50, t_max = 0, warmup = 1;
  std::uint64_t seed = 0, net_seed = 0;
  std::size_t batch = 32, test_batch = 16, k = 16;
  double lr = 2e-3, lr_min = 2e-4, jitter = 0.01;
  bool no_rotate = false;
  NetArgs net;
};

struct EvalArgs {
  std::string data, checkpoint, split = "test";
  std::size_t batch = 16, k = 16;
  std::uint64_t seed = 0;
};

struct BenchArgs {
  std::vector<std::size_t> n_list{1024, 2048, 4096, 8192};
  std::string family = "exp", style = "aw";
  std::size_t c_in = 32, c_out = 64, ra = 64, rd = 8, k = 32, repeats = 5;
  bool baseline = false;
  std::uint64_t seed = 1;
};

struct OracleArgs {
  std::size_t trials = 1000;
  std::string precision = "both";
  std::uint64_t seed = 1;
};

void add_config(CLI::App* sub) {
  sub->add_option("--config", "file of 'key = value' lines using long flag names; flags on the command line win")->type_name("FILE");
}

void add_net_options(CLI::App* sub, NetArgs& a) {
  sub->add_option("--family", a.family, "operator family")->check(CLI::IsMember(kFamilies))->capture_default_str();
  sub->add_option("--style", a.style, "aggregator style")->check(CLI::IsMember(kStyles))->capture_default_str();
  sub->add_option("--input", a.input, "input features")->check(CLI::IsMember(kInputs))->capture_default_str();
  sub->add_option("--pooling", a.pooling, "global pooling")->check(CLI::IsMember(kPoolings))->capture_default_str();
  sub->add_option("--update-style", a.update, "ChannelMix update")->check(CLI::IsMember(kUpdates))->capture_default_str();
  sub->add_option("--posenc", a.posenc, "position encoding")->check(CLI::IsMember(kPosencs))->capture_default_str();
  sub->add_option("--pull-mode", a.pull, "pull input")->check(CLI::IsMember(kPulls))->capture_default_str();
  sub->add_option("--sampler", a.sampler, "downsampling")->check(CLI::IsMember(kSamplers))->capture_default_str();
  sub->add_option("--depth", a.depth, "number of APP blocks (2, 3 or 4)")->check(CLI::Range(2, 4))->capture_default_str();
  sub->add_option("--embed", a.embed, "embedding width")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--widths", a.widths, "block widths, comma separated (overrides the depth preset)")->delimiter(',');
  sub->add_option("--ra", a.ra, "auxiliary ratios, comma separated")->delimiter(',');
  sub->add_option("--rd", a.rd, "downsample ratios, comma separated")->delimiter(',');
  sub->add_option("--hidden", a.hidden, "classifier hidden widths, comma separated")->delimiter(',');
  sub->add_option("--dropout", a.dropout, "classifier dropout")->check(CLI::Range(0.0, 0.99))->capture_default_str();
}

AppNetConfig net_config(const NetArgs& a, std::size_t classes) {
  AppNetConfig cfg;
  cfg.set_depth(a.depth);
  auto resize_or_check = [&](const std::vector<std::size_t>& given_values, std::vector<std::size_t>& target,
                             const char* name) {
    if (given_values.empty()) return;
    if (given_values.size() != a.depth)
      throw CLI::ValidationError(std::string("--") + name, "needs one value per block (" + std::to_string(a.depth) + ")");
    target = given_values;
  };
  resize_or_check(a.widths, cfg.block_channels, "widths");
  resize_or_check(a.ra, cfg.r_a, "ra");
  resize_or_check(a.rd, cfg.r_d, "rd");
  if (!a.hidden.empty()) cfg.classifier_hidden = a.hidden;
  cfg.embed_channels = a.embed;
  cfg.dropout = a.dropout;
  cfg.num_classes = classes;
  cfg.input = parse_input_mode(a.input);
  cfg.family = parse_family(a.family);
  cfg.style = parse_style(a.style);
  cfg.pooling = parse_pooling(a.pooling);
  cfg.update_style = parse_update_style(a.update);
  cfg.posenc = parse_posenc(a.posenc);
  cfg.pull_mode = parse_pull_mode(a.pull);
  cfg.sampler = parse_sampler(a.sampler);
  return cfg;
}

int run_gen(const GenArgs& a) {
  const auto [train, test] = build_dataset(a.spec, a.out);
  std::cout << "train manifest: " << (fs::path(a.out) / "train.txt").string() << " (" << train.entries.size()
            << " samples)\n"
            << "test manifest: " << (fs::path(a.out) / "test.txt").string() << " (" << test.entries.size()
            << " samples)\n";
  return 0;
}

int run_normals(const NormalsArgs& a) {
  const auto file = read_xyz<double>(a.in);
  for (const auto& w : file.warnings) std::cerr << "warning: " << w << "\n";
  const auto& cloud = file.cloud;
  const auto desc = estimate_surface<double>(cloud.positions, a.k);
  const std::size_t n = cloud.size();
  double centroid[3] = {0, 0, 0};
  for (std::size_t i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d) centroid[d] += cloud.positions[3 * i + d] / static_cast<double>(n);
  double sigma_max = 0, sigma_mean = 0, radial = 0;
  std::size_t degenerate = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sigma_max = std::max(sigma_max, desc.curvature[i]);
    sigma_mean += desc.curvature[i] / static_cast<double>(n);
    degenerate += desc.degenerate[i];
    double r[3], len = 0, dot = 0;
    for (int d = 0; d < 3; ++d) {
      r[d] = cloud.positions[3 * i + d] - centroid[d];
      len += r[d] * r[d];
    }
    len = std::sqrt(len);
    if (len > 0)
      for (int d = 0; d < 3; ++d) dot += desc.normals[3 * i + d] * r[d] / len;
    radial += std::abs(dot) / static_cast<double>(n);
  }
  std::printf("points: %zu\nk: %zu\ncurvature mean: %.6g\ncurvature max: %.6g\ndegenerate: %zu\n", n, a.k, sigma_mean,
              sigma_max, degenerate);
  std::printf("mean |cos(normal, radial)|: %.6f\n", radial);
  if (!a.out.empty()) {
    PointCloud<double> out;
    out.positions = cloud.positions;
    out.feature_channels = 4;
    out.features.resize(4 * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (int d = 0; d < 3; ++d) out.features[4 * i + d] = desc.normals[3 * i + d];
      out.features[4 * i + 3] = desc.curvature[i];
    }
    write_xyz(a.out, out);
    std::cout << "wrote " << a.out << "\n";
  }
  return 0;
}

int run_train(const TrainArgs& a) {
  const fs::path dir(a.data);
  const auto train_m = read_manifest(dir / "train.txt");
  const auto test_m = read_manifest(dir / "test.txt");
  const std::size_t classes = std::max(train_m.num_classes(), test_m.num_classes());
  const auto cfg = net_config(a.net, classes);
  AppNet<float> net(cfg, a.net_seed);

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.train_batch = a.batch;
  tc.test_batch = a.test_batch;
  tc.seed = a.seed;
  tc.normal_k = a.k;
  tc.augment_rotate = !a.no_rotate;
  tc.augment_jitter = a.jitter;
  tc.schedule.lr_max = a.lr;
  tc.schedule.lr_min = a.lr_min;
  tc.schedule.t_max = a.t_max > 0 ? a.t_max : a.epochs;
  tc.schedule.warmup_epochs = a.warmup;
  if (!a.checkpoint.empty()) tc.checkpoint = a.checkpoint;
  tc.log = [](const std::string& line) { std::cout << line << "\n" << std::flush; };

  const auto train_clouds = load_samples<float>(train_m);
  const auto test_inputs = prepare_inputs(load_samples<float>(test_m), cfg.input, a.k);
  std::cout << csv_header() << "\n";
  const auto res = train(net, tc, train_clouds, test_inputs);
  std::printf("parameters: %zu\nfinal test OA: %.4f\nbest test OA: %.4f (epoch %d)\n", net.parameter_count(),
              res.history.back().test_oa, res.best_test_oa, res.best_epoch);
  if (!a.checkpoint.empty()) std::cout << "checkpoint: " << a.checkpoint << "\n";
  return 0;
}

int run_eval(const EvalArgs& a) {
  auto net = load_network<float>(a.checkpoint);
  const auto m = read_manifest(fs::path(a.data) / (a.split + ".txt"));
  if (m.num_classes() > net.config().num_classes)
    throw std::runtime_error("dataset has " + std::to_string(m.num_classes()) + " classes, checkpoint has " +
                             std::to_string(net.config().num_classes));
  const auto inputs = prepare_inputs(load_samples<float>(m), net.config().input, a.k);
  const auto r = evaluate(net, inputs, a.batch, a.seed);
  std::printf("samples: %zu\nloss: %.6f\nOA: %.4f\n", r.count, r.loss, r.oa);
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const std::string name = c < m.class_names.size() ? m.class_names[c] : "class" + std::to_string(c);
    std::printf("  %-10s %.4f\n", name.c_str(), r.per_class[c]);
  }
  return 0;
}

int run_bench(const BenchArgs& a) {
  BenchOptions opt;
  opt.block.c_in = a.c_in;
  opt.block.c_out = a.c_out;
  opt.block.r_a = a.ra;
  opt.block.r_d = a.rd;
  opt.block.family = parse_family(a.family);
  opt.block.style = parse_style(a.style);
  opt.k = a.k;
  opt.repeats = a.repeats;
  opt.baseline = a.baseline;
  opt.seed = a.seed;
  std::printf("%6s %12s %12s %5s %12s %8s %8s %7s %9s %9s %9s", "n", "model_macs", "counted", "match", "knn_macs",
              "dominant", "total", "recomp", "app_ms", "1nn_ms", "knn_ms");
  if (a.baseline) std::printf(" %9s", "knnblk_ms");
  std::printf("\n");
  bool all_match = true;
  std::vector<double> xs, ys;
  for (std::size_t n : a.n_list) {
    const auto r = bench_block(n, opt);
    const bool match = r.model_macs == r.counted_macs;
    all_match = all_match && match;
    xs.push_back(static_cast<double>(n));
    ys.push_back(static_cast<double>(r.counted_macs));
    std::printf("%6zu %12zu %12zu %5s %12zu %8.3f %8.3f %7.2f %9.3f %9.3f %9.3f", n, r.model_macs, r.counted_macs,
                match ? "yes" : "NO", r.baseline_macs, r.dominant_ratio, r.total_ratio, r.recompute_factor,
                1e3 * r.app_seconds, 1e3 * r.one_nn_seconds, 1e3 * r.knn_seconds);
    if (a.baseline) std::printf(" %9.3f", 1e3 * r.baseline_seconds);
    std::printf("\n");
  }
  if (xs.size() >= 2) {
    const auto fit = fit_line(xs, ys);
    std::printf("linear fit: macs = %.3f * n + %.1f, R^2 = %.6f\n", fit.slope, fit.intercept, fit.r2);
  }
  if (!all_match) {
    std::cerr << "instrumented counts differ from the cost model\n";
    return 1;
  }
  return 0;
}

int run_oracle(const OracleArgs& a) {
  using namespace selfcheck;
  const bool dbl = a.precision != "single", sgl = a.precision != "double";
  const std::size_t t = a.trials;
  std::vector<CheckResult> results;
  if (dbl) results.push_back(reducibility<double>(t, a.seed, 1e-12));
  if (sgl) results.push_back(reducibility<float>(t, a.seed, 1e-5));
  if (dbl) results.push_back(reuse_identities<double>(t, a.seed + 1));
  if (sgl) results.push_back(reuse_identities<float>(t, a.seed + 1));
  if (dbl) results.push_back(anchor_independence<double>(std::max<std::size_t>(t / 10, 1), a.seed + 2, 1e-10));
  if (sgl) results.push_back(anchor_independence<float>(std::max<std::size_t>(t / 10, 1), a.seed + 2, 1e-5));
  results.push_back(oracle_equivalence(std::max<std::size_t>(t / 2, 1), a.seed + 3, 1e-10));
  results.push_back(network_gradients(a.seed + 4, 1e-4));
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-4s %-30s worst %.3g (tol %.3g, %zu cases)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.worst,
                r.tolerance, r.cases);
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"APP-Net point-cloud classification"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "write a synthetic shape dataset with train/test manifests");
  g->add_option("--classes", gen.spec.classes, "number of shape classes")->check(CLI::Range(2, 4))->capture_default_str();
  g->add_option("--train-per-class", gen.spec.train_per_class)->capture_default_str();
  g->add_option("--test-per-class", gen.spec.test_per_class)->capture_default_str();
  g->add_option("--points", gen.spec.points, "points per cloud")->capture_default_str();
  g->add_option("--noise", gen.spec.noise, "gaussian noise sigma")->capture_default_str();
  g->add_option("--seed", gen.spec.seed)->capture_default_str();
  g->add_option("--out", gen.out, "output directory")->required();
  add_config(g);

  NormalsArgs nrm;
  auto* n = app.add_subcommand("normals", "estimate normals and curvature of an XYZ file");
  n->add_option("--in", nrm.in, "input XYZ file")->required();
  n->add_option("--k", nrm.k, "neighbors per point")->check(CLI::Range(3, 1000))->capture_default_str();
  n->add_option("--out", nrm.out, "write x y z nx ny nz curvature here");
  add_config(n);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a classifier on a generated dataset");
  t->add_option("--data", tr.data, "dataset directory with train.txt and test.txt")->required();
  t->add_option("--epochs", tr.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  t->add_option("--seed", tr.seed, "shuffling, augmentation and partition seed")->capture_default_str();
  t->add_option("--init-seed", tr.net_seed, "weight initialization seed")->capture_default_str();
  t->add_option("--checkpoint", tr.checkpoint, "write the best-epoch weights here");
  t->add_option("--batch", tr.batch)->check(CLI::PositiveNumber)->capture_default_str();
  t->add_option("--test-batch", tr.test_batch)->check(CLI::PositiveNumber)->capture_default_str();
  t->add_option("--lr", tr.lr, "peak learning rate")->capture_default_str();
  t->add_option("--lr-min", tr.lr_min)->capture_default_str();
  t->add_option("--t-max", tr.t_max, "cosine period in epochs (default: --epochs)");
  t->add_option("--warmup", tr.warmup, "warmup epochs")->capture_default_str();
  t->add_option("--k", tr.k, "neighbors for normal estimation")->check(CLI::Range(3, 1000))->capture_default_str();
  t->add_option("--jitter", tr.jitter, "per-point jitter sigma")->capture_default_str();
  t->add_flag("--no-rotate", tr.no_rotate, "disable random rotation about z");
  add_net_options(t, tr.net);
  add_config(t);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
  e->add_option("--data", ev.data, "dataset directory")->required();
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--split", ev.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  e->add_option("--batch", ev.batch)->check(CLI::PositiveNumber)->capture_default_str();
  e->add_option("--k", ev.k, "neighbors for normal estimation")->check(CLI::Range(3, 1000))->capture_default_str();
  e->add_option("--seed", ev.seed, "partition seed")->capture_default_str();
  add_config(e);

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "cost model, instrumented counts and timings for one block");
  b->add_option("--n-list", be.n_list, "point counts, comma separated")->delimiter(',')->check(CLI::PositiveNumber);
  b->add_flag("--baseline", be.baseline, "also time the whole kNN baseline block");
  b->add_option("--family", be.family)->check(CLI::IsMember(kFamilies))->capture_default_str();
  b->add_option("--style", be.style)->check(CLI::IsMember(kStyles))->capture_default_str();
  b->add_option("--c-in", be.c_in)->check(CLI::PositiveNumber)->capture_default_str();
  b->add_option("--c-out", be.c_out)->check(CLI::PositiveNumber)->capture_default_str();
  b->add_option("--ra", be.ra, "auxiliary ratio")->check(CLI::PositiveNumber)->capture_default_str();
  b->add_option("--rd", be.rd, "downsample ratio")->check(CLI::PositiveNumber)->capture_default_str();
  b->add_option("--k", be.k, "baseline neighbors (centers = n / 2)")->check(CLI::PositiveNumber)->capture_default_str();
  b->add_option("--repeats", be.repeats, "timing repeats (median)")->check(CLI::PositiveNumber)->capture_default_str();
  b->add_option("--seed", be.seed)->capture_default_str();
  add_config(b);

  OracleArgs orc;
  auto* o = app.add_subcommand("oracle-check", "randomized numeric self-checks");
  o->add_option("--trials", orc.trials, "draws per family")->check(CLI::PositiveNumber)->capture_default_str();
  o->add_option("--precision", orc.precision)->check(CLI::IsMember({"double", "single", "both"}))->capture_default_str();
  o->add_option("--seed", orc.seed)->capture_default_str();
  add_config(o);

  std::vector<std::string> args(argv, argv + argc);
  try {
    args = merge_config(app, args);
    std::vector<char*> ptrs;
    for (auto& s : args) ptrs.push_back(s.data());
    app.parse(static_cast<int>(ptrs.size()), ptrs.data());
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*g) return run_gen(gen);
    if (*n) return run_normals(nrm);
    if (*t) return run_train(tr);
    if (*e) return run_eval(ev);
    if (*b) return run_bench(be);
    if (*o) return run_oracle(orc);
  } catch (const CLI::Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}
