#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "remix/bagstore.hpp"
#include "remix/bench.hpp"
#include "remix/milnet.hpp"
#include "remix/mixer.hpp"
#include "remix/reducer.hpp"
#include "remix/trainer.hpp"

namespace fs = std::filesystem;
using namespace remix;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

uint32_t reduction_threads() {
  if (const char* env = std::getenv("REMIX_THREADS")) {
    long v = std::strtol(env, nullptr, 10);
    if (v > 0) return uint32_t(v);
  }
  return 0;  // reducer default: available cores
}

CovMode parse_cov_mode(const std::string& name) {
  if (name == "none") return CovMode::None;
  if (name == "diag") return CovMode::Diag;
  if (name == "full") return CovMode::Full;
  throw UsageError("unknown covariance mode: " + name);
}

LambdaPolicy parse_lambda(const std::string& text) {
  LambdaPolicy policy;
  if (text == "uniform") return policy;
  if (text.rfind("fixed:", 0) == 0) {
    policy.fixed = true;
    policy.value = std::stod(text.substr(6));
    if (policy.value < 0.0 || policy.value > 1.0) {
      throw UsageError("fixed lambda must be in [0,1]");
    }
    return policy;
  }
  throw UsageError("lambda policy must be 'uniform' or 'fixed:<v>'");
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << content;
}

void print_stats(const DatasetStats& stats) {
  std::ostringstream os;
  os << "bags=" << stats.bag_count << " mean_n=" << stats.mean_instances
     << " min_n=" << stats.min_instances << " max_n=" << stats.max_instances
     << " dim=" << stats.dim << " classes=[";
  for (size_t i = 0; i < stats.class_histogram.size(); ++i) {
    os << (i ? "," : "") << stats.class_histogram[i];
  }
  os << "]";
  std::cout << os.str() << "\n";
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  SynthConfig cfg;
  std::string out;
};

void add_synth(CLI::App& app, SynthArgs& args) {
  auto* cmd = app.add_subcommand("synth", "generate a synthetic MIL dataset");
  cmd->add_option("--classes", args.cfg.class_count, "class count")->default_val(2);
  cmd->add_option("--bags", args.cfg.train_bags_per_class, "train bags per class")
      ->default_val(100);
  cmd->add_option("--test-bags", args.cfg.test_bags_per_class, "test bags per class")
      ->default_val(50);
  cmd->add_option("--dim", args.cfg.dim, "feature dimension")->default_val(32);
  cmd->add_option("--n-min", args.cfg.n_min)->default_val(200);
  cmd->add_option("--n-max", args.cfg.n_max)->default_val(800);
  cmd->add_option("--rho", args.cfg.evidence_fraction, "evidence fraction")->default_val(0.2);
  cmd->add_option("--std", args.cfg.component_std, "component std")->default_val(1.0);
  cmd->add_option("--bg-components", args.cfg.background_components)->default_val(4);
  cmd->add_option("--evidence-components", args.cfg.evidence_components_per_class)
      ->default_val(2);
  cmd->add_option("--seed", args.cfg.seed)->default_val(0);
  cmd->add_option("--out", args.out, "output directory")->required();
  cmd->callback([&args]() {
    try {
      args.cfg.validate();
    } catch (const std::exception& ex) {
      throw UsageError(ex.what());
    }
    SynthResult result = generate_synthetic_dataset(args.cfg, args.out);
    print_stats(dataset_stats(result.train));
    print_stats(dataset_stats(result.test));
  });
}

struct ReduceArgs {
  ReduceConfig cfg;
  std::string cov = "full";
  std::string manifest;
  std::string out;
};

void add_reduce(CLI::App& app, ReduceArgs& args) {
  auto* cmd = app.add_subcommand("reduce", "reduce bags to prototype dictionaries");
  cmd->add_option("--manifest", args.manifest)->required();
  cmd->add_option("--k", args.cfg.k, "prototype count")->default_val(8);
  cmd->add_option("--cov", args.cov, "covariance mode: none|diag|full")->default_val("full");
  cmd->add_flag("--normalize", args.cfg.normalize, "L2-normalize features before clustering");
  cmd->add_option("--restarts", args.cfg.restarts)->default_val(1);
  cmd->add_option("--max-iters", args.cfg.max_iterations)->default_val(100);
  cmd->add_option("--tol", args.cfg.shift_tolerance)->default_val(1e-4);
  cmd->add_option("--seed", args.cfg.seed)->default_val(0);
  cmd->add_option("--out", args.out)->required();
  cmd->callback([&args]() {
    if (args.cfg.k < 1) throw UsageError("K must be >= 1");
    args.cfg.cov_mode = parse_cov_mode(args.cov);
    try {
      args.cfg.validate();
    } catch (const std::exception& ex) {
      throw UsageError(ex.what());
    }
    BagManifest manifest = read_manifest(args.manifest);
    BagManifest reduced = reduce_dataset(manifest, args.cfg, args.out, reduction_threads());
    uint64_t before = 0;
    uint64_t after = 0;
    for (const auto& e : manifest.entries) before += e.n_instances;
    for (const auto& e : reduced.entries) after += e.n_instances;
    std::cout << "reduction_ratio=" << double(before) / double(after) << "\n";
  });
}

struct TrainArgs {
  std::string manifest;
  std::string test_manifest;
  std::string mode = "reduced";
  std::string model = "abmil";
  std::string aug = "none";
  std::string lambda = "uniform";
  std::string gate = "prototype";
  std::string out = ".";
  TrainConfig cfg;
  bool p_set = false;
};

TrainConfig build_train_config(TrainArgs& args) {
  TrainConfig cfg = args.cfg;
  cfg.model = parse_model_kind(args.model);
  cfg.reduced = args.mode == "reduced";
  if (!cfg.reduced && args.mode != "full") throw UsageError("mode must be reduced|full");
  cfg.augment.kind = parse_augment_kind(args.aug);
  if (!args.p_set && cfg.augment.kind == AugmentKind::Joint) cfg.augment.probability = 0.1;
  cfg.augment.lambda = parse_lambda(args.lambda);
  if (args.gate == "prototype") {
    cfg.augment.gate = GateMode::Prototype;
  } else if (args.gate == "bag") {
    cfg.augment.gate = GateMode::Bag;
  } else {
    throw UsageError("gate must be prototype|bag");
  }
  if (!cfg.reduced && cfg.augment.kind != AugmentKind::None) {
    throw UsageError("augmentation requires reduced-bag mode");
  }
  try {
    cfg.validate();
  } catch (const std::exception& ex) {
    throw UsageError(ex.what());
  }
  return cfg;
}

void add_train(CLI::App& app, TrainArgs& args) {
  auto* cmd = app.add_subcommand("train", "train a MIL model");
  cmd->add_option("--manifest", args.manifest, "train manifest")->required();
  cmd->add_option("--test-manifest", args.test_manifest, "test manifest")->required();
  cmd->add_option("--mode", args.mode, "reduced|full")->default_val("reduced");
  cmd->add_option("--model", args.model, "abmil|dsmil")->default_val("abmil");
  cmd->add_option("--aug", args.aug, "none|append|replace|interpolate|covary|joint")
      ->default_val("none");
  auto* p_opt = cmd->add_option("--p", args.cfg.augment.probability, "augmentation probability");
  cmd->add_option("--lambda", args.lambda, "uniform|fixed:<v>")->default_val("uniform");
  cmd->add_option("--gate", args.gate, "prototype|bag")->default_val("prototype");
  cmd->add_option("--epochs", args.cfg.epochs)->default_val(50);
  cmd->add_option("--lr", args.cfg.initial_lr)->default_val(2e-4);
  cmd->add_option("--runs", args.cfg.repeats)->default_val(1);
  cmd->add_option("--seed", args.cfg.seed)->default_val(0);
  cmd->add_option("--hidden", args.cfg.hidden_width)->default_val(128);
  cmd->add_option("--query", args.cfg.query_width)->default_val(128);
  cmd->add_option("--out", args.out, "output directory")->default_val(".");
  cmd->callback([&args, p_opt]() {
    args.p_set = p_opt->count() > 0;
    TrainConfig cfg = build_train_config(args);
    BagManifest train_manifest = read_manifest(args.manifest);
    BagManifest test_manifest = read_manifest(args.test_manifest);
    TrainingSet train_set = load_dataset(train_manifest, cfg.reduced);
    TrainingSet test_set = load_dataset(test_manifest, cfg.reduced);
    if ((cfg.augment.kind == AugmentKind::Covary || cfg.augment.kind == AugmentKind::Joint) &&
        (train_set.dicts.empty() || train_set.dicts.front().cov_mode == CovMode::None)) {
      throw UsageError("covary requires covariance");
    }
    AggregateReport agg = run_repeated(train_set, test_set, cfg, cfg.repeats);
    fs::create_directories(args.out);
    write_checkpoint(agg.first_model, args.out + "/model.rmxm");
    write_file(args.out + "/epochs.csv", epoch_log_csv(agg.first_epoch_logs));
    std::string report = report_json(agg);
    write_file(args.out + "/report.json", report);
    std::cout << report;
  });
}

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string mode = "reduced";
};

void add_eval(CLI::App& app, EvalArgs& args) {
  auto* cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  cmd->add_option("--checkpoint", args.checkpoint)->required();
  cmd->add_option("--manifest", args.manifest, "test manifest")->required();
  cmd->add_option("--mode", args.mode, "reduced|full")->default_val("reduced");
  cmd->callback([&args]() {
    if (args.mode != "reduced" && args.mode != "full") {
      throw UsageError("mode must be reduced|full");
    }
    MilModel model = read_checkpoint(args.checkpoint);
    BagManifest manifest = read_manifest(args.manifest);
    TrainingSet test_set = load_dataset(manifest, args.mode == "reduced");
    EvalReport report = evaluate(model, test_set);
    std::cout << report_json(report, MetricStd{});
  });
}

struct BenchArgs {
  std::string full_manifest;
  std::string reduced_manifest;
  std::string model = "abmil";
  BenchConfig cfg;
};

void add_bench(CLI::App& app, BenchArgs& args) {
  auto* cmd = app.add_subcommand("bench", "paired full-vs-reduced training budget benchmark");
  cmd->add_option("--full-manifest", args.full_manifest)->required();
  cmd->add_option("--reduced-manifest", args.reduced_manifest)->required();
  cmd->add_option("--model", args.model, "abmil|dsmil")->default_val("abmil");
  cmd->add_option("--epochs", args.cfg.epochs, "timed epochs (one warm-up epoch excluded)")
      ->default_val(3);
  cmd->add_option("--seed", args.cfg.seed)->default_val(0);
  cmd->callback([&args]() {
    if (!fs::exists(args.full_manifest)) {
      throw UsageError("missing full-bag manifest: " + args.full_manifest);
    }
    if (!fs::exists(args.reduced_manifest)) {
      throw UsageError("missing reduced-bag manifest: " + args.reduced_manifest);
    }
    args.cfg.model = parse_model_kind(args.model);
    BenchReport report = run_bench(read_manifest(args.full_manifest),
                                   read_manifest(args.reduced_manifest), args.cfg);
    std::cout << bench_json(report);
  });
}

struct SweepArgs {
  TrainArgs train;
  std::string param;
  std::string values;
  uint32_t k = 8;
  std::string cov = "full";
  std::string work_dir = "sweep_work";
};

void add_sweep(CLI::App& app, SweepArgs& args) {
  auto* cmd = app.add_subcommand("sweep", "train+eval across one hyper-parameter grid");
  cmd->add_option("--param", args.param, "k|p|epochs")->required();
  cmd->add_option("--values", args.values, "comma-separated value list")->required();
  cmd->add_option("--manifest", args.train.manifest,
                  "train manifest (full-bag for k sweeps, reduced otherwise)")
      ->required();
  cmd->add_option("--test-manifest", args.train.test_manifest)->required();
  cmd->add_option("--model", args.train.model)->default_val("abmil");
  cmd->add_option("--aug", args.train.aug)->default_val("none");
  auto* p_opt = cmd->add_option("--p", args.train.cfg.augment.probability);
  cmd->add_option("--lambda", args.train.lambda)->default_val("uniform");
  cmd->add_option("--epochs", args.train.cfg.epochs)->default_val(50);
  cmd->add_option("--lr", args.train.cfg.initial_lr)->default_val(2e-4);
  cmd->add_option("--runs", args.train.cfg.repeats)->default_val(1);
  cmd->add_option("--seed", args.train.cfg.seed)->default_val(0);
  cmd->add_option("--k", args.k, "prototype count for reductions")->default_val(8);
  cmd->add_option("--cov", args.cov)->default_val("full");
  cmd->add_option("--out", args.work_dir, "working directory for re-reductions")
      ->default_val("sweep_work");
  cmd->callback([&args, p_opt]() {
    args.train.p_set = p_opt->count() > 0;
    if (args.param != "k" && args.param != "p" && args.param != "epochs") {
      throw UsageError("param must be k|p|epochs");
    }
    std::vector<std::string> values;
    {
      std::stringstream ss(args.values);
      std::string v;
      while (std::getline(ss, v, ',')) values.push_back(v);
    }
    if (values.empty()) throw UsageError("empty value list");
    TrainConfig base = build_train_config(args.train);

    std::cout << "value,average\n";
    for (const auto& value : values) {
      try {
        TrainConfig cfg = base;
        BagManifest train_manifest;
        BagManifest test_manifest;
        if (args.param == "k") {
          uint32_t k = uint32_t(std::stoul(value));
          if (k < 1) throw std::runtime_error("K must be >= 1");
          ReduceConfig rc;
          rc.k = k;
          rc.cov_mode = parse_cov_mode(args.cov);
          rc.seed = base.seed;
          std::string dir = args.work_dir + "/k" + value;
          train_manifest =
              reduce_dataset(read_manifest(args.train.manifest), rc, dir, reduction_threads());
          test_manifest = reduce_dataset(read_manifest(args.train.test_manifest), rc, dir,
                                         reduction_threads());
          cfg.reduced = true;
        } else {
          train_manifest = read_manifest(args.train.manifest);
          test_manifest = read_manifest(args.train.test_manifest);
          if (args.param == "p") {
            cfg.augment.probability = std::stod(value);
          } else {
            cfg.epochs = uint32_t(std::stoul(value));
          }
          cfg.validate();
        }
        TrainingSet train_set = load_dataset(train_manifest, cfg.reduced);
        TrainingSet test_set = load_dataset(test_manifest, cfg.reduced);
        AggregateReport agg = run_repeated(train_set, test_set, cfg, cfg.repeats);
        std::cout << value << ',' << agg.mean.average << "\n";
      } catch (const std::exception& ex) {
        std::cout << value << ",error:" << ex.what() << "\n";
      }
    }
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"remix: prototype-reduced multiple-instance learning pipeline"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  ReduceArgs reduce_args;
  TrainArgs train_args;
  EvalArgs eval_args;
  BenchArgs bench_args;
  SweepArgs sweep_args;
  add_synth(app, synth_args);
  add_reduce(app, reduce_args);
  add_train(app, train_args);
  add_eval(app, eval_args);
  add_bench(app, bench_args);
  add_sweep(app, sweep_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const UsageError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
