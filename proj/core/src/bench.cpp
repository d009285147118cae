#include "remix/bench.hpp"

#include <stdexcept>

#include "json.hpp"

namespace remix {

namespace {

BenchModeResult bench_mode(const BagManifest& manifest, bool reduced, const BenchConfig& cfg) {
  BagMemoryTracker::instance().reset();
  TrainingSet set = load_dataset(manifest, reduced);

  TrainConfig train_cfg;
  train_cfg.model = cfg.model;
  train_cfg.epochs = cfg.epochs + 1;  // first epoch is warm-up
  train_cfg.augment.kind = AugmentKind::None;
  train_cfg.reduced = reduced;
  train_cfg.seed = cfg.seed;
  train_cfg.hidden_width = cfg.hidden_width;
  train_cfg.query_width = cfg.query_width;
  TrainOutput out = train(set, train_cfg);

  BenchModeResult result;
  result.mode = reduced ? "reduced" : "full";
  double total = 0.0;
  for (size_t e = 1; e < out.epoch_logs.size(); ++e) total += out.epoch_logs[e].seconds;
  result.mean_seconds_per_epoch = total / double(cfg.epochs);
  result.peak_bag_memory_bytes = BagMemoryTracker::instance().peak();
  return result;
}

}  // namespace

BenchReport run_bench(const BagManifest& full_manifest, const BagManifest& reduced_manifest,
                      const BenchConfig& cfg) {
  if (full_manifest.entries.size() != reduced_manifest.entries.size()) {
    throw std::runtime_error("full and reduced manifests must pair the same bags");
  }
  BenchReport report;
  report.full = bench_mode(full_manifest, false, cfg);
  report.reduced = bench_mode(reduced_manifest, true, cfg);
  if (report.reduced.mean_seconds_per_epoch > 0.0) {
    report.time_ratio = report.full.mean_seconds_per_epoch / report.reduced.mean_seconds_per_epoch;
  }
  if (report.reduced.peak_bag_memory_bytes > 0) {
    report.memory_ratio = double(report.full.peak_bag_memory_bytes) /
                          double(report.reduced.peak_bag_memory_bytes);
  }
  return report;
}

std::string bench_json(const BenchReport& report) {
  nlohmann::ordered_json j;
  for (const auto* mode : {&report.full, &report.reduced}) {
    nlohmann::ordered_json m;
    m["mode"] = mode->mode;
    m["mean_seconds_per_epoch"] = mode->mean_seconds_per_epoch;
    m["peak_bag_memory_bytes"] = mode->peak_bag_memory_bytes;
    j[mode->mode] = m;
  }
  j["time_ratio"] = report.time_ratio;
  j["memory_ratio"] = report.memory_ratio;
  return j.dump(2) + "\n";
}

}  // namespace remix
