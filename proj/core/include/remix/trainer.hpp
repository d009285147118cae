#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "remix/bagstore.hpp"
#include "remix/milnet.hpp"
#include "remix/mixer.hpp"
#include "remix/types.hpp"

namespace remix {

struct TrainConfig {
  ModelKind model = ModelKind::Abmil;
  uint32_t epochs = 50;
  double initial_lr = 2e-4;
  AugmentConfig augment;
  bool reduced = true;  // reduced-bag (RMXR) vs full-bag (RMX1) training
  uint64_t seed = 0;
  uint32_t repeats = 10;
  uint32_t hidden_width = 128;  // ABMIL H
  uint32_t query_width = 128;   // DSMIL Q

  void validate() const;
};

// A split loaded into memory. Feature payloads register with the
// BagMemoryTracker for the lifetime of the set.
struct TrainingSet {
  bool reduced = false;
  uint32_t class_count = 0;
  uint32_t dim = 0;
  std::vector<FeatureBag> bags;          // full mode
  std::vector<BagDictionary> dicts;      // reduced mode
  std::vector<TrackedPayload> payloads;

  size_t size() const { return reduced ? dicts.size() : bags.size(); }
  uint32_t label_of(size_t i) const { return reduced ? dicts[i].label : bags[i].label; }
  const std::string& id_of(size_t i) const {
    return reduced ? dicts[i].bag_id : bags[i].bag_id;
  }
};

TrainingSet load_dataset(const BagManifest& manifest, bool reduced);

struct EpochLog {
  uint32_t epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;  // learning rate at the epoch's first step
  double seconds = 0.0;
};

std::string epoch_log_csv(const std::vector<EpochLog>& logs);

struct EvalReport {
  double precision = 0.0;  // macro
  double recall = 0.0;     // macro
  double accuracy = 0.0;
  double average = 0.0;  // mean of the three
  std::vector<double> per_class_precision;
  std::vector<double> per_class_recall;
  std::vector<std::vector<uint64_t>> confusion;  // [true][predicted]
};

struct MetricStd {
  double precision = 0.0;
  double recall = 0.0;
  double accuracy = 0.0;
  double average = 0.0;
};

struct TrainOutput {
  MilModel model;
  std::vector<EpochLog> epoch_logs;
  uint64_t optimizer_steps = 0;
  uint64_t mix_events = 0;
};

// Per epoch: seeded shuffle, then per bag mix (train-time only, reduced
// mode), forward, cross-entropy, backward, Adam at cosine_lr(step) with
// T = epochs * bag count. Deterministic given (seed, cfg, dataset bytes).
TrainOutput train(const TrainingSet& train_set, const TrainConfig& cfg);

// No augmentation, no randomness; prediction = argmax logits.
EvalReport evaluate(const MilModel& model, const TrainingSet& test_set);

// Per-class precision/recall averaged unweighted over classes; a class
// with a zero denominator contributes 0. accuracy = trace/total.
EvalReport macro_metrics(const std::vector<std::vector<uint64_t>>& confusion);

struct AggregateReport {
  EvalReport mean;  // confusion holds the sum over runs
  MetricStd stddev;  // population std over runs
  std::vector<EvalReport> runs;
  MilModel first_model;  // checkpoint of the seed-cfg.seed run
  std::vector<EpochLog> first_epoch_logs;
};

// n runs with seeds cfg.seed .. cfg.seed + n - 1; each run re-initializes
// and re-shuffles from its own seed.
AggregateReport run_repeated(const TrainingSet& train_set, const TrainingSet& test_set,
                             const TrainConfig& cfg, uint32_t n);

// Fixed key order: {precision, recall, accuracy, average, per_class,
// confusion, std}.
std::string report_json(const EvalReport& report, const MetricStd& stddev);
std::string report_json(const AggregateReport& aggregate);

}  // namespace remix
