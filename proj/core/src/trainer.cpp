#include "remix/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"
#include "remix/rng.hpp"

namespace remix {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::runtime_error("epochs must be >= 1");
  if (initial_lr <= 0.0) throw std::runtime_error("lr must be > 0");
  if (repeats < 1) throw std::runtime_error("repeats must be >= 1");
  augment.validate();
  if (!reduced && augment.kind != AugmentKind::None) {
    throw std::runtime_error("augmentation requires reduced-bag mode");
  }
}

TrainingSet load_dataset(const BagManifest& manifest, bool reduced) {
  if (manifest.entries.empty()) throw std::runtime_error("empty manifest");
  TrainingSet set;
  set.reduced = reduced;
  set.class_count = manifest.class_count;
  set.dim = manifest.entries.front().dim;
  for (const auto& e : manifest.entries) {
    std::string path = manifest.resolve(e);
    if (reduced) {
      BagDictionary dict = read_dictionary(path);
      dict.bag_id = e.bag_id;
      set.payloads.emplace_back(uint64_t(dict.centroids.size()) * 4);
      set.dicts.push_back(std::move(dict));
    } else {
      FeatureBag bag = read_bag(path);
      bag.bag_id = e.bag_id;
      set.payloads.emplace_back(uint64_t(bag.features.size()) * 4);
      set.bags.push_back(std::move(bag));
    }
  }
  return set;
}

std::string epoch_log_csv(const std::vector<EpochLog>& logs) {
  std::ostringstream os;
  os << "epoch,loss,lr,seconds\n";
  for (const auto& log : logs) {
    os << log.epoch << ',' << log.mean_loss << ',' << log.lr << ',' << log.seconds << '\n';
  }
  return os.str();
}

namespace {

std::vector<size_t> seeded_permutation(size_t n, uint64_t seed) {
  std::vector<size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (size_t i = n; i > 1; --i) {  // Fisher-Yates
    std::swap(perm[i - 1], perm[size_t(rng.uniform_int(i))]);
  }
  return perm;
}

KeyIndex key_index_of(const TrainingSet& set) {
  KeyIndex index;
  index.by_class.resize(set.class_count);
  for (size_t i = 0; i < set.size(); ++i) {
    if (set.label_of(i) >= set.class_count) throw std::runtime_error("label out of range");
    index.by_class[set.label_of(i)].push_back(set.id_of(i));
  }
  return index;
}

}  // namespace

TrainOutput train(const TrainingSet& train_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.size() == 0) throw std::runtime_error("empty training set");
  if (cfg.augment.kind != AugmentKind::None && !train_set.reduced) {
    throw std::runtime_error("augmentation requires reduced-bag mode");
  }
  if ((cfg.augment.kind == AugmentKind::Covary || cfg.augment.kind == AugmentKind::Joint) &&
      train_set.reduced && !train_set.dicts.empty() &&
      train_set.dicts.front().cov_mode == CovMode::None) {
    throw std::runtime_error("covary requires covariance");
  }

  TrainOutput out;
  out.model = init_params(cfg.model, train_set.dim, train_set.class_count, cfg.hidden_width,
                          cfg.query_width, derive_seed(cfg.seed, uint64_t(0x1217)));
  OptimizerState opt = OptimizerState::for_model(out.model);

  KeyIndex key_index;
  std::unordered_map<std::string, const BagDictionary*> dict_map;
  if (train_set.reduced) {
    key_index = key_index_of(train_set);
    for (const auto& d : train_set.dicts) dict_map[d.bag_id] = &d;
  }

  const size_t bag_count = train_set.size();
  LrSchedule schedule{cfg.initial_lr, uint64_t(cfg.epochs) * bag_count};
  Rng mix_rng(derive_seed(cfg.seed, uint64_t(0xa46)));

  uint64_t step = 0;
  for (uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    auto perm = seeded_permutation(bag_count, derive_seed(cfg.seed, uint64_t(epoch) + 1));
    double loss_sum = 0.0;
    double epoch_lr = cosine_lr(step, schedule);
    for (size_t i : perm) {
      MatrixRXd instances;
      uint32_t label;
      if (train_set.reduced) {
        const BagDictionary& dict = train_set.dicts[i];
        label = dict.label;
        if (cfg.augment.kind != AugmentKind::None) {
          MixedBag mixed = mix_bag(dict, key_index, dict_map, cfg.augment, mix_rng);
          out.mix_events += mixed.provenance.size();
          instances = std::move(mixed.instances);
        } else {
          instances = dict.centroids.cast<double>();
        }
      } else {
        instances = train_set.bags[i].features.cast<double>();
        label = train_set.bags[i].label;
      }
      Gradients grads = backward(out.model, instances, label);
      loss_sum += grads.loss;
      adam_step(out.model, grads, opt, cosine_lr(step, schedule));
      ++step;
    }
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.epoch_logs.push_back({epoch, loss_sum / double(bag_count), epoch_lr, seconds});
  }
  out.optimizer_steps = opt.step;

  for (const auto& t : out.model.tensors()) {
    if (!t.allFinite()) throw std::runtime_error("non-finite parameters after training");
  }
  return out;
}

EvalReport macro_metrics(const std::vector<std::vector<uint64_t>>& confusion) {
  const size_t c = confusion.size();
  if (c == 0) throw std::runtime_error("empty confusion matrix");
  uint64_t total = 0;
  uint64_t correct = 0;
  EvalReport report;
  report.confusion = confusion;
  report.per_class_precision.resize(c);
  report.per_class_recall.resize(c);
  for (size_t i = 0; i < c; ++i) {
    if (confusion[i].size() != c) throw std::runtime_error("confusion matrix not square");
    for (size_t j = 0; j < c; ++j) total += confusion[i][j];
    correct += confusion[i][i];
  }
  if (total == 0) throw std::runtime_error("all-zero confusion matrix");
  for (size_t k = 0; k < c; ++k) {
    uint64_t tp = confusion[k][k];
    uint64_t predicted = 0;  // tp + fp
    uint64_t actual = 0;     // tp + fn
    for (size_t i = 0; i < c; ++i) {
      predicted += confusion[i][k];
      actual += confusion[k][i];
    }
    report.per_class_precision[k] = predicted == 0 ? 0.0 : double(tp) / double(predicted);
    report.per_class_recall[k] = actual == 0 ? 0.0 : double(tp) / double(actual);
  }
  report.precision =
      std::accumulate(report.per_class_precision.begin(), report.per_class_precision.end(), 0.0) /
      double(c);
  report.recall =
      std::accumulate(report.per_class_recall.begin(), report.per_class_recall.end(), 0.0) /
      double(c);
  report.accuracy = double(correct) / double(total);
  report.average = (report.precision + report.recall + report.accuracy) / 3.0;
  return report;
}

EvalReport evaluate(const MilModel& model, const TrainingSet& test_set) {
  if (test_set.size() == 0) throw std::runtime_error("empty test set");
  if (model.dim() != Eigen::Index(test_set.dim)) {
    throw std::runtime_error("dim mismatch " + std::to_string(model.dim()) + " vs " +
                             std::to_string(test_set.dim));
  }
  if (model.classes() < Eigen::Index(test_set.class_count)) {
    throw std::runtime_error("class count mismatch");
  }
  const size_t c = size_t(model.classes());
  std::vector<std::vector<uint64_t>> confusion(c, std::vector<uint64_t>(c, 0));
  for (size_t i = 0; i < test_set.size(); ++i) {
    MatrixRXd instances = test_set.reduced ? test_set.dicts[i].centroids.cast<double>()
                                           : test_set.bags[i].features.cast<double>();
    ForwardResult fwd = model_forward(instances, model);
    Eigen::Index pred = 0;
    fwd.logits.maxCoeff(&pred);
    ++confusion[test_set.label_of(i)][size_t(pred)];
  }
  return macro_metrics(confusion);
}

AggregateReport run_repeated(const TrainingSet& train_set, const TrainingSet& test_set,
                             const TrainConfig& cfg, uint32_t n) {
  if (n < 1) throw std::runtime_error("need at least one run");
  AggregateReport agg;
  for (uint32_t r = 0; r < n; ++r) {
    TrainConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + r;
    TrainOutput trained = train(train_set, run_cfg);
    agg.runs.push_back(evaluate(trained.model, test_set));
    if (r == 0) {
      agg.first_model = std::move(trained.model);
      agg.first_epoch_logs = std::move(trained.epoch_logs);
    }
  }

  const size_t c = agg.runs.front().per_class_precision.size();
  agg.mean.per_class_precision.assign(c, 0.0);
  agg.mean.per_class_recall.assign(c, 0.0);
  agg.mean.confusion.assign(c, std::vector<uint64_t>(c, 0));
  auto mean_of = [&](auto getter) {
    double s = 0.0;
    for (const auto& r : agg.runs) s += getter(r);
    return s / double(n);
  };
  auto std_of = [&](auto getter, double mean) {
    double s = 0.0;
    for (const auto& r : agg.runs) s += (getter(r) - mean) * (getter(r) - mean);
    return std::sqrt(s / double(n));  // population std
  };
  agg.mean.precision = mean_of([](const EvalReport& r) { return r.precision; });
  agg.mean.recall = mean_of([](const EvalReport& r) { return r.recall; });
  agg.mean.accuracy = mean_of([](const EvalReport& r) { return r.accuracy; });
  agg.mean.average = mean_of([](const EvalReport& r) { return r.average; });
  agg.stddev.precision =
      std_of([](const EvalReport& r) { return r.precision; }, agg.mean.precision);
  agg.stddev.recall = std_of([](const EvalReport& r) { return r.recall; }, agg.mean.recall);
  agg.stddev.accuracy = std_of([](const EvalReport& r) { return r.accuracy; }, agg.mean.accuracy);
  agg.stddev.average = std_of([](const EvalReport& r) { return r.average; }, agg.mean.average);
  for (const auto& r : agg.runs) {
    for (size_t i = 0; i < c; ++i) {
      agg.mean.per_class_precision[i] += r.per_class_precision[i] / double(n);
      agg.mean.per_class_recall[i] += r.per_class_recall[i] / double(n);
      for (size_t j = 0; j < c; ++j) agg.mean.confusion[i][j] += r.confusion[i][j];
    }
  }
  return agg;
}

std::string report_json(const EvalReport& report, const MetricStd& stddev) {
  nlohmann::ordered_json j;
  j["precision"] = report.precision;
  j["recall"] = report.recall;
  j["accuracy"] = report.accuracy;
  j["average"] = report.average;
  j["per_class"] = {{"precision", report.per_class_precision},
                    {"recall", report.per_class_recall}};
  j["confusion"] = report.confusion;
  j["std"] = {{"precision", stddev.precision},
              {"recall", stddev.recall},
              {"accuracy", stddev.accuracy},
              {"average", stddev.average}};
  return j.dump(2) + "\n";
}

std::string report_json(const AggregateReport& aggregate) {
  return report_json(aggregate.mean, aggregate.stddev);
}

}  // namespace remix
