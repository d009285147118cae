#pragma once

#include <cstdint>
#include <string>

#include "remix/trainer.hpp"

namespace remix {

struct BenchConfig {
  ModelKind model = ModelKind::Abmil;
  uint32_t epochs = 3;  // timed epochs; one extra warm-up epoch is excluded
  uint64_t seed = 0;
  uint32_t hidden_width = 128;
  uint32_t query_width = 128;
};

struct BenchModeResult {
  std::string mode;  // "full" or "reduced"
  double mean_seconds_per_epoch = 0.0;
  uint64_t peak_bag_memory_bytes = 0;
};

struct BenchReport {
  BenchModeResult full;
  BenchModeResult reduced;
  double time_ratio = 0.0;    // full / reduced
  double memory_ratio = 0.0;  // full / reduced
};

// Trains the model in both representations with identical seeds and epoch
// counts; only the representation differs. Peak memory is the
// BagMemoryTracker high-water mark while the split is resident.
BenchReport run_bench(const BagManifest& full_manifest, const BagManifest& reduced_manifest,
                      const BenchConfig& cfg);

std::string bench_json(const BenchReport& report);

}  // namespace remix
