#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <utility>

#include "remix/types.hpp"

namespace remix {

// Counts concurrently-resident bag feature payload bytes (f32 payloads as
// stored on disk, centroid payload only for dictionaries). The benchmark's
// "memory peak" reads the high-water mark of this counter.
class BagMemoryTracker {
 public:
  static BagMemoryTracker& instance();

  void acquire(uint64_t bytes);
  void release(uint64_t bytes);
  void reset();

  uint64_t current() const { return current_.load(); }
  uint64_t peak() const { return peak_.load(); }

 private:
  std::atomic<uint64_t> current_{0};
  std::atomic<uint64_t> peak_{0};
};

// RAII registration of a payload against the tracker.
class TrackedPayload {
 public:
  TrackedPayload() = default;
  explicit TrackedPayload(uint64_t bytes) : bytes_(bytes) {
    BagMemoryTracker::instance().acquire(bytes_);
  }
  ~TrackedPayload() { release(); }
  TrackedPayload(TrackedPayload&& o) noexcept : bytes_(std::exchange(o.bytes_, 0)) {}
  TrackedPayload& operator=(TrackedPayload&& o) noexcept {
    if (this != &o) {
      release();
      bytes_ = std::exchange(o.bytes_, 0);
    }
    return *this;
  }
  TrackedPayload(const TrackedPayload&) = delete;
  TrackedPayload& operator=(const TrackedPayload&) = delete;

 private:
  void release() {
    if (bytes_) BagMemoryTracker::instance().release(bytes_);
    bytes_ = 0;
  }
  uint64_t bytes_ = 0;
};

// RMX1 bag file: magic "RMX1", u32 N, u32 d, u32 label (little-endian),
// then N*d f32 row-major.
void write_bag(const FeatureBag& bag, const std::string& path);
FeatureBag read_bag(const std::string& path);

// RMXR reduced-bag file: magic "RMXR", u32 K', u32 d, u32 label,
// u8 covariance mode, K' u32 member counts, K'*d f32 centroids, then the
// mode-dependent covariance payload.
void write_dictionary(const BagDictionary& dict, const std::string& path);
BagDictionary read_dictionary(const std::string& path);

// Manifest CSV: header `bag_id,label,path,n_instances,dim`. class_count is
// the largest label + 1; the split tag comes from the file stem.
BagManifest read_manifest(const std::string& path);
void write_manifest(const BagManifest& manifest, const std::string& path);

struct SynthConfig {
  uint32_t class_count = 2;
  uint32_t dim = 32;
  uint32_t train_bags_per_class = 100;
  uint32_t test_bags_per_class = 50;
  uint32_t n_min = 200;
  uint32_t n_max = 800;
  uint32_t background_components = 4;
  uint32_t evidence_components_per_class = 2;
  double component_std = 1.0;
  double evidence_fraction = 0.2;  // rho
  uint64_t seed = 0;

  void validate() const;
};

struct SynthResult {
  BagManifest train;
  BagManifest test;
  // Evidence component means, indexed [class][component]; exposed so tests
  // can run the nearest-centroid separability oracle.
  std::vector<std::vector<Eigen::VectorXf>> evidence_means;
};

// Writes RMX1 bags, train/test manifests, and a generation record CSV
// (`bag_id,instance_index,component_id,is_evidence`) under out_dir.
// Deterministic given cfg.seed.
SynthResult generate_synthetic_dataset(const SynthConfig& cfg, const std::string& out_dir);

struct DatasetStats {
  uint64_t bag_count = 0;
  double mean_instances = 0.0;  // report to 2 decimals
  uint32_t min_instances = 0;
  uint32_t max_instances = 0;
  uint32_t dim = 0;
  uint64_t total_instances = 0;
  std::vector<uint64_t> class_histogram;
};

DatasetStats dataset_stats(const BagManifest& manifest);

}  // namespace remix
