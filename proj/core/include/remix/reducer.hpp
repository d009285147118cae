#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "remix/types.hpp"

namespace remix {

struct ReduceConfig {
  uint32_t k = 8;
  CovMode cov_mode = CovMode::Full;
  uint32_t max_iterations = 100;
  double shift_tolerance = 1e-4;  // relative centroid shift
  uint32_t restarts = 1;
  bool normalize = false;  // L2-normalize instances before clustering
  uint64_t seed = 0;

  void validate() const;
};

struct ClusterResult {
  std::vector<uint32_t> assignments;
  double inertia = 0.0;
  uint32_t iterations = 0;
  bool converged = false;
};

// Lloyd with k-means++ seeding. Candidate order for the ++ draw is sorted
// by (norm, original index) so row shuffles cannot alter the sampled
// sequence. Empty clusters reseed to the point farthest from its centroid.
// With restarts > 1 the lowest-inertia run wins. Deterministic given seed.
std::pair<MatrixRXd, ClusterResult> kmeans_fit(const MatrixRXd& features,
                                               const ReduceConfig& cfg);

// Nearest-centroid assignment by squared Euclidean distance; ties break
// toward the lowest cluster index.
std::vector<uint32_t> assign(const MatrixRXd& features, const MatrixRXd& centroids);

// Per-cluster covariance about the centroid, 1/m normalization. Singleton
// clusters yield zero covariance. Diag mode returns 1 x d rows of
// variances; Full mode returns symmetric d x d matrices.
std::vector<MatrixRXd> compute_cluster_covariance(const MatrixRXd& features,
                                                  const std::vector<uint32_t>& assignments,
                                                  const MatrixRXd& centroids, CovMode mode);

// K' = min(K, N); per-bag seed derived from (cfg.seed, bag_id).
BagDictionary reduce_bag(const FeatureBag& bag, const ReduceConfig& cfg);

// One RMXR file per bag under out_dir; returns the reduced manifest (also
// written as <split>.csv under out_dir). Fans out across bags up to
// `threads` workers; output is identical to a serial run.
BagManifest reduce_dataset(const BagManifest& manifest, const ReduceConfig& cfg,
                           const std::string& out_dir, uint32_t threads = 0);

}  // namespace remix
