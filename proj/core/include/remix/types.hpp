#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace remix {

// Feature matrices are row-major: one instance per row, matching the
// on-disk payload layout.
using MatrixRXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixRXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class CovMode : uint8_t { None = 0, Diag = 1, Full = 2 };

// One bag: N instance feature vectors plus a bag-level label.
struct FeatureBag {
  std::string bag_id;
  uint32_t label = 0;
  MatrixRXf features;  // N x d

  Eigen::Index n_instances() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
};

// Reduced bag: K' prototype centroids with per-cluster covariance
// summaries and member counts.
struct BagDictionary {
  std::string bag_id;
  uint32_t label = 0;
  CovMode cov_mode = CovMode::None;
  MatrixRXf centroids;                  // K' x d
  std::vector<MatrixRXf> covariances;   // per cluster: 1 x d (diag) or d x d (full); empty for None
  std::vector<uint32_t> member_counts;  // K' entries

  Eigen::Index prototype_count() const { return centroids.rows(); }
  Eigen::Index dim() const { return centroids.cols(); }
};

struct ManifestEntry {
  std::string bag_id;
  uint32_t label = 0;
  std::string path;  // relative to the manifest's directory
  uint32_t n_instances = 0;
  uint32_t dim = 0;
};

struct BagManifest {
  std::vector<ManifestEntry> entries;
  uint32_t class_count = 0;
  std::string split;     // "train" or "test"
  std::string base_dir;  // directory the paths resolve against

  std::string resolve(const ManifestEntry& e) const { return base_dir + "/" + e.path; }
};

}  // namespace remix
