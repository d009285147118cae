#include "remix/reducer.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <limits>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "remix/bagstore.hpp"
#include "remix/rng.hpp"

namespace fs = std::filesystem;

namespace remix {

void ReduceConfig::validate() const {
  if (k < 1) throw std::runtime_error("K must be >= 1");
  if (max_iterations < 1) throw std::runtime_error("max iterations must be >= 1");
  if (shift_tolerance <= 0.0) throw std::runtime_error("tolerance must be > 0");
  if (restarts < 1) throw std::runtime_error("restarts must be >= 1");
}

std::vector<uint32_t> assign(const MatrixRXd& features, const MatrixRXd& centroids) {
  if (features.cols() != centroids.cols()) {
    throw std::runtime_error("dimension mismatch in assign");
  }
  const auto n = features.rows();
  const auto k = centroids.rows();
  std::vector<uint32_t> assignments(static_cast<size_t>(n));
  Eigen::VectorXd best = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  Eigen::VectorXd dist(n);
  for (Eigen::Index c = 0; c < k; ++c) {
    dist = (features.rowwise() - centroids.row(c)).rowwise().squaredNorm();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (dist[i] < best[i]) {  // strict: ties stay at the lower index
        best[i] = dist[i];
        assignments[size_t(i)] = uint32_t(c);
      }
    }
  }
  return assignments;
}

namespace {

double inertia_of(const MatrixRXd& features, const MatrixRXd& centroids,
                  const std::vector<uint32_t>& assignments) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    total += (features.row(i) - centroids.row(assignments[size_t(i)])).squaredNorm();
  }
  return total;
}

MatrixRXd cluster_means(const MatrixRXd& features, const std::vector<uint32_t>& assignments,
                        Eigen::Index k, std::vector<uint32_t>& counts) {
  MatrixRXd sums = MatrixRXd::Zero(k, features.cols());
  counts.assign(size_t(k), 0);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    sums.row(assignments[size_t(i)]) += features.row(i);
    ++counts[assignments[size_t(i)]];
  }
  for (Eigen::Index c = 0; c < k; ++c) {
    if (counts[size_t(c)] > 0) sums.row(c) /= double(counts[size_t(c)]);
  }
  return sums;
}

// k-means++ seeding. The cumulative-weight walk runs over candidates in
// (norm, original index) order, so shuffling the input rows selects the
// same point sequence.
MatrixRXd kmeans_pp_init(const MatrixRXd& features, Eigen::Index k, Rng& rng) {
  const auto n = features.rows();
  std::vector<Eigen::Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Eigen::VectorXd norms = features.rowwise().squaredNorm();
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return norms[a] < norms[b]; });

  MatrixRXd centroids(k, features.cols());
  centroids.row(0) = features.row(order[size_t(rng.uniform_int(uint64_t(n)))]);

  Eigen::VectorXd d2 = (features.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (Eigen::Index c = 1; c < k; ++c) {
    double total = d2.sum();
    Eigen::Index chosen = order[0];
    if (total > 0.0) {
      double target = rng.uniform() * total;
      double acc = 0.0;
      for (Eigen::Index idx : order) {
        acc += d2[idx];
        if (acc > target) {
          chosen = idx;
          break;
        }
        chosen = idx;  // fall through to the last positive-weight candidate
      }
    }
    centroids.row(c) = features.row(chosen);
    d2 = d2.cwiseMin((features.rowwise() - centroids.row(c)).rowwise().squaredNorm());
  }
  return centroids;
}

std::pair<MatrixRXd, ClusterResult> lloyd_run(const MatrixRXd& features, Eigen::Index k,
                                              const ReduceConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  MatrixRXd centroids = kmeans_pp_init(features, k, rng);

  ClusterResult result;
  double prev_inertia = std::numeric_limits<double>::infinity();
  std::vector<uint32_t> counts;
  for (uint32_t iter = 0; iter < cfg.max_iterations; ++iter) {
    auto assignments = assign(features, centroids);

    // Reseed empty clusters to the point farthest from its centroid.
    counts.assign(size_t(k), 0);
    for (uint32_t a : assignments) ++counts[a];
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[size_t(c)] != 0) continue;
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < features.rows(); ++i) {
        if (counts[assignments[size_t(i)]] <= 1) continue;
        double d = (features.row(i) - centroids.row(assignments[size_t(i)])).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      centroids.row(c) = features.row(far);
      --counts[assignments[size_t(far)]];
      assignments[size_t(far)] = uint32_t(c);
      ++counts[size_t(c)];
    }

    double inertia = inertia_of(features, centroids, assignments);
    if (inertia > prev_inertia * (1.0 + 1e-9) + 1e-12) {
      throw std::logic_error("k-means inertia increased");
    }
    prev_inertia = inertia;

    MatrixRXd updated = cluster_means(features, assignments, k, counts);
    double shift = (updated - centroids).norm() / (centroids.norm() + 1e-30);
    centroids = updated;
    result.iterations = iter + 1;
    if (shift < cfg.shift_tolerance) {
      result.converged = true;
      break;
    }
  }

  // Final consistency pass: centroids are exact means of the assignment
  // they are reported with.
  result.assignments = assign(features, centroids);
  centroids = cluster_means(features, result.assignments, k, counts);
  result.inertia = inertia_of(features, centroids, result.assignments);
  return {std::move(centroids), std::move(result)};
}

}  // namespace

std::pair<MatrixRXd, ClusterResult> kmeans_fit(const MatrixRXd& features,
                                               const ReduceConfig& cfg) {
  cfg.validate();
  const auto n = features.rows();
  if (n < 1) throw std::runtime_error("empty feature matrix");
  if (!features.allFinite()) throw std::runtime_error("non-finite feature");
  const Eigen::Index k = std::min<Eigen::Index>(cfg.k, n);

  if (k == n) {
    ClusterResult result;
    result.assignments.resize(size_t(n));
    std::iota(result.assignments.begin(), result.assignments.end(), 0);
    result.inertia = 0.0;
    result.converged = true;
    return {features, std::move(result)};
  }

  MatrixRXd best_centroids;
  ClusterResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (uint32_t r = 0; r < cfg.restarts; ++r) {
    auto [centroids, result] = lloyd_run(features, k, cfg, derive_seed(cfg.seed, uint64_t(r)));
    if (result.inertia < best.inertia) {
      best_centroids = std::move(centroids);
      best = std::move(result);
    }
  }
  return {std::move(best_centroids), std::move(best)};
}

std::vector<MatrixRXd> compute_cluster_covariance(const MatrixRXd& features,
                                                  const std::vector<uint32_t>& assignments,
                                                  const MatrixRXd& centroids, CovMode mode) {
  if (mode == CovMode::None) throw std::runtime_error("covariance mode none");
  const auto k = centroids.rows();
  const auto d = centroids.cols();
  std::vector<uint32_t> counts(size_t(k), 0);
  for (uint32_t a : assignments) {
    if (a >= k) throw std::runtime_error("assignment index out of range");
    ++counts[a];
  }
  for (Eigen::Index c = 0; c < k; ++c) {
    if (counts[size_t(c)] == 0) throw std::runtime_error("empty cluster in covariance");
  }

  std::vector<MatrixRXd> covs(static_cast<size_t>(k));
  for (Eigen::Index c = 0; c < k; ++c) {
    covs[size_t(c)] = MatrixRXd::Zero(mode == CovMode::Diag ? 1 : d, d);
  }
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    uint32_t c = assignments[size_t(i)];
    Eigen::RowVectorXd delta = features.row(i) - centroids.row(c);
    if (mode == CovMode::Diag) {
      covs[c].row(0) += delta.cwiseProduct(delta);
    } else {
      covs[c] += delta.transpose() * delta;
    }
  }
  for (Eigen::Index c = 0; c < k; ++c) {
    covs[size_t(c)] /= double(counts[size_t(c)]);
    if (mode == CovMode::Full) {
      covs[size_t(c)] = 0.5 * (covs[size_t(c)] + covs[size_t(c)].transpose()).eval();
    }
  }
  return covs;
}

BagDictionary reduce_bag(const FeatureBag& bag, const ReduceConfig& cfg) {
  MatrixRXd features = bag.features.cast<double>();
  if (cfg.normalize) {
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
      double norm = features.row(i).norm();
      if (norm > 0.0) features.row(i) /= norm;
    }
  }
  ReduceConfig per_bag = cfg;
  per_bag.seed = derive_seed(cfg.seed, bag.bag_id);
  auto [centroids, result] = kmeans_fit(features, per_bag);

  BagDictionary dict;
  dict.bag_id = bag.bag_id;
  dict.label = bag.label;
  dict.cov_mode = cfg.cov_mode;
  dict.centroids = centroids.cast<float>();
  std::vector<uint32_t> counts(size_t(centroids.rows()), 0);
  for (uint32_t a : result.assignments) ++counts[a];
  dict.member_counts = std::move(counts);
  if (cfg.cov_mode != CovMode::None) {
    auto covs = compute_cluster_covariance(features, result.assignments, centroids, cfg.cov_mode);
    dict.covariances.reserve(covs.size());
    for (const auto& cov : covs) dict.covariances.push_back(cov.cast<float>());
  }
  return dict;
}

BagManifest reduce_dataset(const BagManifest& manifest, const ReduceConfig& cfg,
                           const std::string& out_dir, uint32_t threads) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "bags", ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir + ": " + ec.message());

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<uint32_t>(threads, uint32_t(std::max<size_t>(1, manifest.entries.size())));

  std::vector<ManifestEntry> reduced_entries(manifest.entries.size());
  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::string first_error;
  std::mutex error_mutex;

  auto worker = [&]() {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= manifest.entries.size() || failed.load()) return;
      const auto& e = manifest.entries[i];
      try {
        FeatureBag bag = read_bag(manifest.resolve(e));
        bag.bag_id = e.bag_id;
        BagDictionary dict = reduce_bag(bag, cfg);
        std::string rel = "bags/" + e.bag_id + ".rmxr";
        write_dictionary(dict, out_dir + "/" + rel);
        reduced_entries[i] = {e.bag_id, e.label, rel, uint32_t(dict.prototype_count()), e.dim};
      } catch (const std::exception& ex) {
        std::lock_guard lock(error_mutex);
        if (!failed.exchange(true)) {
          first_error = "reduction failed for bag " + e.bag_id + ": " + ex.what();
        }
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  for (uint32_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failed.load()) throw std::runtime_error(first_error);

  BagManifest reduced;
  reduced.entries = std::move(reduced_entries);
  reduced.class_count = manifest.class_count;
  reduced.split = manifest.split;
  reduced.base_dir = out_dir;
  write_manifest(reduced, out_dir + "/" + manifest.split + ".csv");
  return reduced;
}

}  // namespace remix
