#include "remix/mixer.hpp"

#include <Eigen/Cholesky>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace remix {

AugmentKind parse_augment_kind(const std::string& name) {
  if (name == "none") return AugmentKind::None;
  if (name == "append") return AugmentKind::Append;
  if (name == "replace") return AugmentKind::Replace;
  if (name == "interpolate") return AugmentKind::Interpolate;
  if (name == "covary") return AugmentKind::Covary;
  if (name == "joint") return AugmentKind::Joint;
  throw std::runtime_error("unknown augmentation kind: " + name);
}

std::string augment_kind_name(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::None: return "none";
    case AugmentKind::Append: return "append";
    case AugmentKind::Replace: return "replace";
    case AugmentKind::Interpolate: return "interpolate";
    case AugmentKind::Covary: return "covary";
    case AugmentKind::Joint: return "joint";
  }
  return "?";
}

void AugmentConfig::validate() const {
  if (probability < 0.0 || probability > 1.0) throw std::runtime_error("p must be in [0,1]");
  if (lambda.fixed && (lambda.value < 0.0 || lambda.value > 1.0)) {
    throw std::runtime_error("fixed lambda must be in [0,1]");
  }
}

KeyIndex KeyIndex::build(const BagManifest& manifest) {
  KeyIndex index;
  index.by_class.resize(manifest.class_count);
  for (const auto& e : manifest.entries) {
    if (e.label >= manifest.class_count) throw std::runtime_error("label out of range");
    index.by_class[e.label].push_back(e.bag_id);
  }
  return index;
}

std::string provenance_csv(const std::vector<MixEvent>& events) {
  std::ostringstream os;
  os << "query_idx,key_bag,key_idx,kind,lambda\n";
  for (const auto& e : events) {
    os << e.query_idx << ',' << e.key_bag << ',' << e.key_idx << ','
       << augment_kind_name(e.kind) << ',' << e.lambda << '\n';
  }
  return os.str();
}

std::pair<uint32_t, double> nearest_key_prototype(const Eigen::RowVectorXd& query_proto,
                                                  const BagDictionary& key_bag) {
  if (key_bag.prototype_count() < 1) throw std::runtime_error("empty key bag");
  if (query_proto.cols() != key_bag.dim()) {
    throw std::runtime_error("dimension mismatch in nearest_key_prototype");
  }
  uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < key_bag.prototype_count(); ++i) {
    double d = (query_proto - key_bag.centroids.row(i).cast<double>()).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = uint32_t(i);
    }
  }
  return {best, best_d};
}

Eigen::VectorXd sample_gaussian_from_cov(const MatrixRXd& cov, CovMode mode, Rng& rng) {
  if (mode == CovMode::None) throw std::runtime_error("covariance mode none");
  const Eigen::Index d = cov.cols();
  Eigen::VectorXd u(d);
  for (Eigen::Index j = 0; j < d; ++j) u[j] = rng.normal();
  if (mode == CovMode::Diag) {
    return cov.row(0).transpose().cwiseMax(0.0).cwiseSqrt().cwiseProduct(u);
  }
  double trace = cov.trace();
  double ridge = trace > 0.0 ? 1e-6 * trace / double(d) : 1e-12;
  Eigen::MatrixXd ridged = cov + ridge * Eigen::MatrixXd::Identity(d, d);
  Eigen::LLT<Eigen::MatrixXd> llt(ridged);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("covariance factorization failed");
  }
  return llt.matrixL() * u;
}

namespace {

void check_same_class(const BagDictionary& query, const BagDictionary& key) {
  if (query.label != key.label) {
    throw std::runtime_error("key bag class differs from query bag class");
  }
}

// One augmentation pass over the rows present at entry. Appends grow the
// matrix but appended rows are not re-gated within the pass.
void apply_pass(MatrixRXd& instances, const BagDictionary& key, AugmentKind kind,
                const AugmentConfig& cfg, Rng& rng, std::vector<MixEvent>& events) {
  const Eigen::Index rows_at_entry = instances.rows();
  bool bag_fired = cfg.gate == GateMode::Bag && rng.bernoulli(cfg.probability);
  std::vector<Eigen::RowVectorXd> appended;
  for (Eigen::Index i = 0; i < rows_at_entry; ++i) {
    bool fired = cfg.gate == GateMode::Prototype ? rng.bernoulli(cfg.probability) : bag_fired;
    if (!fired) continue;
    Eigen::RowVectorXd row = instances.row(i);
    auto [key_idx, dist] = nearest_key_prototype(row, key);
    (void)dist;
    Eigen::RowVectorXd key_row = key.centroids.row(key_idx).cast<double>();
    double lambda = 0.0;
    switch (kind) {
      case AugmentKind::Append:
        appended.push_back(key_row);
        break;
      case AugmentKind::Replace:
        instances.row(i) = key_row;
        break;
      case AugmentKind::Interpolate:
        lambda = cfg.lambda.draw(rng);
        appended.push_back((1.0 - lambda) * row + lambda * key_row);
        break;
      case AugmentKind::Covary: {
        if (key.cov_mode == CovMode::None) {
          throw std::runtime_error("covary requires covariance");
        }
        lambda = cfg.lambda.draw(rng);
        Eigen::VectorXd delta = sample_gaussian_from_cov(
            key.covariances[key_idx].cast<double>(), key.cov_mode, rng);
        appended.push_back(row + lambda * delta.transpose());
        break;
      }
      default:
        throw std::logic_error("apply_pass: bad kind");
    }
    events.push_back({uint32_t(i), key.bag_id, key_idx, kind, lambda});
  }
  if (!appended.empty()) {
    MatrixRXd grown(instances.rows() + Eigen::Index(appended.size()), instances.cols());
    grown.topRows(instances.rows()) = instances;
    for (size_t a = 0; a < appended.size(); ++a) {
      grown.row(instances.rows() + Eigen::Index(a)) = appended[a];
    }
    instances = std::move(grown);
  }
}

MixedBag run_single(const BagDictionary& query, const BagDictionary& key, AugmentKind kind,
                    const AugmentConfig& cfg, Rng& rng) {
  check_same_class(query, key);
  cfg.validate();
  MixedBag out;
  out.label = query.label;
  out.instances = query.centroids.cast<double>();
  apply_pass(out.instances, key, kind, cfg, rng, out.provenance);
  return out;
}

}  // namespace

MixedBag augment_append(const BagDictionary& query, const BagDictionary& key,
                        const AugmentConfig& cfg, Rng& rng) {
  return run_single(query, key, AugmentKind::Append, cfg, rng);
}

MixedBag augment_replace(const BagDictionary& query, const BagDictionary& key,
                         const AugmentConfig& cfg, Rng& rng) {
  return run_single(query, key, AugmentKind::Replace, cfg, rng);
}

MixedBag augment_interpolate(const BagDictionary& query, const BagDictionary& key,
                             const AugmentConfig& cfg, Rng& rng) {
  return run_single(query, key, AugmentKind::Interpolate, cfg, rng);
}

MixedBag augment_covary(const BagDictionary& query, const BagDictionary& key,
                        const AugmentConfig& cfg, Rng& rng) {
  if (key.cov_mode == CovMode::None) throw std::runtime_error("covary requires covariance");
  return run_single(query, key, AugmentKind::Covary, cfg, rng);
}

MixedBag augment_joint(const BagDictionary& query, const BagDictionary& key,
                       const AugmentConfig& cfg, Rng& rng) {
  check_same_class(query, key);
  cfg.validate();
  MixedBag out;
  out.label = query.label;
  out.instances = query.centroids.cast<double>();
  for (AugmentKind kind : {AugmentKind::Append, AugmentKind::Replace, AugmentKind::Interpolate,
                           AugmentKind::Covary}) {
    apply_pass(out.instances, key, kind, cfg, rng, out.provenance);
  }
  return out;
}

MixedBag mix_bag(const BagDictionary& query, const KeyIndex& key_index,
                 const std::unordered_map<std::string, const BagDictionary*>& all_dictionaries,
                 const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.kind == AugmentKind::None) {
    MixedBag out;
    out.label = query.label;
    out.instances = query.centroids.cast<double>();
    return out;
  }
  if (query.label >= key_index.by_class.size()) {
    throw std::runtime_error("query class missing from key index");
  }
  const auto& pool = key_index.by_class[query.label];
  if (pool.empty()) throw std::runtime_error("no key bags for class");

  std::vector<const std::string*> candidates;
  candidates.reserve(pool.size());
  for (const auto& id : pool) {
    if (id != query.bag_id) candidates.push_back(&id);
  }
  const std::string& key_id =
      candidates.empty() ? query.bag_id : *candidates[rng.uniform_int(candidates.size())];
  auto it = all_dictionaries.find(key_id);
  if (it == all_dictionaries.end()) {
    throw std::runtime_error("unknown bag_id in key index: " + key_id);
  }
  const BagDictionary& key = *it->second;

  switch (cfg.kind) {
    case AugmentKind::Append: return augment_append(query, key, cfg, rng);
    case AugmentKind::Replace: return augment_replace(query, key, cfg, rng);
    case AugmentKind::Interpolate: return augment_interpolate(query, key, cfg, rng);
    case AugmentKind::Covary: return augment_covary(query, key, cfg, rng);
    case AugmentKind::Joint: return augment_joint(query, key, cfg, rng);
    default: throw std::logic_error("mix_bag: bad kind");
  }
}

}  // namespace remix
