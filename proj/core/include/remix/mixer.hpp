#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "remix/rng.hpp"
#include "remix/types.hpp"

namespace remix {

enum class AugmentKind : uint8_t { None, Append, Replace, Interpolate, Covary, Joint };

enum class GateMode : uint8_t { Prototype, Bag };

AugmentKind parse_augment_kind(const std::string& name);
std::string augment_kind_name(AugmentKind kind);

struct LambdaPolicy {
  bool fixed = false;
  double value = 0.0;  // used when fixed

  double draw(Rng& rng) const { return fixed ? value : rng.uniform_open(); }
};

struct AugmentConfig {
  AugmentKind kind = AugmentKind::None;
  double probability = 0.5;  // p; joint defaults to 0.1 per pass
  LambdaPolicy lambda;
  GateMode gate = GateMode::Prototype;

  void validate() const;
};

// Per-class pool of key-bag ids for same-class sampling.
struct KeyIndex {
  std::vector<std::vector<std::string>> by_class;

  static KeyIndex build(const BagManifest& manifest);
};

struct MixEvent {
  uint32_t query_idx = 0;
  std::string key_bag;
  uint32_t key_idx = 0;
  AugmentKind kind = AugmentKind::None;
  double lambda = 0.0;  // 0 for append/replace
};

struct MixedBag {
  uint32_t label = 0;
  MatrixRXd instances;  // M x d
  std::vector<MixEvent> provenance;
};

std::string provenance_csv(const std::vector<MixEvent>& events);

// argmin over key centroids of squared Euclidean distance; ties break
// toward the lowest index.
std::pair<uint32_t, double> nearest_key_prototype(const Eigen::RowVectorXd& query_proto,
                                                  const BagDictionary& key_bag);

MixedBag augment_append(const BagDictionary& query, const BagDictionary& key,
                        const AugmentConfig& cfg, Rng& rng);
MixedBag augment_replace(const BagDictionary& query, const BagDictionary& key,
                         const AugmentConfig& cfg, Rng& rng);
MixedBag augment_interpolate(const BagDictionary& query, const BagDictionary& key,
                             const AugmentConfig& cfg, Rng& rng);
MixedBag augment_covary(const BagDictionary& query, const BagDictionary& key,
                        const AugmentConfig& cfg, Rng& rng);
// append, replace, interpolate, covary applied sequentially, each pass
// gated independently on the current intermediate bag.
MixedBag augment_joint(const BagDictionary& query, const BagDictionary& key,
                       const AugmentConfig& cfg, Rng& rng);

// delta ~ N(0, cov). Full mode factors cov + ridge*I with ridge
// 1e-6*trace/d (1e-12 when the trace is 0); diag mode scales by sqrt of
// the variances. cov is 1 x d for diag, d x d for full.
Eigen::VectorXd sample_gaussian_from_cov(const MatrixRXd& cov, CovMode mode, Rng& rng);

// Samples one same-class key bag (excluding the query when the class has
// another bag) and dispatches to the configured augmentation.
MixedBag mix_bag(const BagDictionary& query, const KeyIndex& key_index,
                 const std::unordered_map<std::string, const BagDictionary*>& all_dictionaries,
                 const AugmentConfig& cfg, Rng& rng);

}  // namespace remix
