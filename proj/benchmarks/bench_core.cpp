#include <benchmark/benchmark.h>

#include "remix/milnet.hpp"
#include "remix/mixer.hpp"
#include "remix/reducer.hpp"
#include "remix/rng.hpp"

using namespace remix;

namespace {

MatrixRXd random_instances(uint64_t seed, Eigen::Index n, Eigen::Index d) {
  Rng rng(seed);
  MatrixRXd x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  return x;
}

BagDictionary random_dict(uint64_t seed, const std::string& id, Eigen::Index k, Eigen::Index d) {
  BagDictionary dict;
  dict.bag_id = id;
  dict.label = 0;
  dict.cov_mode = CovMode::Diag;
  dict.centroids = random_instances(seed, k, d).cast<float>();
  dict.member_counts.assign(size_t(k), 1);
  for (Eigen::Index i = 0; i < k; ++i) {
    dict.covariances.push_back(MatrixRXf::Constant(1, d, 0.1f));
  }
  return dict;
}

void bm_kmeans_fit(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  MatrixRXd x = random_instances(1, n, 128);
  ReduceConfig cfg;
  cfg.k = 8;
  for (auto _ : state) {
    auto [centroids, result] = kmeans_fit(x, cfg);
    benchmark::DoNotOptimize(result.inertia);
  }
  state.SetItemsProcessed(state.iterations() * n);
}

void bm_abmil_forward(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  MatrixRXd x = random_instances(2, n, 128);
  MilModel model = init_params(ModelKind::Abmil, 128, 2, 128, 128, 3);
  for (auto _ : state) {
    ForwardResult fwd = abmil_forward(x, model.abmil);
    benchmark::DoNotOptimize(fwd.logits);
  }
  state.SetItemsProcessed(state.iterations() * n);
}

void bm_dsmil_forward(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  MatrixRXd x = random_instances(4, n, 128);
  MilModel model = init_params(ModelKind::Dsmil, 128, 2, 128, 128, 5);
  for (auto _ : state) {
    ForwardResult fwd = dsmil_forward(x, model.dsmil);
    benchmark::DoNotOptimize(fwd.logits);
  }
  state.SetItemsProcessed(state.iterations() * n);
}

void bm_backward(benchmark::State& state) {
  ModelKind kind = state.range(0) == 0 ? ModelKind::Abmil : ModelKind::Dsmil;
  MatrixRXd x = random_instances(6, 8, 128);
  MilModel model = init_params(kind, 128, 2, 128, 128, 7);
  for (auto _ : state) {
    Gradients grads = backward(model, x, 1);
    benchmark::DoNotOptimize(grads.loss);
  }
}

void bm_mix_joint(benchmark::State& state) {
  BagDictionary query = random_dict(8, "q", state.range(0), 128);
  BagDictionary key = random_dict(9, "k", state.range(0), 128);
  AugmentConfig cfg;
  cfg.kind = AugmentKind::Joint;
  cfg.probability = 0.1;
  Rng rng(10);
  for (auto _ : state) {
    MixedBag out = augment_joint(query, key, cfg, rng);
    benchmark::DoNotOptimize(out.instances);
  }
}

void bm_gaussian_sample(benchmark::State& state) {
  Rng seed_rng(11);
  MatrixRXd a = random_instances(11, 128, 128);
  MatrixRXd cov = a * a.transpose();
  Rng rng(12);
  for (auto _ : state) {
    Eigen::VectorXd x = sample_gaussian_from_cov(cov, CovMode::Full, rng);
    benchmark::DoNotOptimize(x);
  }
}

}  // namespace

BENCHMARK(bm_kmeans_fit)->Arg(256)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_abmil_forward)->Arg(8)->Arg(256)->Arg(2048);
BENCHMARK(bm_dsmil_forward)->Arg(8)->Arg(256)->Arg(2048);
BENCHMARK(bm_backward)->Arg(0)->Arg(1);
BENCHMARK(bm_mix_joint)->Arg(8)->Arg(64);
BENCHMARK(bm_gaussian_sample);

BENCHMARK_MAIN();
