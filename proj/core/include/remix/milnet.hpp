#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "remix/types.hpp"

namespace remix {

enum class ModelKind : uint8_t { Abmil = 0, Dsmil = 1 };

ModelKind parse_model_kind(const std::string& name);
std::string model_kind_name(ModelKind kind);

// Tanh-attention MIL aggregator: a = softmax(w^T tanh(V h_k)),
// z = sum a_k h_k, logits = W_c z + b_c.
struct AbmilParams {
  Eigen::MatrixXd attention_weights;  // V: H x d
  Eigen::VectorXd attention_vector;   // w: H
  Eigen::MatrixXd classifier_weights; // W_c: C x d
  Eigen::VectorXd classifier_bias;    // b_c: C

  Eigen::Index dim() const { return attention_weights.cols(); }
  Eigen::Index classes() const { return classifier_weights.rows(); }
  Eigen::Index hidden() const { return attention_weights.rows(); }
};

// Dual-stream aggregator: the instance branch scores every instance; the
// bag branch attends by query similarity to the critical (highest-scored)
// instance.
struct DsmilParams {
  Eigen::MatrixXd instance_scorer;   // W0: C x d
  Eigen::MatrixXd query_projection;  // W_q: Q x d
  Eigen::MatrixXd value_projection;  // W_v: d x d
  Eigen::MatrixXd bag_classifier;    // W_b: C x d
  Eigen::VectorXd bag_bias;          // b_b: C

  Eigen::Index dim() const { return instance_scorer.cols(); }
  Eigen::Index classes() const { return instance_scorer.rows(); }
  Eigen::Index query_width() const { return query_projection.rows(); }
};

struct MilModel {
  ModelKind kind = ModelKind::Abmil;
  AbmilParams abmil;
  DsmilParams dsmil;

  Eigen::Index dim() const { return kind == ModelKind::Abmil ? abmil.dim() : dsmil.dim(); }
  Eigen::Index classes() const {
    return kind == ModelKind::Abmil ? abmil.classes() : dsmil.classes();
  }
  // Flat views over the parameter tensors, in checkpoint order.
  std::vector<Eigen::Map<Eigen::VectorXd>> tensors();
  std::vector<Eigen::Map<const Eigen::VectorXd>> tensors() const;
};

struct ForwardResult {
  Eigen::VectorXd logits;         // C
  Eigen::VectorXd attention;      // M, sums to 1
  Eigen::VectorXd bag_embedding;  // d (ABMIL) / attended value (DSMIL)
  Eigen::MatrixXd instance_logits;  // M x C, DSMIL only
  Eigen::Index critical_index = 0;  // DSMIL only
};

ForwardResult abmil_forward(const MatrixRXd& instances, const AbmilParams& params);
ForwardResult dsmil_forward(const MatrixRXd& instances, const DsmilParams& params);
ForwardResult model_forward(const MatrixRXd& instances, const MilModel& model);

// loss = -log softmax(logits)[label], max-stabilized; grad = softmax - onehot.
std::pair<double, Eigen::VectorXd> cross_entropy(const Eigen::VectorXd& logits, uint32_t label);

struct AbmilGrads {
  Eigen::MatrixXd attention_weights;
  Eigen::VectorXd attention_vector;
  Eigen::MatrixXd classifier_weights;
  Eigen::VectorXd classifier_bias;
};

struct DsmilGrads {
  Eigen::MatrixXd instance_scorer;
  Eigen::MatrixXd query_projection;
  Eigen::MatrixXd value_projection;
  Eigen::MatrixXd bag_classifier;
  Eigen::VectorXd bag_bias;
};

struct Gradients {
  AbmilGrads abmil;
  DsmilGrads dsmil;
  double loss = 0.0;
  std::vector<Eigen::Map<Eigen::VectorXd>> tensors(ModelKind kind);
};

// Exact analytic gradients of the cross-entropy loss; DSMIL's argmax is
// held constant (subgradient convention).
Gradients backward(const MilModel& model, const MatrixRXd& instances, uint32_t label);

// Adam with bias correction, one moment pair per parameter tensor.
struct OptimizerState {
  std::vector<Eigen::VectorXd> first_moment;
  std::vector<Eigen::VectorXd> second_moment;
  uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static OptimizerState for_model(const MilModel& model);
};

void adam_step(MilModel& model, Gradients& grads, OptimizerState& state, double lr);

struct LrSchedule {
  double initial = 2e-4;
  uint64_t total_steps = 1;
};

// lr(t) = 0.5 * lr0 * (1 + cos(pi t / T))
double cosine_lr(uint64_t step, const LrSchedule& schedule);

// Weights uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
MilModel init_params(ModelKind kind, Eigen::Index d, Eigen::Index classes, Eigen::Index hidden,
                     Eigen::Index query_width, uint64_t seed);

// RMXM checkpoint: magic "RMXM", u8 kind, u32 d, u32 C, u32 H (or Q),
// then the parameter tensors as f64 little-endian in `tensors()` order.
void write_checkpoint(const MilModel& model, const std::string& path);
MilModel read_checkpoint(const std::string& path);

}  // namespace remix
