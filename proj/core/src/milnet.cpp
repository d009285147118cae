#include "remix/milnet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "remix/rng.hpp"

namespace remix {

ModelKind parse_model_kind(const std::string& name) {
  if (name == "abmil") return ModelKind::Abmil;
  if (name == "dsmil") return ModelKind::Dsmil;
  throw std::runtime_error("unknown model kind: " + name);
}

std::string model_kind_name(ModelKind kind) {
  return kind == ModelKind::Abmil ? "abmil" : "dsmil";
}

namespace {

Eigen::Map<Eigen::VectorXd> flat(Eigen::MatrixXd& m) { return {m.data(), m.size()}; }
Eigen::Map<Eigen::VectorXd> flat(Eigen::VectorXd& v) { return {v.data(), v.size()}; }
Eigen::Map<const Eigen::VectorXd> cflat(const Eigen::MatrixXd& m) { return {m.data(), m.size()}; }
Eigen::Map<const Eigen::VectorXd> cflat(const Eigen::VectorXd& v) { return {v.data(), v.size()}; }

Eigen::VectorXd stable_softmax(const Eigen::VectorXd& x) {
  Eigen::VectorXd e = (x.array() - x.maxCoeff()).exp();
  return e / e.sum();
}

void require_finite(const MatrixRXd& m) {
  if (!m.allFinite()) throw std::runtime_error("non-finite input instances");
}

}  // namespace

std::vector<Eigen::Map<Eigen::VectorXd>> MilModel::tensors() {
  if (kind == ModelKind::Abmil) {
    return {flat(abmil.attention_weights), flat(abmil.attention_vector),
            flat(abmil.classifier_weights), flat(abmil.classifier_bias)};
  }
  return {flat(dsmil.instance_scorer), flat(dsmil.query_projection), flat(dsmil.value_projection),
          flat(dsmil.bag_classifier), flat(dsmil.bag_bias)};
}

std::vector<Eigen::Map<const Eigen::VectorXd>> MilModel::tensors() const {
  if (kind == ModelKind::Abmil) {
    return {cflat(abmil.attention_weights), cflat(abmil.attention_vector),
            cflat(abmil.classifier_weights), cflat(abmil.classifier_bias)};
  }
  return {cflat(dsmil.instance_scorer), cflat(dsmil.query_projection),
          cflat(dsmil.value_projection), cflat(dsmil.bag_classifier), cflat(dsmil.bag_bias)};
}

std::vector<Eigen::Map<Eigen::VectorXd>> Gradients::tensors(ModelKind kind) {
  if (kind == ModelKind::Abmil) {
    return {flat(abmil.attention_weights), flat(abmil.attention_vector),
            flat(abmil.classifier_weights), flat(abmil.classifier_bias)};
  }
  return {flat(dsmil.instance_scorer), flat(dsmil.query_projection), flat(dsmil.value_projection),
          flat(dsmil.bag_classifier), flat(dsmil.bag_bias)};
}

ForwardResult abmil_forward(const MatrixRXd& instances, const AbmilParams& params) {
  if (instances.rows() < 1) throw std::runtime_error("empty bag");
  if (instances.cols() != params.dim()) throw std::runtime_error("dimension mismatch");
  require_finite(instances);

  Eigen::MatrixXd hidden = (instances * params.attention_weights.transpose()).array().tanh();
  Eigen::VectorXd scores = hidden * params.attention_vector;  // M
  ForwardResult out;
  out.attention = stable_softmax(scores);
  out.bag_embedding = instances.transpose() * out.attention;  // d
  out.logits = params.classifier_weights * out.bag_embedding + params.classifier_bias;
  return out;
}

ForwardResult dsmil_forward(const MatrixRXd& instances, const DsmilParams& params) {
  if (instances.rows() < 1) throw std::runtime_error("empty bag");
  if (instances.cols() != params.dim()) throw std::runtime_error("dimension mismatch");
  require_finite(instances);

  const Eigen::Index m = instances.rows();
  ForwardResult out;
  out.instance_logits = instances * params.instance_scorer.transpose();  // M x C

  // Critical instance: max over (instance, class); ties toward the lowest
  // instance index, then lowest class index.
  Eigen::Index crit = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index c = 0; c < out.instance_logits.cols(); ++c) {
      if (out.instance_logits(i, c) > best) {
        best = out.instance_logits(i, c);
        crit = i;
      }
    }
  }
  out.critical_index = crit;

  Eigen::MatrixXd queries = instances * params.query_projection.transpose();  // M x Q
  Eigen::VectorXd sims = queries * queries.row(crit).transpose() /
                         std::sqrt(double(params.query_width()));  // M
  out.attention = stable_softmax(sims);
  Eigen::MatrixXd values = instances * params.value_projection.transpose();  // M x d
  out.bag_embedding = values.transpose() * out.attention;                    // d
  Eigen::VectorXd bag_logits = params.bag_classifier * out.bag_embedding + params.bag_bias;
  out.logits = 0.5 * (out.instance_logits.row(crit).transpose() + bag_logits);
  return out;
}

ForwardResult model_forward(const MatrixRXd& instances, const MilModel& model) {
  return model.kind == ModelKind::Abmil ? abmil_forward(instances, model.abmil)
                                        : dsmil_forward(instances, model.dsmil);
}

std::pair<double, Eigen::VectorXd> cross_entropy(const Eigen::VectorXd& logits, uint32_t label) {
  if (Eigen::Index(label) >= logits.size()) throw std::runtime_error("label out of range");
  double max = logits.maxCoeff();
  Eigen::VectorXd shifted = logits.array() - max;
  double log_sum = std::log(shifted.array().exp().sum());
  double loss = log_sum - shifted[label];
  Eigen::VectorXd grad = (shifted.array() - log_sum).exp();
  grad[label] -= 1.0;
  return {loss, grad};
}

namespace {

// dscore from dattention through softmax: ds_k = a_k (da_k - a . da)
Eigen::VectorXd softmax_backward(const Eigen::VectorXd& attention, const Eigen::VectorXd& datt) {
  double dot = attention.dot(datt);
  return attention.cwiseProduct((datt.array() - dot).matrix());
}

AbmilGrads abmil_backward(const MatrixRXd& instances, const AbmilParams& params,
                          const ForwardResult& fwd, const Eigen::VectorXd& dlogits) {
  AbmilGrads g;
  g.classifier_weights = dlogits * fwd.bag_embedding.transpose();
  g.classifier_bias = dlogits;
  Eigen::VectorXd dz = params.classifier_weights.transpose() * dlogits;  // d

  Eigen::VectorXd datt = instances * dz;  // M
  Eigen::VectorXd dscore = softmax_backward(fwd.attention, datt);

  Eigen::MatrixXd hidden = (instances * params.attention_weights.transpose()).array().tanh();
  g.attention_vector = hidden.transpose() * dscore;  // H
  // dpre = (dscore_k w) .* (1 - t_k^2), rows M x H
  Eigen::MatrixXd dpre =
      (dscore * params.attention_vector.transpose()).cwiseProduct(
          (1.0 - hidden.array().square()).matrix());
  g.attention_weights = dpre.transpose() * instances;  // H x d
  return g;
}

DsmilGrads dsmil_backward(const MatrixRXd& instances, const DsmilParams& params,
                          const ForwardResult& fwd, const Eigen::VectorXd& dlogits) {
  const Eigen::Index crit = fwd.critical_index;
  const double scale = 1.0 / std::sqrt(double(params.query_width()));

  DsmilGrads g;
  Eigen::VectorXd dbag = 0.5 * dlogits;

  // instance branch: only the critical row contributes
  g.instance_scorer = 0.5 * dlogits * instances.row(crit);

  // bag branch
  g.bag_classifier = dbag * fwd.bag_embedding.transpose();
  g.bag_bias = dbag;
  Eigen::VectorXd db = params.bag_classifier.transpose() * dbag;  // d

  Eigen::MatrixXd values = instances * params.value_projection.transpose();  // M x d
  // b = values^T att ; dW_v = db (sum_k att_k h_k)^T
  Eigen::VectorXd weighted = instances.transpose() * fwd.attention;  // d
  g.value_projection = db * weighted.transpose();
  Eigen::VectorXd datt = values * db;  // M

  Eigen::VectorXd dscore = softmax_backward(fwd.attention, datt);

  Eigen::MatrixXd queries = instances * params.query_projection.transpose();  // M x Q
  // score_k = scale * q_k . q_crit
  Eigen::MatrixXd dq = scale * dscore * queries.row(crit);  // M x Q
  dq.row(crit) += (scale * (queries.transpose() * dscore)).transpose();
  g.query_projection = dq.transpose() * instances;  // Q x d
  return g;
}

}  // namespace

Gradients backward(const MilModel& model, const MatrixRXd& instances, uint32_t label) {
  ForwardResult fwd = model_forward(instances, model);
  auto [loss, dlogits] = cross_entropy(fwd.logits, label);
  Gradients g;
  g.loss = loss;
  if (model.kind == ModelKind::Abmil) {
    g.abmil = abmil_backward(instances, model.abmil, fwd, dlogits);
  } else {
    g.dsmil = dsmil_backward(instances, model.dsmil, fwd, dlogits);
  }
  return g;
}

OptimizerState OptimizerState::for_model(const MilModel& model) {
  OptimizerState state;
  for (const auto& t : model.tensors()) {
    state.first_moment.emplace_back(Eigen::VectorXd::Zero(t.size()));
    state.second_moment.emplace_back(Eigen::VectorXd::Zero(t.size()));
  }
  return state;
}

void adam_step(MilModel& model, Gradients& grads, OptimizerState& state, double lr) {
  auto params = model.tensors();
  auto gts = grads.tensors(model.kind);
  if (params.size() != gts.size() || params.size() != state.first_moment.size()) {
    throw std::runtime_error("optimizer shape mismatch");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != gts[i].size()) throw std::runtime_error("gradient shape mismatch");
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * gts[i];
    v = state.beta2 * v + (1.0 - state.beta2) * gts[i].cwiseProduct(gts[i]);
    params[i].array() -=
        lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + state.epsilon);
  }
}

double cosine_lr(uint64_t step, const LrSchedule& schedule) {
  if (schedule.initial <= 0.0 || schedule.total_steps < 1) {
    throw std::runtime_error("bad learning-rate schedule");
  }
  if (step > schedule.total_steps) throw std::runtime_error("step beyond schedule");
  double frac = double(step) / double(schedule.total_steps);
  return 0.5 * schedule.initial * (1.0 + std::cos(std::numbers::pi * frac));
}

namespace {

Eigen::MatrixXd init_matrix(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(double(fan_in));
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = bound * (2.0 * rng.uniform() - 1.0);
    }
  }
  return m;
}

}  // namespace

MilModel init_params(ModelKind kind, Eigen::Index d, Eigen::Index classes, Eigen::Index hidden,
                     Eigen::Index query_width, uint64_t seed) {
  if (d < 1 || classes < 1 || hidden < 1 || query_width < 1) {
    throw std::runtime_error("model dims must be >= 1");
  }
  Rng rng(mix64(seed));
  MilModel model;
  model.kind = kind;
  if (kind == ModelKind::Abmil) {
    model.abmil.attention_weights = init_matrix(hidden, d, d, rng);
    model.abmil.attention_vector = init_matrix(hidden, 1, hidden, rng);
    model.abmil.classifier_weights = init_matrix(classes, d, d, rng);
    model.abmil.classifier_bias = Eigen::VectorXd::Zero(classes);
  } else {
    model.dsmil.instance_scorer = init_matrix(classes, d, d, rng);
    model.dsmil.query_projection = init_matrix(query_width, d, d, rng);
    model.dsmil.value_projection = init_matrix(d, d, d, rng);
    model.dsmil.bag_classifier = init_matrix(classes, d, d, rng);
    model.dsmil.bag_bias = Eigen::VectorXd::Zero(classes);
  }
  return model;
}

namespace {

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("truncated: " + path);
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

}  // namespace

void write_checkpoint(const MilModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os.write("RMXM", 4);
  char kind = char(model.kind);
  os.write(&kind, 1);
  write_u32(os, uint32_t(model.dim()));
  write_u32(os, uint32_t(model.classes()));
  uint32_t width = model.kind == ModelKind::Abmil ? uint32_t(model.abmil.hidden())
                                                  : uint32_t(model.dsmil.query_width());
  write_u32(os, width);
  for (const auto& t : model.tensors()) {
    os.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.size() * 8));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

MilModel read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "RMXM", 4) != 0) {
    throw std::runtime_error("bad magic in " + path);
  }
  char kind_byte = 0;
  if (!is.read(&kind_byte, 1)) throw std::runtime_error("truncated: " + path);
  if (kind_byte != 0 && kind_byte != 1) throw std::runtime_error("bad model kind in " + path);
  ModelKind kind = ModelKind(kind_byte);
  uint32_t d = read_u32(is, path);
  uint32_t classes = read_u32(is, path);
  uint32_t width = read_u32(is, path);
  if (d < 1 || classes < 1 || width < 1) throw std::runtime_error("bad dims in " + path);

  MilModel model;
  model.kind = kind;
  if (kind == ModelKind::Abmil) {
    model.abmil.attention_weights.resize(width, d);
    model.abmil.attention_vector.resize(width);
    model.abmil.classifier_weights.resize(classes, d);
    model.abmil.classifier_bias.resize(classes);
  } else {
    model.dsmil.instance_scorer.resize(classes, d);
    model.dsmil.query_projection.resize(width, d);
    model.dsmil.value_projection.resize(d, d);
    model.dsmil.bag_classifier.resize(classes, d);
    model.dsmil.bag_bias.resize(classes);
  }
  for (auto t : model.tensors()) {
    if (!is.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.size() * 8))) {
      throw std::runtime_error("truncated payload: " + path);
    }
  }
  char extra;
  if (is.read(&extra, 1)) throw std::runtime_error("trailing bytes in " + path);
  for (const auto& t : model.tensors()) {
    if (!t.allFinite()) throw std::runtime_error("non-finite parameters in " + path);
  }
  return model;
}

}  // namespace remix
