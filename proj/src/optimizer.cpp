#include "rescbm/optimizer.hpp"

#include "rescbm/data_io.hpp"
#include "rescbm/error.hpp"

#include <cmath>

namespace rescbm {

LinearClassifier LinearClassifier::zeros(Index classes, Index inputs) {
  return LinearClassifier{Matrix::Zero(classes, inputs), Vector::Zero(classes)};
}

AdamState AdamState::for_size(Index n, double learning_rate) {
  AdamState s;
  s.first_moment = Vector::Zero(n);
  s.second_moment = Vector::Zero(n);
  s.learning_rate = learning_rate;
  return s;
}

Matrix forward(const LinearClassifier& clf, const Matrix& inputs) {
  if (inputs.cols() != clf.inputs()) {
    throw ValidationError("forward: input width " + std::to_string(inputs.cols()) + " != classifier inputs " +
                          std::to_string(clf.inputs()));
  }
  Matrix logits = inputs * clf.weights.transpose();
  logits.rowwise() += clf.bias.transpose();
  return logits;
}

Matrix softmax(const Matrix& logits) {
  Matrix p = logits;
  for (Index r = 0; r < p.rows(); ++r) {
    const double mx = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - mx).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

namespace {

void check_labels(const Matrix& logits, std::span<const std::size_t> labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw ValidationError("label count does not match logits rows");
  }
  for (std::size_t l : labels) {
    if (l >= static_cast<std::size_t>(logits.cols())) throw ValidationError("label index out of range");
  }
}

}  // namespace

double cross_entropy(const Matrix& logits, std::span<const std::size_t> labels) {
  check_labels(logits, labels);
  if (labels.empty()) return 0.0;
  double total = 0.0;
  for (Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    total += lse - logits(r, static_cast<Index>(labels[static_cast<std::size_t>(r)]));
  }
  return total / static_cast<double>(labels.size());
}

double elastic_net(const LinearClassifier& clf, const RegularizerSpec& spec) {
  if (spec.lambda == 0.0) return 0.0;
  const double l1 = clf.weights.cwiseAbs().sum();
  const double l2 = 0.5 * clf.weights.squaredNorm();
  return spec.lambda * (spec.l1_ratio * l1 + (1.0 - spec.l1_ratio) * l2);
}

void add_elastic_net_gradient(const Matrix& weights, const RegularizerSpec& spec, Matrix& grad) {
  if (spec.lambda == 0.0) return;
  const auto sign = weights.unaryExpr([](double w) { return w > 0.0 ? 1.0 : (w < 0.0 ? -1.0 : 0.0); });
  grad += spec.lambda * (spec.l1_ratio * sign + (1.0 - spec.l1_ratio) * weights);
}

Matrix cross_entropy_logit_gradient(const Matrix& logits, std::span<const std::size_t> labels) {
  check_labels(logits, labels);
  Matrix g = softmax(logits);
  for (Index r = 0; r < g.rows(); ++r) g(r, static_cast<Index>(labels[static_cast<std::size_t>(r)])) -= 1.0;
  if (!labels.empty()) g /= static_cast<double>(labels.size());
  return g;
}

ClassifierGradients head_gradients(const LinearClassifier& clf, const Matrix& inputs, const Matrix& logit_grad) {
  ClassifierGradients out;
  out.weights = logit_grad.transpose() * inputs;
  out.bias = logit_grad.colwise().sum().transpose();
  out.inputs = logit_grad * clf.weights;
  return out;
}

ClassifierGradients gradients(const LinearClassifier& clf, const Matrix& inputs,
                              std::span<const std::size_t> labels, const RegularizerSpec& spec) {
  const Matrix logits = forward(clf, inputs);
  ClassifierGradients out = head_gradients(clf, inputs, cross_entropy_logit_gradient(logits, labels));
  add_elastic_net_gradient(clf.weights, spec, out.weights);
  return out;
}

Vector cosine_backward(std::span<const double> u, std::span<const double> f, double upstream) {
  if (u.size() != f.size()) throw ValidationError("cosine_backward: dimension mismatch");
  const Eigen::Map<const Vector> uv(u.data(), static_cast<Index>(u.size()));
  const Eigen::Map<const Vector> fv(f.data(), static_cast<Index>(f.size()));
  const double nu = uv.norm();
  const double nf = fv.norm();
  if (!(nu > 0.0) || !(nf > 0.0)) throw ValidationError("cosine_backward: zero-norm input");
  const double cos = uv.dot(fv) / (nu * nf);
  return upstream * (fv / (nu * nf) - cos * uv / (nu * nu));
}

void adam_step(AdamState& s, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size() || static_cast<Index>(params.size()) != s.first_moment.size()) {
    throw ValidationError("adam_step: shape mismatch");
  }
  ++s.step_count;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step_count));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto k = static_cast<Index>(i);
    s.first_moment[k] = s.beta1 * s.first_moment[k] + (1.0 - s.beta1) * grads[i];
    s.second_moment[k] = s.beta2 * s.second_moment[k] + (1.0 - s.beta2) * grads[i] * grads[i];
    const double m_hat = s.first_moment[k] / c1;
    const double v_hat = s.second_moment[k] / c2;
    params[i] -= s.learning_rate * m_hat / (std::sqrt(v_hat) + s.eps);
  }
}

void adam_step(AdamState& state, Matrix& params, const Matrix& grads) {
  if (params.rows() != grads.rows() || params.cols() != grads.cols()) throw ValidationError("adam_step: shape mismatch");
  adam_step(state, std::span<double>(params.data(), static_cast<std::size_t>(params.size())),
            std::span<const double>(grads.data(), static_cast<std::size_t>(grads.size())));
}

void adam_step(AdamState& state, Vector& params, const Vector& grads) {
  if (params.size() != grads.size()) throw ValidationError("adam_step: shape mismatch");
  adam_step(state, std::span<double>(params.data(), static_cast<std::size_t>(params.size())),
            std::span<const double>(grads.data(), static_cast<std::size_t>(grads.size())));
}

HeadOptimizer::HeadOptimizer(const LinearClassifier& clf, double learning_rate)
    : weights(AdamState::for_size(clf.weights.size(), learning_rate)),
      bias(AdamState::for_size(clf.bias.size(), learning_rate)) {}

void HeadOptimizer::step(LinearClassifier& clf, const ClassifierGradients& g) {
  adam_step(weights, clf.weights, g.weights);
  adam_step(bias, clf.bias, g.bias);
}

double finite_difference_check(const LossFunction& loss, std::span<const double> params,
                               std::span<const double> analytic, double h) {
  if (params.size() != analytic.size()) throw ValidationError("finite_difference_check: size mismatch");
  if (!(h > 0.0)) throw ValidationError("finite_difference_check: h must be positive");
  std::vector<double> x(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = loss(x);
    x[i] = orig - h;
    const double down = loss(x);
    x[i] = orig;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - analytic[i]) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

void save_classifier(const LinearClassifier& clf, const std::filesystem::path& path) {
  Container c;
  c.precision = Precision::kFloat64;
  c.rows = static_cast<std::uint32_t>(clf.classes());
  c.cols = static_cast<std::uint32_t>(clf.inputs());
  c.payload.assign(clf.weights.data(), clf.weights.data() + clf.weights.size());
  c.payload.insert(c.payload.end(), clf.bias.data(), clf.bias.data() + clf.bias.size());
  write_container(path, kClassifierMagic, c);
}

LinearClassifier load_classifier(const std::filesystem::path& path) {
  // The bias trails the weight block: one extra value per class row.
  Container c = read_container(path, kClassifierMagic, 1);
  if (c.rows == 0) throw FormatError(FormatErrorKind::kEmpty, path.string());
  LinearClassifier clf;
  clf.weights = Eigen::Map<Matrix>(c.payload.data(), c.rows, c.cols);
  clf.bias = Eigen::Map<Vector>(c.payload.data() + static_cast<std::size_t>(c.rows) * c.cols, c.rows);
  return clf;
}

}  // namespace rescbm
