#pragma once

#include "rescbm/linalg.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace rescbm {

/// Multinomial linear head: logits = inputs * weights^T + bias.
struct LinearClassifier {
  Matrix weights;  // classes x inputs
  Vector bias;     // classes

  static LinearClassifier zeros(Index classes, Index inputs);

  Index classes() const { return weights.rows(); }
  Index inputs() const { return weights.cols(); }
  std::uint64_t hash() const { return hash_bytes(bias, hash_bytes(weights)); }
};

struct RegularizerSpec {
  double lambda = 1e-4;
  double l1_ratio = 0.5;
};

struct AdamState {
  Vector first_moment;
  Vector second_moment;
  std::int64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_size(Index n, double learning_rate);
};

struct ClassifierGradients {
  Matrix weights;
  Vector bias;
  Matrix inputs;  // d loss / d inputs, same shape as the input batch
};

Matrix forward(const LinearClassifier& clf, const Matrix& inputs);

/// Row-wise softmax with max subtraction.
Matrix softmax(const Matrix& logits);

/// Mean over rows of -log softmax(logits)[label].
double cross_entropy(const Matrix& logits, std::span<const std::size_t> labels);

/// lambda * (l1_ratio * |W|_1 + (1 - l1_ratio) * 0.5 * |W|_2^2); the bias is not penalized.
double elastic_net(const LinearClassifier& clf, const RegularizerSpec& spec);

/// Adds the elastic-net gradient (subgradient 0 at exactly 0) for `weights` into `grad`.
void add_elastic_net_gradient(const Matrix& weights, const RegularizerSpec& spec, Matrix& grad);

/// d/d logits of the mean cross-entropy: (softmax - onehot) / batch.
Matrix cross_entropy_logit_gradient(const Matrix& logits, std::span<const std::size_t> labels);

/// Gradients of cross_entropy(forward(clf, inputs)) + elastic_net(clf).
ClassifierGradients gradients(const LinearClassifier& clf, const Matrix& inputs,
                              std::span<const std::size_t> labels, const RegularizerSpec& spec);

/// Parameter gradients of a head given d loss / d logits (no regularizer).
ClassifierGradients head_gradients(const LinearClassifier& clf, const Matrix& inputs, const Matrix& logit_grad);

/// upstream * (f / (|u||f|) - cos(u,f) u / |u|^2)
Vector cosine_backward(std::span<const double> u, std::span<const double> f, double upstream);

/// One bias-corrected Adam update of `params` in place.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

/// Convenience overloads over Eigen storage.
void adam_step(AdamState& state, Matrix& params, const Matrix& grads);
void adam_step(AdamState& state, Vector& params, const Vector& grads);

/// Adam state for both parameter blocks of a LinearClassifier.
struct HeadOptimizer {
  AdamState weights;
  AdamState bias;

  HeadOptimizer(const LinearClassifier& clf, double learning_rate);
  void step(LinearClassifier& clf, const ClassifierGradients& g);
};

using LossFunction = std::function<double(std::span<const double>)>;

/// Central differences per coordinate against `analytic`; returns
/// max_i |fd_i - analytic_i| / max(1, |analytic_i|).
double finite_difference_check(const LossFunction& loss, std::span<const double> params,
                               std::span<const double> analytic, double h);

/// Classifier checkpoint: container with magic RESCBM-CLF, weights then bias (64-bit).
void save_classifier(const LinearClassifier& clf, const std::filesystem::path& path);
LinearClassifier load_classifier(const std::filesystem::path& path);

}  // namespace rescbm
