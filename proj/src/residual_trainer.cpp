#include "rescbm/residual_trainer.hpp"

#include "rescbm/error.hpp"
#include "rescbm/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <set>

namespace rescbm {

namespace {

// Offsets keep the residual-vector draw independent of the batch-order stream, so D = 0
// and D > 0 runs share the exact same pass-1 schedule.
constexpr std::uint64_t kResidualInitStream = 0x9E3779B97F4A7C15ULL;

std::vector<std::size_t> gather_labels(const std::vector<std::size_t>& labels, const std::vector<std::size_t>& idx) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels[i]);
  return out;
}

// Pass 1: CE(psi_c(c)) + lambda * Omega(psi_c) on the base concepts only.
double base_step(LinearClassifier& psi_c, HeadOptimizer& opt, const Matrix& inputs,
                 const std::vector<std::size_t>& labels, const RegularizerSpec& reg) {
  const double loss = cross_entropy(forward(psi_c, inputs), labels) + elastic_net(psi_c, reg);
  opt.step(psi_c, gradients(psi_c, inputs, labels, reg));
  return loss;
}

Matrix standardized_bank_inputs(const ConceptBank& bank, const Standardizer& s, const Matrix& features) {
  return apply_standardizer(concept_activations(features, bank.embeddings(), ActivationMode::kCosine).values, s);
}

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  bool should_stop(double accuracy) {
    if (accuracy > best_) {
      best_ = accuracy;
      stale_ = 0;
      return false;
    }
    ++stale_;
    return patience_ > 0 && stale_ >= patience_;
  }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  double best_ = -1.0;
};

}  // namespace

void validate_training_data(const Dataset& train) {
  if (train.size() < 2) throw ValidationError("training data needs at least 2 samples");
  if (static_cast<std::size_t>(train.features.rows()) != train.size()) {
    throw ValidationError("features and labels are not aligned");
  }
  std::set<std::size_t> present(train.labels.begin(), train.labels.end());
  if (present.size() < 2) throw ValidationError("training data contains a single class");
  if (*present.rbegin() >= train.n_classes) throw ValidationError("label index out of range");
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng) {
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t count = std::max<std::size_t>(1, (n + batch_size - 1) / batch_size);
  const std::size_t base = n / count;
  const std::size_t extra = n % count;
  std::vector<std::vector<std::size_t>> batches;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < count; ++b) {
    const std::size_t len = base + (b < extra ? 1 : 0);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(pos),
                         order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return batches;
}

ResidualModel init_residual_model(const ConceptBank& bank, std::size_t n_classes, const TrainConfig& config) {
  if (n_classes < 2) throw ValidationError("need at least 2 classes");
  std::mt19937_64 rng(config.seed ^ kResidualInitStream);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto D = static_cast<Index>(config.residual_count);
  Matrix residual(D, bank.dim());
  for (Index r = 0; r < D; ++r) {
    do {
      for (Index c = 0; c < bank.dim(); ++c) residual(r, c) = gauss(rng);
    } while (residual.row(r).norm() == 0.0);
    residual.row(r).normalize();
  }
  const auto K = static_cast<Index>(n_classes);
  return ResidualModel{bank,
                       LinearClassifier::zeros(K, static_cast<Index>(bank.size())),
                       Standardizer{},
                       std::move(residual),
                       LinearClassifier::zeros(K, D),
                       Standardizer{Vector::Zero(D), Vector::Ones(D), config.epsilon},
                       config};
}

PcbmResult train_pcbm(const Dataset& train, const Dataset* validation, const ConceptBank& bank,
                      const TrainConfig& config) {
  validate_training_data(train);
  const auto start = std::chrono::steady_clock::now();
  PcbmResult out;
  out.trace.seed = config.seed;
  out.standardizer = fit_standardizer(
      concept_activations(train.features, bank.embeddings(), ActivationMode::kCosine), config.epsilon);
  const Matrix inputs = apply_standardizer(
      concept_activations(train.features, bank.embeddings(), ActivationMode::kCosine).values, out.standardizer);
  const Dataset& monitor = validation != nullptr ? *validation : train;
  const Matrix monitor_inputs = standardized_bank_inputs(bank, out.standardizer, monitor.features);

  out.psi_c = LinearClassifier::zeros(static_cast<Index>(train.n_classes), static_cast<Index>(bank.size()));
  HeadOptimizer opt(out.psi_c, config.learning_rate);
  std::mt19937_64 rng(config.seed);
  EarlyStopper stopper(config.patience);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double total = 0.0;
    const auto batches = epoch_batches(train.size(), config.batch_size, rng);
    for (const auto& idx : batches) {
      total += base_step(out.psi_c, opt, gather_rows(inputs, idx), gather_labels(train.labels, idx),
                         config.regularizer);
    }
    out.trace.pass1_loss.push_back(total / static_cast<double>(batches.size()));
    out.trace.pass2_loss.push_back(0.0);
    const double acc = accuracy(argmax_rows(forward(out.psi_c, monitor_inputs)), monitor.labels);
    out.trace.validation_accuracy.push_back(acc);
    if (stopper.should_stop(acc)) break;
  }
  out.trace.wall_clock_seconds = elapsed_seconds(start);
  return out;
}

ResidualObjective residual_objective(const Matrix& fixed_logits, const LinearClassifier& psi_r,
                                     const Matrix& residual, const Matrix& features,
                                     std::span<const std::size_t> labels, const RegularizerSpec& reg,
                                     double epsilon) {
  const BatchStandardized r = batch_standardize(cosine_matrix(features, residual), epsilon);
  const Matrix logits = fixed_logits + forward(psi_r, r.values);
  ResidualObjective out;
  out.loss = cross_entropy(logits, labels) + elastic_net(psi_r, reg);
  out.head = head_gradients(psi_r, r.values, cross_entropy_logit_gradient(logits, labels));
  add_elastic_net_gradient(psi_r.weights, reg, out.head.weights);
  out.residual = cosine_matrix_backward(features, residual, batch_standardize_backward(r, out.head.inputs));
  return out;
}

ResidualTrainingSession::ResidualTrainingSession(ResidualModel model, const Dataset& train)
    : model_(std::move(model)),
      train_(train),
      base_opt_(model_.psi_c, model_.config.learning_rate),
      residual_head_opt_(model_.psi_r, model_.config.learning_rate),
      residual_opt_(AdamState::for_size(model_.residual_vectors.size(), model_.config.learning_rate)) {
  validate_training_data(train);
  if (model_.base_bank.dim() != train.features.cols()) throw ValidationError("train_residual: feature dim mismatch");
  if (model_.psi_c.classes() != static_cast<Index>(train.n_classes)) {
    throw ValidationError("train_residual: class count mismatch");
  }
  model_.base_standardizer =
      fit_standardizer(concept_activations(train.features, model_.base_bank.embeddings(), ActivationMode::kCosine),
                       model_.config.epsilon);
  base_inputs_ = base_concept_inputs(model_, train.features);
}

double ResidualTrainingSession::pass1(const std::vector<std::size_t>& batch) {
  return base_step(model_.psi_c, base_opt_, gather_rows(base_inputs_, batch), gather_labels(train_.labels, batch),
                   model_.config.regularizer);
}

double ResidualTrainingSession::pass2(const std::vector<std::size_t>& batch) {
  if (model_.residual_count() == 0) return 0.0;
  const auto labels = gather_labels(train_.labels, batch);
  const Matrix fixed = forward(model_.psi_c, gather_rows(base_inputs_, batch));
  const ResidualObjective obj =
      residual_objective(fixed, model_.psi_r, model_.residual_vectors, gather_rows(train_.features, batch), labels,
                         model_.config.regularizer, model_.config.epsilon);
  residual_head_opt_.step(model_.psi_r, obj.head);
  adam_step(residual_opt_, model_.residual_vectors, obj.residual);
  return obj.loss;
}

void ResidualTrainingSession::refresh_residual_standardizer() {
  if (model_.residual_count() == 0) return;
  model_.residual_standardizer =
      fit_standardizer(cosine_matrix(train_.features, model_.residual_vectors), model_.config.epsilon);
}

ResidualModel ResidualTrainingSession::release() && {
  refresh_residual_standardizer();
  return std::move(model_);
}

ResidualResult train_residual(ResidualModel model, const Dataset& train, const Dataset* validation) {
  const auto start = std::chrono::steady_clock::now();
  const TrainConfig cfg = model.config;
  ResidualTrainingSession session(std::move(model), train);
  TrainTrace trace;
  trace.seed = cfg.seed;
  const Dataset& monitor = validation != nullptr ? *validation : train;
  std::mt19937_64 rng(cfg.seed);
  EarlyStopper stopper(cfg.patience);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total1 = 0.0;
    double total2 = 0.0;
    const auto batches = epoch_batches(train.size(), cfg.batch_size, rng);
    for (const auto& idx : batches) {
      total1 += session.pass1(idx);
      total2 += session.pass2(idx);
    }
    const auto nb = static_cast<double>(batches.size());
    trace.pass1_loss.push_back(total1 / nb);
    trace.pass2_loss.push_back(total2 / nb);
    session.refresh_residual_standardizer();
    const double acc = accuracy(predict(session.model(), monitor.features, true).labels, monitor.labels);
    trace.validation_accuracy.push_back(acc);
    if (stopper.should_stop(acc)) break;
  }
  ResidualModel trained = std::move(session).release();
  trace.wall_clock_seconds = elapsed_seconds(start);
  return ResidualResult{std::move(trained), std::move(trace)};
}

Matrix base_concept_inputs(const ResidualModel& model, const Matrix& features) {
  return standardized_bank_inputs(model.base_bank, model.base_standardizer, features);
}

Matrix residual_concept_inputs(const ResidualModel& model, const Matrix& features) {
  if (model.residual_count() == 0) return Matrix(features.rows(), 0);
  return apply_standardizer(cosine_matrix(features, model.residual_vectors), model.residual_standardizer);
}

Prediction predict(const ResidualModel& model, const Matrix& features, bool include_residual) {
  if (features.cols() != model.base_bank.dim()) throw ValidationError("predict: feature dim mismatch");
  Prediction p;
  p.logits = forward(model.psi_c, base_concept_inputs(model, features));
  if (include_residual) p.logits += forward(model.psi_r, residual_concept_inputs(model, features));
  p.labels = argmax_rows(p.logits);
  return p;
}

Prediction predict_pcbm(const LinearClassifier& psi_c, const Standardizer& standardizer, const ConceptBank& bank,
                        const Matrix& features) {
  Prediction p;
  p.logits = forward(psi_c, standardized_bank_inputs(bank, standardizer, features));
  p.labels = argmax_rows(p.logits);
  return p;
}

LinearClassifier train_pcbm_h(const Dataset& train, const ConceptBank& bank, const LinearClassifier& psi_c,
                              const Standardizer& standardizer, const TrainConfig& config) {
  validate_training_data(train);
  const Matrix base_logits = forward(psi_c, standardized_bank_inputs(bank, standardizer, train.features));
  LinearClassifier head = LinearClassifier::zeros(psi_c.classes(), train.features.cols());
  HeadOptimizer opt(head, config.learning_rate);
  std::mt19937_64 rng(config.seed);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& idx : epoch_batches(train.size(), config.batch_size, rng)) {
      const Matrix f = gather_rows(train.features, idx);
      const auto y = gather_labels(train.labels, idx);
      const Matrix logits = gather_rows(base_logits, idx) + forward(head, f);
      ClassifierGradients g = head_gradients(head, f, cross_entropy_logit_gradient(logits, y));
      add_elastic_net_gradient(head.weights, config.regularizer, g.weights);
      opt.step(head, g);
    }
  }
  return head;
}

Prediction predict_pcbm_h(const LinearClassifier& psi_c, const Standardizer& standardizer, const ConceptBank& bank,
                          const LinearClassifier& feature_head, const Matrix& features) {
  Prediction p;
  p.logits = forward(psi_c, standardized_bank_inputs(bank, standardizer, features)) + forward(feature_head, features);
  p.labels = argmax_rows(p.logits);
  return p;
}

LinearClassifier train_linear_probe(const Dataset& train, const TrainConfig& config) {
  validate_training_data(train);
  LinearClassifier head =
      LinearClassifier::zeros(static_cast<Index>(train.n_classes), train.features.cols());
  HeadOptimizer opt(head, config.learning_rate);
  std::mt19937_64 rng(config.seed);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& idx : epoch_batches(train.size(), config.batch_size, rng)) {
      opt.step(head, gradients(head, gather_rows(train.features, idx), gather_labels(train.labels, idx),
                               config.regularizer));
    }
  }
  return head;
}

std::vector<std::size_t> zero_shot(const Matrix& features, const Matrix& class_name_embeddings) {
  return argmax_rows(cosine_matrix(features, class_name_embeddings));
}

}  // namespace rescbm
