#pragma once

#include "rescbm/bottleneck.hpp"
#include "rescbm/concept_bank.hpp"
#include "rescbm/data_io.hpp"
#include "rescbm/optimizer.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

namespace rescbm {

struct TrainConfig {
  RegularizerSpec regularizer;
  std::size_t residual_count = 10;  // D
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::size_t patience = 0;  // epochs without validation improvement before stopping; 0 = never
  double epsilon = kDefaultStdEpsilon;
  std::uint64_t seed = 0;
};

struct TrainTrace {
  std::vector<double> pass1_loss;  // mean over batches, per epoch
  std::vector<double> pass2_loss;
  std::vector<double> validation_accuracy;
  std::uint64_t seed = 0;
  double wall_clock_seconds = 0.0;

  std::size_t epochs() const { return pass1_loss.size(); }
};

/// Base-bank concept classifier plus D learnable residual directions with their head.
struct ResidualModel {
  ConceptBank base_bank;
  LinearClassifier psi_c;
  Standardizer base_standardizer;
  Matrix residual_vectors;  // D x dim, rows need not be unit-norm
  LinearClassifier psi_r;   // classes x D
  /// Frozen training-set statistics of the residual activations, used at inference.
  Standardizer residual_standardizer;
  TrainConfig config;

  std::size_t n_classes() const { return static_cast<std::size_t>(psi_c.classes()); }
  std::size_t residual_count() const { return static_cast<std::size_t>(residual_vectors.rows()); }
};

/// Zero heads, residual rows drawn from an isotropic normal and scaled to unit norm.
ResidualModel init_residual_model(const ConceptBank& bank, std::size_t n_classes, const TrainConfig& config);

struct PcbmResult {
  LinearClassifier psi_c;
  Standardizer standardizer;
  TrainTrace trace;
};

PcbmResult train_pcbm(const Dataset& train, const Dataset* validation, const ConceptBank& bank,
                      const TrainConfig& config);

struct ResidualResult {
  ResidualModel model;
  TrainTrace trace;
};

/// Two passes per batch: pass 1 fits psi_c on the base concepts alone; pass 2 freezes
/// psi_c and fits psi_r and the residual vectors on the combined logits.
ResidualResult train_residual(ResidualModel model, const Dataset& train, const Dataset* validation);

/// Loss and gradients of CE(fixed_logits + psi_r(bstd(cos(U, f)))) + lambda * Omega(psi_r),
/// where bstd standardizes with the batch's own statistics.
struct ResidualObjective {
  double loss = 0.0;
  ClassifierGradients head;
  Matrix residual;  // d loss / d U
};

ResidualObjective residual_objective(const Matrix& fixed_logits, const LinearClassifier& psi_r,
                                     const Matrix& residual, const Matrix& features,
                                     std::span<const std::size_t> labels, const RegularizerSpec& reg,
                                     double epsilon);

/// Step-level access to residual training; train_residual drives one of these.
class ResidualTrainingSession {
 public:
  /// Fits the base standardizer on `train` and sets up optimizer state.
  ResidualTrainingSession(ResidualModel model, const Dataset& train);

  /// Updates psi_c only (base-concept loss). Returns the batch loss.
  double pass1(const std::vector<std::size_t>& batch);
  /// Updates psi_r and the residual vectors with psi_c frozen. No-op returning 0 when D = 0.
  double pass2(const std::vector<std::size_t>& batch);

  /// Refits the inference-time residual standardizer on the training set.
  void refresh_residual_standardizer();

  const ResidualModel& model() const { return model_; }
  ResidualModel release() &&;

 private:
  ResidualModel model_;
  const Dataset& train_;
  Matrix base_inputs_;
  HeadOptimizer base_opt_;
  HeadOptimizer residual_head_opt_;
  AdamState residual_opt_;
};

struct Prediction {
  Matrix logits;
  std::vector<std::size_t> labels;
};

/// Standardized cosine activations of the base bank (frozen statistics).
Matrix base_concept_inputs(const ResidualModel& model, const Matrix& features);
Matrix residual_concept_inputs(const ResidualModel& model, const Matrix& features);

Prediction predict(const ResidualModel& model, const Matrix& features, bool include_residual);
Prediction predict_pcbm(const LinearClassifier& psi_c, const Standardizer& standardizer, const ConceptBank& bank,
                        const Matrix& features);

/// Hybrid baseline: psi_c frozen, a linear head on raw features fits what it misses.
LinearClassifier train_pcbm_h(const Dataset& train, const ConceptBank& bank, const LinearClassifier& psi_c,
                              const Standardizer& standardizer, const TrainConfig& config);
Prediction predict_pcbm_h(const LinearClassifier& psi_c, const Standardizer& standardizer, const ConceptBank& bank,
                          const LinearClassifier& feature_head, const Matrix& features);

/// Uninterpretable baseline: linear classifier directly on features.
LinearClassifier train_linear_probe(const Dataset& train, const TrainConfig& config);

/// Argmax cosine between each feature and each class-name embedding.
std::vector<std::size_t> zero_shot(const Matrix& features, const Matrix& class_name_embeddings);

/// Shuffled near-equal batches covering 0..n-1 exactly once.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng);

void validate_training_data(const Dataset& train);

// Model checkpoint: manifest naming the bank, heads, residual block and standardizers.
void save_model(const ResidualModel& model, const std::filesystem::path& manifest);
ResidualModel load_model(const std::filesystem::path& manifest);

void save_standardizer(const Standardizer& s, const std::filesystem::path& path);
Standardizer load_standardizer(const std::filesystem::path& path, double epsilon);

}  // namespace rescbm
