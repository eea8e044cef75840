#pragma once

#include "rescbm/concept_bank.hpp"
#include "rescbm/evaluation.hpp"
#include "rescbm/residual_trainer.hpp"

#include <cstdint>
#include <optional>
#include <utility>
#include <string>
#include <vector>

namespace rescbm {

struct DiscoveryConfig {
  double alpha = 0.1;          // weight of the concept similarity loss
  std::size_t top_m = 5;       // candidates averaged by the similarity loss
  double noise_scale = 0.01;   // relative to the mean bank row norm
  std::size_t epochs = 50;     // per round
  double learning_rate = 1e-3;
  /// Epochs of concept-head training on the grown bank right after each snap, at the model's
  /// own learning rate, with the residual block frozen.
  std::size_t refit_epochs = 0;
};

/// Everything one discovery round optimizes besides psi_c.
struct DiscoveryState {
  Vector discovered;               // v_d, learnable
  LinearClassifier psi_d;          // classes x 1
  Matrix shrunk_residual;          // residual block with one vector removed
  LinearClassifier psi_r_shrunk;   // classes x (D - 1)
  ConceptBank candidate_pool;
  double alpha = 0.1;
  std::size_t top_m = 5;
  std::size_t removed_index = 0;   // which residual vector was dropped
};

/// Mean of the bank rows plus isotropic gaussian noise of std noise_scale * mean row norm.
Vector init_discovered_vector(const ConceptBank& base_bank, double noise_scale, std::uint64_t seed);

/// One input per class: weight k = cos(v_d, class_embedding_k), bias 0.
LinearClassifier init_discovered_classifier(const Vector& discovered, const Matrix& class_name_embeddings);

/// 1 - mean of the top-M cosines between v_d and the pool rows. Range [0, 2].
double concept_similarity_loss(const Vector& discovered, const ConceptBank& pool, std::size_t top_m);

/// Same loss over a fixed index set, with its gradient w.r.t. v_d.
double similarity_loss_over(const Vector& discovered, const ConceptBank& pool, const std::vector<std::size_t>& indices);
Vector similarity_loss_gradient(const Vector& discovered, const ConceptBank& pool,
                                const std::vector<std::size_t>& indices);

/// Residual vector to replace first: the one whose psi_r column has the largest L2 norm.
std::size_t select_residual_for_removal(const LinearClassifier& psi_r);

DiscoveryState begin_discovery_round(const ResidualModel& model, const ConceptBank& candidate_pool,
                                     const Matrix& class_name_embeddings, const DiscoveryConfig& config,
                                     std::uint64_t seed);

/// Loss and gradients of CE(psi_c(c) + psi_d(bstd(cos(v_d, f)))) + alpha * L_sim(v_d)
/// + lambda * (Omega(psi_c) + Omega(psi_d)), with the top-M set held fixed.
struct DiscoveryObjective {
  double loss = 0.0;
  ClassifierGradients psi_c;
  ClassifierGradients psi_d;
  Vector discovered;
};

DiscoveryObjective discovery_objective(const LinearClassifier& psi_c, const LinearClassifier& psi_d,
                                       const Vector& discovered, const Matrix& base_inputs, const Matrix& features,
                                       std::span<const std::size_t> labels, const ConceptBank& pool,
                                       const std::vector<std::size_t>& top_indices, double alpha,
                                       const RegularizerSpec& reg, double epsilon);

/// Logits of psi_c(c) + psi_d(bstd(cos(v_d, f))).
Matrix discovered_logits(const LinearClassifier& psi_c, const LinearClassifier& psi_d, const Vector& discovered,
                         const Matrix& base_inputs, const Matrix& features, double epsilon);

struct SnapChoice {
  std::size_t pool_index = 0;
  std::string token;
  Vector row;
  double cosine = 0.0;
};

/// Pool entry with the largest cosine to v_d (ties to the lower index). Entries whose token
/// is in `skip` are passed over in favour of the next best. Throws when nothing is left.
SnapChoice snap_to_candidate(const Vector& discovered, const ConceptBank& pool, const ConceptBank* skip = nullptr);

/// Step-level access to one discovery round.
class DiscoverySession {
 public:
  DiscoverySession(const ResidualModel& model, DiscoveryState state, const Dataset& train,
                   const DiscoveryConfig& config);

  /// Updates psi_c, psi_d and v_d on the original-plus-discovered logits.
  double pass1(const std::vector<std::size_t>& batch);
  /// Updates the shrunk residual block and its head; psi_c, psi_d and v_d stay frozen.
  double pass2(const std::vector<std::size_t>& batch);

  const DiscoveryState& state() const { return state_; }
  const LinearClassifier& psi_c() const { return psi_c_; }

  /// Snaps v_d and folds the snapped concept into a copy of `model`: the bank gains the
  /// candidate's own embedding, psi_c gains psi_d's weights as a new column, and the
  /// residual block is replaced by the shrunk one.
  std::pair<ResidualModel, SnapChoice> finish(const ResidualModel& model) const;

 private:
  DiscoveryState state_;
  LinearClassifier psi_c_;
  const Dataset& train_;
  DiscoveryConfig config_;
  TrainConfig train_config_;
  Matrix base_inputs_;
  HeadOptimizer psi_c_opt_;
  HeadOptimizer psi_d_opt_;
  AdamState discovered_opt_;
  HeadOptimizer residual_head_opt_;
  AdamState residual_opt_;
};

struct RoundOutcome {
  ResidualModel model;
  SnapRecord record;
  std::optional<ConceptBank> remaining_pool;  // empty once every candidate is used
};

RoundOutcome discovery_round(const ResidualModel& model, DiscoveryState state, const Dataset& train,
                             const Dataset* validation, const DiscoveryConfig& config, std::size_t round);

struct DiscoveryResult {
  ResidualModel model;
  std::vector<SnapRecord> history;
};

/// Converts every residual vector into a candidate concept, one round each.
DiscoveryResult run_incremental_discovery(ResidualModel model, const ConceptBank& candidate_bank,
                                          const Matrix& class_name_embeddings, const Dataset& train,
                                          const Dataset* validation, const DiscoveryConfig& config);

}  // namespace rescbm
