#include "rescbm/discovery.hpp"

#include "rescbm/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace rescbm {

namespace {

constexpr std::uint64_t kRoundStream = 0xD1B54A32D192ED03ULL;

std::uint64_t round_seed(std::uint64_t seed, std::size_t round) {
  return seed ^ (kRoundStream * (static_cast<std::uint64_t>(round) + 1));
}

std::vector<std::size_t> gather(const std::vector<std::size_t>& v, const std::vector<std::size_t>& idx) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

Matrix as_row(const Vector& v) { return v.transpose(); }

Matrix drop_row(const Matrix& m, Index r) {
  Matrix out(m.rows() - 1, m.cols());
  out.topRows(r) = m.topRows(r);
  out.bottomRows(m.rows() - 1 - r) = m.bottomRows(m.rows() - 1 - r);
  return out;
}

Matrix drop_col(const Matrix& m, Index c) {
  Matrix out(m.rows(), m.cols() - 1);
  out.leftCols(c) = m.leftCols(c);
  out.rightCols(m.cols() - 1 - c) = m.rightCols(m.cols() - 1 - c);
  return out;
}

}  // namespace

Vector init_discovered_vector(const ConceptBank& base_bank, double noise_scale, std::uint64_t seed) {
  if (!(noise_scale >= 0.0)) throw ValidationError("noise_scale must be >= 0");
  const Matrix& rows = base_bank.rows();
  Vector v = rows.colwise().mean().transpose();
  if (noise_scale > 0.0) {
    const double scale = noise_scale * row_norms(rows).mean();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, scale);
    for (Index i = 0; i < v.size(); ++i) v[i] += gauss(rng);
  }
  return v;
}

LinearClassifier init_discovered_classifier(const Vector& discovered, const Matrix& class_name_embeddings) {
  if (class_name_embeddings.cols() != discovered.size()) {
    throw ValidationError("init_discovered_classifier: dimension mismatch");
  }
  LinearClassifier psi_d = LinearClassifier::zeros(class_name_embeddings.rows(), 1);
  const std::span<const double> v(discovered.data(), static_cast<std::size_t>(discovered.size()));
  for (Index k = 0; k < class_name_embeddings.rows(); ++k) {
    psi_d.weights(k, 0) = cosine(v, row_span(class_name_embeddings, k));
  }
  return psi_d;
}

double similarity_loss_over(const Vector& discovered, const ConceptBank& pool, const std::vector<std::size_t>& indices) {
  const double norm = discovered.norm();
  if (!(norm > 0.0)) throw ValidationError("similarity loss: zero discovered vector");
  if (indices.empty()) throw ValidationError("similarity loss: empty index set");
  double total = 0.0;
  for (std::size_t j : indices) total += pool.rows().row(static_cast<Index>(j)).dot(discovered) / norm;
  return 1.0 - total / static_cast<double>(indices.size());
}

Vector similarity_loss_gradient(const Vector& discovered, const ConceptBank& pool,
                                const std::vector<std::size_t>& indices) {
  const std::span<const double> v(discovered.data(), static_cast<std::size_t>(discovered.size()));
  Vector g = Vector::Zero(discovered.size());
  for (std::size_t j : indices) g += cosine_backward(v, row_span(pool.rows(), static_cast<Index>(j)), 1.0);
  return -g / static_cast<double>(indices.size());
}

double concept_similarity_loss(const Vector& discovered, const ConceptBank& pool, std::size_t top_m) {
  const RankedMatches top = nearest_candidates(
      std::span<const double>(discovered.data(), static_cast<std::size_t>(discovered.size())), pool, top_m);
  double mean = 0.0;
  for (double s : top.similarities) mean += s;
  return 1.0 - mean / static_cast<double>(top_m);
}

std::size_t select_residual_for_removal(const LinearClassifier& psi_r) {
  if (psi_r.inputs() == 0) throw ValidationError("no residual vectors left to remove");
  Index best = 0;
  double best_norm = psi_r.weights.col(0).norm();
  for (Index c = 1; c < psi_r.inputs(); ++c) {
    const double n = psi_r.weights.col(c).norm();
    if (n > best_norm) {
      best = c;
      best_norm = n;
    }
  }
  return static_cast<std::size_t>(best);
}

DiscoveryState begin_discovery_round(const ResidualModel& model, const ConceptBank& candidate_pool,
                                     const Matrix& class_name_embeddings, const DiscoveryConfig& config,
                                     std::uint64_t seed) {
  if (config.alpha < 0.0) throw ValidationError("alpha must be >= 0");
  if (config.top_m < 1 || config.top_m > candidate_pool.size()) {
    throw ValidationError("top_m=" + std::to_string(config.top_m) + " outside [1, pool size " +
                          std::to_string(candidate_pool.size()) + "]");
  }
  if (candidate_pool.dim() != model.base_bank.dim()) throw ValidationError("candidate pool dim mismatch");
  if (class_name_embeddings.rows() != static_cast<Index>(model.n_classes())) {
    throw ValidationError("class-name embeddings must have one row per class");
  }
  const std::size_t removed = select_residual_for_removal(model.psi_r);
  const auto r = static_cast<Index>(removed);

  DiscoveryState s{init_discovered_vector(model.base_bank, config.noise_scale, seed),
                   LinearClassifier{},
                   drop_row(model.residual_vectors, r),
                   LinearClassifier{drop_col(model.psi_r.weights, r), model.psi_r.bias},
                   candidate_pool,
                   config.alpha,
                   config.top_m,
                   removed};
  s.psi_d = init_discovered_classifier(s.discovered, class_name_embeddings);
  return s;
}

Matrix discovered_logits(const LinearClassifier& psi_c, const LinearClassifier& psi_d, const Vector& discovered,
                         const Matrix& base_inputs, const Matrix& features, double epsilon) {
  const BatchStandardized d = batch_standardize(cosine_matrix(features, as_row(discovered)), epsilon);
  return forward(psi_c, base_inputs) + forward(psi_d, d.values);
}

DiscoveryObjective discovery_objective(const LinearClassifier& psi_c, const LinearClassifier& psi_d,
                                       const Vector& discovered, const Matrix& base_inputs, const Matrix& features,
                                       std::span<const std::size_t> labels, const ConceptBank& pool,
                                       const std::vector<std::size_t>& top_indices, double alpha,
                                       const RegularizerSpec& reg, double epsilon) {
  const Matrix v = as_row(discovered);
  const BatchStandardized d = batch_standardize(cosine_matrix(features, v), epsilon);
  const Matrix logits = forward(psi_c, base_inputs) + forward(psi_d, d.values);
  const Matrix logit_grad = cross_entropy_logit_gradient(logits, labels);

  DiscoveryObjective out;
  out.loss = cross_entropy(logits, labels) + alpha * similarity_loss_over(discovered, pool, top_indices) +
             elastic_net(psi_c, reg) + elastic_net(psi_d, reg);
  out.psi_c = head_gradients(psi_c, base_inputs, logit_grad);
  add_elastic_net_gradient(psi_c.weights, reg, out.psi_c.weights);
  out.psi_d = head_gradients(psi_d, d.values, logit_grad);
  add_elastic_net_gradient(psi_d.weights, reg, out.psi_d.weights);
  const Matrix gv = cosine_matrix_backward(features, v, batch_standardize_backward(d, out.psi_d.inputs));
  out.discovered = gv.row(0).transpose();
  if (alpha != 0.0) out.discovered += alpha * similarity_loss_gradient(discovered, pool, top_indices);
  return out;
}

SnapChoice snap_to_candidate(const Vector& discovered, const ConceptBank& pool, const ConceptBank* skip) {
  const RankedMatches ranked = nearest_candidates(
      std::span<const double>(discovered.data(), static_cast<std::size_t>(discovered.size())), pool, pool.size());
  for (std::size_t i = 0; i < ranked.indices.size(); ++i) {
    const std::size_t idx = ranked.indices[i];
    const std::string& token = pool.tokens()[idx];
    if (skip != nullptr && skip->contains(token)) continue;
    return SnapChoice{idx, token, pool.rows().row(static_cast<Index>(idx)).transpose(), ranked.similarities[i]};
  }
  throw ValidationError("candidate pool exhausted: every remaining candidate is already in the bank");
}

DiscoverySession::DiscoverySession(const ResidualModel& model, DiscoveryState state, const Dataset& train,
                                   const DiscoveryConfig& config)
    : state_(std::move(state)),
      psi_c_(model.psi_c),
      train_(train),
      config_(config),
      train_config_(model.config),
      base_inputs_(base_concept_inputs(model, train.features)),
      psi_c_opt_(psi_c_, config.learning_rate),
      psi_d_opt_(state_.psi_d, config.learning_rate),
      discovered_opt_(AdamState::for_size(state_.discovered.size(), config.learning_rate)),
      residual_head_opt_(state_.psi_r_shrunk, config.learning_rate),
      residual_opt_(AdamState::for_size(state_.shrunk_residual.size(), config.learning_rate)) {
  validate_training_data(train);
}

double DiscoverySession::pass1(const std::vector<std::size_t>& batch) {
  const auto top = nearest_candidates(std::span<const double>(state_.discovered.data(),
                                                              static_cast<std::size_t>(state_.discovered.size())),
                                      state_.candidate_pool, state_.top_m)
                       .indices;
  const auto labels = gather(train_.labels, batch);
  const DiscoveryObjective obj =
      discovery_objective(psi_c_, state_.psi_d, state_.discovered, gather_rows(base_inputs_, batch),
                          gather_rows(train_.features, batch), labels, state_.candidate_pool, top, state_.alpha,
                          train_config_.regularizer, train_config_.epsilon);
  psi_c_opt_.step(psi_c_, obj.psi_c);
  psi_d_opt_.step(state_.psi_d, obj.psi_d);
  adam_step(discovered_opt_, state_.discovered, obj.discovered);
  return obj.loss;
}

double DiscoverySession::pass2(const std::vector<std::size_t>& batch) {
  if (state_.shrunk_residual.rows() == 0) return 0.0;
  const Matrix features = gather_rows(train_.features, batch);
  const auto labels = gather(train_.labels, batch);
  const Matrix fixed = discovered_logits(psi_c_, state_.psi_d, state_.discovered, gather_rows(base_inputs_, batch),
                                         features, train_config_.epsilon);
  const ResidualObjective obj = residual_objective(fixed, state_.psi_r_shrunk, state_.shrunk_residual, features,
                                                   labels, train_config_.regularizer, train_config_.epsilon);
  residual_head_opt_.step(state_.psi_r_shrunk, obj.head);
  adam_step(residual_opt_, state_.shrunk_residual, obj.residual);
  return obj.loss;
}

std::pair<ResidualModel, SnapChoice> DiscoverySession::finish(const ResidualModel& model) const {
  SnapChoice snap = snap_to_candidate(state_.discovered, state_.candidate_pool, &model.base_bank);
  ResidualModel out = model;
  out.base_bank = append_concept(model.base_bank, snap.token,
                                 std::span<const double>(snap.row.data(), static_cast<std::size_t>(snap.row.size())));

  const Standardizer column = fit_standardizer(cosine_matrix(train_.features, as_row(snap.row)), train_config_.epsilon);
  out.base_standardizer = append_column(model.base_standardizer, column.means[0], column.stds[0]);

  const Index n = psi_c_.inputs();
  out.psi_c.weights.resize(psi_c_.classes(), n + 1);
  out.psi_c.weights.leftCols(n) = psi_c_.weights;
  out.psi_c.weights.col(n) = state_.psi_d.weights.col(0);
  out.psi_c.bias = psi_c_.bias + state_.psi_d.bias;

  out.residual_vectors = state_.shrunk_residual;
  out.psi_r = state_.psi_r_shrunk;
  if (out.residual_count() > 0) {
    out.residual_standardizer = fit_standardizer(cosine_matrix(train_.features, out.residual_vectors),
                                                 train_config_.epsilon);
  } else {
    out.residual_standardizer = Standardizer{Vector(0), Vector(0), train_config_.epsilon};
  }
  return {std::move(out), std::move(snap)};
}

RoundOutcome discovery_round(const ResidualModel& model, DiscoveryState state, const Dataset& train,
                             const Dataset* validation, const DiscoveryConfig& config, std::size_t round) {
  const Dataset& monitor = validation != nullptr ? *validation : train;
  const double before = accuracy(predict(model, monitor.features, true).labels, monitor.labels);

  DiscoverySession session(model, std::move(state), train, config);
  std::mt19937_64 rng(round_seed(model.config.seed, round));
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& idx : epoch_batches(train.size(), model.config.batch_size, rng)) {
      session.pass1(idx);
      session.pass2(idx);
    }
  }
  auto [next, snap] = session.finish(model);
  if (config.refit_epochs > 0) {
    ResidualTrainingSession head(std::move(next), train);
    for (std::size_t epoch = 0; epoch < config.refit_epochs; ++epoch) {
      for (const auto& idx : epoch_batches(train.size(), model.config.batch_size, rng)) head.pass1(idx);
    }
    next = std::move(head).release();
  }
  const double after = accuracy(predict(next, monitor.features, true).labels, monitor.labels);

  std::optional<ConceptBank> remaining;
  if (session.state().candidate_pool.size() > 1) remaining = session.state().candidate_pool.without({snap.token});
  return RoundOutcome{std::move(next), SnapRecord{round, snap.token, snap.cosine, before, after}, std::move(remaining)};
}

DiscoveryResult run_incremental_discovery(ResidualModel model, const ConceptBank& candidate_bank,
                                          const Matrix& class_name_embeddings, const Dataset& train,
                                          const Dataset* validation, const DiscoveryConfig& config) {
  DiscoveryResult result{std::move(model), {}};
  // The pool holds only candidates not yet in the bank.
  std::optional<ConceptBank> pool;
  if (std::any_of(candidate_bank.tokens().begin(), candidate_bank.tokens().end(),
                  [&](const std::string& t) { return !result.model.base_bank.contains(t); })) {
    pool = candidate_bank.without(result.model.base_bank.tokens());
  }
  const std::size_t rounds = result.model.residual_count();
  for (std::size_t round = 0; round < rounds; ++round) {
    if (!pool) throw ValidationError("candidate pool exhausted after " + std::to_string(round) + " rounds");
    DiscoveryState state = begin_discovery_round(result.model, *pool, class_name_embeddings, config,
                                                 round_seed(result.model.config.seed + 1, round));
    RoundOutcome outcome = discovery_round(result.model, std::move(state), train, validation, config, round);
    result.model = std::move(outcome.model);
    result.history.push_back(std::move(outcome.record));
    pool = std::move(outcome.remaining_pool);
  }
  return result;
}

}  // namespace rescbm
