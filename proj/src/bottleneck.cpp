#include "rescbm/bottleneck.hpp"

#include "rescbm/error.hpp"

#include <cmath>

namespace rescbm {

namespace {

Vector checked_feature_norms(const Matrix& features) {
  Vector norms = row_norms(features);
  for (Index i = 0; i < norms.size(); ++i) {
    if (!(norms[i] > 0.0)) throw ValidationError("zero feature vector at row " + std::to_string(i));
  }
  return norms;
}

}  // namespace

ActivationMatrix concept_activations(const Matrix& features, const EmbeddingMatrix& bank_rows, ActivationMode mode) {
  if (features.cols() != bank_rows.dim()) {
    throw ValidationError("concept_activations: feature dim " + std::to_string(features.cols()) +
                          " != bank dim " + std::to_string(bank_rows.dim()));
  }
  if (!bank_rows.row_normalized()) throw ValidationError("concept_activations: bank rows must be unit-norm");
  ActivationMatrix out{features * bank_rows.values().transpose(), mode, false};
  if (mode == ActivationMode::kCosine) {
    const Vector norms = checked_feature_norms(features);
    out.values.array().colwise() /= norms.array();
  }
  return out;
}

Matrix cosine_matrix(const Matrix& features, const Matrix& vectors) {
  if (features.cols() != vectors.cols()) throw ValidationError("cosine_matrix: dimension mismatch");
  const Vector fn = checked_feature_norms(features);
  const Vector vn = row_norms(vectors);
  for (Index j = 0; j < vn.size(); ++j) {
    if (!(vn[j] > 0.0)) throw ValidationError("cosine_matrix: zero vector at row " + std::to_string(j));
  }
  Matrix out = features * vectors.transpose();
  out.array().colwise() /= fn.array();
  out.array().rowwise() /= vn.transpose().array();
  return out;
}

Standardizer fit_standardizer(const Matrix& values, double epsilon) {
  if (values.rows() < 2) throw ValidationError("fit_standardizer: need at least 2 samples");
  if (!(epsilon > 0.0)) throw ValidationError("fit_standardizer: epsilon must be positive");
  Standardizer s;
  s.epsilon = epsilon;
  const auto n = static_cast<double>(values.rows());
  s.means = values.colwise().mean().transpose();
  s.stds.resize(values.cols());
  for (Index c = 0; c < values.cols(); ++c) {
    const double var = (values.col(c).array() - s.means[c]).square().sum() / n;
    const double sd = std::sqrt(var);
    s.stds[c] = sd < epsilon ? 1.0 : sd;
  }
  return s;
}

Standardizer fit_standardizer(const ActivationMatrix& acts, double epsilon) {
  if (acts.standardized) throw ValidationError("fit_standardizer: activations already standardized");
  return fit_standardizer(acts.values, epsilon);
}

Matrix apply_standardizer(const Matrix& values, const Standardizer& s) {
  if (values.cols() != s.size()) throw ValidationError("apply_standardizer: column count mismatch");
  Matrix out = values;
  out.rowwise() -= s.means.transpose();
  out.array().rowwise() /= s.stds.transpose().array();
  return out;
}

ActivationMatrix apply_standardizer(const ActivationMatrix& acts, const Standardizer& s) {
  return ActivationMatrix{apply_standardizer(acts.values, s), acts.mode, true};
}

ActivationMatrix invert_standardizer(const ActivationMatrix& acts, const Standardizer& s) {
  if (acts.values.cols() != s.size()) throw ValidationError("invert_standardizer: column count mismatch");
  Matrix out = acts.values;
  out.array().rowwise() *= s.stds.transpose().array();
  out.rowwise() += s.means.transpose();
  return ActivationMatrix{std::move(out), acts.mode, false};
}

Standardizer append_column(const Standardizer& s, double mean, double std) {
  Standardizer out = s;
  out.means.conservativeResize(s.size() + 1);
  out.stds.conservativeResize(s.size() + 1);
  out.means[s.size()] = mean;
  out.stds[s.size()] = std;
  return out;
}

BatchStandardized batch_standardize(const Matrix& raw, double epsilon) {
  BatchStandardized out;
  if (raw.rows() < 2) {
    // A single sample carries no spread: every column is constant.
    out.stats.epsilon = epsilon;
    out.stats.means = raw.colwise().mean().transpose();
    out.stats.stds = Vector::Ones(raw.cols());
    out.constant.assign(static_cast<std::size_t>(raw.cols()), true);
  } else {
    out.stats = fit_standardizer(raw, epsilon);
    out.constant.resize(static_cast<std::size_t>(raw.cols()));
    for (Index c = 0; c < raw.cols(); ++c) {
      const double var = (raw.col(c).array() - out.stats.means[c]).square().mean();
      out.constant[static_cast<std::size_t>(c)] = std::sqrt(var) < epsilon;
    }
  }
  out.values = apply_standardizer(raw, out.stats);
  return out;
}

Matrix batch_standardize_backward(const BatchStandardized& fwd, const Matrix& upstream) {
  const Index n = upstream.rows();
  const auto nd = static_cast<double>(n);
  Matrix grad(n, upstream.cols());
  for (Index c = 0; c < upstream.cols(); ++c) {
    const auto g = upstream.col(c);
    const double g_mean = g.mean();
    // Constant columns: z = x - mean, so only the centering term remains.
    if (fwd.constant[static_cast<std::size_t>(c)]) {
      grad.col(c) = (g.array() - g_mean).matrix() / fwd.stats.stds[c];
      continue;
    }
    const auto z = fwd.values.col(c);
    const double gz_mean = g.dot(z) / nd;
    grad.col(c) = ((g.array() - g_mean - z.array() * gz_mean) / fwd.stats.stds[c]).matrix();
  }
  return grad;
}

Matrix cosine_matrix_backward(const Matrix& features, const Matrix& vectors, const Matrix& upstream) {
  // d cos(u,f)/du = f/(|u||f|) - cos(u,f) u/|u|^2
  const Vector fn = row_norms(features);
  const Vector vn = row_norms(vectors);
  Matrix unit_f = features;
  unit_f.array().colwise() /= fn.array();
  Matrix cosv = unit_f * vectors.transpose();
  cosv.array().rowwise() /= vn.transpose().array();

  Matrix grad = upstream.transpose() * unit_f;  // vectors x dim
  for (Index j = 0; j < vectors.rows(); ++j) {
    const double gc = upstream.col(j).dot(cosv.col(j));
    grad.row(j) = grad.row(j) / vn[j] - gc * vectors.row(j) / (vn[j] * vn[j]);
  }
  return grad;
}

}  // namespace rescbm
