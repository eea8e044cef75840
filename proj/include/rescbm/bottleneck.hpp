#pragma once

#include "rescbm/embedding.hpp"
#include "rescbm/linalg.hpp"

#include <vector>

namespace rescbm {

enum class ActivationMode { kDot, kCosine };

struct ActivationMatrix {
  Matrix values;  // samples x concepts
  ActivationMode mode = ActivationMode::kCosine;
  bool standardized = false;
};

inline constexpr double kDefaultStdEpsilon = 1e-8;

/// Per-concept affine map to zero mean / unit standard deviation.
/// Columns whose population std falls below `epsilon` keep std = 1.
struct Standardizer {
  Vector means;
  Vector stds;
  double epsilon = kDefaultStdEpsilon;

  Index size() const { return means.size(); }
};

/// Activations of features against unit-norm bank rows. Dot mode is features * bank^T;
/// cosine mode additionally divides each row by the feature norm.
ActivationMatrix concept_activations(const Matrix& features, const EmbeddingMatrix& bank_rows, ActivationMode mode);

/// Cosine between every feature row and every (not necessarily unit) vector row.
Matrix cosine_matrix(const Matrix& features, const Matrix& vectors);

/// Population mean / std per column. Needs at least two samples.
Standardizer fit_standardizer(const ActivationMatrix& acts, double epsilon = kDefaultStdEpsilon);
Standardizer fit_standardizer(const Matrix& values, double epsilon = kDefaultStdEpsilon);

ActivationMatrix apply_standardizer(const ActivationMatrix& acts, const Standardizer& s);
Matrix apply_standardizer(const Matrix& values, const Standardizer& s);

/// Inverse of apply_standardizer.
ActivationMatrix invert_standardizer(const ActivationMatrix& acts, const Standardizer& s);

/// Standardizer with one extra column appended.
Standardizer append_column(const Standardizer& s, double mean, double std);

/// Standardization with statistics taken from the batch itself, kept for the backward pass.
struct BatchStandardized {
  Matrix values;
  Standardizer stats;
  std::vector<bool> constant;
};

BatchStandardized batch_standardize(const Matrix& raw, double epsilon = kDefaultStdEpsilon);

/// Gradient w.r.t. the raw batch given the gradient w.r.t. the standardized values.
/// Columns that hit the constant-column rule are treated as centered only.
Matrix batch_standardize_backward(const BatchStandardized& fwd, const Matrix& upstream);

/// Gradient of sum_ij upstream(i,j) * cos(vectors_j, features_i) w.r.t. `vectors`.
Matrix cosine_matrix_backward(const Matrix& features, const Matrix& vectors, const Matrix& upstream);

}  // namespace rescbm
