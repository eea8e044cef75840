#pragma once

#include "rescbm/linalg.hpp"

namespace rescbm {

inline constexpr double kUnitNormTolerance = 1e-6;

/// Dense rows x dim matrix of embeddings (image features, concept rows, learned vectors).
///
/// Always non-empty and finite. When `row_normalized()` is set every row has unit L2
/// norm to within kUnitNormTolerance; the constructor checks this rather than fixing it.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix(Matrix values, bool row_normalized);

  /// Normalizes every row and sets the flag. Throws ValidationError on zero rows.
  static EmbeddingMatrix normalized(const Matrix& values);

  Index rows() const { return values_.rows(); }
  Index dim() const { return values_.cols(); }
  const Matrix& values() const { return values_; }
  bool row_normalized() const { return row_normalized_; }

  friend bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    return a.row_normalized_ == b.row_normalized_ && a.values_.rows() == b.values_.rows() &&
           a.values_.cols() == b.values_.cols() && a.values_ == b.values_;
  }

 private:
  Matrix values_;
  bool row_normalized_;
};

}  // namespace rescbm
