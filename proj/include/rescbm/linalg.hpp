#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace rescbm {

// Row-major: one sample / one concept per contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

using Index = Eigen::Index;

bool all_finite(const Matrix& m);

/// L2 norm of every row.
Vector row_norms(const Matrix& m);

/// Returns a copy with every row scaled to unit L2 norm. Throws ValidationError on a zero row.
Matrix normalize_rows(const Matrix& m);

double cosine(std::span<const double> a, std::span<const double> b);

inline std::span<const double> row_span(const Matrix& m, Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

/// Copies the selected rows, in the given order.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows);

/// Argmax per row; ties go to the lowest column index.
std::vector<std::size_t> argmax_rows(const Matrix& m);

/// FNV-1a over the raw bytes of the matrix; used to assert byte-identity of frozen parameters.
std::uint64_t hash_bytes(const Matrix& m);
std::uint64_t hash_bytes(const Vector& v, std::uint64_t seed = 14695981039346656037ULL);

}  // namespace rescbm
