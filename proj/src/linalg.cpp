#include "rescbm/linalg.hpp"

#include "rescbm/error.hpp"

#include <cmath>
#include <cstring>

namespace rescbm {

const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::kBadMagic: return "bad magic";
    case FormatErrorKind::kUnsupportedVersion: return "unsupported version";
    case FormatErrorKind::kTruncated: return "truncated payload";
    case FormatErrorKind::kSizeMismatch: return "header/payload size mismatch";
    case FormatErrorKind::kNonFinite: return "non-finite entry";
    case FormatErrorKind::kNormalizationViolated: return "normalization flag violated";
    case FormatErrorKind::kDuplicateToken: return "duplicate token";
    case FormatErrorKind::kEmpty: return "empty input";
    case FormatErrorKind::kUnknownClass: return "unknown class";
    case FormatErrorKind::kDuplicateSample: return "duplicate sample id";
    case FormatErrorKind::kMalformed: return "malformed input";
  }
  return "format error";
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

Vector row_norms(const Matrix& m) { return m.rowwise().norm(); }

Matrix normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (!(n > 0.0)) {
      throw ValidationError("cannot normalize zero-norm row " + std::to_string(r));
    }
    out.row(r) /= n;
  }
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("cosine: dimension mismatch");
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ValidationError("cosine: zero-norm vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Index>(i)) = m.row(static_cast<Index>(rows[i]));
  }
  return out;
}

std::vector<std::size_t> argmax_rows(const Matrix& m) {
  std::vector<std::size_t> out(static_cast<std::size_t>(m.rows()), 0);
  for (Index r = 0; r < m.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < m.cols(); ++c) {
      if (m(r, c) > m(r, best)) best = c;
    }
    out[static_cast<std::size_t>(r)] = static_cast<std::size_t>(best);
  }
  return out;
}

namespace {

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::uint64_t hash_bytes(const Matrix& m) {
  std::uint64_t h = 14695981039346656037ULL;
  const std::int64_t shape[2] = {m.rows(), m.cols()};
  h = fnv1a(shape, sizeof(shape), h);
  return fnv1a(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double), h);
}

std::uint64_t hash_bytes(const Vector& v, std::uint64_t seed) {
  return fnv1a(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double), seed);
}

}  // namespace rescbm
