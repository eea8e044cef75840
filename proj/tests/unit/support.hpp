#pragma once

#include "rescbm/linalg.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testing {

/// Fresh, empty directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const std::filesystem::path dir = std::filesystem::path(RESCBM_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline rescbm::Matrix random_matrix(rescbm::Index rows, rescbm::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  rescbm::Matrix m(rows, cols);
  for (rescbm::Index i = 0; i < rows; ++i) {
    for (rescbm::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  }
  return m;
}

inline double loop_cosine(const rescbm::Matrix& a, rescbm::Index i, const rescbm::Matrix& b, rescbm::Index j) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (rescbm::Index k = 0; k < a.cols(); ++k) {
    dot += a(i, k) * b(j, k);
    na += a(i, k) * a(i, k);
    nb += b(j, k) * b(j, k);
  }
  return dot / std::sqrt(na * nb);
}

}  // namespace testing
