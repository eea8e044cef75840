#pragma once

#include "rescbm/concept_bank.hpp"
#include "rescbm/embedding.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace rescbm {

// Binary container layout (all little-endian):
//   magic      11 bytes, e.g. "RESCBM-EMB\0"
//   version    u8   1 = 32-bit payload, 2 = 64-bit payload
//   flags      u8   bit0 = row_normalized
//   rows       u32
//   cols       u32
//   payload    rows*cols reals, row-major, then any trailer the magic defines
inline constexpr std::string_view kEmbeddingMagic{"RESCBM-EMB\0", 11};
inline constexpr std::string_view kClassifierMagic{"RESCBM-CLF\0", 11};
inline constexpr std::string_view kStandardizerMagic{"RESCBM-STD\0", 11};

enum class Precision : std::uint8_t { kFloat32 = 1, kFloat64 = 2 };

struct Container {
  Precision precision = Precision::kFloat32;
  std::uint8_t flags = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<double> payload;
};

/// Reads a container and checks its magic and that the payload holds exactly
/// rows*cols + trailer_per_row*rows reals.
Container read_container(const std::filesystem::path& path, std::string_view magic,
                         std::size_t trailer_per_row = 0);
void write_container(const std::filesystem::path& path, std::string_view magic, const Container& c);

EmbeddingMatrix load_embedding_matrix(const std::filesystem::path& path);
void save_embedding_matrix(const EmbeddingMatrix& m, const std::filesystem::path& path,
                           Precision precision = Precision::kFloat32);

/// One token per line; surrounding whitespace trimmed, blank lines dropped.
std::vector<std::string> load_token_list(const std::filesystem::path& path);
std::vector<std::string> parse_token_list(const std::string& text, const std::string& source_name);
void save_token_list(const std::vector<std::string>& tokens, const std::filesystem::path& path);

struct LabelTable {
  std::vector<std::string> sample_ids;
  std::vector<std::size_t> labels;
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  std::size_t n_classes() const { return class_names.size(); }
};

/// CSV `sample_id,label_name` with a header row; labels indexed by `class_names` order.
LabelTable load_label_table(const std::filesystem::path& csv, const std::vector<std::string>& class_names);
void save_label_table(const LabelTable& table, const std::filesystem::path& csv);

/// Features joined with labels, row i <-> label i.
struct Dataset {
  Matrix features;
  std::vector<std::size_t> labels;
  std::size_t n_classes = 0;

  std::size_t size() const { return labels.size(); }
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

Dataset make_dataset(const EmbeddingMatrix& features, const LabelTable& labels);

struct SyntheticTask {
  EmbeddingMatrix features;
  LabelTable labels;
  ConceptBank candidate_bank;
  std::vector<std::size_t> base_token_indices;
  std::vector<std::size_t> planted_missing;
  /// Class-name stand-ins: normalized sum of each class's positively weighted concepts.
  EmbeddingMatrix class_embeddings;
  /// n_classes x n_candidates weights of the label rule; zero outside base ∪ planted.
  Matrix label_rule;
  Vector label_bias;  // per-class intercept of the label rule
  std::uint64_t generator_seed = 0;

  ConceptBank base_bank() const { return candidate_bank.subset(base_token_indices); }
  Dataset dataset() const { return make_dataset(features, labels); }
};

struct SyntheticSpec {
  std::size_t n_samples = 400;
  std::size_t dim = 32;
  std::size_t n_candidates = 40;
  std::size_t n_base = 7;
  std::size_t n_planted = 3;
  std::size_t n_classes = 4;
  std::uint64_t seed = 7;
};

/// Desk-scale stand-in for a real embedding dataset. Candidate concepts are random unit
/// vectors around a shared direction; each sample is a noisy nonnegative mix of a sparse subset of them; labels are
/// the argmax of a sparse linear rule over cosine activations of base ∪ planted concepts,
/// with each planted concept carrying a decisive weight for one class.
SyntheticTask generate_synthetic_task(const SyntheticSpec& spec);

/// Label rule evaluation used by the generator: argmax_k bias_k + sum_j rule(k,j) cos(candidate_j, f).
std::vector<std::size_t> apply_label_rule(const Matrix& features, const Matrix& candidates,
                                          const Matrix& rule, const Vector& bias);

/// Deterministic pronounceable token for candidate index i.
std::string synthetic_token(std::size_t i);

}  // namespace rescbm
