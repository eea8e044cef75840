#pragma once

#include "rescbm/embedding.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rescbm {

/// Ordered concept tokens paired with unit-norm text embeddings.
///
/// Immutable: every mutation (append, removal) returns a new bank.
class ConceptBank {
 public:
  /// Pairs tokens with rows and normalizes them. Throws ValidationError on a length
  /// mismatch, a zero row or an empty bank; FormatError on duplicate tokens.
  ConceptBank(std::vector<std::string> tokens, const EmbeddingMatrix& embeddings);

  const std::vector<std::string>& tokens() const { return tokens_; }
  const EmbeddingMatrix& embeddings() const { return embeddings_; }
  const Matrix& rows() const { return embeddings_.values(); }
  double avg_letters() const { return avg_letters_; }
  std::size_t size() const { return tokens_.size(); }
  Index dim() const { return embeddings_.dim(); }

  std::optional<std::size_t> find(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }

  /// Bank without the listed tokens (unknown tokens ignored). Throws if nothing remains.
  ConceptBank without(const std::vector<std::string>& tokens) const;

  /// Bank restricted to the given indices, in that order.
  ConceptBank subset(const std::vector<std::size_t>& indices) const;

 private:
  std::vector<std::string> tokens_;
  EmbeddingMatrix embeddings_;
  double avg_letters_ = 0.0;
};

struct RankedMatches {
  std::vector<std::size_t> indices;
  std::vector<double> similarities;
};

enum class BankSizeVerdict { kBelow, kWithin, kAbove };

const char* to_string(BankSizeVerdict v);

/// Alphabetic characters in a token. Spaces, digits and punctuation do not count;
/// each non-ASCII UTF-8 code point counts as one letter.
std::size_t letter_count(std::string_view token);

double average_letters(const std::vector<std::string>& tokens);

/// (general ∩ candidate) ∪ (associated ∩ candidate), deduplicated, in first-appearance
/// order across general then associated.
std::vector<std::string> assemble_base_bank(const std::vector<std::string>& general,
                                            const std::vector<std::string>& associated,
                                            const ConceptBank& candidate);

ConceptBank build_bank(std::vector<std::string> tokens, const EmbeddingMatrix& embeddings);

/// Top-m candidates by cosine to `query`, similarity descending, ties to the lower index.
RankedMatches nearest_candidates(std::span<const double> query, const ConceptBank& candidates,
                                 std::size_t m);

ConceptBank append_concept(const ConceptBank& bank, const std::string& token,
                           std::span<const double> row);

/// Advisory check that the concept count lies in [ceil(log2 n_classes), dim).
BankSizeVerdict bank_size_lint(std::size_t n_concepts, std::size_t n_classes, std::size_t dim);

// Bank manifest: key-value text file with `tokens` and `embeddings` entries, paths
// relative to the manifest's directory.
ConceptBank load_bank(const std::filesystem::path& manifest);

/// Writes `<stem>.tokens.txt`, `<stem>.emb` and the manifest itself. With `exact` the
/// embedding payload is stored at 64-bit precision.
void save_bank(const ConceptBank& bank, const std::filesystem::path& manifest, bool exact = false);

}  // namespace rescbm
