#include "rescbm/concept_bank.hpp"

#include "rescbm/data_io.hpp"
#include "rescbm/error.hpp"
#include "rescbm/keyvalue.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace rescbm {

EmbeddingMatrix::EmbeddingMatrix(Matrix values, bool row_normalized)
    : values_(std::move(values)), row_normalized_(row_normalized) {
  if (values_.rows() < 1 || values_.cols() < 1) throw ValidationError("embedding matrix must be non-empty");
  if (!values_.allFinite()) throw ValidationError("embedding matrix has non-finite entries");
  if (row_normalized_) {
    const Vector norms = row_norms(values_);
    for (Index r = 0; r < norms.size(); ++r) {
      if (std::abs(norms[r] - 1.0) > kUnitNormTolerance) {
        throw ValidationError("row " + std::to_string(r) + " flagged normalized but has norm " +
                              std::to_string(norms[r]));
      }
    }
  }
}

EmbeddingMatrix EmbeddingMatrix::normalized(const Matrix& values) {
  return EmbeddingMatrix(normalize_rows(values), true);
}

std::size_t letter_count(std::string_view token) {
  std::size_t n = 0;
  for (const char ch : token) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80) {
      if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) ++n;
    } else if ((c & 0xC0u) != 0x80u) {
      ++n;  // lead byte of a multi-byte code point
    }
  }
  return n;
}

double average_letters(const std::vector<std::string>& tokens) {
  if (tokens.empty()) return 0.0;
  std::size_t total = 0;
  for (const auto& t : tokens) total += letter_count(t);
  return static_cast<double>(total) / static_cast<double>(tokens.size());
}

ConceptBank::ConceptBank(std::vector<std::string> tokens, const EmbeddingMatrix& embeddings)
    : tokens_(std::move(tokens)), embeddings_(EmbeddingMatrix::normalized(embeddings.values())) {
  if (tokens_.size() != static_cast<std::size_t>(embeddings.rows())) {
    throw ValidationError("bank: " + std::to_string(tokens_.size()) + " tokens but " +
                          std::to_string(embeddings.rows()) + " embedding rows");
  }
  std::unordered_set<std::string_view> seen;
  for (const auto& t : tokens_) {
    if (!seen.insert(t).second) throw FormatError(FormatErrorKind::kDuplicateToken, "bank token '" + t + "'");
  }
  avg_letters_ = average_letters(tokens_);
}

std::optional<std::size_t> ConceptBank::find(std::string_view token) const {
  const auto it = std::find(tokens_.begin(), tokens_.end(), token);
  if (it == tokens_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - tokens_.begin());
}

ConceptBank ConceptBank::without(const std::vector<std::string>& tokens) const {
  const std::unordered_set<std::string> drop(tokens.begin(), tokens.end());
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!drop.contains(tokens_[i])) keep.push_back(i);
  }
  return subset(keep);
}

ConceptBank ConceptBank::subset(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw ValidationError("bank subset is empty");
  std::vector<std::string> toks;
  toks.reserve(indices.size());
  for (std::size_t i : indices) toks.push_back(tokens_.at(i));
  return ConceptBank(std::move(toks), EmbeddingMatrix(gather_rows(rows(), indices), true));
}

const char* to_string(BankSizeVerdict v) {
  switch (v) {
    case BankSizeVerdict::kBelow: return "below";
    case BankSizeVerdict::kWithin: return "within";
    case BankSizeVerdict::kAbove: return "above";
  }
  return "unknown";
}

std::vector<std::string> assemble_base_bank(const std::vector<std::string>& general,
                                            const std::vector<std::string>& associated,
                                            const ConceptBank& candidate) {
  const std::unordered_set<std::string> cand(candidate.tokens().begin(), candidate.tokens().end());
  std::unordered_set<std::string> taken;
  std::vector<std::string> out;
  for (const auto* list : {&general, &associated}) {
    for (const auto& t : *list) {
      if (cand.contains(t) && taken.insert(t).second) out.push_back(t);
    }
  }
  return out;
}

ConceptBank build_bank(std::vector<std::string> tokens, const EmbeddingMatrix& embeddings) {
  return ConceptBank(std::move(tokens), embeddings);
}

RankedMatches nearest_candidates(std::span<const double> query, const ConceptBank& candidates, std::size_t m) {
  if (query.size() != static_cast<std::size_t>(candidates.dim())) {
    throw ValidationError("nearest_candidates: query dim " + std::to_string(query.size()) +
                          " != bank dim " + std::to_string(candidates.dim()));
  }
  if (m < 1 || m > candidates.size()) {
    throw ValidationError("nearest_candidates: M=" + std::to_string(m) + " outside [1, " +
                          std::to_string(candidates.size()) + "]");
  }
  const Eigen::Map<const Vector> q(query.data(), static_cast<Index>(query.size()));
  const double norm = q.norm();
  if (!(norm > 0.0)) throw ValidationError("nearest_candidates: zero query vector");

  const Vector sims = (candidates.rows() * q) / norm;
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double sa = sims[static_cast<Index>(a)];
                      const double sb = sims[static_cast<Index>(b)];
                      return sa > sb || (sa == sb && a < b);
                    });
  RankedMatches out;
  for (std::size_t i = 0; i < m; ++i) {
    out.indices.push_back(order[i]);
    out.similarities.push_back(std::clamp(sims[static_cast<Index>(order[i])], -1.0, 1.0));
  }
  return out;
}

ConceptBank append_concept(const ConceptBank& bank, const std::string& token, std::span<const double> row) {
  if (bank.contains(token)) throw FormatError(FormatErrorKind::kDuplicateToken, "append '" + token + "'");
  if (row.size() != static_cast<std::size_t>(bank.dim())) throw ValidationError("append_concept: row dim mismatch");
  Matrix rows(bank.rows().rows() + 1, bank.dim());
  rows.topRows(bank.rows().rows()) = bank.rows();
  rows.row(rows.rows() - 1) = Eigen::Map<const RowVector>(row.data(), static_cast<Index>(row.size()));
  std::vector<std::string> tokens = bank.tokens();
  tokens.push_back(token);
  return ConceptBank(std::move(tokens), EmbeddingMatrix(normalize_rows(rows), true));
}

BankSizeVerdict bank_size_lint(std::size_t n_concepts, std::size_t n_classes, std::size_t dim) {
  std::size_t lower = 0;
  while ((std::size_t{1} << lower) < n_classes) ++lower;  // ceil(log2 n)
  if (n_concepts < lower) return BankSizeVerdict::kBelow;
  if (n_concepts >= dim) return BankSizeVerdict::kAbove;
  return BankSizeVerdict::kWithin;
}

ConceptBank load_bank(const std::filesystem::path& manifest) {
  const auto kv = to_map(read_key_value_file(manifest), manifest.string());
  const auto dir = manifest.parent_path();
  const auto get = [&](const char* key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw ValidationError(manifest.string() + ": missing key '" + key + "'");
    return dir / it->second;
  };
  auto tokens = load_token_list(get("tokens"));
  auto emb = load_embedding_matrix(get("embeddings"));
  return build_bank(std::move(tokens), emb);
}

void save_bank(const ConceptBank& bank, const std::filesystem::path& manifest, bool exact) {
  const std::string stem = manifest.stem().string();
  const auto dir = manifest.parent_path();
  const std::string tokens_name = stem + ".tokens.txt";
  const std::string emb_name = stem + ".emb";
  save_token_list(bank.tokens(), dir / tokens_name);
  save_embedding_matrix(bank.embeddings(), dir / emb_name, exact ? Precision::kFloat64 : Precision::kFloat32);
  write_text_file(manifest, "tokens = " + tokens_name + "\nembeddings = " + emb_name + "\n");
}

}  // namespace rescbm
