#include "rescbm/data_io.hpp"

#include "rescbm/error.hpp"
#include "rescbm/keyvalue.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace rescbm {

namespace {

constexpr std::size_t kHeaderSize = 11 + 1 + 1 + 4 + 4;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::size_t element_size(Precision p) { return p == Precision::kFloat64 ? 8 : 4; }

}  // namespace

Container read_container(const std::filesystem::path& path, std::string_view magic,
                         std::size_t trailer_per_row) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string();

  if (bytes.size() < magic.size() || std::string_view(bytes).substr(0, magic.size()) != magic) {
    throw FormatError(FormatErrorKind::kBadMagic, where);
  }
  if (bytes.size() < kHeaderSize) throw FormatError(FormatErrorKind::kTruncated, where + " (header)");

  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + magic.size();
  Container c;
  const std::uint8_t version = p[0];
  if (version != 1 && version != 2) {
    throw FormatError(FormatErrorKind::kUnsupportedVersion, where + " (version " + std::to_string(version) + ")");
  }
  c.precision = static_cast<Precision>(version);
  c.flags = p[1];
  c.rows = get_u32(p + 2);
  c.cols = get_u32(p + 6);

  const std::size_t count = static_cast<std::size_t>(c.rows) * (c.cols + trailer_per_row);
  const std::size_t need = count * element_size(c.precision);
  const std::size_t have = bytes.size() - kHeaderSize;
  if (have < need) {
    throw FormatError(FormatErrorKind::kTruncated,
                      where + " (expected " + std::to_string(need) + " payload bytes, found " + std::to_string(have) + ")");
  }
  if (have > need) {
    throw FormatError(FormatErrorKind::kSizeMismatch,
                      where + " (" + std::to_string(have - need) + " trailing bytes)");
  }

  c.payload.resize(count);
  const auto* body = reinterpret_cast<const unsigned char*>(bytes.data()) + kHeaderSize;
  for (std::size_t i = 0; i < count; ++i) {
    double v = 0.0;
    if (c.precision == Precision::kFloat64) {
      v = std::bit_cast<double>(get_u64(body + 8 * i));
    } else {
      v = static_cast<double>(std::bit_cast<float>(get_u32(body + 4 * i)));
    }
    if (!std::isfinite(v)) {
      throw FormatError(FormatErrorKind::kNonFinite, where + " (element " + std::to_string(i) + ")");
    }
    c.payload[i] = v;
  }
  return c;
}

void write_container(const std::filesystem::path& path, std::string_view magic, const Container& c) {
  std::string out(magic);
  out.push_back(static_cast<char>(c.precision));
  out.push_back(static_cast<char>(c.flags));
  put_u32(out, c.rows);
  put_u32(out, c.cols);
  for (double v : c.payload) {
    if (!std::isfinite(v)) throw ValidationError("refusing to write non-finite value to " + path.string());
    if (c.precision == Precision::kFloat64) {
      put_u64(out, std::bit_cast<std::uint64_t>(v));
    } else {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

EmbeddingMatrix load_embedding_matrix(const std::filesystem::path& path) {
  Container c = read_container(path, kEmbeddingMagic);
  if (c.rows == 0 || c.cols == 0) throw FormatError(FormatErrorKind::kEmpty, path.string());
  Matrix m = Eigen::Map<Matrix>(c.payload.data(), c.rows, c.cols);
  const bool normalized = (c.flags & 1u) != 0;
  if (normalized) {
    const Vector norms = row_norms(m);
    for (Index r = 0; r < norms.size(); ++r) {
      if (std::abs(norms[r] - 1.0) > kUnitNormTolerance) {
        throw FormatError(FormatErrorKind::kNormalizationViolated,
                          path.string() + " (row " + std::to_string(r) + " has norm " + format_double(norms[r]) + ")");
      }
    }
  }
  return EmbeddingMatrix(std::move(m), normalized);
}

void save_embedding_matrix(const EmbeddingMatrix& m, const std::filesystem::path& path, Precision precision) {
  Container c;
  c.precision = precision;
  c.flags = m.row_normalized() ? 1 : 0;
  c.rows = static_cast<std::uint32_t>(m.rows());
  c.cols = static_cast<std::uint32_t>(m.dim());
  c.payload.assign(m.values().data(), m.values().data() + m.values().size());
  write_container(path, kEmbeddingMagic, c);
}

std::vector<std::string> parse_token_list(const std::string& text, const std::string& source_name) {
  std::vector<std::string> tokens;
  std::unordered_set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty()) continue;
    if (!seen.insert(t).second) {
      throw FormatError(FormatErrorKind::kDuplicateToken,
                        source_name + ":" + std::to_string(line_no) + " ('" + t + "')");
    }
    tokens.push_back(std::move(t));
  }
  if (tokens.empty()) throw FormatError(FormatErrorKind::kEmpty, source_name);
  return tokens;
}

std::vector<std::string> load_token_list(const std::filesystem::path& path) {
  return parse_token_list(read_text_file(path), path.string());
}

void save_token_list(const std::vector<std::string>& tokens, const std::filesystem::path& path) {
  std::string text;
  for (const auto& t : tokens) {
    text += t;
    text += '\n';
  }
  write_text_file(path, text);
}

LabelTable load_label_table(const std::filesystem::path& csv, const std::vector<std::string>& class_names) {
  const std::string text = read_text_file(csv);
  const std::string where = csv.string();
  std::unordered_map<std::string, std::size_t> class_index;
  for (std::size_t i = 0; i < class_names.size(); ++i) class_index.emplace(class_names[i], i);

  LabelTable table;
  table.class_names = class_names;
  std::unordered_set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto comma = t.find(',');
    if (comma == std::string::npos || t.find(',', comma + 1) != std::string::npos) {
      throw FormatError(FormatErrorKind::kMalformed, where + ":" + std::to_string(line_no) + ": expected two fields");
    }
    std::string id = trim(std::string_view(t).substr(0, comma));
    std::string name = trim(std::string_view(t).substr(comma + 1));
    if (!header_seen) {
      if (id != "sample_id" || name != "label_name") {
        throw FormatError(FormatErrorKind::kMalformed, where + ":" + std::to_string(line_no) +
                                                           ": header must be 'sample_id,label_name'");
      }
      header_seen = true;
      continue;
    }
    const auto it = class_index.find(name);
    if (it == class_index.end()) {
      throw FormatError(FormatErrorKind::kUnknownClass, where + ":" + std::to_string(line_no) + " ('" + name + "')");
    }
    if (!seen.insert(id).second) {
      throw FormatError(FormatErrorKind::kDuplicateSample, where + ":" + std::to_string(line_no) + " ('" + id + "')");
    }
    table.sample_ids.push_back(std::move(id));
    table.labels.push_back(it->second);
  }
  if (table.labels.empty()) throw FormatError(FormatErrorKind::kEmpty, where);
  return table;
}

void save_label_table(const LabelTable& table, const std::filesystem::path& csv) {
  std::string text = "sample_id,label_name\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    text += table.sample_ids[i] + "," + table.class_names.at(table.labels[i]) + "\n";
  }
  write_text_file(csv, text);
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.features = gather_rows(features, indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  out.n_classes = n_classes;
  return out;
}

Dataset make_dataset(const EmbeddingMatrix& features, const LabelTable& labels) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw ValidationError("feature rows (" + std::to_string(features.rows()) + ") != label rows (" +
                          std::to_string(labels.size()) + ")");
  }
  for (std::size_t l : labels.labels) {
    if (l >= labels.n_classes()) throw ValidationError("label index out of range");
  }
  return Dataset{features.values(), labels.labels, labels.n_classes()};
}

std::string synthetic_token(std::size_t i) {
  static constexpr const char* kSyllables[16] = {"ba", "ce", "di", "fo", "gu", "ha", "ke", "li",
                                                 "mo", "nu", "pa", "re", "si", "to", "vu", "wa"};
  std::size_t v = i + 16;
  std::string rev;
  std::vector<std::string> parts;
  while (v > 0) {
    parts.emplace_back(kSyllables[v % 16]);
    v /= 16;
  }
  std::string out;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) out += *it;
  return out;
}

namespace {

Matrix candidate_cosines(const Matrix& features, const Matrix& candidates) {
  const Matrix unit_candidates = normalize_rows(candidates);
  const Vector fn = row_norms(features);
  Matrix acts = features * unit_candidates.transpose();
  for (Index r = 0; r < acts.rows(); ++r) acts.row(r) /= fn[r];
  return acts;
}

}  // namespace

std::vector<std::size_t> apply_label_rule(const Matrix& features, const Matrix& candidates, const Matrix& rule,
                                          const Vector& bias) {
  Matrix scores = candidate_cosines(features, candidates) * rule.transpose();
  scores.rowwise() += bias.transpose();
  return argmax_rows(scores);
}

SyntheticTask generate_synthetic_task(const SyntheticSpec& s) {
  // Mean pairwise cosine between candidates is about w^2 / (w^2 + 1).
  constexpr double kSharedDirectionWeight = 2.0;
  if (s.n_samples == 0 || s.dim == 0 || s.n_candidates == 0 || s.n_base == 0) {
    throw ValidationError("synthetic task: n_samples, dim, n_candidates and n_base must be positive");
  }
  if (s.n_classes < 2) throw ValidationError("synthetic task: need at least 2 classes");
  if (s.n_base + s.n_planted > s.n_candidates) {
    throw ValidationError("synthetic task: n_base + n_planted exceeds n_candidates");
  }
  if (s.dim < s.n_classes) throw ValidationError("synthetic task: dim must be >= n_classes");

  std::mt19937_64 rng(s.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const auto C = static_cast<Index>(s.n_candidates);
  const auto d = static_cast<Index>(s.dim);
  const auto K = static_cast<Index>(s.n_classes);

  // Candidates share a common direction, like text-encoder embeddings.
  RowVector shared(d);
  for (Index j = 0; j < d; ++j) shared[j] = gauss(rng);
  shared.normalize();
  Matrix candidates(C, d);
  for (Index i = 0; i < C; ++i) {
    for (Index j = 0; j < d; ++j) candidates(i, j) = gauss(rng) / std::sqrt(static_cast<double>(d));
    candidates.row(i) += kSharedDirectionWeight * shared;
  }
  candidates = normalize_rows(candidates);

  std::vector<std::size_t> order(s.n_candidates);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> planted(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(s.n_planted));
  std::vector<std::size_t> base(order.begin() + static_cast<std::ptrdiff_t>(s.n_planted),
                                order.begin() + static_cast<std::ptrdiff_t>(s.n_planted + s.n_base));
  std::sort(planted.begin(), planted.end());
  std::sort(base.begin(), base.end());

  // Base concepts support classes round-robin with moderate weight; each planted concept
  // overrides everything else for its class when present.
  constexpr double kDecisiveWeight = 3.0;
  Matrix rule = Matrix::Zero(K, C);
  for (std::size_t i = 0; i < base.size(); ++i) {
    rule(static_cast<Index>(i % s.n_classes), static_cast<Index>(base[i])) = 0.5 + unif(rng);
  }
  for (std::size_t i = 0; i < planted.size(); ++i) {
    rule(static_cast<Index>((i + 1) % s.n_classes), static_cast<Index>(planted[i])) = kDecisiveWeight;
  }

  const double p_active = std::min(0.5, 6.0 / static_cast<double>(s.n_candidates));
  constexpr double kNoise = 0.05;
  Matrix features(static_cast<Index>(s.n_samples), d);
  for (Index n = 0; n < features.rows(); ++n) {
    RowVector f = RowVector::Zero(d);
    bool any = false;
    for (Index j = 0; j < C; ++j) {
      if (unif(rng) < p_active) {
        f += (0.5 + unif(rng)) * candidates.row(j);
        any = true;
      }
    }
    if (!any) {
      const auto j = static_cast<Index>(std::uniform_int_distribution<std::size_t>(0, s.n_candidates - 1)(rng));
      f += (0.5 + unif(rng)) * candidates.row(j);
    }
    for (Index k = 0; k < d; ++k) f[k] += kNoise * gauss(rng);
    features.row(n) = f;
  }

  Matrix class_rows(K, d);
  for (Index k = 0; k < K; ++k) {
    RowVector v = RowVector::Zero(d);
    for (Index j = 0; j < C; ++j) {
      if (rule(k, j) > 0.0) v += rule(k, j) * candidates.row(j);
    }
    if (v.norm() == 0.0) {
      for (Index j = 0; j < d; ++j) v[j] = gauss(rng);
    }
    class_rows.row(k) = v / v.norm();
  }

  // Intercepts centre every concept's activation over the sample set.
  const Vector label_bias = -(rule * candidate_cosines(features, candidates).colwise().mean().transpose());

  LabelTable labels;
  labels.labels = apply_label_rule(features, candidates, rule, label_bias);
  for (std::size_t n = 0; n < s.n_samples; ++n) {
    char id[32];
    std::snprintf(id, sizeof(id), "s%05zu", n);
    labels.sample_ids.emplace_back(id);
  }
  for (std::size_t k = 0; k < s.n_classes; ++k) labels.class_names.push_back("class" + std::to_string(k));

  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < s.n_candidates; ++i) tokens.push_back(synthetic_token(i));

  return SyntheticTask{EmbeddingMatrix(std::move(features), false),
                       std::move(labels),
                       ConceptBank(std::move(tokens), EmbeddingMatrix(candidates, true)),
                       std::move(base),
                       std::move(planted),
                       EmbeddingMatrix(std::move(class_rows), true),
                       std::move(rule),
                       label_bias,
                       s.seed};
}

}  // namespace rescbm
