#include "rescbm/data_io.hpp"
#include "rescbm/error.hpp"
#include "rescbm/keyvalue.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

using namespace rescbm;

namespace {

FormatErrorKind format_kind(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.kind();
  }
  FAIL("expected a FormatError");
  return FormatErrorKind::kMalformed;
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

}  // namespace

TEST_CASE("embedding container with unit rows loads as normalized") {
  const auto dir = testing::scratch_dir("emb_unit");
  write_container(dir / "m.emb", kEmbeddingMagic, Container{Precision::kFloat32, 1, 2, 3, {1, 0, 0, 0, 1, 0}});
  const EmbeddingMatrix m = load_embedding_matrix(dir / "m.emb");
  CHECK(m.rows() == 2);
  CHECK(m.dim() == 3);
  CHECK(m.row_normalized());
  CHECK(m.values()(1, 1) == 1.0);
}

TEST_CASE("normalization flag with a non-unit row is a format violation") {
  const auto dir = testing::scratch_dir("emb_flag");
  write_container(dir / "m.emb", kEmbeddingMagic, Container{Precision::kFloat32, 1, 2, 3, {2, 0, 0, 0, 1, 0}});
  CHECK(format_kind([&] { load_embedding_matrix(dir / "m.emb"); }) == FormatErrorKind::kNormalizationViolated);

  write_container(dir / "ok.emb", kEmbeddingMagic, Container{Precision::kFloat32, 0, 2, 3, {2, 0, 0, 0, 1, 0}});
  CHECK_FALSE(load_embedding_matrix(dir / "ok.emb").row_normalized());
}

TEST_CASE("embedding round trip is bit-identical") {
  const auto dir = testing::scratch_dir("emb_round");
  std::mt19937_64 rng(5);
  // 32-bit payload: start from values that are exactly representable.
  const Matrix m32 = testing::random_matrix(5, 8, rng).cast<float>().cast<double>();
  save_embedding_matrix(EmbeddingMatrix(m32, false), dir / "a.emb");
  CHECK(load_embedding_matrix(dir / "a.emb").values() == m32);

  const Matrix m64 = testing::random_matrix(3, 2, rng);
  const EmbeddingMatrix e64(m64, false);
  save_embedding_matrix(e64, dir / "b.emb", Precision::kFloat64);
  CHECK(load_embedding_matrix(dir / "b.emb") == e64);

  const EmbeddingMatrix n = EmbeddingMatrix::normalized(m64);
  save_embedding_matrix(n, dir / "c.emb", Precision::kFloat64);
  CHECK(load_embedding_matrix(dir / "c.emb") == n);
}

TEST_CASE("1x1 container is header plus one 4-byte entry") {
  const auto dir = testing::scratch_dir("emb_size");
  Matrix m(1, 1);
  m(0, 0) = 0.5;
  save_embedding_matrix(EmbeddingMatrix(m, false), dir / "one.emb");
  CHECK(std::filesystem::file_size(dir / "one.emb") == 11 + 1 + 1 + 4 + 4 + 4);
  save_embedding_matrix(EmbeddingMatrix(m, false), dir / "one64.emb", Precision::kFloat64);
  CHECK(std::filesystem::file_size(dir / "one64.emb") == 21 + 8);
}

TEST_CASE("non-finite values are refused before anything is written") {
  const auto dir = testing::scratch_dir("emb_nan");
  Matrix m = Matrix::Ones(2, 2);
  m(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(EmbeddingMatrix(m, false), ValidationError);
  CHECK_THROWS_AS(write_container(dir / "nan.emb", kEmbeddingMagic,
                                  Container{Precision::kFloat32, 0, 1, 2, {1.0, std::nan("")}}),
                  ValidationError);
  CHECK_FALSE(std::filesystem::exists(dir / "nan.emb"));
}

TEST_CASE("malformed containers give distinct errors") {
  const auto dir = testing::scratch_dir("emb_bad");
  write_container(dir / "good.emb", kEmbeddingMagic, Container{Precision::kFloat32, 0, 2, 2, {1, 2, 3, 4}});
  const std::string good = read_text_file(dir / "good.emb");

  std::string magic = good;
  magic[0] = 'X';
  write_bytes(dir / "magic.emb", magic);
  CHECK(format_kind([&] { load_embedding_matrix(dir / "magic.emb"); }) == FormatErrorKind::kBadMagic);

  write_bytes(dir / "trunc.emb", good.substr(0, good.size() - 3));
  CHECK(format_kind([&] { load_embedding_matrix(dir / "trunc.emb"); }) == FormatErrorKind::kTruncated);

  write_bytes(dir / "head.emb", good.substr(0, 15));
  CHECK(format_kind([&] { load_embedding_matrix(dir / "head.emb"); }) == FormatErrorKind::kTruncated);

  write_bytes(dir / "long.emb", good + std::string(4, '\0'));
  CHECK(format_kind([&] { load_embedding_matrix(dir / "long.emb"); }) == FormatErrorKind::kSizeMismatch);

  std::string version = good;
  version[11] = 9;
  write_bytes(dir / "ver.emb", version);
  CHECK(format_kind([&] { load_embedding_matrix(dir / "ver.emb"); }) == FormatErrorKind::kUnsupportedVersion);

  CHECK(format_kind([&] { read_container(dir / "good.emb", kClassifierMagic); }) == FormatErrorKind::kBadMagic);
  CHECK_THROWS_AS(load_embedding_matrix(dir / "missing.emb"), IoError);
}

TEST_CASE("token lists") {
  CHECK(parse_token_list("red\nsmall\nleg\n", "t") == std::vector<std::string>{"red", "small", "leg"});
  CHECK(parse_token_list("red\nsmall\nleg\n\n\n", "t") == parse_token_list("red\nsmall\nleg\n", "t"));
  CHECK(parse_token_list("  red \r\nleg", "t") == std::vector<std::string>{"red", "leg"});
  CHECK(format_kind([] { parse_token_list("a\na\n", "t"); }) == FormatErrorKind::kDuplicateToken);
  CHECK(format_kind([] { parse_token_list("\n\n", "t"); }) == FormatErrorKind::kEmpty);

  const auto dir = testing::scratch_dir("tokens");
  const std::vector<std::string> tokens{"red", "small leg", "nectar"};
  save_token_list(tokens, dir / "t.txt");
  CHECK(load_token_list(dir / "t.txt") == tokens);
}

TEST_CASE("label tables") {
  const auto dir = testing::scratch_dir("labels");
  write_text_file(dir / "a.csv", "sample_id,label_name\nimg1,cat\nimg2,dog\n");
  const LabelTable t = load_label_table(dir / "a.csv", {"cat", "dog"});
  CHECK(t.labels == std::vector<std::size_t>{0, 1});
  CHECK(t.sample_ids == std::vector<std::string>{"img1", "img2"});

  write_text_file(dir / "b.csv", "sample_id,label_name\nimg3,fish\n");
  CHECK(format_kind([&] { load_label_table(dir / "b.csv", {"cat", "dog"}); }) == FormatErrorKind::kUnknownClass);

  write_text_file(dir / "c.csv", "sample_id,label_name\nimg1,cat\nimg1,dog\n");
  CHECK(format_kind([&] { load_label_table(dir / "c.csv", {"cat", "dog"}); }) == FormatErrorKind::kDuplicateSample);

  write_text_file(dir / "d.csv", "sample_id,label_name\nimg1\n");
  CHECK(format_kind([&] { load_label_table(dir / "d.csv", {"cat", "dog"}); }) == FormatErrorKind::kMalformed);

  std::vector<std::string> classes;
  for (int k = 0; k < 10; ++k) classes.push_back("c" + std::to_string(k));
  std::mt19937_64 rng(3);
  std::string csv = "sample_id,label_name\n";
  std::vector<std::size_t> expected(10, 0);
  for (int i = 0; i < 100; ++i) {
    const std::size_t k = rng() % 10;
    ++expected[k];
    csv += "s" + std::to_string(i) + "," + classes[k] + "\n";
  }
  write_text_file(dir / "e.csv", csv);
  const LabelTable big = load_label_table(dir / "e.csv", classes);
  std::vector<std::size_t> counts(10, 0);
  for (std::size_t l : big.labels) ++counts[l];
  CHECK(counts == expected);
  std::size_t total = 0;
  for (std::size_t c : counts) total += c;
  CHECK(total == 100);

  save_label_table(big, dir / "f.csv");
  CHECK(load_label_table(dir / "f.csv", classes).labels == big.labels);
}

TEST_CASE("dataset subset keeps rows and labels aligned") {
  Matrix f(3, 2);
  f << 1, 0, 0, 1, 1, 1;
  LabelTable t{{"a", "b", "c"}, {0, 1, 1}, {"x", "y"}};
  const Dataset d = make_dataset(EmbeddingMatrix(f, false), t);
  const Dataset s = d.subset({2, 0});
  CHECK(s.labels == std::vector<std::size_t>{1, 0});
  CHECK(s.features(0, 1) == 1.0);
  CHECK(s.features(1, 1) == 0.0);
  CHECK(s.n_classes == 2);

  LabelTable short_table{{"a"}, {0}, {"x", "y"}};
  CHECK_THROWS_AS(make_dataset(EmbeddingMatrix(f, false), short_table), ValidationError);
}

TEST_CASE("synthetic task generation") {
  const SyntheticSpec spec{};
  const SyntheticTask a = generate_synthetic_task(spec);
  const SyntheticTask b = generate_synthetic_task(spec);
  CHECK(a.features == b.features);
  CHECK(a.labels.labels == b.labels.labels);
  CHECK(a.candidate_bank.tokens() == b.candidate_bank.tokens());
  CHECK(a.planted_missing == b.planted_missing);

  SyntheticSpec other = spec;
  other.seed = spec.seed + 1;
  CHECK_FALSE(generate_synthetic_task(other).features == a.features);

  CHECK(a.features.rows() == 400);
  CHECK(a.candidate_bank.size() == 40);
  CHECK(a.base_token_indices.size() == 7);
  CHECK(a.planted_missing.size() == 3);
  CHECK(a.class_embeddings.rows() == 4);
  const std::set<std::size_t> base(a.base_token_indices.begin(), a.base_token_indices.end());
  for (std::size_t p : a.planted_missing) CHECK(base.count(p) == 0);

  // Every class occurs.
  std::set<std::size_t> seen(a.labels.labels.begin(), a.labels.labels.end());
  CHECK(seen.size() == 4);

  // The stored labels are the label rule applied to the features.
  CHECK(apply_label_rule(a.features.values(), a.candidate_bank.rows(), a.label_rule, a.label_bias) ==
        a.labels.labels);

  // The rule only touches base and planted concepts.
  std::set<std::size_t> used = base;
  used.insert(a.planted_missing.begin(), a.planted_missing.end());
  for (Index j = 0; j < a.label_rule.cols(); ++j) {
    if (used.count(static_cast<std::size_t>(j)) == 0) CHECK(a.label_rule.col(j).isZero());
  }
}

TEST_CASE("synthetic task without planted concepts") {
  SyntheticSpec spec;
  spec.n_planted = 0;
  const SyntheticTask t = generate_synthetic_task(spec);
  CHECK(t.planted_missing.empty());
  // Restricting the rule to base columns changes nothing.
  Matrix base_only = Matrix::Zero(t.label_rule.rows(), t.label_rule.cols());
  for (std::size_t j : t.base_token_indices) base_only.col(static_cast<Index>(j)) = t.label_rule.col(static_cast<Index>(j));
  CHECK(base_only == t.label_rule);
  CHECK(apply_label_rule(t.features.values(), t.candidate_bank.rows(), base_only, t.label_bias) == t.labels.labels);
}

TEST_CASE("infeasible synthetic sizes are rejected") {
  SyntheticSpec s;
  s.n_base = 38;
  s.n_planted = 3;
  CHECK_THROWS_AS(generate_synthetic_task(s), ValidationError);
  s = SyntheticSpec{};
  s.n_classes = 1;
  CHECK_THROWS_AS(generate_synthetic_task(s), ValidationError);
  s = SyntheticSpec{};
  s.n_samples = 0;
  CHECK_THROWS_AS(generate_synthetic_task(s), ValidationError);
  s = SyntheticSpec{};
  s.dim = 2;
  CHECK_THROWS_AS(generate_synthetic_task(s), ValidationError);
}

TEST_CASE("label rule is invariant to relabelling candidate order") {
  std::mt19937_64 rng(9);
  const Matrix f = testing::random_matrix(30, 6, rng);
  const Matrix c = normalize_rows(testing::random_matrix(5, 6, rng));
  const Matrix rule = testing::random_matrix(3, 5, rng);
  const Matrix bias_m = testing::random_matrix(3, 1, rng);
  const Vector bias = bias_m.col(0);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Matrix c2(5, 6), rule2(3, 5);
  for (Index j = 0; j < 5; ++j) {
    c2.row(j) = c.row(static_cast<Index>(perm[j]));
    rule2.col(j) = rule.col(static_cast<Index>(perm[j]));
  }
  CHECK(apply_label_rule(f, c, rule, bias) == apply_label_rule(f, c2, rule2, bias));
}

TEST_CASE("synthetic tokens are distinct") {
  std::set<std::string> s;
  for (std::size_t i = 0; i < 500; ++i) s.insert(synthetic_token(i));
  CHECK(s.size() == 500);
}
