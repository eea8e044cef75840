#include "rescbm/data_io.hpp"
#include "rescbm/error.hpp"
#include "rescbm/keyvalue.hpp"
#include "rescbm/residual_trainer.hpp"

namespace rescbm {

namespace {

void save_residual_block(const Matrix& m, const std::filesystem::path& path) {
  Container c;
  c.precision = Precision::kFloat64;
  c.rows = static_cast<std::uint32_t>(m.rows());
  c.cols = static_cast<std::uint32_t>(m.cols());
  c.payload.assign(m.data(), m.data() + m.size());
  write_container(path, kEmbeddingMagic, c);
}

// Unlike load_embedding_matrix this accepts zero rows: an exhausted residual block is legal.
Matrix load_residual_block(const std::filesystem::path& path) {
  Container c = read_container(path, kEmbeddingMagic);
  return Eigen::Map<Matrix>(c.payload.data(), c.rows, c.cols);
}

}  // namespace

void save_standardizer(const Standardizer& s, const std::filesystem::path& path) {
  Container c;
  c.precision = Precision::kFloat64;
  c.rows = 2;
  c.cols = static_cast<std::uint32_t>(s.size());
  c.payload.assign(s.means.data(), s.means.data() + s.means.size());
  c.payload.insert(c.payload.end(), s.stds.data(), s.stds.data() + s.stds.size());
  write_container(path, kStandardizerMagic, c);
}

Standardizer load_standardizer(const std::filesystem::path& path, double epsilon) {
  Container c = read_container(path, kStandardizerMagic);
  if (c.rows != 2) throw FormatError(FormatErrorKind::kMalformed, path.string() + ": standardizer needs 2 rows");
  Standardizer s;
  s.epsilon = epsilon;
  s.means = Eigen::Map<Vector>(c.payload.data(), c.cols);
  s.stds = Eigen::Map<Vector>(c.payload.data() + c.cols, c.cols);
  return s;
}

void save_model(const ResidualModel& model, const std::filesystem::path& manifest) {
  const auto dir = manifest.parent_path();
  const std::string stem = manifest.stem().string();
  const auto name = [&](const char* suffix) { return stem + suffix; };

  save_bank(model.base_bank, dir / name(".bank"), /*exact=*/true);
  save_classifier(model.psi_c, dir / name(".psi_c.clf"));
  save_classifier(model.psi_r, dir / name(".psi_r.clf"));
  save_residual_block(model.residual_vectors, dir / name(".residual.emb"));
  save_standardizer(model.base_standardizer, dir / name(".base.std"));
  save_standardizer(model.residual_standardizer, dir / name(".residual.std"));

  const TrainConfig& c = model.config;
  std::string text = "# rescbm model checkpoint\n";
  text += "bank = " + name(".bank") + "\n";
  text += "psi_c = " + name(".psi_c.clf") + "\n";
  text += "psi_r = " + name(".psi_r.clf") + "\n";
  text += "residual = " + name(".residual.emb") + "\n";
  text += "base_standardizer = " + name(".base.std") + "\n";
  text += "residual_standardizer = " + name(".residual.std") + "\n";
  text += "lambda = " + format_double(c.regularizer.lambda) + "\n";
  text += "l1_ratio = " + format_double(c.regularizer.l1_ratio) + "\n";
  text += "residual_count = " + std::to_string(model.residual_count()) + "\n";
  text += "learning_rate = " + format_double(c.learning_rate) + "\n";
  text += "epochs = " + std::to_string(c.epochs) + "\n";
  text += "batch_size = " + std::to_string(c.batch_size) + "\n";
  text += "patience = " + std::to_string(c.patience) + "\n";
  text += "epsilon = " + format_double(c.epsilon) + "\n";
  text += "seed = " + std::to_string(c.seed) + "\n";
  write_text_file(manifest, text);
}

ResidualModel load_model(const std::filesystem::path& manifest) {
  const auto kv = to_map(read_key_value_file(manifest), manifest.string());
  const auto dir = manifest.parent_path();
  const auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw ValidationError(manifest.string() + ": missing key '" + key + "'");
    return it->second;
  };
  TrainConfig c;
  c.regularizer.lambda = parse_double(get("lambda"), "lambda");
  c.regularizer.l1_ratio = parse_double(get("l1_ratio"), "l1_ratio");
  c.residual_count = static_cast<std::size_t>(parse_integer(get("residual_count"), "residual_count"));
  c.learning_rate = parse_double(get("learning_rate"), "learning_rate");
  c.epochs = static_cast<std::size_t>(parse_integer(get("epochs"), "epochs"));
  c.batch_size = static_cast<std::size_t>(parse_integer(get("batch_size"), "batch_size"));
  c.patience = static_cast<std::size_t>(parse_integer(get("patience"), "patience"));
  c.epsilon = parse_double(get("epsilon"), "epsilon");
  c.seed = static_cast<std::uint64_t>(parse_integer(get("seed"), "seed"));

  ResidualModel m{load_bank(dir / get("bank")),
                  load_classifier(dir / get("psi_c")),
                  load_standardizer(dir / get("base_standardizer"), c.epsilon),
                  load_residual_block(dir / get("residual")),
                  load_classifier(dir / get("psi_r")),
                  load_standardizer(dir / get("residual_standardizer"), c.epsilon),
                  c};
  m.config.residual_count = m.residual_count();
  if (m.psi_c.inputs() != static_cast<Index>(m.base_bank.size()) || m.psi_r.inputs() != m.residual_vectors.rows() ||
      m.psi_c.classes() != m.psi_r.classes() || m.base_standardizer.size() != m.psi_c.inputs() ||
      m.residual_standardizer.size() != m.psi_r.inputs() ||
      (m.residual_vectors.rows() > 0 && m.residual_vectors.cols() != m.base_bank.dim())) {
    throw FormatError(FormatErrorKind::kSizeMismatch, manifest.string() + ": checkpoint parts have inconsistent shapes");
  }
  return m;
}

}  // namespace rescbm
