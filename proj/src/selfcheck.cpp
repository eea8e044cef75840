#include "rescbm/selfcheck.hpp"

#include "rescbm/discovery.hpp"
#include "rescbm/evaluation.hpp"
#include "rescbm/residual_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

namespace rescbm {

namespace {

// Loop-based forward pass, deliberately sharing nothing with the vectorized code under test.
namespace naive {

double cos(const Matrix& a, Index i, const Matrix& b, Index j) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (Index c = 0; c < a.cols(); ++c) {
    dot += a(i, c) * b(j, c);
    na += a(i, c) * a(i, c);
    nb += b(j, c) * b(j, c);
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Batch standardization of cos(features, vectors) with the population std.
Matrix standardized_cosines(const Matrix& features, const Matrix& vectors, double eps) {
  const Index n = features.rows();
  Matrix out(n, vectors.rows());
  for (Index j = 0; j < vectors.rows(); ++j) {
    std::vector<double> col(static_cast<std::size_t>(n));
    double mean = 0.0;
    for (Index i = 0; i < n; ++i) mean += col[static_cast<std::size_t>(i)] = cos(features, i, vectors, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double x : col) var += (x - mean) * (x - mean);
    double sd = std::sqrt(var / static_cast<double>(n));
    if (sd < eps) sd = 1.0;
    for (Index i = 0; i < n; ++i) out(i, j) = (col[static_cast<std::size_t>(i)] - mean) / sd;
  }
  return out;
}

void add_logits(Matrix& logits, const Matrix& w, const Vector& b, const Matrix& x) {
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index k = 0; k < w.rows(); ++k) {
      double z = b[k];
      for (Index c = 0; c < w.cols(); ++c) z += w(k, c) * x(i, c);
      logits(i, k) += z;
    }
  }
}

double ce(const Matrix& logits, const std::vector<std::size_t>& y) {
  double total = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    double mx = logits(i, 0);
    for (Index k = 1; k < logits.cols(); ++k) mx = std::max(mx, logits(i, k));
    double s = 0.0;
    for (Index k = 0; k < logits.cols(); ++k) s += std::exp(logits(i, k) - mx);
    total += mx + std::log(s) - logits(i, static_cast<Index>(y[static_cast<std::size_t>(i)]));
  }
  return total / static_cast<double>(logits.rows());
}

double enet(const Matrix& w, const RegularizerSpec& r) {
  double l1 = 0.0, l2 = 0.0;
  for (Index k = 0; k < w.size(); ++k) {
    l1 += std::abs(w.data()[k]);
    l2 += w.data()[k] * w.data()[k];
  }
  return r.lambda * (r.l1_ratio * l1 + (1.0 - r.l1_ratio) * 0.5 * l2);
}

}  // namespace naive

struct Instance {
  Matrix features;
  std::vector<std::size_t> labels;
  Matrix base_inputs;
  LinearClassifier psi_c;
  LinearClassifier psi_r;
  Matrix residual;
  LinearClassifier psi_d;
  Vector discovered;
  Matrix pool;
  std::vector<std::size_t> top;
  double alpha = 0.0;
  RegularizerSpec reg;
};

// Weights kept away from 0 so the L1 kink never falls inside a difference stencil.
Matrix away_from_zero(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 0.5);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) {
    const double x = g(rng);
    m.data()[i] = std::copysign(0.05 + std::abs(x), x);
  }
  return m;
}

Matrix gaussian(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

ConceptBank pool_bank(const Matrix& rows) {
  std::vector<std::string> t;
  for (Index i = 0; i < rows.rows(); ++i) t.push_back("c" + std::to_string(i));
  return ConceptBank(std::move(t), EmbeddingMatrix(rows, true));
}

Instance random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> batch(3, 16), dim(2, 32), classes(2, 5), concepts(1, 6), residual(1, 4),
      pool_size(3, 12);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Instance in;
  const Index n = batch(rng), d = dim(rng), k = classes(rng), m = concepts(rng), r = residual(rng);
  in.features = gaussian(n, d, rng);
  std::uniform_int_distribution<std::size_t> label(0, static_cast<std::size_t>(k - 1));
  for (Index i = 0; i < n; ++i) in.labels.push_back(label(rng));
  in.base_inputs = gaussian(n, m, rng);
  in.psi_c = LinearClassifier{away_from_zero(k, m, rng), gaussian(k, 1, rng).col(0)};
  in.psi_r = LinearClassifier{away_from_zero(k, r, rng), gaussian(k, 1, rng).col(0)};
  in.residual = gaussian(r, d, rng);
  in.psi_d = LinearClassifier{away_from_zero(k, 1, rng), gaussian(k, 1, rng).col(0)};
  in.discovered = gaussian(d, 1, rng).col(0);
  in.pool = normalize_rows(gaussian(pool_size(rng), d, rng));
  std::uniform_int_distribution<Index> top_m(1, std::min<Index>(5, in.pool.rows()));
  const auto ranked = nearest_candidates(
      std::span<const double>(in.discovered.data(), static_cast<std::size_t>(d)),
      pool_bank(in.pool), static_cast<std::size_t>(top_m(rng)));
  in.top = ranked.indices;
  in.alpha = uni(rng) * 2.0;
  in.reg = RegularizerSpec{0.01 + 0.1 * uni(rng), uni(rng)};
  return in;
}

// Flattened parameter vector with named blocks, so one FD pass covers a whole objective.
struct Packed {
  std::vector<double> values;
  std::vector<double> analytic;

  void add(const double* p, const double* g, Index n) {
    values.insert(values.end(), p, p + n);
    analytic.insert(analytic.end(), g, g + n);
  }
};

void unpack(std::span<const double> flat, std::size_t& pos, double* dst, Index n) {
  std::memcpy(dst, flat.data() + pos, static_cast<std::size_t>(n) * sizeof(double));
  pos += static_cast<std::size_t>(n);
}

void add_head(Packed& p, const LinearClassifier& clf, const ClassifierGradients& g) {
  p.add(clf.weights.data(), g.weights.data(), clf.weights.size());
  p.add(clf.bias.data(), g.bias.data(), clf.bias.size());
}

void unpack_head(std::span<const double> flat, std::size_t& pos, LinearClassifier& clf) {
  unpack(flat, pos, clf.weights.data(), clf.weights.size());
  unpack(flat, pos, clf.bias.data(), clf.bias.size());
}

double check_pcbm(const Instance& in, const GradientSuiteOptions& o) {
  const ClassifierGradients g = gradients(in.psi_c, in.base_inputs, in.labels, in.reg);
  Packed p;
  add_head(p, in.psi_c, g);
  p.analytic[0] += o.perturbation;
  const auto loss = [&](std::span<const double> flat) {
    LinearClassifier c = in.psi_c;
    std::size_t pos = 0;
    unpack_head(flat, pos, c);
    Matrix logits = Matrix::Zero(in.base_inputs.rows(), c.classes());
    naive::add_logits(logits, c.weights, c.bias, in.base_inputs);
    return naive::ce(logits, in.labels) + naive::enet(c.weights, in.reg);
  };
  return finite_difference_check(loss, p.values, p.analytic, o.step);
}

double check_residual(const Instance& in, const GradientSuiteOptions& o) {
  const double eps = kDefaultStdEpsilon;
  const Matrix fixed = forward(in.psi_c, in.base_inputs);
  const ResidualObjective obj = residual_objective(fixed, in.psi_r, in.residual, in.features, in.labels, in.reg, eps);
  Packed p;
  add_head(p, in.psi_r, obj.head);
  p.add(in.residual.data(), obj.residual.data(), in.residual.size());
  p.analytic[p.analytic.size() - 1] += o.perturbation;
  const auto loss = [&](std::span<const double> flat) {
    LinearClassifier r = in.psi_r;
    Matrix u = in.residual;
    std::size_t pos = 0;
    unpack_head(flat, pos, r);
    unpack(flat, pos, u.data(), u.size());
    Matrix logits = Matrix::Zero(in.features.rows(), r.classes());
    naive::add_logits(logits, in.psi_c.weights, in.psi_c.bias, in.base_inputs);
    naive::add_logits(logits, r.weights, r.bias, naive::standardized_cosines(in.features, u, eps));
    return naive::ce(logits, in.labels) + naive::enet(r.weights, in.reg);
  };
  return finite_difference_check(loss, p.values, p.analytic, o.step);
}

double check_discovery(const Instance& in, const GradientSuiteOptions& o) {
  const double eps = kDefaultStdEpsilon;
  const ConceptBank pool = pool_bank(in.pool);
  const DiscoveryObjective obj = discovery_objective(in.psi_c, in.psi_d, in.discovered, in.base_inputs, in.features,
                                                     in.labels, pool, in.top, in.alpha, in.reg, eps);
  Packed p;
  add_head(p, in.psi_c, obj.psi_c);
  add_head(p, in.psi_d, obj.psi_d);
  p.add(in.discovered.data(), obj.discovered.data(), in.discovered.size());
  p.analytic[p.analytic.size() - 1] += o.perturbation;
  const auto loss = [&](std::span<const double> flat) {
    LinearClassifier c = in.psi_c, dd = in.psi_d;
    Vector v = in.discovered;
    std::size_t pos = 0;
    unpack_head(flat, pos, c);
    unpack_head(flat, pos, dd);
    unpack(flat, pos, v.data(), v.size());
    const Matrix vrow = v.transpose();
    Matrix logits = Matrix::Zero(in.features.rows(), c.classes());
    naive::add_logits(logits, c.weights, c.bias, in.base_inputs);
    naive::add_logits(logits, dd.weights, dd.bias, naive::standardized_cosines(in.features, vrow, eps));
    double sim = 0.0;
    for (std::size_t j : in.top) sim += naive::cos(vrow, 0, in.pool, static_cast<Index>(j));
    sim = 1.0 - sim / static_cast<double>(in.top.size());
    return naive::ce(logits, in.labels) + in.alpha * sim + naive::enet(c.weights, in.reg) +
           naive::enet(dd.weights, in.reg);
  };
  return finite_difference_check(loss, p.values, p.analytic, o.step);
}

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(3);
  s << std::scientific << x;
  return s.str();
}

}  // namespace

GradientSuiteReport run_gradient_suite(const GradientSuiteOptions& options) {
  std::mt19937_64 rng(options.seed);
  GradientSuiteReport r;
  for (std::size_t i = 0; i < options.instances; ++i) {
    const Instance in = random_instance(rng);
    r.max_error_pcbm = std::max(r.max_error_pcbm, check_pcbm(in, options));
    r.max_error_residual = std::max(r.max_error_residual, check_residual(in, options));
    r.max_error_discovery = std::max(r.max_error_discovery, check_discovery(in, options));
  }
  r.passed = r.max_error_pcbm <= options.tolerance && r.max_error_residual <= options.tolerance &&
             r.max_error_discovery <= options.tolerance;
  return r;
}

const std::vector<CueFixture>& cue_fixtures() {
  static const std::vector<CueFixture> rows = {
      {0.8044, 175, 9.0, 5.1073},
      {0.8489, 100, 27.0, 3.1441},
      {0.8677, 143, 12.0, 5.0565},
      {0.8803, 247, 7.0, 5.0914},
  };
  return rows;
}

CheckResult check_gradients(const GradientSuiteOptions& options) {
  const GradientSuiteReport r = run_gradient_suite(options);
  return {"gradients", r.passed,
          "max error pcbm=" + fmt(r.max_error_pcbm) + " residual=" + fmt(r.max_error_residual) +
              " discovery=" + fmt(r.max_error_discovery)};
}

CheckResult check_cue_fixtures() {
  double worst = 0.0;
  for (const auto& f : cue_fixtures()) {
    worst = std::max(worst, std::abs(cue(f.accuracy, f.n_concepts, f.avg_letters) - f.expected));
  }
  return {"cue", worst <= 5e-5, "max deviation " + fmt(worst)};
}

CheckResult check_reduction(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_samples = 160;
  spec.seed = seed;
  const SyntheticTask task = generate_synthetic_task(spec);
  const Dataset data = task.dataset();
  const ConceptBank bank = task.base_bank();
  TrainConfig cfg;
  cfg.residual_count = 0;
  cfg.epochs = 20;
  cfg.batch_size = 32;
  cfg.learning_rate = 1e-2;
  cfg.seed = seed;

  const PcbmResult pcbm = train_pcbm(data, nullptr, bank, cfg);
  const ResidualResult res = train_residual(init_residual_model(bank, data.n_classes, cfg), data, nullptr);
  const Prediction a = predict_pcbm(pcbm.psi_c, pcbm.standardizer, bank, data.features);
  const Prediction b = predict(res.model, data.features, true);
  const bool same_head = pcbm.psi_c.hash() == res.model.psi_c.hash();
  const bool same_logits = hash_bytes(a.logits) == hash_bytes(b.logits) && a.labels == b.labels;
  return {"reduction", same_head && same_logits,
          std::string("psi_c ") + (same_head ? "identical" : "differs") + ", predictions " +
              (same_logits ? "identical" : "differ")};
}

std::vector<CheckResult> run_selfcheck(const GradientSuiteOptions& options) {
  return {check_gradients(options), check_cue_fixtures(), check_reduction()};
}

}  // namespace rescbm
