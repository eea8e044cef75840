#include "rescbm/error.hpp"
#include "rescbm/optimizer.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace rescbm;

TEST_CASE("forward") {
  LinearClassifier id{Matrix::Identity(2, 2), Vector::Zero(2)};
  Matrix x(1, 2);
  x << 1, 2;
  CHECK(forward(id, x) == x);

  LinearClassifier b = LinearClassifier::zeros(2, 3);
  b.bias << 3, -1;
  std::mt19937_64 rng(1);
  const Matrix logits = forward(b, testing::random_matrix(4, 3, rng));
  for (Index i = 0; i < 4; ++i) {
    CHECK(logits(i, 0) == 3.0);
    CHECK(logits(i, 1) == -1.0);
  }
  CHECK_THROWS_AS(forward(b, Matrix::Ones(1, 2)), ValidationError);
}

TEST_CASE("cross entropy") {
  const std::vector<std::size_t> one{2};
  CHECK(cross_entropy(Matrix::Zero(1, 4), one) == doctest::Approx(std::log(4.0)).epsilon(1e-14));

  Matrix big = Matrix::Zero(1, 3);
  big(0, 1) = 1000.0;
  const std::vector<std::size_t> lab{1};
  const double l = cross_entropy(big, lab);
  CHECK(std::isfinite(l));
  CHECK(l < 1e-12);
  big(0, 1) = -1000.0;
  CHECK(cross_entropy(big, lab) == doctest::Approx(1000.0 + std::log(2.0)));

  std::mt19937_64 rng(2);
  const Matrix z = 3.0 * testing::random_matrix(20, 5, rng);
  std::vector<std::size_t> labels(20);
  for (auto& y : labels) y = rng() % 5;
  long double total = 0.0L;
  for (Index i = 0; i < 20; ++i) {
    long double s = 0.0L;
    for (Index k = 0; k < 5; ++k) s += std::exp(static_cast<long double>(z(i, k)));
    total += std::log(s) - z(i, static_cast<Index>(labels[static_cast<std::size_t>(i)]));
  }
  CHECK(std::abs(cross_entropy(z, labels) - static_cast<double>(total / 20.0L)) < 1e-12);

  const Matrix p = softmax(z);
  for (Index i = 0; i < 20; ++i) CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-14));
  const std::vector<std::size_t> bad{7};
  CHECK_THROWS_AS(cross_entropy(Matrix::Zero(1, 3), bad), ValidationError);
}

TEST_CASE("elastic net") {
  LinearClassifier c{Matrix(1, 2), Vector::Ones(1)};
  c.weights << 1, -2;
  CHECK(elastic_net(c, {0.0, 0.5}) == 0.0);
  CHECK(elastic_net(c, {1.0, 1.0}) == 3.0);
  CHECK(elastic_net(c, {1.0, 0.0}) == 2.5);
  CHECK(elastic_net(c, {2.0, 0.5}) == doctest::Approx(2.0 * (0.5 * 3.0 + 0.5 * 2.5)));

  Matrix g = Matrix::Zero(1, 2);
  add_elastic_net_gradient(c.weights, {1.0, 0.5}, g);
  CHECK(g(0, 0) == doctest::Approx(0.5 + 0.5));
  CHECK(g(0, 1) == doctest::Approx(-0.5 - 1.0));
  Matrix zero = Matrix::Zero(1, 1);
  Matrix gz = Matrix::Zero(1, 1);
  add_elastic_net_gradient(zero, {1.0, 1.0}, gz);
  CHECK(gz(0, 0) == 0.0);
}

TEST_CASE("gradients vanish at a perfect prediction") {
  LinearClassifier c{Matrix(2, 1), Vector::Zero(2)};
  c.weights << 50, -50;
  Matrix x(2, 1);
  x << 1, -1;
  const std::vector<std::size_t> y{0, 1};
  const ClassifierGradients g = gradients(c, x, y, {0.0, 0.5});
  CHECK(g.weights.cwiseAbs().maxCoeff() < 1e-30);
  CHECK(g.bias.cwiseAbs().maxCoeff() < 1e-30);
  CHECK(g.inputs.cwiseAbs().maxCoeff() < 1e-30);
}

TEST_CASE("gradients on a hand-computable 1x1 case") {
  // One sample x = 2, weights [0.5, 0]: logits [1, 0], p0 = e / (e + 1).
  LinearClassifier c{Matrix(2, 1), Vector::Zero(2)};
  c.weights << 0.5, 0.0;
  Matrix x(1, 1);
  x << 2.0;
  const std::vector<std::size_t> y{0};
  const double e = std::exp(1.0);
  const double r = 1.0 / (e + 1.0);  // 1 - p0
  const ClassifierGradients g = gradients(c, x, y, {0.0, 0.5});
  CHECK(g.weights(0, 0) == doctest::Approx(-2.0 * r).epsilon(1e-14));
  CHECK(g.weights(1, 0) == doctest::Approx(2.0 * r).epsilon(1e-14));
  CHECK(g.bias[0] == doctest::Approx(-r).epsilon(1e-14));
  CHECK(g.bias[1] == doctest::Approx(r).epsilon(1e-14));
  CHECK(g.inputs(0, 0) == doctest::Approx(-0.5 * r).epsilon(1e-14));

  const LossFunction loss = [&](std::span<const double> w) {
    LinearClassifier cc = c;
    cc.weights << w[0], w[1];
    return cross_entropy(forward(cc, x), y);
  };
  CHECK(finite_difference_check(loss, {c.weights.data(), 2}, {g.weights.data(), 2}, 1e-6) < 1e-9);
}

TEST_CASE("gradients on random instances match finite differences") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    LinearClassifier c{testing::random_matrix(4, 6, rng), testing::random_matrix(4, 1, rng).col(0)};
    // Keep weights off the L1 kink.
    for (Index i = 0; i < c.weights.size(); ++i) {
      if (std::abs(c.weights.data()[i]) < 0.05) c.weights.data()[i] = 0.1;
    }
    const Matrix x = testing::random_matrix(9, 6, rng);
    std::vector<std::size_t> y(9);
    for (auto& v : y) v = rng() % 4;
    const RegularizerSpec reg{0.05, 0.3};
    const ClassifierGradients g = gradients(c, x, y, reg);

    const LossFunction by_weights = [&](std::span<const double> w) {
      LinearClassifier cc = c;
      cc.weights = Eigen::Map<const Matrix>(w.data(), 4, 6);
      return cross_entropy(forward(cc, x), y) + elastic_net(cc, reg);
    };
    CHECK(finite_difference_check(by_weights, {c.weights.data(), 24}, {g.weights.data(), 24}, 1e-6) < 1e-6);

    const LossFunction by_bias = [&](std::span<const double> b) {
      LinearClassifier cc = c;
      cc.bias = Eigen::Map<const Vector>(b.data(), 4);
      return cross_entropy(forward(cc, x), y) + elastic_net(cc, reg);
    };
    CHECK(finite_difference_check(by_bias, {c.bias.data(), 4}, {g.bias.data(), 4}, 1e-6) < 1e-6);

    const LossFunction by_inputs = [&](std::span<const double> in) {
      return cross_entropy(forward(c, Eigen::Map<const Matrix>(in.data(), 9, 6)), y);
    };
    CHECK(finite_difference_check(by_inputs, {x.data(), 54}, {g.inputs.data(), 54}, 1e-6) < 1e-6);
  }
}

TEST_CASE("cosine backward") {
  const std::vector<double> u{1, 2, 3};
  const std::vector<double> f{2, 4, 6};
  for (double v : cosine_backward(u, f, 1.0)) CHECK(std::abs(v) < 1e-15);

  const std::vector<double> a{1, 0, 0};
  const std::vector<double> b{0, 1, 0};
  const Vector g = cosine_backward(a, b, 1.0);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 0.0);

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix uf = testing::random_matrix(2, 7, rng);
    const double up = 0.5 + trial;
    const Vector analytic = cosine_backward(row_span(uf, 0), row_span(uf, 1), up);
    const LossFunction loss = [&](std::span<const double> x) { return up * cosine(x, row_span(uf, 1)); };
    CHECK(finite_difference_check(loss, row_span(uf, 0), {analytic.data(), 7}, 1e-6) < 1e-6);
  }
}

TEST_CASE("adam first step moves by the learning rate against the gradient sign") {
  AdamState s = AdamState::for_size(3, 0.01);
  std::vector<double> p{1.0, 1.0, 1.0};
  const std::vector<double> g{0.3, -20.0, 1e-3};
  adam_step(s, p, g);
  CHECK(p[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(1.0 + 0.01).epsilon(1e-6));
  CHECK(p[2] == doctest::Approx(1.0 - 0.01).epsilon(1e-4));
  CHECK(s.step_count == 1);
}

TEST_CASE("adam with zero gradients leaves parameters alone") {
  AdamState s = AdamState::for_size(2, 0.1);
  std::vector<double> p{0.25, -4.0};
  const std::vector<double> g{0.0, 0.0};
  for (int i = 0; i < 50; ++i) adam_step(s, p, g);
  CHECK(p[0] == 0.25);
  CHECK(p[1] == -4.0);
}

TEST_CASE("adam decreases a convex quadratic") {
  // f(x) = 0.5 * sum c_i (x_i - t_i)^2
  const Vector c = (Vector(3) << 1.0, 4.0, 0.5).finished();
  const Vector t = (Vector(3) << 1.5, -1.2, 1.0).finished();
  Vector x = Vector::Zero(3);
  AdamState s = AdamState::for_size(3, 0.02);
  const auto f = [&](const Vector& v) { return 0.5 * (c.array() * (v - t).array().square()).sum(); };
  const double start = f(x);
  double prev = start;
  for (int i = 0; i < 100; ++i) {
    const Vector g = (c.array() * (x - t).array()).matrix();
    adam_step(s, x, g);
    const double now = f(x);
    CHECK(now < prev);
    prev = now;
  }
  CHECK(prev < 1e-2 * start);
}

TEST_CASE("finite difference checker") {
  const LossFunction quad = [](std::span<const double> x) { return 0.5 * x[0] * x[0]; };
  const std::vector<double> x{3.0};
  const std::vector<double> g{3.0};
  CHECK(finite_difference_check(quad, x, g, 1e-5) <= 1e-8);
  const std::vector<double> wrong{3.5};
  CHECK(finite_difference_check(quad, x, wrong, 1e-5) == doctest::Approx(0.5 / 3.5).epsilon(1e-6));

  const LossFunction lin = [](std::span<const double> v) { return 2.0 * v[0] - 0.5 * v[1]; };
  const std::vector<double> p{0.25, 1.0};
  const std::vector<double> gl{2.0, -0.5};
  CHECK(finite_difference_check(lin, p, gl, 0.25) < 1e-15);
  CHECK_THROWS_AS(finite_difference_check(lin, p, g, 1e-5), ValidationError);
}

TEST_CASE("training a separable two-class problem drives the loss down") {
  std::mt19937_64 rng(5);
  Matrix x = testing::random_matrix(40, 2, rng);
  std::vector<std::size_t> y(40);
  for (Index i = 0; i < 40; ++i) {
    y[static_cast<std::size_t>(i)] = x(i, 0) > 0 ? 1 : 0;
    x(i, 0) += x(i, 0) > 0 ? 1.0 : -1.0;
  }
  LinearClassifier c = LinearClassifier::zeros(2, 2);
  HeadOptimizer opt(c, 0.05);
  const RegularizerSpec none{0.0, 0.5};
  for (int i = 0; i < 500; ++i) opt.step(c, gradients(c, x, y, none));
  CHECK(cross_entropy(forward(c, x), y) < 0.1);
  CHECK(argmax_rows(forward(c, x)) == y);
}

TEST_CASE("classifier checkpoint round trip") {
  const auto dir = testing::scratch_dir("clf");
  std::mt19937_64 rng(6);
  const LinearClassifier c{testing::random_matrix(3, 5, rng), testing::random_matrix(3, 1, rng).col(0)};
  save_classifier(c, dir / "c.clf");
  const LinearClassifier l = load_classifier(dir / "c.clf");
  CHECK(l.weights == c.weights);
  CHECK(l.bias == c.bias);
  CHECK(l.hash() == c.hash());
}

TEST_CASE("argmax ties go to the lower index") {
  Matrix m(2, 3);
  m << 1, 3, 3, 2, 2, 2;
  CHECK(argmax_rows(m) == std::vector<std::size_t>{1, 0});
}
