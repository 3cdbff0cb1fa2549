#include "doctest.h"

#include "edln/network.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <complex>

using namespace edln;

namespace {

// Unoptimized left-to-right chain product with explicit loops.
Matrix naive_product(const std::vector<Matrix>& factors) {
  Matrix acc = factors.front();
  for (std::size_t f = 1; f < factors.size(); ++f) {
    const Matrix& rhs = factors[f];
    Matrix out = Matrix::Zero(acc.rows(), rhs.cols());
    for (Eigen::Index i = 0; i < acc.rows(); ++i)
      for (Eigen::Index j = 0; j < rhs.cols(); ++j)
        for (Eigen::Index k = 0; k < acc.cols(); ++k) out(i, j) += acc(i, k) * rhs(k, j);
    acc = out;
  }
  return acc;
}

EdlnNetwork identity_net(int depth, Eigen::Index dim) {
  return EdlnNetwork(identity(dim), identity(dim), std::vector<Matrix>(depth, identity(dim)));
}

EdlnNetwork sample_net(std::uint64_t seed, int depth = 3) {
  std::vector<Eigen::Index> hidden;
  for (int i = 1; i < depth; ++i) hidden.push_back(5 + i);
  return random_network(4, hidden, 3, 3.0, seed);
}

double rel(const Matrix& a, const Matrix& b) { return relative_error(a, b); }

}  // namespace

TEST_CASE("forward on hand-built networks") {
  Vector x(2);
  x << 1, 2;
  CHECK(forward(identity_net(2, 2), x).isApprox(x));

  Matrix w = Matrix::Zero(2, 2);
  w.diagonal() << 2, 3;
  EdlnNetwork scaled(identity(2), identity(2), {w});
  Vector ones = Vector::Ones(2);
  Vector expected(2);
  expected << 2, 3;
  CHECK((forward(scaled, ones) - expected).norm() < 1e-15);
}

TEST_CASE("forward matches an independent matrix-chain product") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const EdlnNetwork net = sample_net(seed);
    Rng rng(seed + 100);
    const Vector x = gaussian_matrix(net.input_dim(), 1, rng);
    std::vector<Matrix> factors{net.m_out()};
    for (int i = net.depth(); i >= 1; --i) factors.push_back(net.weight(i));
    factors.push_back(net.m_in());
    factors.push_back(x);
    CHECK(rel(forward(net, x), naive_product(factors)) < 1e-12);
  }
}

TEST_CASE("forward is linear in the input") {
  const EdlnNetwork net = sample_net(3);
  Rng rng(9);
  const Vector x1 = gaussian_matrix(4, 1, rng);
  const Vector x2 = gaussian_matrix(4, 1, rng);
  const double a = 0.7;
  const double b = -2.3;
  const Vector lhs = forward(net, a * x1 + b * x2);
  const Vector rhs = a * forward(net, x1) + b * forward(net, x2);
  CHECK(rel(lhs, rhs) < 1e-12);
}

TEST_CASE("forward rejects a mismatched input") {
  const EdlnNetwork net = sample_net(1);
  CHECK_THROWS_AS(forward(net, Vector::Ones(5)), ShapeError);
}

TEST_CASE("construction validates shapes and embeddings") {
  CHECK_THROWS_AS(EdlnNetwork(identity(2), identity(2), {Matrix::Ones(3, 3)}), ShapeError);
  CHECK_THROWS_AS(EdlnNetwork(Matrix::Zero(2, 2), identity(2), {identity(2)}),
                  SingularMatrixError);
  Matrix near_singular = identity(2);
  near_singular(1, 1) = 1e-9;
  CHECK_THROWS_AS(EdlnNetwork(identity(2), near_singular, {identity(2)}), SingularMatrixError);
  CHECK_THROWS_AS(EdlnNetwork(identity(2), identity(2), {identity(2), Matrix::Ones(2, 3)}),
                  ShapeError);
}

TEST_CASE("hidden representations") {
  Vector x(2);
  x << 1, 2;
  const EdlnNetwork id = identity_net(2, 2);
  CHECK(hidden(id, x, 1).isApprox(x));

  const EdlnNetwork net = sample_net(4);
  Rng rng(1);
  const Vector xv = gaussian_matrix(4, 1, rng);
  CHECK((hidden(net, xv, 0) - net.m_in() * xv).norm() == 0.0);
  CHECK(rel(forward(net, xv), net.m_out() * hidden(net, xv, net.depth())) < 1e-12);
  CHECK_THROWS_AS(hidden(net, xv, net.depth() + 1), std::out_of_range);
  CHECK_THROWS_AS(hidden(net, xv, -1), std::out_of_range);

  // With M^O included only square-compatible layers are defined.
  CHECK(rel(hidden(net, xv, net.depth(), HiddenConvention::kIncludeOutputEmbedding),
            forward(net, xv)) < 1e-12);
  CHECK_THROWS_AS(hidden(net, xv, 1, HiddenConvention::kIncludeOutputEmbedding), ShapeError);
}

TEST_CASE("per-sample loss") {
  const EdlnNetwork id = identity_net(1, 2);
  Vector x(2), y(2);
  x << 1, 0;
  y << 0, 1;
  CHECK(per_sample_loss(id, x, x) == 0.0);
  CHECK(per_sample_loss(id, x, y) == doctest::Approx(2.0));
  CHECK_THROWS_AS(per_sample_loss(id, x, Vector::Ones(3)), ShapeError);
}

TEST_CASE("gradients: zero residual and scalar calculus") {
  const EdlnNetwork id = identity_net(3, 2);
  Vector x(2);
  x << 0.3, -1.2;
  for (const auto& g : gradients(id, x, x)) CHECK(g.norm() == 0.0);

  const double w = 1.7, xs = 0.4, ys = 2.0;
  EdlnNetwork scalar(identity(1), identity(1), {Matrix::Constant(1, 1, w)});
  const auto g = gradients(scalar, Vector::Constant(1, xs), Vector::Constant(1, ys));
  CHECK(g[0](0, 0) == doctest::Approx(2 * xs * (w * xs - ys)));
}

TEST_CASE("analytic gradients match central finite differences on 50 seeds") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const EdlnNetwork net = sample_net(seed, 2 + int(seed % 3));
    Rng rng(seed + 1000);
    const Vector x = gaussian_matrix(net.input_dim(), 1, rng);
    const Vector y = gaussian_matrix(net.output_dim(), 1, rng);
    const Vector analytic = flatten_weights(gradients(net, x, y));
    Vector theta = net.flatten();
    Vector fd(theta.size());
    const double h = 1e-5;
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
      Vector up = theta, down = theta;
      up(k) += h;
      down(k) -= h;
      fd(k) = (per_sample_loss(net.unflatten(up), x, y) -
               per_sample_loss(net.unflatten(down), x, y)) / (2 * h);
    }
    worst = std::max(worst, (analytic - fd).norm() / analytic.norm());
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("matrix exponential") {
  CHECK(matrix_exponential(Matrix::Random(4, 4), 0.0).isApprox(identity(4)));

  Matrix d = Matrix::Zero(2, 2);
  d.diagonal() << 0.5, -3.0;
  const Matrix e = matrix_exponential(d, 1.3);
  CHECK(e(0, 0) == doctest::Approx(std::exp(0.65)).epsilon(1e-14));
  CHECK(e(1, 1) == doctest::Approx(std::exp(-3.9)).epsilon(1e-14));
  CHECK(std::abs(e(0, 1)) < 1e-300);

  CHECK_THROWS_AS(matrix_exponential(Matrix::Ones(2, 3), 1.0), ShapeError);

  // Eigendecomposition oracle: exp(lT) = P exp(l Lambda) P^{-1}.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Matrix t = gaussian_matrix(6, 6, rng, 1.0 / std::sqrt(6.0));
    const double lambda = 0.05 + 0.1 * double(seed);
    Eigen::EigenSolver<Matrix> es(t);
    const Eigen::MatrixXcd p = es.eigenvectors();
    Eigen::VectorXcd ev = es.eigenvalues();
    for (Eigen::Index k = 0; k < ev.size(); ++k) ev(k) = std::exp(lambda * ev(k));
    const Matrix oracle = (p * ev.asDiagonal() * p.inverse()).real();
    const Matrix ours = matrix_exponential(t, lambda);
    CHECK(relative_error(ours, oracle) < 1e-9);
    CHECK((ours * matrix_exponential(t, -lambda) - identity(6)).norm() < 1e-10);
  }
}

TEST_CASE("apply_symmetry: trivial cases") {
  const EdlnNetwork net = sample_net(5);
  SymmetryGenerator g{1, Matrix::Random(6, 6), 0.0};
  const EdlnNetwork same = apply_symmetry(net, g);
  for (int i = 1; i <= net.depth(); ++i) CHECK(rel(same.weight(i), net.weight(i)) < 1e-15);

  SymmetryGenerator dbl{2, identity(7), std::log(2.0)};
  const EdlnNetwork moved = apply_symmetry(net, dbl);
  CHECK(rel(moved.weight(2), 2.0 * net.weight(2)) < 1e-14);
  CHECK(rel(moved.weight(3), 0.5 * net.weight(3)) < 1e-14);
  CHECK(rel(moved.weight(1), net.weight(1)) == 0.0);

  CHECK_THROWS_AS(apply_symmetry(net, SymmetryGenerator{1, identity(5), 1.0}), ShapeError);
  CHECK_THROWS_AS(apply_symmetry(net, SymmetryGenerator{3, identity(7), 1.0}),
                  std::out_of_range);
}

TEST_CASE("symmetry leaves the loss invariant and transforms gradients covariantly") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const EdlnNetwork net = sample_net(seed, 3);
    Rng rng(seed + 7);
    const int i = 1 + int(seed % 2);
    const Eigen::Index side = net.weight(i).rows();
    const Matrix t = gaussian_matrix(side, side, rng, 1.0 / std::sqrt(double(side)));
    const double lambda = 0.3;
    const EdlnNetwork moved = apply_symmetry(net, {i, t, lambda});
    const Matrix e_plus = matrix_exponential(t, lambda);
    const Matrix e_minus = matrix_exponential(t, -lambda);
    for (int s = 0; s < 100; ++s) {
      const Vector x = gaussian_matrix(net.input_dim(), 1, rng);
      const Vector y = gaussian_matrix(net.output_dim(), 1, rng);
      const double before = per_sample_loss(net, x, y);
      CHECK(std::abs(per_sample_loss(moved, x, y) - before) <= 1e-10 * before);
      if (s < 5) {
        const auto g0 = gradients(net, x, y);
        const auto g1 = gradients(moved, x, y);
        CHECK(rel(e_plus.transpose() * g1[std::size_t(i - 1)], g0[std::size_t(i - 1)]) < 1e-8);
        CHECK(rel(g1[std::size_t(i)] * e_minus.transpose(), g0[std::size_t(i)]) < 1e-8);
      }
    }
  }
}

TEST_CASE("gradient covariance without transposes holds for symmetric generators") {
  const EdlnNetwork net = sample_net(11, 2);
  Rng rng(3);
  Matrix t = gaussian_matrix(6, 6, rng);
  t = (0.5 * (t + t.transpose())).eval();
  const EdlnNetwork moved = apply_symmetry(net, {1, t, 0.2});
  const Vector x = gaussian_matrix(4, 1, rng);
  const Vector y = gaussian_matrix(3, 1, rng);
  const auto g0 = gradients(net, x, y);
  const auto g1 = gradients(moved, x, y);
  CHECK(rel(matrix_exponential(t, 0.2) * g1[0], g0[0]) < 1e-8);
  CHECK(rel(g1[1] * matrix_exponential(t, -0.2), g0[1]) < 1e-8);
}

TEST_CASE("flatten and unflatten are inverse") {
  const EdlnNetwork net = sample_net(2, 4);
  const Vector theta = net.flatten();
  CHECK(theta.size() == net.parameter_count());
  const EdlnNetwork back = net.unflatten(theta);
  for (int i = 1; i <= net.depth(); ++i) CHECK(back.weight(i) == net.weight(i));
  CHECK_THROWS_AS(net.unflatten(Vector::Zero(theta.size() + 1)), ShapeError);
}
