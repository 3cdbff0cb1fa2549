#include "edln/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace edln {

std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng,
                       double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  // Fill in row-major order so the draw sequence does not depend on storage.
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  return m;
}

Matrix random_orthogonal(Eigen::Index n, Rng& rng) {
  Matrix g = gaussian_matrix(n, n, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * identity(n);
  Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < n; ++i)
    if (r(i, i) < 0) q.col(i) *= -1.0;
  return q;
}

Vector log_spaced_spectrum(Eigen::Index n, double cond) {
  if (cond < 1.0) throw std::invalid_argument("condition number must be >= 1");
  Vector s(n);
  const double log_cond = std::log(cond);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double t = n == 1 ? 0.5 : static_cast<double>(k) / double(n - 1);
    s(k) = std::exp(log_cond * (0.5 - t));
  }
  return s;
}

Matrix random_spd(Eigen::Index n, double cond, double scale, Rng& rng) {
  Matrix q = random_orthogonal(n, rng);
  Vector s = scale * log_spaced_spectrum(n, cond);
  Matrix m = q * s.asDiagonal() * q.transpose();
  return 0.5 * (m + m.transpose());
}

Matrix random_invertible(Eigen::Index n, double cond, Rng& rng) {
  Matrix u = random_orthogonal(n, rng);
  Matrix v = random_orthogonal(n, rng);
  return u * log_spaced_spectrum(n, cond).asDiagonal() * v.transpose();
}

Matrix random_symmetric_invertible(Eigen::Index n, double cond, Rng& rng) {
  Matrix q = random_orthogonal(n, rng);
  Vector s = log_spaced_spectrum(n, cond);
  std::bernoulli_distribution coin(0.5);
  for (Eigen::Index k = 0; k < n; ++k)
    if (coin(rng)) s(k) = -s(k);
  Matrix m = q * s.asDiagonal() * q.transpose();
  return 0.5 * (m + m.transpose());
}

bool is_invertible(const Matrix& m, double tolerance) {
  if (m.rows() != m.cols() || m.size() == 0) return false;
  Eigen::JacobiSVD<Matrix> svd(m);
  const Vector& s = svd.singularValues();
  return s(0) > 0.0 && s(s.size() - 1) > tolerance * s(0);
}

double condition_number(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  const Vector& s = svd.singularValues();
  return s(0) / s(s.size() - 1);
}

Matrix psd_power(const Matrix& m, double exponent) {
  if (m.rows() != m.cols()) throw ShapeError("psd_power needs a square matrix");
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  Vector ev = es.eigenvalues();
  const double top = std::max(std::abs(ev.maxCoeff()), 1e-300);
  for (Eigen::Index k = 0; k < ev.size(); ++k) {
    if (ev(k) < -1e-10 * top)
      throw std::invalid_argument("psd_power: matrix is not positive semidefinite");
    ev(k) = ev(k) <= 1e-14 * top ? 0.0 : std::pow(ev(k), exponent);
  }
  Matrix r = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (r + r.transpose());
}

Matrix sym_sqrt(const Matrix& m) { return psd_power(m, 0.5); }

Matrix pinv(const Matrix& m, double cutoff) {
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Vector s = svd.singularValues();
  const double top = s.size() ? s(0) : 0.0;
  for (Eigen::Index k = 0; k < s.size(); ++k)
    s(k) = s(k) > cutoff * top ? 1.0 / s(k) : 0.0;
  return svd.matrixV() * s.asDiagonal() * svd.matrixU().transpose();
}

Matrix checked_inverse(const Matrix& m, const std::string& what) {
  if (m.rows() != m.cols())
    throw ShapeError(what + " must be square, got " + shape_string(m));
  if (!is_invertible(m)) throw SingularMatrixError(what + " is singular");
  return m.fullPivLu().inverse();
}

Matrix polar_orthogonal(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

Matrix orthonormal_completion(const Matrix& q) {
  const Eigen::Index n = q.rows();
  const Eigen::Index k = q.cols();
  if (k >= n) return Matrix(n, 0);
  Matrix proj = identity(n) - q * q.transpose();
  Eigen::JacobiSVD<Matrix> svd(proj, Eigen::ComputeFullU);
  return svd.matrixU().leftCols(n - k);
}

double relative_error(const Matrix& actual, const Matrix& expected) {
  const double denom = expected.norm();
  const double diff = (actual - expected).norm();
  return denom > 0 ? diff / denom : diff;
}

double normalized_residual(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / (a.norm() + b.norm() + 1e-30);
}

Matrix identity(Eigen::Index n) { return Matrix::Identity(n, n); }

}  // namespace edln
