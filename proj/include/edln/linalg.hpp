#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace edln {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

/// Raised whenever operand shapes do not chain.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a matrix that must be invertible is (numerically) singular.
class SingularMatrixError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Smallest singular value must exceed this fraction of the largest.
inline constexpr double kInvertibilityTolerance = 1e-8;
/// Relative singular-value cutoff used by every pseudoinverse.
inline constexpr double kPinvCutoff = 1e-10;

std::string shape_string(const Matrix& m);

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng,
                       double stddev = 1.0);

/// Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix).
Matrix random_orthogonal(Eigen::Index n, Rng& rng);

/// n log-spaced values with geometric mean 1 and max/min = cond.
Vector log_spaced_spectrum(Eigen::Index n, double cond);

/// Q diag(spectrum) Q^T with Q random orthogonal.
Matrix random_spd(Eigen::Index n, double cond, double scale, Rng& rng);

/// U diag(s) V^T with random orthogonal U, V and log-spaced s.
Matrix random_invertible(Eigen::Index n, double cond, Rng& rng);

/// Symmetric random matrix with eigenvalues of mixed sign and
/// |eigenvalue| ratio = cond.
Matrix random_symmetric_invertible(Eigen::Index n, double cond, Rng& rng);

bool is_invertible(const Matrix& m,
                   double tolerance = kInvertibilityTolerance);
double condition_number(const Matrix& m);

/// Principal square root of a symmetric positive semidefinite matrix.
Matrix sym_sqrt(const Matrix& m);
/// Principal real power of a symmetric positive semidefinite matrix.
Matrix psd_power(const Matrix& m, double exponent);

Matrix pinv(const Matrix& m, double cutoff = kPinvCutoff);

/// Inverse of a square matrix; throws SingularMatrixError when singular.
Matrix checked_inverse(const Matrix& m, const std::string& what);

/// Orthogonal polar factor U V^T of the SVD U S V^T.
Matrix polar_orthogonal(const Matrix& m);

/// Columns orthonormal-completing the column span of q (n x k, k <= n).
Matrix orthonormal_completion(const Matrix& q);

double relative_error(const Matrix& actual, const Matrix& expected);

/// Symmetric normalized residual ||a - b|| / (||a|| + ||b|| + 1e-30).
double normalized_residual(const Matrix& a, const Matrix& b);

Matrix identity(Eigen::Index n);

}  // namespace edln
