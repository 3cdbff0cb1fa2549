#pragma once

#include "edln/data_model.hpp"
#include "edln/network.hpp"

#include <functional>

namespace edln {

enum class ExpectationMode { kAnalytic, kMonteCarlo };

/// Source of expectations E[.] over (x^t, y^t).
///
/// Both modes store the data as two matrices whose columns are "samples":
/// in Monte-Carlo mode they are the batch itself with weight 1/n; in
/// analytic mode they are the latent factors of the Gaussian view model
/// (x = input_factor eta, y = label_factor eta, eta ~ N(0, I)) with weight 1,
/// for which every quadratic expectation is a Frobenius inner product and
/// every quartic one follows from Isserlis' theorem.
class Expectation {
 public:
  static Expectation analytic(const ViewModel& view);
  static Expectation monte_carlo(Matrix inputs, Matrix targets);
  static Expectation monte_carlo(const PairedBatch& batch, const std::string& tag);

  ExpectationMode mode() const { return mode_; }
  const Matrix& inputs() const { return inputs_; }
  const Matrix& targets() const { return targets_; }
  double weight() const { return weight_; }
  /// E[x x^T]
  Matrix input_moment() const;
  /// E[(y - F x)(y - F x)^T] at the best linear predictor; the label-noise
  /// covariance when the view carries no feature noise.
  const Matrix& noise_cov() const { return noise_cov_; }

 private:
  ExpectationMode mode_ = ExpectationMode::kAnalytic;
  Matrix inputs_;
  Matrix targets_;
  double weight_ = 1.0;
  Matrix noise_cov_;
};

/// L = E[ell]. Analytic mode: ||(F - V) sqrt(Sigma_x)||_F^2 + Tr[Sigma_eps]
/// in view coordinates.
double empirical_loss(const EdlnNetwork& net, const Expectation& ex);

/// S = E[sum_i ||grad_{W_i} ell||_F^2].
///
/// Per sample, grad_{W_i} ell = 2 (A_i^T r)(B_i x)^T with A_i = M^O W_D..W_{i+1},
/// B_i = W_{i-1}..W_1 M^I and r = F x - y, so its squared norm is the product
/// of two quadratic forms in the latent Gaussian eta. With a = A_i^T R and
/// b = B_i X (R, X the residual and input factors),
///   E[(eta^T a^T a eta)(eta^T b^T b eta)] = |a|^2 |b|^2 + 2 |a b^T|^2.
double entropy_S(const EdlnNetwork& net, const Expectation& ex);

/// Per-layer contributions to S (sum equals entropy_S).
std::vector<double> entropy_per_layer(const EdlnNetwork& net, const Expectation& ex);

double modified_loss(const EdlnNetwork& net, const Expectation& ex, double eta_s);

std::vector<Matrix> loss_gradient(const EdlnNetwork& net, const Expectation& ex);
/// Gradient of weight * |F X - Y|_F^2.
std::vector<Matrix> loss_gradient(const EdlnNetwork& net, const Matrix& inputs,
                                  const Matrix& targets, double weight);

enum class EntropyGradient { kAnalytic, kFiniteDifference };

std::vector<Matrix> entropy_gradient(const EdlnNetwork& net, const Expectation& ex,
                                     EntropyGradient method = EntropyGradient::kAnalytic);

/// Second moments of the layer-i gradient:
/// rows = E[g g^T] (d_i x d_i), cols = E[g^T g] (d_{i-1} x d_{i-1}).
struct GradientMoments {
  Matrix rows;
  Matrix cols;
};
GradientMoments gradient_moments(const EdlnNetwork& net, const Expectation& ex, int layer);

/// Central differences of a scalar function, one coordinate at a time.
Vector finite_difference_gradient(const std::function<double(const Vector&)>& f,
                                  const Vector& theta, double step);

}  // namespace edln
