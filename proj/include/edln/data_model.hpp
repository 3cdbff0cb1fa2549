#pragma once

#include "edln/linalg.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace edln {

class UnknownTagError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Ground truth  y = V* x + eps  together with the per-network views
/// x^t = Z_t x (+ z_t) and label transforms Phi_t.
struct DataModel {
  Eigen::Index input_dim = 0;
  Eigen::Index output_dim = 0;
  Matrix v_star;     // output_dim x input_dim
  Matrix sigma_x;    // E[x x^T]
  Matrix sigma_eps;  // E[eps eps^T]
  std::map<std::string, Matrix> view_transforms;   // Z_t
  std::map<std::string, Matrix> label_transforms;  // Phi_t, symmetric
  /// Covariance of the view-specific feature noise z_t, when configured.
  std::map<std::string, Matrix> heterogeneity;
  std::uint64_t seed = 0;

  std::vector<std::string> tags() const;
  const Matrix& view(const std::string& tag) const;
  /// Identity when no label transform is configured for the tag.
  Matrix label(const std::string& tag) const;
  std::optional<Matrix> feature_noise(const std::string& tag) const;

  /// Throws std::invalid_argument when an invariant does not hold.
  void validate() const;
};

struct DataModelOptions {
  Eigen::Index input_dim = 8;
  Eigen::Index output_dim = 6;
  Eigen::Index rank = 4;
  double cond_x = 4.0;
  double cond_z = 3.0;
  double cond_eps = 10.0;
  /// Geometric-mean eigenvalue of Sigma_eps.
  double noise_var = 0.25;
  std::vector<std::string> tags{"A", "B"};
  std::uint64_t seed = 0;
};

/// V* of exact rank `rank` from the truncated SVD of a Gaussian matrix,
/// Sigma_x / Sigma_eps with log-spaced spectra in random bases, and one
/// random invertible Z per tag with condition number cond_z.
DataModel make_data_model(const DataModelOptions& options);
DataModel make_data_model(Eigen::Index input_dim, Eigen::Index output_dim,
                          Eigen::Index rank_v, double cond_x, double cond_z,
                          std::uint64_t seed);

/// Square model where V* and every Z_t are symmetric positive
/// (semi)definite and share one eigenbasis, so V* Z^{-1} has a principal
/// real root. Labels are untransformed.
DataModel make_commuting_data_model(Eigen::Index dim, Eigen::Index rank,
                                    double cond_z, std::uint64_t seed,
                                    std::vector<std::string> tags = {"A", "B"});

/// Adds feature noise of covariance variance * I to every listed view.
void add_heterogeneity(DataModel& dm, double variance,
                       const std::vector<std::string>& tags);

/// Sets random symmetric invertible label transforms with the given
/// condition number on every listed tag.
void add_label_transforms(DataModel& dm, double cond, std::uint64_t seed,
                          const std::vector<std::string>& tags);

struct PairedBatch {
  Matrix x_base;                        // input_dim x n
  std::map<std::string, Matrix> views;  // per tag, input_dim x n
  std::map<std::string, Matrix> labels; // per tag, output_dim x n
  Matrix eps;                           // output_dim x n
  Eigen::Index size() const { return x_base.cols(); }
};

PairedBatch sample_batch(const DataModel& dm, Eigen::Index n,
                         const std::vector<std::string>& tags, std::uint64_t seed);

struct PopulationMoments {
  Matrix input_moment;   // E[x^t x^t^T]
  Matrix target;         // Phi V* Z^{-1}
  Matrix noise_cov;      // Phi Sigma_eps Phi
};

PopulationMoments population_moments(const DataModel& dm, const std::string& tag);

/// The view seen by one network in latent form: with eta ~ N(0, I_m),
///   x^t = input_factor * eta,   y^t = label_factor * eta.
/// Latent blocks are ordered (x, eps, z). Every analytic expectation is
/// computed from these two factors.
struct ViewModel {
  std::string tag;
  Matrix input_factor;   // input_dim x m
  Matrix label_factor;   // output_dim x m
  Matrix input_moment;   // input_factor input_factor^T
  Matrix noise_cov;      // Phi Sigma_eps Phi
  Matrix target;         // Phi V* Z^{-1}
  /// Best linear predictor  E[y x^T] E[x x^T]^{-1}  (= target when the view
  /// carries no feature noise).
  Matrix optimal_map;
  /// Minimum of the population loss (Tr[noise_cov] without feature noise).
  double min_loss = 0.0;
  bool heterogeneous = false;
};

ViewModel view_model(const DataModel& dm, const std::string& tag);

}  // namespace edln
