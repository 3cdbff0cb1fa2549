#pragma once

#include "edln/linalg.hpp"

#include <vector>

namespace edln {

/// How a hidden representation is read out of the network.
enum class HiddenConvention {
  /// h_i = W_i ... W_1 M^I x   (default; the form the alignment results use)
  kExcludeOutputEmbedding,
  /// h_i = M^O W_i ... W_1 M^I x  (only defined when rows(W_i) = cols(M^O))
  kIncludeOutputEmbedding,
};

/// Embedded deep linear network  f(x) = M^O W_D ... W_1 M^I x.
///
/// M^I and M^O are frozen and must be square and invertible. Values are
/// immutable: every transformation returns a new network.
class EdlnNetwork {
 public:
  EdlnNetwork(Matrix m_in, Matrix m_out, std::vector<Matrix> weights);

  int depth() const { return static_cast<int>(weights_.size()); }
  /// d_0 .. d_D
  std::vector<Eigen::Index> layer_dims() const;
  /// Smallest row dimension over all trainable layers.
  Eigen::Index width() const;
  Eigen::Index input_dim() const { return m_in_.cols(); }
  Eigen::Index output_dim() const { return m_out_.rows(); }
  Eigen::Index parameter_count() const;

  const Matrix& m_in() const { return m_in_; }
  const Matrix& m_out() const { return m_out_; }
  const std::vector<Matrix>& weights() const { return weights_; }
  /// Layer i in 1..D.
  const Matrix& weight(int i) const;

  EdlnNetwork with_weights(std::vector<Matrix> weights) const;

  /// W_b ... W_a for 1 <= a; identity of side d_{a-1} when b < a.
  Matrix chain(int b, int a) const;
  /// W_{i-1} ... W_1 M^I  (maps the input into the input of layer i).
  Matrix prefix(int i) const;
  /// M^O W_D ... W_{i+1}  (maps the output of layer i to the prediction).
  Matrix suffix(int i) const;
  /// M^O W_D ... W_1 M^I.
  Matrix end_to_end() const;
  /// W_D ... W_1.
  Matrix weight_product() const;

  Vector flatten() const;
  EdlnNetwork unflatten(const Vector& theta) const;

 private:
  void check_shapes() const;

  Matrix m_in_;
  Matrix m_out_;
  std::vector<Matrix> weights_;
};

/// Builds a network with random invertible embeddings of the given
/// conditioning and Gaussian layers of scale init_scale / sqrt(fan_in).
/// hidden_dims has D-1 entries; d_0 = input_dim, d_D = output_dim.
EdlnNetwork random_network(Eigen::Index input_dim,
                           const std::vector<Eigen::Index>& hidden_dims,
                           Eigen::Index output_dim, double embedding_cond,
                           std::uint64_t seed, double init_scale = 1.0);

/// Same embeddings, fresh Gaussian layers.
EdlnNetwork reinitialize(const EdlnNetwork& net, std::uint64_t seed,
                         double init_scale = 1.0);

Vector forward(const EdlnNetwork& net, const Vector& x_view);

Vector hidden(const EdlnNetwork& net, const Vector& x_view, int layer,
              HiddenConvention convention =
                  HiddenConvention::kExcludeOutputEmbedding);

/// Linear map x_view -> h_layer.
Matrix hidden_map(const EdlnNetwork& net, int layer,
                  HiddenConvention convention =
                      HiddenConvention::kExcludeOutputEmbedding);

double per_sample_loss(const EdlnNetwork& net, const Vector& x_view,
                       const Vector& y);

/// d ell / d W_i for i = 1..D, each of the shape of W_i.
std::vector<Matrix> gradients(const EdlnNetwork& net, const Vector& x_view,
                              const Vector& y);

/// exp(scale * T) via scaling and squaring of a truncated Taylor series.
Matrix matrix_exponential(const Matrix& generator, double scale);

struct SymmetryGenerator {
  int layer_index = 1;  // interface between W_i and W_{i+1}
  Matrix generator;     // side rows(W_i)
  double scale = 0.0;
};

/// W_i <- exp(lT) W_i, W_{i+1} <- W_{i+1} exp(-lT).
EdlnNetwork apply_symmetry(const EdlnNetwork& net, const SymmetryGenerator& g);

/// Flattened parameter vector helpers shared by optimizers.
Vector flatten_weights(const std::vector<Matrix>& weights);
std::vector<Matrix> unflatten_weights(const std::vector<Matrix>& like,
                                      const Vector& theta);

}  // namespace edln
