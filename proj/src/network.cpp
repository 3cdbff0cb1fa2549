#include "edln/network.hpp"

#include <cmath>
#include <string>

namespace edln {

namespace {

void require_dim(Eigen::Index actual, Eigen::Index expected,
                 const std::string& what) {
  if (actual != expected)
    throw ShapeError(what + ": expected dimension " + std::to_string(expected) +
                     ", got " + std::to_string(actual));
}

}  // namespace

EdlnNetwork::EdlnNetwork(Matrix m_in, Matrix m_out, std::vector<Matrix> weights)
    : m_in_(std::move(m_in)), m_out_(std::move(m_out)), weights_(std::move(weights)) {
  check_shapes();
  if (!is_invertible(m_in_)) throw SingularMatrixError("M^I is not invertible");
  if (!is_invertible(m_out_)) throw SingularMatrixError("M^O is not invertible");
}

void EdlnNetwork::check_shapes() const {
  if (weights_.empty()) throw ShapeError("network needs at least one layer");
  if (m_in_.rows() != m_in_.cols())
    throw ShapeError("M^I must be square, got " + shape_string(m_in_));
  if (m_out_.rows() != m_out_.cols())
    throw ShapeError("M^O must be square, got " + shape_string(m_out_));
  require_dim(weights_.front().cols(), m_in_.rows(), "layer 1 columns vs M^I rows");
  for (std::size_t i = 1; i < weights_.size(); ++i)
    require_dim(weights_[i].cols(), weights_[i - 1].rows(),
                "layer " + std::to_string(i + 1) + " columns vs layer " +
                    std::to_string(i) + " rows");
  require_dim(m_out_.cols(), weights_.back().rows(), "M^O columns vs layer D rows");
}

std::vector<Eigen::Index> EdlnNetwork::layer_dims() const {
  std::vector<Eigen::Index> dims;
  dims.push_back(weights_.front().cols());
  for (const auto& w : weights_) dims.push_back(w.rows());
  return dims;
}

Eigen::Index EdlnNetwork::width() const {
  Eigen::Index w = weights_.front().rows();
  for (const auto& m : weights_) w = std::min(w, m.rows());
  return w;
}

Eigen::Index EdlnNetwork::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& w : weights_) n += w.size();
  return n;
}

const Matrix& EdlnNetwork::weight(int i) const {
  if (i < 1 || i > depth())
    throw std::out_of_range("layer index " + std::to_string(i) + " outside 1.." +
                            std::to_string(depth()));
  return weights_[static_cast<std::size_t>(i - 1)];
}

EdlnNetwork EdlnNetwork::with_weights(std::vector<Matrix> weights) const {
  // Embeddings are already validated; only the layer shapes can change.
  EdlnNetwork out = *this;
  out.weights_ = std::move(weights);
  out.check_shapes();
  return out;
}

Matrix EdlnNetwork::chain(int b, int a) const {
  if (b < a) {
    const Eigen::Index side = a >= 1 && a <= depth() ? weight(a).cols()
                                                     : weights_.back().rows();
    return identity(side);
  }
  Matrix p = weight(a);
  for (int k = a + 1; k <= b; ++k) p = weight(k) * p;
  return p;
}

Matrix EdlnNetwork::prefix(int i) const {
  if (i == 1) return m_in_;
  return chain(i - 1, 1) * m_in_;
}

Matrix EdlnNetwork::suffix(int i) const {
  if (i == depth()) return m_out_;
  return m_out_ * chain(depth(), i + 1);
}

Matrix EdlnNetwork::end_to_end() const { return m_out_ * weight_product() * m_in_; }

Matrix EdlnNetwork::weight_product() const { return chain(depth(), 1); }

Vector EdlnNetwork::flatten() const { return flatten_weights(weights_); }

EdlnNetwork EdlnNetwork::unflatten(const Vector& theta) const {
  return with_weights(unflatten_weights(weights_, theta));
}

Vector flatten_weights(const std::vector<Matrix>& weights) {
  Eigen::Index n = 0;
  for (const auto& w : weights) n += w.size();
  Vector theta(n);
  Eigen::Index offset = 0;
  for (const auto& w : weights) {
    theta.segment(offset, w.size()) = Eigen::Map<const Vector>(w.data(), w.size());
    offset += w.size();
  }
  return theta;
}

std::vector<Matrix> unflatten_weights(const std::vector<Matrix>& like,
                                      const Vector& theta) {
  std::vector<Matrix> out;
  out.reserve(like.size());
  Eigen::Index offset = 0;
  for (const auto& w : like) {
    if (offset + w.size() > theta.size())
      throw ShapeError("parameter vector too short");
    out.emplace_back(Eigen::Map<const Matrix>(theta.data() + offset, w.rows(), w.cols()));
    offset += w.size();
  }
  if (offset != theta.size()) throw ShapeError("parameter vector too long");
  return out;
}

EdlnNetwork random_network(Eigen::Index input_dim,
                           const std::vector<Eigen::Index>& hidden_dims,
                           Eigen::Index output_dim, double embedding_cond,
                           std::uint64_t seed, double init_scale) {
  Rng rng(seed);
  Matrix m_in = random_invertible(input_dim, embedding_cond, rng);
  Matrix m_out = random_invertible(output_dim, embedding_cond, rng);
  std::vector<Eigen::Index> dims{input_dim};
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  dims.push_back(output_dim);
  std::vector<Matrix> weights;
  for (std::size_t i = 1; i < dims.size(); ++i)
    weights.push_back(gaussian_matrix(dims[i], dims[i - 1], rng,
                                      init_scale / std::sqrt(double(dims[i - 1]))));
  return EdlnNetwork(std::move(m_in), std::move(m_out), std::move(weights));
}

EdlnNetwork reinitialize(const EdlnNetwork& net, std::uint64_t seed,
                         double init_scale) {
  Rng rng(seed);
  std::vector<Matrix> weights;
  for (const auto& w : net.weights())
    weights.push_back(gaussian_matrix(w.rows(), w.cols(), rng,
                                      init_scale / std::sqrt(double(w.cols()))));
  return net.with_weights(std::move(weights));
}

Vector forward(const EdlnNetwork& net, const Vector& x_view) {
  require_dim(x_view.size(), net.input_dim(), "forward: input");
  Vector h = net.m_in() * x_view;
  for (const auto& w : net.weights()) h = w * h;
  return net.m_out() * h;
}

Matrix hidden_map(const EdlnNetwork& net, int layer, HiddenConvention convention) {
  if (layer < 0 || layer > net.depth())
    throw std::out_of_range("hidden layer " + std::to_string(layer) +
                            " outside 0.." + std::to_string(net.depth()));
  Matrix map = layer == 0 ? net.m_in() : Matrix(net.chain(layer, 1) * net.m_in());
  if (convention == HiddenConvention::kIncludeOutputEmbedding) {
    if (map.rows() != net.m_out().cols())
      throw ShapeError("hidden layer " + std::to_string(layer) + " has width " +
                       std::to_string(map.rows()) +
                       ", M^O cannot be applied (needs " +
                       std::to_string(net.m_out().cols()) + ")");
    map = net.m_out() * map;
  }
  return map;
}

Vector hidden(const EdlnNetwork& net, const Vector& x_view, int layer,
              HiddenConvention convention) {
  require_dim(x_view.size(), net.input_dim(), "hidden: input");
  return hidden_map(net, layer, convention) * x_view;
}

double per_sample_loss(const EdlnNetwork& net, const Vector& x_view, const Vector& y) {
  require_dim(y.size(), net.output_dim(), "loss: label");
  return (forward(net, x_view) - y).squaredNorm();
}

std::vector<Matrix> gradients(const EdlnNetwork& net, const Vector& x_view,
                              const Vector& y) {
  require_dim(x_view.size(), net.input_dim(), "gradients: input");
  require_dim(y.size(), net.output_dim(), "gradients: label");
  const int depth = net.depth();
  // Forward activations a_0 = M^I x, a_i = W_i a_{i-1}.
  std::vector<Vector> acts{net.m_in() * x_view};
  for (const auto& w : net.weights()) acts.push_back(w * acts.back());
  const Vector residual = net.m_out() * acts.back() - y;
  // Backward: g_D = 2 (M^O)^T r, g_{i-1} = W_i^T g_i.
  std::vector<Matrix> grads(static_cast<std::size_t>(depth));
  Vector g = 2.0 * net.m_out().transpose() * residual;
  for (int i = depth; i >= 1; --i) {
    grads[static_cast<std::size_t>(i - 1)] = g * acts[static_cast<std::size_t>(i - 1)].transpose();
    g = net.weight(i).transpose() * g;
  }
  return grads;
}

Matrix matrix_exponential(const Matrix& generator, double scale) {
  if (generator.rows() != generator.cols())
    throw ShapeError("matrix_exponential needs a square generator, got " +
                     shape_string(generator));
  const Eigen::Index n = generator.rows();
  Matrix a = scale * generator;
  const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm1 / 0.5)));
  a /= std::ldexp(1.0, squarings);
  // Taylor series until the term magnitude drops below 1e-16.
  Matrix result = identity(n);
  Matrix term = identity(n);
  for (int k = 1; k < 64; ++k) {
    term = term * a / double(k);
    result += term;
    if (term.cwiseAbs().maxCoeff() < 1e-16) break;
  }
  for (int s = 0; s < squarings; ++s) result = result * result;
  return result;
}

EdlnNetwork apply_symmetry(const EdlnNetwork& net, const SymmetryGenerator& g) {
  const int i = g.layer_index;
  if (i < 1 || i >= net.depth())
    throw std::out_of_range("symmetry interface " + std::to_string(i) +
                            " outside 1.." + std::to_string(net.depth() - 1));
  const Eigen::Index side = net.weight(i).rows();
  if (g.generator.rows() != side || g.generator.cols() != side)
    throw ShapeError("generator " + shape_string(g.generator) +
                     " does not match rows(W_" + std::to_string(i) + ") = " +
                     std::to_string(side));
  std::vector<Matrix> w = net.weights();
  w[static_cast<std::size_t>(i - 1)] = matrix_exponential(g.generator, g.scale) * w[static_cast<std::size_t>(i - 1)];
  w[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)] * matrix_exponential(g.generator, -g.scale);
  return net.with_weights(std::move(w));
}

}  // namespace edln
