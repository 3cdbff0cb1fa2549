#include "edln/objectives.hpp"

namespace edln {

Expectation Expectation::analytic(const ViewModel& view) {
  Expectation ex;
  ex.mode_ = ExpectationMode::kAnalytic;
  ex.inputs_ = view.input_factor;
  ex.targets_ = view.label_factor;
  ex.weight_ = 1.0;
  ex.noise_cov_ = view.noise_cov;
  return ex;
}

Expectation Expectation::monte_carlo(Matrix inputs, Matrix targets) {
  if (inputs.cols() != targets.cols() || inputs.cols() == 0)
    throw ShapeError("batch inputs " + shape_string(inputs) + " and targets " +
                     shape_string(targets) + " disagree");
  Expectation ex;
  ex.mode_ = ExpectationMode::kMonteCarlo;
  ex.weight_ = 1.0 / double(inputs.cols());
  // Empirical residual covariance at the least-squares fit.
  const Matrix sxx = inputs * inputs.transpose();
  const Matrix fit = targets * inputs.transpose() * pinv(sxx);
  const Matrix res = targets - fit * inputs;
  ex.noise_cov_ = ex.weight_ * res * res.transpose();
  ex.inputs_ = std::move(inputs);
  ex.targets_ = std::move(targets);
  return ex;
}

Expectation Expectation::monte_carlo(const PairedBatch& batch, const std::string& tag) {
  auto v = batch.views.find(tag);
  auto l = batch.labels.find(tag);
  if (v == batch.views.end() || l == batch.labels.end())
    throw UnknownTagError("batch has no view '" + tag + "'");
  return monte_carlo(v->second, l->second);
}

Matrix Expectation::input_moment() const {
  return weight_ * inputs_ * inputs_.transpose();
}

namespace {

void check_dims(const EdlnNetwork& net, const Expectation& ex) {
  if (ex.inputs().rows() != net.input_dim() || ex.targets().rows() != net.output_dim())
    throw ShapeError("data dims (" + std::to_string(ex.inputs().rows()) + " -> " +
                     std::to_string(ex.targets().rows()) + ") do not match network (" +
                     std::to_string(net.input_dim()) + " -> " +
                     std::to_string(net.output_dim()) + ")");
}

Matrix residual_factor(const EdlnNetwork& net, const Expectation& ex) {
  return net.end_to_end() * ex.inputs() - ex.targets();
}

// a = A_i^T R, b = B_i X for one layer.
struct LayerTerms {
  Matrix a;
  Matrix b;
};

LayerTerms layer_terms(const EdlnNetwork& net, const Expectation& ex,
                       const Matrix& residual, int i) {
  return {net.suffix(i).transpose() * residual, net.prefix(i) * ex.inputs()};
}

double layer_entropy(const LayerTerms& t, const Expectation& ex) {
  if (ex.mode() == ExpectationMode::kAnalytic)
    return 4.0 * (t.a.squaredNorm() * t.b.squaredNorm() +
                  2.0 * (t.a * t.b.transpose()).squaredNorm());
  const Vector alpha = t.a.colwise().squaredNorm().transpose();
  const Vector beta = t.b.colwise().squaredNorm().transpose();
  return 4.0 * ex.weight() * alpha.dot(beta);
}

}  // namespace

double empirical_loss(const EdlnNetwork& net, const Expectation& ex) {
  check_dims(net, ex);
  return ex.weight() * residual_factor(net, ex).squaredNorm();
}

std::vector<double> entropy_per_layer(const EdlnNetwork& net, const Expectation& ex) {
  check_dims(net, ex);
  const Matrix residual = residual_factor(net, ex);
  std::vector<double> out;
  for (int i = 1; i <= net.depth(); ++i)
    out.push_back(layer_entropy(layer_terms(net, ex, residual, i), ex));
  return out;
}

double entropy_S(const EdlnNetwork& net, const Expectation& ex) {
  double s = 0.0;
  for (double v : entropy_per_layer(net, ex)) s += v;
  return s;
}

double modified_loss(const EdlnNetwork& net, const Expectation& ex, double eta_s) {
  if (eta_s < 0.0) throw std::invalid_argument("entropic coefficient must be >= 0");
  const double loss = empirical_loss(net, ex);
  return eta_s == 0.0 ? loss : loss + eta_s * entropy_S(net, ex);
}

std::vector<Matrix> loss_gradient(const EdlnNetwork& net, const Expectation& ex) {
  check_dims(net, ex);
  return loss_gradient(net, ex.inputs(), ex.targets(), ex.weight());
}

std::vector<Matrix> loss_gradient(const EdlnNetwork& net, const Matrix& inputs,
                                  const Matrix& targets, double weight) {
  if (inputs.rows() != net.input_dim() || targets.rows() != net.output_dim() ||
      inputs.cols() != targets.cols())
    throw ShapeError("batch " + shape_string(inputs) + " -> " + shape_string(targets) +
                     " does not fit the network");
  const Matrix grad_f =
      2.0 * weight * (net.end_to_end() * inputs - targets) * inputs.transpose();
  // Backward pass: G_k = A_k^T grad_f B_k^T, sharing partial products.
  const int depth = net.depth();
  std::vector<Matrix> grads(static_cast<std::size_t>(depth));
  std::vector<Matrix> prefixes(static_cast<std::size_t>(depth));
  prefixes[0] = net.m_in();
  for (int k = 2; k <= depth; ++k)
    prefixes[std::size_t(k - 1)] = net.weight(k - 1) * prefixes[std::size_t(k - 2)];
  Matrix back = net.m_out().transpose() * grad_f;
  for (int k = depth; k >= 1; --k) {
    grads[std::size_t(k - 1)] = back * prefixes[std::size_t(k - 1)].transpose();
    if (k > 1) back = net.weight(k).transpose() * back;
  }
  return grads;
}

std::vector<Matrix> entropy_gradient(const EdlnNetwork& net, const Expectation& ex,
                                     EntropyGradient method) {
  check_dims(net, ex);
  const int depth = net.depth();
  if (method == EntropyGradient::kFiniteDifference) {
    auto f = [&](const Vector& theta) { return entropy_S(net.unflatten(theta), ex); };
    return unflatten_weights(net.weights(), finite_difference_gradient(f, net.flatten(), 1e-5));
  }

  const Matrix residual = residual_factor(net, ex);
  std::vector<Matrix> grads;
  for (const auto& w : net.weights()) grads.push_back(Matrix::Zero(w.rows(), w.cols()));
  Matrix grad_residual = Matrix::Zero(residual.rows(), residual.cols());

  for (int i = 1; i <= depth; ++i) {
    const Matrix suffix = net.suffix(i);
    const Matrix prefix = net.prefix(i);
    const LayerTerms t{suffix.transpose() * residual, prefix * ex.inputs()};
    // dS_i = <ga, da> + <gb, db>
    Matrix ga;
    Matrix gb;
    if (ex.mode() == ExpectationMode::kAnalytic) {
      const Matrix cross = t.a * t.b.transpose();
      ga = 8.0 * t.b.squaredNorm() * t.a + 16.0 * cross * t.b;
      gb = 8.0 * t.a.squaredNorm() * t.b + 16.0 * cross.transpose() * t.a;
    } else {
      const Vector alpha = t.a.colwise().squaredNorm().transpose();
      const Vector beta = t.b.colwise().squaredNorm().transpose();
      ga = 8.0 * ex.weight() * t.a * beta.asDiagonal();
      gb = 8.0 * ex.weight() * t.b * alpha.asDiagonal();
    }
    // a = A_i^T R: contributes through A_i and through R.
    const Matrix grad_suffix = residual * ga.transpose();
    grad_residual += suffix * ga;
    const Matrix grad_prefix = gb * ex.inputs().transpose();
    // A_i = A_k W_k (W_{k-1} .. W_{i+1}) for k > i.
    for (int k = i + 1; k <= depth; ++k)
      grads[std::size_t(k - 1)] += net.suffix(k).transpose() * grad_suffix *
                                   net.chain(k - 1, i + 1).transpose();
    // B_i = (W_{i-1} .. W_{k+1}) W_k B_k for k < i.
    for (int k = 1; k < i; ++k)
      grads[std::size_t(k - 1)] += net.chain(i - 1, k + 1).transpose() * grad_prefix *
                                   net.prefix(k).transpose();
  }
  // R = F X - Y.
  const Matrix grad_f = grad_residual * ex.inputs().transpose();
  for (int k = 1; k <= depth; ++k)
    grads[std::size_t(k - 1)] += net.suffix(k).transpose() * grad_f * net.prefix(k).transpose();
  return grads;
}

GradientMoments gradient_moments(const EdlnNetwork& net, const Expectation& ex, int layer) {
  check_dims(net, ex);
  net.weight(layer);
  const Matrix residual = residual_factor(net, ex);
  const LayerTerms t = layer_terms(net, ex, residual, layer);
  GradientMoments m;
  if (ex.mode() == ExpectationMode::kAnalytic) {
    const Matrix cross = t.a * t.b.transpose();
    m.rows = 4.0 * (t.b.squaredNorm() * t.a * t.a.transpose() + 2.0 * cross * cross.transpose());
    m.cols = 4.0 * (t.a.squaredNorm() * t.b * t.b.transpose() + 2.0 * cross.transpose() * cross);
  } else {
    const Vector alpha = t.a.colwise().squaredNorm().transpose();
    const Vector beta = t.b.colwise().squaredNorm().transpose();
    m.rows = 4.0 * ex.weight() * t.a * beta.asDiagonal() * t.a.transpose();
    m.cols = 4.0 * ex.weight() * t.b * alpha.asDiagonal() * t.b.transpose();
  }
  return m;
}

Vector finite_difference_gradient(const std::function<double(const Vector&)>& f,
                                  const Vector& theta, double step) {
  Vector grad(theta.size());
  Vector probe = theta;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    probe(k) = theta(k) + step;
    const double up = f(probe);
    probe(k) = theta(k) - step;
    const double down = f(probe);
    probe(k) = theta(k);
    grad(k) = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace edln
