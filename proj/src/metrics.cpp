#include "edln/metrics.hpp"

#include <cmath>
#include <limits>

namespace edln {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Matrix double_center(const Matrix& g) {
  const Eigen::Index n = g.rows();
  const Matrix h = identity(n) - Matrix::Constant(n, n, 1.0 / double(n));
  return h * g * h;
}

double cosine(const Matrix& a, const Matrix& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return kNaN;
  return std::min(1.0, std::abs((a.array() * b.array()).sum()) / (na * nb));
}

}  // namespace

AlignmentReport compare_grams(Matrix gram_a, Matrix gram_b) {
  if (gram_a.rows() != gram_b.rows() || gram_a.cols() != gram_b.cols() ||
      gram_a.rows() != gram_a.cols())
    throw ShapeError("Gram matrices " + shape_string(gram_a) + " and " + shape_string(gram_b) +
                     " are not comparable");
  AlignmentReport r;
  const double na = gram_a.norm();
  const double nb = gram_b.norm();
  const double inner = (gram_a.array() * gram_b.array()).sum();
  r.degenerate = na == 0.0 || nb == 0.0 || !std::isfinite(na) || !std::isfinite(nb);
  if (r.degenerate) {
    r.score = r.cka = r.c0 = kNaN;
  } else {
    r.score = cosine(gram_a, gram_b);
    r.c0 = inner / (na * na);
    r.cka = cosine(double_center(gram_a), double_center(gram_b));
  }
  r.gram_a = std::move(gram_a);
  r.gram_b = std::move(gram_b);
  return r;
}

AlignmentReport alignment(const EdlnNetwork& net_a, int layer_a, const EdlnNetwork& net_b,
                          int layer_b, const Matrix& probes_a, const Matrix& probes_b) {
  if (probes_a.cols() != probes_b.cols())
    throw ShapeError("probe sets have different sizes");
  if (probes_a.cols() < 10) throw std::invalid_argument("alignment needs at least 10 probes");
  const Matrix ha = hidden_map(net_a, layer_a, HiddenConvention::kExcludeOutputEmbedding) * probes_a;
  const Matrix hb = hidden_map(net_b, layer_b, HiddenConvention::kExcludeOutputEmbedding) * probes_b;
  return compare_grams(ha.transpose() * ha, hb.transpose() * hb);
}

AlignmentReport alignment(const EdlnNetwork& net_a, int layer_a, const EdlnNetwork& net_b,
                          int layer_b, const PairedBatch& probes, const std::string& tag_a,
                          const std::string& tag_b) {
  auto a = probes.views.find(tag_a);
  auto b = probes.views.find(tag_b);
  if (a == probes.views.end()) throw UnknownTagError("probe batch has no view '" + tag_a + "'");
  if (b == probes.views.end()) throw UnknownTagError("probe batch has no view '" + tag_b + "'");
  return alignment(net_a, layer_a, net_b, layer_b, a->second, b->second);
}

std::vector<int> alignment_layers(const EdlnNetwork& net, bool include_output_layer) {
  std::vector<int> layers;
  const int last = include_output_layer || net.depth() == 1 ? net.depth() : net.depth() - 1;
  for (int i = 1; i <= last; ++i) layers.push_back(i);
  return layers;
}

Matrix pairwise_alignment(const EdlnNetwork& net_a, const EdlnNetwork& net_b,
                          const Matrix& probes_a, const Matrix& probes_b,
                          bool include_output_layer) {
  const auto la = alignment_layers(net_a, include_output_layer);
  const auto lb = alignment_layers(net_b, include_output_layer);
  Matrix scores(Eigen::Index(la.size()), Eigen::Index(lb.size()));
  for (std::size_t i = 0; i < la.size(); ++i)
    for (std::size_t j = 0; j < lb.size(); ++j)
      scores(Eigen::Index(i), Eigen::Index(j)) =
          alignment(net_a, la[i], net_b, lb[j], probes_a, probes_b).score;
  return scores;
}

double min_score(const Matrix& scores) {
  double m = kNaN;
  for (Eigen::Index k = 0; k < scores.size(); ++k)
    if (!std::isnan(scores(k)) && !(scores(k) >= m)) m = scores(k);
  return m;
}

double max_score(const Matrix& scores) {
  double m = kNaN;
  for (Eigen::Index k = 0; k < scores.size(); ++k)
    if (!std::isnan(scores(k)) && !(scores(k) <= m)) m = scores(k);
  return m;
}

Vector hessian_vector_product(const EdlnNetwork& net, const Expectation& ex, const Vector& v) {
  const Vector theta = net.flatten();
  const double h = 1e-5 * (1.0 + theta.lpNorm<Eigen::Infinity>());
  const Vector up = flatten_weights(loss_gradient(net.unflatten(theta + h * v), ex));
  const Vector down = flatten_weights(loss_gradient(net.unflatten(theta - h * v), ex));
  return (up - down) / (2.0 * h);
}

namespace {

SharpnessEstimate power_iteration(const EdlnNetwork& net, const Expectation& ex, double shift,
                                  double tol, int max_iters, std::uint64_t seed) {
  Rng rng(seed);
  Vector v = gaussian_matrix(net.parameter_count(), 1, rng).col(0);
  v.normalize();
  SharpnessEstimate est;
  double prev = kNaN;
  for (int it = 1; it <= max_iters; ++it) {
    Vector hv = hessian_vector_product(net, ex, v) - shift * v;
    const double rayleigh = v.dot(hv);
    est.iterations = it;
    est.top_eigenvalue = rayleigh + shift;
    if (!std::isnan(prev)) {
      est.residual = std::abs(rayleigh - prev) / std::max(std::abs(rayleigh), 1e-300);
      if (est.residual < tol) {
        est.converged = true;
        break;
      }
    }
    prev = rayleigh;
    const double n = hv.norm();
    if (n == 0.0) {
      est.converged = true;
      est.residual = 0.0;
      break;
    }
    v = hv / n;
  }
  return est;
}

}  // namespace

SharpnessEstimate sharpness(const EdlnNetwork& net, const Expectation& ex, double tol,
                            int max_iters, std::uint64_t seed) {
  SharpnessEstimate est = power_iteration(net, ex, 0.0, tol, max_iters, seed);
  if (est.top_eigenvalue < 0.0) {
    // Dominant eigenvalue is negative: shift it to the bottom of the spectrum.
    SharpnessEstimate shifted =
        power_iteration(net, ex, est.top_eigenvalue, tol, max_iters, seed + 1);
    shifted.iterations += est.iterations;
    return shifted;
  }
  return est;
}

}  // namespace edln
