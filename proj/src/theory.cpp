#include "edln/theory.hpp"

#include <cmath>

namespace edln {

Matrix global_min_target(const DataModel& dm, const std::string& tag, const EdlnNetwork& net) {
  const Matrix& z = dm.view(tag);
  if (net.input_dim() != dm.input_dim || net.output_dim() != dm.output_dim)
    throw ShapeError("network dims do not match the data model");
  return checked_inverse(net.m_out(), "M^O") * dm.label(tag) * dm.v_star *
         checked_inverse(z, "Z_" + tag) * checked_inverse(net.m_in(), "M^I");
}

Matrix ClosedFormSolution::whitened_prefix(int i) const {
  Matrix p = w_bar.at(0);
  for (int k = 2; k <= i; ++k) p = w_bar.at(std::size_t(k - 1)) * p;
  return p;
}

Matrix ClosedFormSolution::whitened_suffix(int i) const {
  const int d = int(w_bar.size());
  Matrix p = w_bar.back();
  for (int k = d - 1; k > i; --k) p = p * w_bar.at(std::size_t(k - 1));
  return p;
}

namespace {

struct Whitening {
  Matrix sqrt_sx;
  Matrix u_in;   // M^I Z sqrt(Sigma_x)
  Matrix u_out;  // sqrt(Phi Sigma_eps Phi) M^O
  Matrix v_bar;
};

Whitening whitening(const DataModel& dm, const std::string& tag, const EdlnNetwork& shell) {
  if (dm.feature_noise(tag))
    throw UnsupportedCaseError("closed form assumes a noise-free view; '" + tag +
                               "' carries feature noise");
  if (shell.input_dim() != dm.input_dim || shell.output_dim() != dm.output_dim)
    throw ShapeError("network dims do not match the data model");
  const Matrix phi = dm.label(tag);
  Whitening w;
  w.sqrt_sx = sym_sqrt(dm.sigma_x);
  const Matrix sqrt_se = sym_sqrt(phi * dm.sigma_eps * phi);
  w.u_in = shell.m_in() * dm.view(tag) * w.sqrt_sx;
  w.u_out = sqrt_se * shell.m_out();
  w.v_bar = sqrt_se * phi * dm.v_star * w.sqrt_sx;
  return w;
}

std::vector<Matrix> random_rotations(const EdlnNetwork& shell, Eigen::Index r,
                                     std::uint64_t seed) {
  Rng rng(seed);
  const auto dims = shell.layer_dims();
  std::vector<Matrix> out;
  for (int i = 1; i < shell.depth(); ++i)
    out.push_back(random_orthogonal(dims[std::size_t(i)], rng).leftCols(r));
  return out;
}

Eigen::Index numerical_rank(const Vector& s) {
  if (s.size() == 0 || s(0) <= 0.0) return 0;
  Eigen::Index r = 0;
  while (r < s.size() && s(r) > kPinvCutoff * s(0)) ++r;
  return r;
}

}  // namespace

ClosedFormSolution closed_form_with_rotations(const DataModel& dm, const std::string& tag,
                                              const EdlnNetwork& shell,
                                              const std::vector<Matrix>& rotations,
                                              Eigen::Index rank_cap) {
  const int depth = shell.depth();
  if (depth < 2) throw std::invalid_argument("closed form needs depth >= 2");
  const Whitening w = whitening(dm, tag, shell);

  Eigen::JacobiSVD<Matrix> svd(w.v_bar, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::Index full_rank = numerical_rank(svd.singularValues());
  if (rank_cap > full_rank)
    throw std::invalid_argument("requested rank " + std::to_string(rank_cap) +
                                " exceeds rank(V_bar) = " + std::to_string(full_rank));
  const Eigen::Index r = rank_cap < 0 ? full_rank : rank_cap;

  const auto dims = shell.layer_dims();
  for (int i = 1; i < depth; ++i)
    if (dims[std::size_t(i)] < r)
      throw std::invalid_argument("width " + std::to_string(dims[std::size_t(i)]) +
                                  " at layer " + std::to_string(i) + " is below rank " +
                                  std::to_string(r));
  if (int(rotations.size()) != depth - 1)
    throw std::invalid_argument("expected " + std::to_string(depth - 1) + " rotations");
  for (int i = 1; i < depth; ++i) {
    const Matrix& q = rotations[std::size_t(i - 1)];
    if (q.rows() != dims[std::size_t(i)] || q.cols() != r)
      throw ShapeError("rotation " + std::to_string(i) + " has shape " + shape_string(q));
    if ((q.transpose() * q - identity(r)).norm() > 1e-10)
      throw std::invalid_argument("rotation " + std::to_string(i) + " is not orthonormal");
  }

  const Vector s = svd.singularValues().head(r);
  const Matrix e_l = svd.matrixU().leftCols(r);
  const Matrix e_r = svd.matrixV().leftCols(r).transpose();
  const Matrix sqrt_s = s.cwiseSqrt().asDiagonal();
  const double beta_in = w.u_in.squaredNorm();
  const double beta_out = w.u_out.squaredNorm();
  const double sigma = s.sum();

  double c = 0.0, c_first = 0.0, c_last = 0.0;
  if (r > 0) {
    c = std::pow(sigma * sigma / (beta_in * beta_out), 1.0 / (2.0 * depth));
    c_first = c * std::sqrt(beta_in / sigma);
    c_last = c * std::sqrt(beta_out / sigma);
  }

  std::vector<Matrix> w_bar(static_cast<std::size_t>(depth));
  w_bar[0] = c_first * rotations[0] * sqrt_s * e_r;
  for (int i = 2; i < depth; ++i)
    w_bar[std::size_t(i - 1)] =
        c * rotations[std::size_t(i - 1)] * rotations[std::size_t(i - 2)].transpose();
  w_bar[std::size_t(depth - 1)] = c_last * e_l * sqrt_s * rotations.back().transpose();

  std::vector<Matrix> raw = w_bar;
  raw.front() = w_bar.front() * checked_inverse(w.u_in, "M^I Z sqrt(Sigma_x)");
  raw.back() = checked_inverse(w.u_out, "sqrt(Sigma_eps) M^O") * w_bar.back();

  ClosedFormSolution sol{tag, w.v_bar, e_l, s, e_r, rotations, w_bar, {}, {}, {},
                         w.sqrt_sx, shell.with_weights(raw)};
  double scale = c_first;
  for (int i = 1; i < depth; ++i) {
    sol.layer_scales.push_back(scale);
    scale *= c;
  }
  for (int i = 1; i < depth; ++i) {
    const double h_prev = i == 1 ? beta_in : sol.whitened_prefix(i - 1).squaredNorm();
    const double g_next = i + 1 == depth ? beta_out : sol.whitened_suffix(i + 1).squaredNorm();
    sol.a_h.push_back(h_prev > 0 ? 1.0 / h_prev : 0.0);
    sol.a_g.push_back(g_next > 0 ? 1.0 / g_next : 0.0);
  }
  return sol;
}

ClosedFormSolution closed_form_platonic(const DataModel& dm, const std::string& tag,
                                        const EdlnNetwork& shell, std::uint64_t rotation_seed,
                                        Eigen::Index rank_cap) {
  if (shell.depth() < 2) throw std::invalid_argument("closed form needs depth >= 2");
  const Whitening w = whitening(dm, tag, shell);
  Eigen::JacobiSVD<Matrix> svd(w.v_bar);
  const Eigen::Index full_rank = numerical_rank(svd.singularValues());
  if (rank_cap > full_rank)
    throw std::invalid_argument("requested rank " + std::to_string(rank_cap) +
                                " exceeds rank(V_bar) = " + std::to_string(full_rank));
  const Eigen::Index r = rank_cap < 0 ? full_rank : rank_cap;
  if (shell.width() < r)
    throw std::invalid_argument("width " + std::to_string(shell.width()) +
                                " is below rank " + std::to_string(r));
  return closed_form_with_rotations(dm, tag, shell, random_rotations(shell, r, rotation_seed),
                                    rank_cap);
}

ClosedFormSolution low_rank_saddle(const DataModel& dm, const std::string& tag,
                                   const EdlnNetwork& shell, Eigen::Index r,
                                   std::uint64_t rotation_seed) {
  if (r < 0) throw std::invalid_argument("rank must be non-negative");
  return closed_form_platonic(dm, tag, shell, rotation_seed, r);
}

Matrix whitened_representation_map(const ClosedFormSolution& sol, int layer) {
  if (layer < 1 || layer >= sol.depth())
    throw std::out_of_range("whitened map is defined for hidden layers 1.." +
                            std::to_string(sol.depth() - 1));
  const Matrix sqrt_s = sol.singular_values.cwiseSqrt().asDiagonal();
  return sol.rotations[std::size_t(layer - 1)] * sqrt_s * sol.e_r * pinv(sol.sqrt_sigma_x);
}

double BalanceReport::max_residual() const {
  double m = 0.0;
  for (const auto& b : interfaces)
    m = std::max({m, b.gradient_balance, b.layer_condition, b.rowcol});
  return m;
}

BalanceReport balance_report(const EdlnNetwork& net, const Expectation& ex) {
  BalanceReport report;
  const double floor = ex.noise_cov().trace();
  report.on_constraint = empirical_loss(net, ex) - floor <= 1e-6 * std::max(floor, 1e-300);
  const Matrix input_moment = ex.input_moment();
  for (int i = 1; i < net.depth(); ++i) {
    InterfaceBalance b;
    b.interface = i;
    const Matrix& wi = net.weight(i);
    const Matrix& wn = net.weight(i + 1);

    std::vector<Matrix> merged;
    for (int k = 1; k <= net.depth(); ++k) {
      if (k == i) merged.push_back(wn * wi);
      else if (k != i + 1) merged.push_back(net.weight(k));
    }
    const GradientMoments mk = gradient_moments(net.with_weights(merged), ex, i);
    b.gradient_balance = normalized_residual(wi * mk.cols * wi.transpose(),
                                             wn.transpose() * mk.rows * wn);

    const Matrix prev = net.prefix(i) * input_moment * net.prefix(i).transpose();
    const Matrix out = net.suffix(i + 1);
    const Matrix noise = out.transpose() * ex.noise_cov() * out;
    const double a_h = 1.0 / std::max(prev.trace(), 1e-300);
    const double a_g = 1.0 / std::max(noise.trace(), 1e-300);
    b.layer_condition = normalized_residual(a_h * wi * prev * wi.transpose(),
                                            a_g * wn.transpose() * noise * wn);

    const GradientMoments gi = gradient_moments(net, ex, i);
    const GradientMoments gn = gradient_moments(net, ex, i + 1);
    b.rowcol = normalized_residual(gi.rows.diagonal(), gn.cols.diagonal());
    report.interfaces.push_back(b);
  }
  return report;
}

std::vector<Matrix> conserved_quantities(const EdlnNetwork& net) {
  std::vector<Matrix> q;
  for (int i = 1; i < net.depth(); ++i)
    q.push_back(net.weight(i + 1).transpose() * net.weight(i + 1) -
                net.weight(i) * net.weight(i).transpose());
  return q;
}

EdlnNetwork transform_interface(const EdlnNetwork& net, int i, const Matrix& t) {
  if (i < 1 || i >= net.depth())
    throw std::out_of_range("interface index " + std::to_string(i) + " outside 1.." +
                            std::to_string(net.depth() - 1));
  const Eigen::Index d = net.weight(i).rows();
  if (t.rows() != d || t.cols() != d)
    throw ShapeError("interface transform must be " + std::to_string(d) + "x" +
                     std::to_string(d) + ", got " + shape_string(t));
  std::vector<Matrix> w = net.weights();
  w[std::size_t(i)] = w[std::size_t(i)] * t;
  w[std::size_t(i - 1)] = checked_inverse(t, "interface transform") * w[std::size_t(i - 1)];
  return net.with_weights(std::move(w));
}

EdlnNetwork non_platonic_transform(const EdlnNetwork& net, int i, std::uint64_t t_seed,
                                   double magnitude) {
  if (!(magnitude > 0.0)) throw std::invalid_argument("magnitude must be > 0");
  if (i < 1 || i >= net.depth())
    throw std::out_of_range("interface index " + std::to_string(i) + " outside 1.." +
                            std::to_string(net.depth() - 1));
  const Eigen::Index d = net.weight(i).rows();
  Rng rng(t_seed);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const Matrix g = gaussian_matrix(d, d, rng);
    const Matrix t = identity(d) + magnitude * g / g.norm();
    if (condition_number(t) < 1e6) return transform_interface(net, i, t);
  }
  throw SingularMatrixError("no well-conditioned interface transform in 10 draws");
}

std::vector<Matrix> weight_decay_closed_form(const DataModel& dm, const std::string& tag,
                                             int depth) {
  if (depth < 1) throw std::invalid_argument("depth must be >= 1");
  if (dm.input_dim != dm.output_dim)
    throw UnsupportedCaseError("weight-decay closed form needs square V*");
  const Matrix& z = dm.view(tag);
  const Matrix& v = dm.v_star;
  const double scale = v.norm() * z.norm() + 1e-300;
  if ((dm.label(tag) - identity(dm.output_dim)).norm() > 1e-12)
    throw UnsupportedCaseError("weight-decay closed form needs untransformed labels");
  if (dm.feature_noise(tag))
    throw UnsupportedCaseError("weight-decay closed form needs a noise-free view");
  if ((v - v.transpose()).norm() > 1e-10 * v.norm() || (z - z.transpose()).norm() > 1e-10 * z.norm())
    throw UnsupportedCaseError("weight-decay closed form needs symmetric V* and Z");
  if ((v * z - z * v).norm() > 1e-10 * scale)
    throw UnsupportedCaseError("weight-decay closed form needs V* and Z to commute");
  const Matrix target = v * checked_inverse(z, "Z_" + tag);
  Matrix root;
  try {
    root = psd_power(target, 1.0 / depth);
  } catch (const std::invalid_argument&) {
    throw UnsupportedCaseError("V* Z^{-1} is not positive semidefinite");
  }
  return std::vector<Matrix>(std::size_t(depth), root);
}

std::vector<Matrix> gauge_align(const std::vector<Matrix>& weights,
                                const std::vector<Matrix>& reference) {
  if (weights.size() != reference.size())
    throw std::invalid_argument("gauge_align: depth mismatch");
  std::vector<Matrix> out;
  Matrix prev = identity(weights.front().cols());
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k].rows() != reference[k].rows() || weights[k].cols() != reference[k].cols())
      throw ShapeError("gauge_align: layer " + std::to_string(k + 1) + " shape mismatch");
    const Matrix carried = weights[k] * prev;
    if (k + 1 == weights.size()) {
      out.push_back(carried);
      break;
    }
    // O = argmin |O^T carried - ref| over orthogonal O.
    const Matrix o = polar_orthogonal(carried * reference[k].transpose());
    out.push_back(o.transpose() * carried);
    prev = o;
  }
  return out;
}

double optimal_rescaling(const EdlnNetwork& net, const Expectation& ex, int i, Eigen::Index j) {
  if (i < 1 || i >= net.depth())
    throw std::out_of_range("interface index " + std::to_string(i));
  const GradientMoments gi = gradient_moments(net, ex, i);
  const GradientMoments gn = gradient_moments(net, ex, i + 1);
  if (j < 0 || j >= gi.rows.rows()) throw std::out_of_range("neuron index out of range");
  return 0.25 * std::log(gi.rows(j, j) / gn.cols(j, j));
}

}  // namespace edln
