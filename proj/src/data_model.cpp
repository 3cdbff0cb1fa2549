#include "edln/data_model.hpp"

#include <cmath>

namespace edln {

std::vector<std::string> DataModel::tags() const {
  std::vector<std::string> out;
  for (const auto& [tag, z] : view_transforms) out.push_back(tag);
  return out;
}

const Matrix& DataModel::view(const std::string& tag) const {
  auto it = view_transforms.find(tag);
  if (it == view_transforms.end()) throw UnknownTagError("unknown view tag '" + tag + "'");
  return it->second;
}

Matrix DataModel::label(const std::string& tag) const {
  view(tag);
  auto it = label_transforms.find(tag);
  return it == label_transforms.end() ? identity(output_dim) : it->second;
}

std::optional<Matrix> DataModel::feature_noise(const std::string& tag) const {
  view(tag);
  auto it = heterogeneity.find(tag);
  if (it == heterogeneity.end()) return std::nullopt;
  return it->second;
}

namespace {

void require_spd(const Matrix& m, Eigen::Index n, const std::string& what) {
  if (m.rows() != n || m.cols() != n)
    throw ShapeError(what + " has shape " + shape_string(m));
  if ((m - m.transpose()).norm() > 1e-10 * std::max(1.0, m.norm()))
    throw std::invalid_argument(what + " is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw std::invalid_argument(what + " is not positive definite");
}

}  // namespace

void DataModel::validate() const {
  if (v_star.rows() != output_dim || v_star.cols() != input_dim)
    throw ShapeError("V* has shape " + shape_string(v_star));
  require_spd(sigma_x, input_dim, "Sigma_x");
  require_spd(sigma_eps, output_dim, "Sigma_eps");
  for (const auto& [tag, z] : view_transforms) {
    if (z.rows() != input_dim || z.cols() != input_dim)
      throw ShapeError("Z_" + tag + " has shape " + shape_string(z));
    if (!is_invertible(z)) throw SingularMatrixError("Z_" + tag + " is not invertible");
  }
  for (const auto& [tag, phi] : label_transforms) {
    if (!view_transforms.count(tag)) throw UnknownTagError("label transform for unknown tag " + tag);
    if (phi.rows() != output_dim || phi.cols() != output_dim)
      throw ShapeError("Phi_" + tag + " has shape " + shape_string(phi));
    if ((phi - phi.transpose()).norm() > 1e-10 * phi.norm())
      throw std::invalid_argument("Phi_" + tag + " is not symmetric");
    if (!is_invertible(phi)) throw SingularMatrixError("Phi_" + tag + " is not invertible");
  }
  for (const auto& [tag, cov] : heterogeneity) {
    if (!view_transforms.count(tag)) throw UnknownTagError("feature noise for unknown tag " + tag);
    require_spd(cov, input_dim, "feature noise of " + tag);
  }
}

DataModel make_data_model(const DataModelOptions& o) {
  if (o.rank < 0 || o.rank > std::min(o.input_dim, o.output_dim))
    throw std::invalid_argument("rank(V*) = " + std::to_string(o.rank) +
                                " is infeasible for a " + std::to_string(o.output_dim) +
                                "x" + std::to_string(o.input_dim) + " target");
  if (o.cond_x < 1.0 || o.cond_z < 1.0 || o.cond_eps < 1.0)
    throw std::invalid_argument("condition numbers must be >= 1");
  Rng rng(o.seed);
  DataModel dm;
  dm.input_dim = o.input_dim;
  dm.output_dim = o.output_dim;
  dm.seed = o.seed;

  Matrix g = gaussian_matrix(o.output_dim, o.input_dim, rng,
                             1.0 / std::sqrt(double(o.input_dim)));
  Eigen::JacobiSVD<Matrix> svd(g, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Vector s = svd.singularValues();
  for (Eigen::Index k = o.rank; k < s.size(); ++k) s(k) = 0.0;
  dm.v_star = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();

  dm.sigma_x = random_spd(o.input_dim, o.cond_x, 1.0, rng);
  dm.sigma_eps = random_spd(o.output_dim, o.cond_eps, o.noise_var, rng);
  for (const auto& tag : o.tags)
    dm.view_transforms[tag] = random_invertible(o.input_dim, o.cond_z, rng);
  dm.validate();
  return dm;
}

DataModel make_data_model(Eigen::Index input_dim, Eigen::Index output_dim,
                          Eigen::Index rank_v, double cond_x, double cond_z,
                          std::uint64_t seed) {
  DataModelOptions o;
  o.input_dim = input_dim;
  o.output_dim = output_dim;
  o.rank = rank_v;
  o.cond_x = cond_x;
  o.cond_z = cond_z;
  o.seed = seed;
  return make_data_model(o);
}

DataModel make_commuting_data_model(Eigen::Index dim, Eigen::Index rank,
                                    double cond_z, std::uint64_t seed,
                                    std::vector<std::string> tags) {
  if (rank < 1 || rank > dim) throw std::invalid_argument("infeasible rank");
  Rng rng(seed);
  DataModel dm;
  dm.input_dim = dm.output_dim = dim;
  dm.seed = seed;
  const Matrix basis = random_orthogonal(dim, rng);
  Vector v = Vector::Zero(dim);
  v.head(rank) = 1.5 * log_spaced_spectrum(rank, 2.0);
  dm.v_star = basis * v.asDiagonal() * basis.transpose();
  dm.sigma_x = random_spd(dim, 2.0, 1.0, rng);
  dm.sigma_eps = random_spd(dim, 10.0, 0.25, rng);
  std::uniform_int_distribution<int> shift(0, static_cast<int>(dim) - 1);
  for (const auto& tag : tags) {
    // Same eigenbasis, different (cyclically shifted) spectrum per view.
    Vector z = log_spaced_spectrum(dim, cond_z);
    const int k = shift(rng);
    Vector rotated(dim);
    for (Eigen::Index j = 0; j < dim; ++j) rotated(j) = z((j + k) % dim);
    Matrix zt = basis * rotated.asDiagonal() * basis.transpose();
    dm.view_transforms[tag] = 0.5 * (zt + zt.transpose());
  }
  dm.validate();
  return dm;
}

void add_heterogeneity(DataModel& dm, double variance,
                       const std::vector<std::string>& tags) {
  if (variance <= 0.0) throw std::invalid_argument("feature-noise variance must be > 0");
  for (const auto& tag : tags) {
    dm.view(tag);
    dm.heterogeneity[tag] = variance * identity(dm.input_dim);
  }
}

void add_label_transforms(DataModel& dm, double cond, std::uint64_t seed,
                          const std::vector<std::string>& tags) {
  Rng rng(seed);
  for (const auto& tag : tags) {
    dm.view(tag);
    dm.label_transforms[tag] = random_symmetric_invertible(dm.output_dim, cond, rng);
  }
}

PairedBatch sample_batch(const DataModel& dm, Eigen::Index n,
                         const std::vector<std::string>& tags, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("batch size must be >= 1");
  for (const auto& tag : tags) dm.view(tag);
  Rng rng(seed);
  PairedBatch batch;
  const Matrix lx = dm.sigma_x.llt().matrixL();
  const Matrix le = dm.sigma_eps.llt().matrixL();
  batch.x_base = lx * gaussian_matrix(dm.input_dim, n, rng);
  batch.eps = le * gaussian_matrix(dm.output_dim, n, rng);
  const Matrix y = dm.v_star * batch.x_base + batch.eps;
  for (const auto& tag : tags) {
    Matrix view = dm.view(tag) * batch.x_base;
    if (auto cov = dm.feature_noise(tag)) {
      const Matrix lz = cov->llt().matrixL();
      view += lz * gaussian_matrix(dm.input_dim, n, rng);
    }
    batch.views[tag] = std::move(view);
    batch.labels[tag] = dm.label(tag) * y;
  }
  return batch;
}

PopulationMoments population_moments(const DataModel& dm, const std::string& tag) {
  const Matrix& z = dm.view(tag);
  const Matrix phi = dm.label(tag);
  PopulationMoments m;
  m.input_moment = z * dm.sigma_x * z.transpose();
  if (auto cov = dm.feature_noise(tag)) m.input_moment += *cov;
  m.target = phi * dm.v_star * checked_inverse(z, "Z_" + tag);
  m.noise_cov = phi * dm.sigma_eps * phi;
  return m;
}

ViewModel view_model(const DataModel& dm, const std::string& tag) {
  const Matrix& z = dm.view(tag);
  const Matrix phi = dm.label(tag);
  const auto noise = dm.feature_noise(tag);
  const Eigen::Index nx = dm.input_dim;
  const Eigen::Index ny = dm.output_dim;
  const Eigen::Index m = nx + ny + (noise ? nx : 0);

  const Matrix sx = sym_sqrt(dm.sigma_x);
  const Matrix se = sym_sqrt(dm.sigma_eps);
  ViewModel vm;
  vm.tag = tag;
  vm.heterogeneous = noise.has_value();
  vm.input_factor = Matrix::Zero(nx, m);
  vm.label_factor = Matrix::Zero(ny, m);
  vm.input_factor.leftCols(nx) = z * sx;
  vm.label_factor.leftCols(nx) = phi * dm.v_star * sx;
  vm.label_factor.middleCols(nx, ny) = phi * se;
  if (noise) vm.input_factor.rightCols(nx) = sym_sqrt(*noise);

  vm.input_moment = vm.input_factor * vm.input_factor.transpose();
  vm.noise_cov = phi * dm.sigma_eps * phi;
  vm.target = phi * dm.v_star * checked_inverse(z, "Z_" + tag);
  vm.optimal_map = vm.label_factor * vm.input_factor.transpose() *
                   checked_inverse(vm.input_moment, "input moment of " + tag);
  vm.min_loss = (vm.optimal_map * vm.input_factor - vm.label_factor).squaredNorm();
  return vm;
}

}  // namespace edln
