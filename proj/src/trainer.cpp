#include "edln/trainer.hpp"

#include "edln/metrics.hpp"
#include "edln/theory.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace edln {

namespace {

constexpr double kDivergenceLoss = 1e12;

const std::pair<Algorithm, const char*> kAlgorithmNames[] = {
    {Algorithm::kSgd, "sgd"},
    {Algorithm::kFullBatchGd, "full_batch_gd"},
    {Algorithm::kGradientFlow, "gradient_flow"},
    {Algorithm::kEntropicExplicit, "entropic_explicit"},
    {Algorithm::kEntropicConstrained, "entropic_constrained"},
};

}  // namespace

std::string to_string(Algorithm a) {
  for (const auto& [value, name] : kAlgorithmNames)
    if (value == a) return name;
  return "unknown";
}

Algorithm algorithm_from_string(const std::string& name) {
  for (const auto& [value, n] : kAlgorithmNames)
    if (name == n) return value;
  throw std::invalid_argument("unknown algorithm '" + name + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("learning_rate must be finite and >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  if (entropic_coeff < 0.0) throw std::invalid_argument("entropic_coeff must be >= 0");
  if (record_every < 1) throw std::invalid_argument("record_every must be >= 1");
  if (sharpness_every < 0 || checkpoint_every < 0)
    throw std::invalid_argument("sharpness_every and checkpoint_every must be >= 0");
  if (mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
  if (algorithm == Algorithm::kEntropicConstrained && weight_decay != 0.0)
    throw std::invalid_argument("the constrained entropic mode does not take weight decay");
}

std::string TrainTrace::csv() const {
  std::ostringstream out;
  out << std::setprecision(17);
  const std::size_t interfaces = rows.empty() ? 0 : rows.front().drift.size();
  out << "step,loss,entropy_S,sharpness";
  for (std::size_t i = 1; i <= interfaces; ++i) out << ",drift_q_" << i;
  out << '\n';
  for (const auto& r : rows) {
    out << r.step << ',' << r.loss << ',' << r.entropy << ',';
    if (!std::isnan(r.sharpness)) out << r.sharpness;
    for (double d : r.drift) out << ',' << d;
    out << '\n';
  }
  return out.str();
}

void TrainTrace::write_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << csv();
}

namespace {

// Whitened residual r = vec((F - F_opt) L) with L L^T = E[x x^T], so that
// |r|^2 = L(theta) - min L, and its Jacobian.
struct ConstraintGeometry {
  Matrix chol;
  Matrix f_opt;

  explicit ConstraintGeometry(const Expectation& ex) {
    const Matrix sxx = ex.inputs() * ex.inputs().transpose();
    f_opt = ex.targets() * ex.inputs().transpose() * pinv(sxx);
    Eigen::LLT<Matrix> llt(ex.weight() * sxx);
    if (llt.info() != Eigen::Success)
      throw SingularMatrixError("input second moment is not positive definite");
    chol = llt.matrixL();
  }

  Vector residual(const EdlnNetwork& net) const {
    const Matrix r = (net.end_to_end() - f_opt) * chol;
    return Eigen::Map<const Vector>(r.data(), r.size());
  }

  Matrix jacobian(const EdlnNetwork& net) const {
    const Eigen::Index m = f_opt.rows();
    const Eigen::Index n = chol.cols();
    Matrix j = Matrix::Zero(m * n, net.parameter_count());
    Eigen::Index offset = 0;
    for (int k = 1; k <= net.depth(); ++k) {
      const Matrix a = net.suffix(k);
      const Matrix bl = net.prefix(k) * chol;
      const Eigen::Index dk = a.cols();
      for (Eigen::Index q = 0; q < bl.rows(); ++q)
        for (Eigen::Index c = 0; c < n; ++c)
          j.block(m * c, offset + dk * q, m, dk) = bl(q, c) * a;
      offset += net.weight(k).size();
    }
    return j;
  }
};

// Pseudo-inverse of J J^T through its eigendecomposition.
Matrix gram_pinv(const Matrix& j) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(j * j.transpose());
  Vector ev = es.eigenvalues();
  const double top = std::max(ev.maxCoeff(), 1e-300);
  for (Eigen::Index k = 0; k < ev.size(); ++k) ev(k) = ev(k) > 1e-13 * top ? 1.0 / ev(k) : 0.0;
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

struct Projection {
  EdlnNetwork net;
  bool converged = false;
};

Projection project(const EdlnNetwork& start, const ConstraintGeometry& geo, double floor,
                   double tol, int max_iters) {
  EdlnNetwork net = start;
  Vector r = geo.residual(net);
  double gap = r.squaredNorm();
  const double target = tol * std::max(floor, 1e-300);
  // Past the target, keep iterating while Gauss-Newton still converges fast.
  double ratio = 0.0;
  for (int it = 0; it < max_iters && (gap > target || ratio < 1e-2) && gap > 0.0; ++it) {
    const double before = gap;
    const Matrix j = geo.jacobian(net);
    const Vector delta = -j.transpose() * (gram_pinv(j) * r);
    const Vector theta = net.flatten();
    // Full Gauss-Newton step, halved while the gap grows.
    double t = 1.0;
    bool improved = false;
    for (int h = 0; h < 30; ++h, t *= 0.5) {
      EdlnNetwork trial = net.unflatten(theta + t * delta);
      const Vector rt = geo.residual(trial);
      if (rt.squaredNorm() < gap) {
        net = std::move(trial);
        r = rt;
        gap = r.squaredNorm();
        improved = true;
        break;
      }
    }
    if (!improved) break;
    ratio = gap / before;
  }
  return {net, gap <= target};
}

bool finite_and_bounded(double loss) { return std::isfinite(loss) && loss <= kDivergenceLoss; }

class Recorder {
 public:
  Recorder(const EdlnNetwork& start, const Expectation& population, const TrainConfig& cfg)
      : population_(population), cfg_(cfg), q0_(conserved_quantities(start)) {}

  void record(int step, const EdlnNetwork& net, bool force = false) {
    if (!force && step % cfg_.record_every != 0) return;
    if (!trace.rows.empty() && trace.rows.back().step == step) return;
    TraceRow row;
    row.step = step;
    row.loss = empirical_loss(net, population_);
    row.entropy = entropy_S(net, population_);
    row.sharpness = std::numeric_limits<double>::quiet_NaN();
    if (cfg_.sharpness_every > 0 && (step % cfg_.sharpness_every == 0 || force))
      row.sharpness = sharpness(net, population_, 1e-8, 2000, cfg_.seed).top_eigenvalue;
    const auto q = conserved_quantities(net);
    for (std::size_t i = 0; i < q.size(); ++i) row.drift.push_back((q[i] - q0_[i]).norm());
    trace.rows.push_back(std::move(row));
    if (cfg_.checkpoint_every > 0 && step % cfg_.checkpoint_every == 0)
      trace.checkpoints.push_back({step, net});
  }

  TrainTrace trace;

 private:
  const Expectation& population_;
  const TrainConfig& cfg_;
  std::vector<Matrix> q0_;
};

Vector total_gradient(const EdlnNetwork& net, const Expectation& ex, const TrainConfig& cfg) {
  Vector g = flatten_weights(loss_gradient(net, ex));
  if (cfg.algorithm == Algorithm::kEntropicExplicit && cfg.entropic_coeff > 0.0)
    g += cfg.entropic_coeff * flatten_weights(entropy_gradient(net, ex, cfg.entropy_gradient));
  if (cfg.weight_decay > 0.0) g += cfg.weight_decay * net.flatten();
  return g;
}

}  // namespace

EdlnNetwork project_to_constraint(const EdlnNetwork& net, const Expectation& ex, double tol,
                                  int max_iters) {
  const ConstraintGeometry geo(ex);
  const double floor = empirical_loss(net, ex) - geo.residual(net).squaredNorm();
  Projection p = project(net, geo, floor, tol, max_iters);
  if (!p.converged)
    throw std::runtime_error("projection onto the loss constraint did not converge");
  return p.net;
}

TrainResult train(const EdlnNetwork& start, const DataModel& dm, const std::string& tag,
                  const TrainConfig& cfg) {
  cfg.validate();
  const ViewModel vm = view_model(dm, tag);
  const Expectation population = Expectation::analytic(vm);
  if (start.input_dim() != dm.input_dim || start.output_dim() != dm.output_dim)
    throw ShapeError("network dims do not match the data model");
  const Expectation objective =
      cfg.expectation_mode == ExpectationMode::kAnalytic
          ? population
          : Expectation::monte_carlo(sample_batch(dm, cfg.mc_samples, {tag}, cfg.seed), tag);

  Recorder rec(start, population, cfg);
  EdlnNetwork net = start;
  EdlnNetwork last_finite = start;
  auto check = [&](int step) {
    const double loss = empirical_loss(net, population);
    if (!finite_and_bounded(loss)) {
      std::ostringstream msg;
      msg << "training diverged at step " << step << " (loss " << loss << ")";
      throw DivergenceError(msg.str(), step, last_finite, rec.trace);
    }
    last_finite = net;
  };
  rec.record(0, net, true);
  check(0);

  int step = 0;
  int taken = 0;
  switch (cfg.algorithm) {
    case Algorithm::kSgd: {
      Rng rng(cfg.seed);
      const Eigen::Index latent = vm.input_factor.cols();
      const double weight = 1.0 / cfg.batch_size;
      std::vector<Matrix> w = net.weights();
      for (step = 1; step <= cfg.steps; ++step) {
        const Matrix eta = gaussian_matrix(latent, cfg.batch_size, rng);
        const auto g = loss_gradient(net, vm.input_factor * eta, vm.label_factor * eta, weight);
        for (std::size_t k = 0; k < w.size(); ++k)
          w[k] -= cfg.learning_rate * (g[k] + cfg.weight_decay * w[k]);
        net = net.with_weights(w);
        if (step % 10 == 0 || step == cfg.steps) check(step);
        rec.record(step, net);
        taken = step;
      }
      break;
    }
    case Algorithm::kFullBatchGd:
    case Algorithm::kEntropicExplicit: {
      Vector theta = net.flatten();
      for (step = 1; step <= cfg.steps; ++step) {
        theta -= cfg.learning_rate * total_gradient(net, objective, cfg);
        net = net.unflatten(theta);
        check(step);
        rec.record(step, net);
        taken = step;
      }
      break;
    }
    case Algorithm::kGradientFlow: {
      const double h = cfg.learning_rate;
      auto field = [&](const Vector& t) { return Vector(-total_gradient(net.unflatten(t), objective, cfg)); };
      Vector theta = net.flatten();
      for (step = 1; step <= cfg.steps; ++step) {
        const Vector k1 = field(theta);
        const Vector k2 = field(theta + 0.5 * h * k1);
        const Vector k3 = field(theta + 0.5 * h * k2);
        const Vector k4 = field(theta + h * k3);
        theta += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        net = net.unflatten(theta);
        check(step);
        rec.record(step, net);
        taken = step;
      }
      break;
    }
    case Algorithm::kEntropicConstrained: {
      const ConstraintGeometry geo(objective);
      const double floor = empirical_loss(net, objective) - geo.residual(net).squaredNorm();
      Projection p = project(net, geo, floor, cfg.constraint_tol, 200);
      if (!p.converged)
        throw std::runtime_error("initial projection onto the loss constraint did not converge");
      net = p.net;
      double s = entropy_S(net, objective);
      double alpha = cfg.learning_rate;
      for (step = 1; step <= cfg.steps; ++step) {
        const Vector g = flatten_weights(entropy_gradient(net, objective, cfg.entropy_gradient));
        const Matrix j = geo.jacobian(net);
        const Vector pg = g - j.transpose() * (gram_pinv(j) * (j * g));
        const double pg2 = pg.squaredNorm();
        if (std::sqrt(pg2) <= cfg.stationarity_tol * s) break;
        const Vector theta = net.flatten();
        bool accepted = false;
        for (int h = 0; h < 40 && !accepted; ++h) {
          Projection trial = project(net.unflatten(theta - alpha * pg), geo, floor,
                                     cfg.constraint_tol, 50);
          const double st = trial.converged ? entropy_S(trial.net, objective)
                                            : std::numeric_limits<double>::infinity();
          if (st <= s - 1e-4 * alpha * pg2) {
            net = std::move(trial.net);
            s = st;
            accepted = true;
            alpha *= 1.5;
          } else {
            alpha *= 0.5;
          }
        }
        if (!accepted) break;
        check(step);
        rec.record(step, net);
        taken = step;
      }
      break;
    }
  }
  rec.record(taken, net, true);
  rec.trace.steps_taken = taken;
  if (cfg.checkpoint_every > 0 &&
      (rec.trace.checkpoints.empty() || rec.trace.checkpoints.back().step != taken))
    rec.trace.checkpoints.push_back({taken, net});
  return {net, rec.trace};
}

}  // namespace edln
