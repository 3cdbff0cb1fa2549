#pragma once

// Reference computations shared by the unit and acceptance tests.

#include "edln/objectives.hpp"

namespace edln::oracle {

// Dense Hessian of L by second differences of the loss itself.
inline Matrix dense_hessian(const EdlnNetwork& net, const Expectation& ex, double h = 1e-4) {
  const Vector theta = net.flatten();
  const Eigen::Index n = theta.size();
  auto f = [&](const Vector& t) { return empirical_loss(net.unflatten(t), ex); };
  Matrix hess(n, n);
  const double f0 = f(theta);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index k = j; k < n; ++k) {
      Vector t = theta;
      double value;
      if (j == k) {
        t(j) += h;
        const double up = f(t);
        t(j) -= 2 * h;
        const double down = f(t);
        value = (up - 2 * f0 + down) / (h * h);
      } else {
        t(j) += h; t(k) += h;
        const double pp = f(t);
        t(k) -= 2 * h;
        const double pm = f(t);
        t(j) -= 2 * h;
        const double mm = f(t);
        t(k) += 2 * h;
        const double mp = f(t);
        value = (pp - pm - mp + mm) / (4 * h * h);
      }
      hess(j, k) = hess(k, j) = value;
    }
  }
  return hess;
}

inline double top_eigenvalue(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (sym + sym.transpose()));
  return es.eigenvalues().maxCoeff();
}

}  // namespace edln::oracle
