#pragma once

// Small dense Levenberg-Marquardt solver with Marquardt diagonal scaling.
// The caller supplies residuals r(p) and the Jacobian dr/dp.

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace modeheat {

struct LmOptions {
  int max_iterations = 200;
  double step_tolerance = 1e-8;  // relative parameter step
  double initial_lambda = 1e-3;
};

struct LmResult {
  Eigen::VectorXd params;
  Eigen::MatrixXd covariance;  // sigma^2 (J^T J)^-1 at the solution
  double ssr = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// `model(p, r, j)` fills residuals r (size m) and Jacobian j (m x n).
template <class Model>
LmResult levenberg_marquardt(Model&& model, Eigen::VectorXd p, Eigen::Index m, const LmOptions& opt = {}) {
  const Eigen::Index n = p.size();
  Eigen::VectorXd r(m);
  Eigen::MatrixXd j(m, n);
  model(p, r, j);
  double ssr = r.squaredNorm();
  double lambda = opt.initial_lambda;

  LmResult out;
  for (int it = 1; it <= opt.max_iterations; ++it) {
    out.iterations = it;
    const Eigen::MatrixXd jtj = j.transpose() * j;
    const Eigen::VectorXd g = j.transpose() * r;
    Eigen::VectorXd diag = jtj.diagonal().cwiseMax(1e-300);

    bool accepted = false;
    Eigen::VectorXd step;
    for (int tries = 0; tries < 40; ++tries) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * diag;
      step = a.ldlt().solve(-g);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::VectorXd trial = p + step;
      Eigen::VectorXd r_trial(m);
      Eigen::MatrixXd j_trial(m, n);
      model(trial, r_trial, j_trial);
      const double ssr_trial = r_trial.squaredNorm();
      if (std::isfinite(ssr_trial) && ssr_trial <= ssr) {
        p = trial;
        r = r_trial;
        j = j_trial;
        ssr = ssr_trial;
        lambda = std::max(lambda / 10.0, 1e-15);
        accepted = true;
        break;
      }
      lambda *= 10.0;
    }
    double rel = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      rel = std::max(rel, std::abs(step(k)) / (std::abs(p(k)) + opt.step_tolerance));
    }
    if (!accepted || rel < opt.step_tolerance) {
      out.converged = accepted || ssr == 0.0 || rel < opt.step_tolerance;
      break;
    }
  }
  out.params = p;
  out.ssr = ssr;
  const double dof = static_cast<double>(std::max<Eigen::Index>(1, m - n));
  const Eigen::MatrixXd jtj = j.transpose() * j;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(jtj);
  out.covariance = (ssr / dof) * cod.pseudoInverse();
  return out;
}

}  // namespace modeheat
