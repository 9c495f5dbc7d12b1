#pragma once

#include <Eigen/Dense>
#include <limits>
#include <stdexcept>
#include <vector>

namespace conest {

struct NnlsResult {
  Eigen::VectorXd coefficients;  // a >= 0 minimizing ||M a - b||
  double residual_norm = 0.0;
  int iterations = 0;
};

// Nonnegative least squares by the active-set method of Lawson & Hanson.
// Columns of M are the candidate directions; returns a >= 0 minimizing
// ||M a - b||_2.  Ties in the entering/leaving choices go to the smallest
// index so the iteration cannot cycle.
inline NnlsResult nnls(const Eigen::MatrixXd& M, const Eigen::VectorXd& b, int max_iter = 0) {
  const Eigen::Index n = M.cols();
  if (M.rows() != b.size()) throw std::invalid_argument("nnls: dimension mismatch");
  if (max_iter <= 0) max_iter = 30 * static_cast<int>(n) + 100;

  NnlsResult out;
  out.coefficients = Eigen::VectorXd::Zero(n);
  std::vector<bool> passive(static_cast<std::size_t>(n), false);

  Eigen::VectorXd resid = b;
  const double grad_tol = 1e-12 * (1.0 + (M.transpose() * b).cwiseAbs().maxCoeff());

  auto solve_passive = [&](Eigen::VectorXd& s) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < n; ++j)
      if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
    s.setZero(n);
    if (idx.empty()) return;
    Eigen::MatrixXd Mp(M.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) Mp.col(static_cast<Eigen::Index>(c)) = M.col(idx[c]);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Mp);
    qr.setThreshold(1e-10);
    Eigen::VectorXd sp = qr.solve(b);
    for (std::size_t c = 0; c < idx.size(); ++c) s[idx[c]] = sp[static_cast<Eigen::Index>(c)];
  };

  while (out.iterations < max_iter) {
    // Pick the most improving inactive column; stop at stationarity.
    Eigen::VectorXd grad = M.transpose() * resid;
    Eigen::Index best = -1;
    double best_val = grad_tol;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!passive[static_cast<std::size_t>(j)] && grad[j] > best_val) {
        best_val = grad[j];
        best = j;
      }
    }
    if (best < 0) break;
    passive[static_cast<std::size_t>(best)] = true;

    Eigen::VectorXd s;
    solve_passive(s);
    // Walk back toward the previous iterate until the trial point is
    // nonnegative, deactivating the columns pinned at zero.
    while (true) {
      ++out.iterations;
      if (out.iterations > max_iter) break;
      double alpha = 1.0;
      Eigen::Index blocker = -1;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (!passive[static_cast<std::size_t>(j)] || s[j] > 0.0) continue;
        const double denom = out.coefficients[j] - s[j];
        const double step = denom > 0.0 ? out.coefficients[j] / denom : 0.0;
        if (step < alpha) {
          alpha = step;
          blocker = j;
        }
      }
      if (blocker < 0) {
        out.coefficients = s;
        break;
      }
      out.coefficients += alpha * (s - out.coefficients);
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[static_cast<std::size_t>(j)] && out.coefficients[j] <= 1e-14) {
          out.coefficients[j] = 0.0;
          passive[static_cast<std::size_t>(j)] = false;
        }
      }
      solve_passive(s);
    }
    resid = b - M * out.coefficients;
  }

  out.residual_norm = resid.norm();
  return out;
}

}  // namespace conest
