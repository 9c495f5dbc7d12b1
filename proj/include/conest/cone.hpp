#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <stdexcept>
#include <vector>

#include "conest/constraints.hpp"
#include "conest/nnls.hpp"

namespace conest {

// Outcome of projecting a vector z onto the polar cone spanned by a set of
// edges.  phi + rho recovers z (Moreau decomposition: the projection onto a
// closed convex cone plus the projection onto its polar).
struct ConeProjectionResult {
  Eigen::VectorXd phi;           // projection onto the constraint cone
  Eigen::VectorXd rho;           // projection onto the polar cone
  std::vector<int> face;         // sorted edge indices J whose span carries rho
  Eigen::VectorXd coefficients;  // nonnegative weights, one per face entry
  int iterations = 0;
};

namespace detail {

// Least-squares fit of z on the span of the selected edges; rho is the
// orthogonal projection, coef the fitted weights.  Rank decisions use a
// relative threshold of 1e-10 because dependent edge subsets are routine.
inline void fit_on_span(const Eigen::VectorXd& z, const PolarEdgeSet& edges,
                        const std::vector<int>& J, Eigen::VectorXd& coef, Eigen::VectorXd& rho) {
  if (J.empty()) {
    coef.resize(0);
    rho = Eigen::VectorXd::Zero(z.size());
    return;
  }
  Eigen::MatrixXd V = edges.columns(J);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(V);
  qr.setThreshold(1e-10);
  coef = qr.solve(z);
  rho = V * coef;
}

inline int rank_of(const Eigen::MatrixXd& M) {
  if (M.cols() == 0) return 0;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
  qr.setThreshold(1e-10);
  return static_cast<int>(qr.rank());
}

}  // namespace detail

// Projects z onto the polar cone generated by the edges, by active-set
// iteration: repeatedly bring in the edge with the largest normalized
// correlation to the current residual, refit on the span of the active set,
// and drop edges whose fitted weight turns negative.  Ties in both choices
// go to the smallest index, which rules out cycling; the iteration guard
// exists only as a hard backstop.
inline ConeProjectionResult project_polar(const Eigen::VectorXd& z, const PolarEdgeSet& edges) {
  const int m = edges.m();
  const int D = edges.D();
  if (m < 1) throw std::invalid_argument("project_polar: no edges");
  if (z.size() != D) throw std::invalid_argument("project_polar: dimension mismatch");

  Eigen::VectorXd enorm(m);
  for (int j = 0; j < m; ++j) {
    enorm[j] = edges.edges.row(j).norm();
    if (enorm[j] == 0.0) throw std::invalid_argument("project_polar: zero edge");
  }

  const double coef_tol = 1e-10;
  const double add_tol = 1e-10 * (1.0 + z.norm());
  const int guard = 4 * m * D;

  std::vector<int> J;
  Eigen::VectorXd coef;
  Eigen::VectorXd rho = Eigen::VectorXd::Zero(D);
  int iterations = 0;

  while (true) {
    // Entering edge: largest normalized inner product with the residual.
    const Eigen::VectorXd resid = z - rho;
    int best = -1;
    double best_score = add_tol;
    for (int j = 0; j < m; ++j) {
      if (std::binary_search(J.begin(), J.end(), j)) continue;
      const double score = edges.edges.row(j).dot(resid) / enorm[j];
      if (score > best_score) {
        best_score = score;
        best = j;
      }
    }
    if (best < 0) break;
    J.insert(std::upper_bound(J.begin(), J.end(), best), best);

    // Refit, dropping the most negative weight until none remain.
    while (true) {
      if (++iterations > guard) throw std::runtime_error("cycling detected");
      detail::fit_on_span(z, edges, J, coef, rho);
      int worst = -1;
      double worst_val = -coef_tol;
      for (std::size_t c = 0; c < J.size(); ++c) {
        if (coef[static_cast<Eigen::Index>(c)] < worst_val) {
          worst_val = coef[static_cast<Eigen::Index>(c)];
          worst = static_cast<int>(c);
        }
      }
      if (worst < 0) break;
      J.erase(J.begin() + worst);
    }
  }

  ConeProjectionResult out;
  out.face = std::move(J);
  out.coefficients = coef.cwiseMax(0.0);  // zero out tolerated -1e-10 noise
  out.rho = rho;
  out.phi = z - rho;
  out.iterations = iterations;
  return out;
}

struct ConeFitResult {
  Eigen::VectorXd theta;             // constrained estimate on the original scale
  ConeProjectionResult projection;   // in the weight-transformed coordinates
  WeightedConstraints transformed;   // scaled matrix and polar edges used
};

// Weighted least-squares projection onto {theta : A theta >= 0}: transform by
// the weights, project the transformed vector via the polar cone, and map
// back.  theta minimizes sum_d w_d (y_d - theta_d)^2 over the feasible set.
inline ConeFitResult project_cone(const Eigen::VectorXd& y_tilde, const Eigen::VectorXd& weights,
                                  const ConstraintMatrix& A) {
  if (!A.certified_irreducible)
    throw std::invalid_argument("project_cone: constraint matrix must be certified irreducible");
  if (y_tilde.size() != A.D()) throw std::invalid_argument("project_cone: dimension mismatch");
  ConeFitResult out;
  out.transformed = transform_by_weights(A, weights);
  const Eigen::VectorXd root_w = weights.cwiseSqrt();
  const Eigen::VectorXd z = root_w.cwiseProduct(y_tilde);
  out.projection = project_polar(z, out.transformed.polar);
  out.theta = out.projection.phi.cwiseQuotient(root_w);
  return out;
}

// Shrinks a valid face J to a subset J* whose edges are linearly independent
// while spanning the same linear space and still expressing the polar
// projection with nonnegative weights.  Procedure: express rho on J with
// nonnegative weights, then repeatedly cancel a dependency sum_j b_j gamma_j
// = 0 by shifting weight along b until some index hits zero and can be
// removed; finally pad with unused indices from J until the span is restored.
inline std::vector<int> reduce_face(const std::vector<int>& J, const PolarEdgeSet& edges,
                                    const Eigen::VectorXd& z) {
  if (J.empty()) return {};
  std::vector<int> sorted = J;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (int j : sorted)
    if (j < 0 || j >= edges.m()) throw std::invalid_argument("reduce_face: edge index out of range");

  // The face is valid iff the span projection satisfies the polar-cone
  // optimality conditions and lies in the cone generated by the face edges.
  Eigen::VectorXd fit_coef, rho;
  detail::fit_on_span(z, edges, sorted, fit_coef, rho);
  const double tol = 1e-8 * (1.0 + z.norm());
  const Eigen::VectorXd resid = z - rho;
  for (int j = 0; j < edges.m(); ++j) {
    const double score = edges.edges.row(j).dot(resid) / edges.edges.row(j).norm();
    if (score > tol) throw std::invalid_argument("not a valid face");
  }
  Eigen::MatrixXd V = edges.columns(sorted);
  NnlsResult membership = nnls(V, rho);
  if (membership.residual_norm > 1e-8 * (1.0 + rho.norm()))
    throw std::invalid_argument("not a valid face");

  const int target_rank = detail::rank_of(V);
  std::vector<int> keep = sorted;
  Eigen::VectorXd a = membership.coefficients;

  // Cancel dependencies until the kept edges are linearly independent.
  while (static_cast<int>(keep.size()) > detail::rank_of(edges.columns(keep))) {
    Eigen::MatrixXd Vk = edges.columns(keep);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(Vk);
    lu.setThreshold(1e-10);
    Eigen::VectorXd b = lu.kernel().col(0);
    if (b.maxCoeff() <= 0.0) b = -b;
    int drop = -1;
    double best_ratio = 0.0;
    for (Eigen::Index c = 0; c < b.size(); ++c) {
      if (b[c] <= 1e-12) continue;
      const double ratio = a[c] / b[c];
      if (drop < 0 || ratio < best_ratio) {
        best_ratio = ratio;
        drop = static_cast<int>(c);
      }
    }
    if (drop < 0) break;  // numerically independent after all
    a -= best_ratio * b;
    Eigen::VectorXd a_next(a.size() - 1);
    std::vector<int> keep_next;
    keep_next.reserve(keep.size() - 1);
    Eigen::Index w = 0;
    for (Eigen::Index c = 0; c < a.size(); ++c) {
      if (static_cast<int>(c) == drop) continue;
      a_next[w++] = std::max(a[c], 0.0);
      keep_next.push_back(keep[static_cast<std::size_t>(c)]);
    }
    a = std::move(a_next);
    keep = std::move(keep_next);
  }

  // Pad with zero-weight edges from J until the original span is recovered.
  int rank = detail::rank_of(edges.columns(keep));
  for (int j : sorted) {
    if (rank == target_rank) break;
    if (std::binary_search(keep.begin(), keep.end(), j)) continue;
    std::vector<int> trial = keep;
    trial.insert(std::upper_bound(trial.begin(), trial.end(), j), j);
    const int trial_rank = detail::rank_of(edges.columns(trial));
    if (trial_rank > rank) {
      keep = std::move(trial);
      rank = trial_rank;
    }
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

// Exhaustive reference for the polar projection: tries every subset of the
// edges, projects onto its span, and keeps the subsets that satisfy the
// optimality conditions with the projection inside the subset's cone.  Cost
// is exponential in the number of edges, hence the hard cap; intended for
// cross-checking the active-set path in tests.
struct FaceEnumeration {
  ConeProjectionResult best;                  // from the first valid subset
  std::vector<std::vector<int>> valid_faces;  // every subset that certifies
};

inline FaceEnumeration enumerate_faces_oracle(const Eigen::VectorXd& z, const PolarEdgeSet& edges) {
  const int m = edges.m();
  if (m > 20) throw std::invalid_argument("face enumeration limited to 20 edges");
  if (z.size() != edges.D()) throw std::invalid_argument("dimension mismatch");

  Eigen::VectorXd enorm(m);
  for (int j = 0; j < m; ++j) enorm[j] = edges.edges.row(j).norm();
  const double tol = 1e-9 * (1.0 + z.norm());

  FaceEnumeration out;
  bool have_best = false;
  for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
    std::vector<int> J;
    for (int j = 0; j < m; ++j)
      if (mask & (1u << j)) J.push_back(j);

    Eigen::VectorXd coef, rho;
    detail::fit_on_span(z, edges, J, coef, rho);
    const Eigen::VectorXd resid = z - rho;
    bool ok = true;
    for (int j = 0; j < m && ok; ++j)
      if (edges.edges.row(j).dot(resid) / enorm[j] > tol) ok = false;
    if (!ok) continue;

    Eigen::VectorXd nonneg = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(J.size()));
    if (!J.empty()) {
      NnlsResult fit = nnls(edges.columns(J), rho);
      if (fit.residual_norm > tol * (1.0 + rho.norm())) continue;
      nonneg = fit.coefficients;
    } else if (rho.norm() > tol) {
      continue;
    }

    out.valid_faces.push_back(J);
    if (!have_best) {
      out.best.face = J;
      out.best.coefficients = nonneg;
      out.best.rho = rho;
      out.best.phi = z - rho;
      out.best.iterations = static_cast<int>(mask) + 1;
      have_best = true;
    }
  }
  if (!have_best) throw std::runtime_error("face enumeration found no certified subset");
  return out;
}

}  // namespace conest
