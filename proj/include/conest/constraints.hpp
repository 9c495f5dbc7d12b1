#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "conest/grid.hpp"
#include "conest/nnls.hpp"

namespace conest {

// m x D matrix A of linear inequality constraints A theta >= 0, one row per
// constraint.  "Irreducible" means no row (and not the origin) is a
// nonnegative combination of the other rows, i.e. there is no redundant
// constraint; the projection algorithms require this because the negated
// rows must be exactly the edges of the polar cone.
struct ConstraintMatrix {
  Eigen::MatrixXd rows;              // m x D
  bool certified_irreducible = false;

  int m() const { return static_cast<int>(rows.rows()); }
  int D() const { return static_cast<int>(rows.cols()); }
};

struct IrreducibilityCertificate {
  bool irreducible = true;
  // When reducible: witness_row >= 0 identifies the redundant row, or
  // witness_row == -1 means the origin is a nonnegative combination of the
  // rows.  witness holds one coefficient per row (zero at witness_row).
  int witness_row = -2;
  Eigen::VectorXd witness;

  std::string describe() const {
    if (irreducible) return "irreducible";
    std::ostringstream os;
    if (witness_row >= 0)
      os << "row " << witness_row + 1 << " is a nonnegative combination of rows {";
    else
      os << "the origin is a nonnegative combination of rows {";
    bool first = true;
    for (Eigen::Index j = 0; j < witness.size(); ++j) {
      if (witness[j] > 1e-12) {
        if (!first) os << ", ";
        os << j + 1;
        first = false;
      }
    }
    os << "}";
    return os.str();
  }
};

class ReducibleMatrixError : public std::runtime_error {
 public:
  explicit ReducibleMatrixError(IrreducibilityCertificate cert)
      : std::runtime_error("reducible constraint matrix: " + cert.describe()),
        certificate(std::move(cert)) {}
  IrreducibilityCertificate certificate;
};

namespace detail {

inline void require_valid_rows(const Eigen::MatrixXd& rows) {
  if (rows.rows() < 1) throw std::invalid_argument("constraint matrix needs at least one row");
  if (rows.cols() < 2) throw std::invalid_argument("constraint matrix needs at least two domains");
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    if (rows.row(i).cwiseAbs().maxCoeff() == 0.0)
      throw std::invalid_argument("constraint row " + std::to_string(i + 1) + " is all zeros");
}

}  // namespace detail

// Wrap a caller-supplied matrix; validates shape but certifies nothing.
inline ConstraintMatrix make_constraint_matrix(Eigen::MatrixXd rows) {
  detail::require_valid_rows(rows);
  return ConstraintMatrix{std::move(rows), false};
}

enum class Direction { increasing, decreasing };

struct MonotoneAxis {
  int axis = 0;  // 0-based factor index
  Direction direction = Direction::increasing;
};

// One row per adjacent level pair along each requested axis, holding every
// other factor fixed.  Rows have a single -1 and a single +1 (increasing:
// -1 at the lower level).  The rows are the incidence vectors of adjacent
// grid steps, which never admit an alternative directed path, so the result
// is irreducible by construction.
inline ConstraintMatrix build_monotone(const DomainGrid& grid, const std::vector<MonotoneAxis>& axes) {
  if (axes.empty()) throw std::invalid_argument("no constraints requested");
  std::set<int> seen;
  int m = 0;
  for (const auto& ax : axes) {
    if (ax.axis < 0 || ax.axis >= grid.factors())
      throw std::invalid_argument("monotone axis out of range");
    if (!seen.insert(ax.axis).second)
      throw std::invalid_argument("monotone axis listed twice");
    if (grid.size(ax.axis) < 2)
      throw std::invalid_argument("monotone axis needs at least two levels");
    int others = grid.domains() / grid.size(ax.axis);
    m += (grid.size(ax.axis) - 1) * others;
  }

  Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(m, grid.domains());
  int r = 0;
  for (const auto& ax : axes) {
    // Iterate over all level tuples; emit a row when the tuple has room to
    // step up along the monotone axis.
    for (int d = 0; d < grid.domains(); ++d) {
      std::vector<int> tup = grid.unflatten(d);
      if (tup[static_cast<std::size_t>(ax.axis)] + 1 >= grid.size(ax.axis)) continue;
      std::vector<int> up = tup;
      up[static_cast<std::size_t>(ax.axis)] += 1;
      const int lo = d;
      const int hi = grid.flatten(up);
      if (ax.direction == Direction::increasing) {
        rows(r, lo) = -1.0;
        rows(r, hi) = 1.0;
      } else {
        rows(r, lo) = 1.0;
        rows(r, hi) = -1.0;
      }
      ++r;
    }
  }
  ConstraintMatrix out{std::move(rows), true};
  detail::require_valid_rows(out.rows);
  return out;
}

enum class TreeDirection { root_smallest, root_largest };

// Star-shaped order comparing one root domain against every other domain:
// D-1 rows, each +-1 at the root and the complementary sign at the leaf.
inline ConstraintMatrix build_tree_order(int D, int root, TreeDirection direction) {
  if (D < 2) throw std::invalid_argument("tree order needs at least two domains");
  if (root < 0 || root >= D) throw std::invalid_argument("tree root out of range");
  Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(D - 1, D);
  int r = 0;
  for (int d = 0; d < D; ++d) {
    if (d == root) continue;
    if (direction == TreeDirection::root_smallest) {
      rows(r, root) = -1.0;
      rows(r, d) = 1.0;
    } else {
      rows(r, root) = 1.0;
      rows(r, d) = -1.0;
    }
    ++r;
  }
  return ConstraintMatrix{std::move(rows), true};
}

// One row per (lower, upper) pair: -1 at lower, +1 at upper.  Duplicates are
// rejected because a repeated row is always redundant.  The result is NOT
// certified: a pair list may contain transitive edges (1<2, 2<3, 1<3) that
// make the matrix reducible, so callers must run certify_irreducible.
inline ConstraintMatrix build_partial_order(const std::vector<std::pair<int, int>>& pairs, int D) {
  if (pairs.empty()) throw std::invalid_argument("no constraints requested");
  if (D < 2) throw std::invalid_argument("partial order needs at least two domains");
  std::set<std::pair<int, int>> seen;
  Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(pairs.size()), D);
  int r = 0;
  for (const auto& [lo, hi] : pairs) {
    if (lo < 0 || lo >= D || hi < 0 || hi >= D)
      throw std::invalid_argument("order pair index out of range");
    if (lo == hi) throw std::invalid_argument("order pair compares a domain with itself");
    if (!seen.insert({lo, hi}).second)
      throw std::invalid_argument("duplicate order pair");
    rows(r, lo) = -1.0;
    rows(r, hi) = 1.0;
    ++r;
  }
  return ConstraintMatrix{std::move(rows), false};
}

// Decides, row by row, whether some row is a nonnegative combination of the
// others, and whether the origin is a nonnegative combination of all rows
// (coefficients normalized to sum to one to exclude the zero solution).
// Each question is a nonnegative least-squares fit; a fit counts as exact
// when the residual is below 1e-8 * (1 + ||target||).
inline IrreducibilityCertificate check_irreducible(const ConstraintMatrix& A) {
  const int m = A.m();
  const int D = A.D();
  IrreducibilityCertificate cert;

  for (int i = 0; i < m; ++i) {
    if (m == 1) break;
    Eigen::MatrixXd M(D, m - 1);
    int c = 0;
    for (int j = 0; j < m; ++j) {
      if (j == i) continue;
      M.col(c++) = A.rows.row(j).transpose();
    }
    const Eigen::VectorXd target = A.rows.row(i).transpose();
    NnlsResult fit = nnls(M, target);
    if (fit.residual_norm < 1e-8 * (1.0 + target.norm())) {
      cert.irreducible = false;
      cert.witness_row = i;
      cert.witness = Eigen::VectorXd::Zero(m);
      c = 0;
      for (int j = 0; j < m; ++j) {
        if (j == i) continue;
        cert.witness[j] = fit.coefficients[c++];
      }
      return cert;
    }
  }

  // Origin test: minimize ||sum_j a_j row_j|| subject to a >= 0 and
  // sum a_j = 1 (appended as an extra equation).
  {
    Eigen::MatrixXd M(D + 1, m);
    M.topRows(D) = A.rows.transpose();
    M.bottomRows(1).setOnes();
    Eigen::VectorXd target = Eigen::VectorXd::Zero(D + 1);
    target[D] = 1.0;
    double scale = 0.0;
    for (int j = 0; j < m; ++j) scale = std::max(scale, A.rows.row(j).norm());
    NnlsResult fit = nnls(M, target);
    const double combo_norm = (A.rows.transpose() * fit.coefficients).norm();
    const double sum_gap = std::abs(fit.coefficients.sum() - 1.0);
    if (combo_norm < 1e-8 * (1.0 + scale) && sum_gap < 1e-8) {
      cert.irreducible = false;
      cert.witness_row = -1;
      cert.witness = fit.coefficients;
      return cert;
    }
  }

  cert.witness_row = -2;
  return cert;
}

// Runs the check and records the result on the matrix; throws with the
// witness when the matrix is reducible.
inline void certify_irreducible(ConstraintMatrix& A) {
  if (A.certified_irreducible) return;
  IrreducibilityCertificate cert = check_irreducible(A);
  if (!cert.irreducible) throw ReducibleMatrixError(std::move(cert));
  A.certified_irreducible = true;
}

// Edges of the polar cone of {x : A_s x >= 0}: the negated rows of the
// weight-transformed matrix.
struct PolarEdgeSet {
  Eigen::MatrixXd edges;  // m x D, row j = gamma_j = -(A_s row j)

  int m() const { return static_cast<int>(edges.rows()); }
  int D() const { return static_cast<int>(edges.cols()); }

  // D x |J| matrix whose columns are the selected edges.
  Eigen::MatrixXd columns(const std::vector<int>& J) const {
    Eigen::MatrixXd V(edges.cols(), static_cast<Eigen::Index>(J.size()));
    for (std::size_t c = 0; c < J.size(); ++c)
      V.col(static_cast<Eigen::Index>(c)) = edges.row(J[c]).transpose();
    return V;
  }
};

struct WeightedConstraints {
  ConstraintMatrix scaled;  // A_s = A diag(weights)^(-1/2)
  PolarEdgeSet polar;
};

// Rescales constraint columns by the inverse square roots of the weights and
// derives the polar edges.  Column scaling by a positive diagonal preserves
// irreducibility, so the certification flag carries over.
inline WeightedConstraints transform_by_weights(const ConstraintMatrix& A, const Eigen::VectorXd& weights) {
  if (weights.size() != A.D()) throw std::invalid_argument("weight vector length mismatch");
  for (Eigen::Index d = 0; d < weights.size(); ++d)
    if (!(weights[d] > 0.0)) throw std::invalid_argument("weights must be strictly positive");
  WeightedConstraints out;
  out.scaled.rows = A.rows * weights.cwiseSqrt().cwiseInverse().asDiagonal();
  out.scaled.certified_irreducible = A.certified_irreducible;
  out.polar.edges = -out.scaled.rows;
  return out;
}

// True when every row has exactly one +1 and one -1 entry (and zeros
// elsewhere): the form produced by the order builders, for which a binding
// row pools two domains to a common value.
inline bool is_difference_matrix(const ConstraintMatrix& A) {
  for (int i = 0; i < A.m(); ++i) {
    int plus = 0, minus = 0;
    for (int d = 0; d < A.D(); ++d) {
      const double v = A.rows(i, d);
      if (v == 0.0) continue;
      if (std::abs(v - 1.0) < 1e-12)
        ++plus;
      else if (std::abs(v + 1.0) < 1e-12)
        ++minus;
      else
        return false;
    }
    if (plus != 1 || minus != 1) return false;
  }
  return true;
}

}  // namespace conest
