#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <vector>

#include "conest/constraints.hpp"
#include "conest/grid.hpp"
#include "conest/rng.hpp"

using namespace conest;

namespace {

// Order-insensitive row comparison: every row of a appears in b and vice
// versa (all rows here are distinct by construction).
bool same_row_set(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  std::vector<bool> used(static_cast<std::size_t>(b.rows()), false);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    bool found = false;
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      if (!used[static_cast<std::size_t>(j)] && (a.row(i) - b.row(j)).cwiseAbs().maxCoeff() < 1e-12) {
        used[static_cast<std::size_t>(j)] = true;
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("grid flattening runs the last factor fastest") {
  DomainGrid grid({3, 2});
  REQUIRE(grid.domains() == 6);
  REQUIRE(grid.flatten({0, 0}) == 0);
  REQUIRE(grid.flatten({0, 1}) == 1);
  REQUIRE(grid.flatten({1, 0}) == 2);
  REQUIRE(grid.flatten({2, 1}) == 5);
  REQUIRE(grid.unflatten(3) == std::vector<int>{1, 1});
  REQUIRE_THROWS_AS(grid.flatten({3, 0}), std::out_of_range);
  REQUIRE_THROWS_AS(grid.unflatten(6), std::out_of_range);
}

TEST_CASE("monotone builder emits one difference row per adjacent pair") {
  DomainGrid grid({3, 2});

  // Second factor only: one row per column pair, -1 before +1.
  const ConstraintMatrix axis1 = build_monotone(grid, {{1, Direction::increasing}});
  REQUIRE(axis1.m() == 3);
  REQUIRE(axis1.D() == 6);
  REQUIRE(axis1.certified_irreducible);
  Eigen::MatrixXd expect(3, 6);
  expect << -1, 1, 0, 0, 0, 0,
             0, 0, -1, 1, 0, 0,
             0, 0, 0, 0, -1, 1;
  REQUIRE(same_row_set(axis1.rows, expect));

  // Both factors: 4 + 3 rows, every row sums to zero with one +-1 pair.
  const ConstraintMatrix both =
      build_monotone(grid, {{0, Direction::increasing}, {1, Direction::increasing}});
  REQUIRE(both.m() == 7);
  REQUIRE(is_difference_matrix(both));
  for (Eigen::Index i = 0; i < both.rows.rows(); ++i) REQUIRE(both.rows.row(i).sum() == 0.0);

  // The same seven constraints written as explicit domain pairs.
  const ConstraintMatrix pairs = build_partial_order(
      {{0, 2}, {2, 4}, {1, 3}, {3, 5}, {0, 1}, {2, 3}, {4, 5}}, 6);
  REQUIRE(same_row_set(both.rows, pairs.rows));
}

TEST_CASE("monotone builder covers large grids and decreasing directions") {
  DomainGrid grid({6, 4});
  const ConstraintMatrix A =
      build_monotone(grid, {{0, Direction::increasing}, {1, Direction::increasing}});
  REQUIRE(A.m() == 5 * 4 + 6 * 3);
  REQUIRE(A.D() == 24);
  REQUIRE(is_difference_matrix(A));

  // Decreasing flips the signs of the same incidence rows.
  const ConstraintMatrix inc = build_monotone(grid, {{0, Direction::increasing}});
  const ConstraintMatrix dec = build_monotone(grid, {{0, Direction::decreasing}});
  REQUIRE(same_row_set(inc.rows, Eigen::MatrixXd(-dec.rows)));
}

TEST_CASE("monotone builder rejects bad requests") {
  DomainGrid grid({3, 2});
  REQUIRE_THROWS_AS(build_monotone(grid, {}), std::invalid_argument);
  REQUIRE_THROWS_AS(build_monotone(grid, {{2, Direction::increasing}}), std::invalid_argument);
  REQUIRE_THROWS_AS(
      build_monotone(grid, {{0, Direction::increasing}, {0, Direction::decreasing}}),
      std::invalid_argument);
  DomainGrid flat({1, 4});
  REQUIRE_THROWS_AS(build_monotone(flat, {{0, Direction::increasing}}), std::invalid_argument);
}

TEST_CASE("tree order compares every domain against the root") {
  const ConstraintMatrix up = build_tree_order(4, 0, TreeDirection::root_smallest);
  REQUIRE(up.m() == 3);
  REQUIRE(up.certified_irreducible);
  for (Eigen::Index i = 0; i < up.rows.rows(); ++i) {
    REQUIRE(up.rows(i, 0) == -1.0);  // theta_d - theta_root >= 0
    REQUIRE(up.rows.row(i).sum() == 0.0);
  }

  const ConstraintMatrix down = build_tree_order(4, 0, TreeDirection::root_largest);
  REQUIRE(same_row_set(down.rows, Eigen::MatrixXd(-up.rows)));

  REQUIRE_THROWS_AS(build_tree_order(1, 0, TreeDirection::root_smallest), std::invalid_argument);
  REQUIRE_THROWS_AS(build_tree_order(4, 4, TreeDirection::root_smallest), std::invalid_argument);
}

TEST_CASE("partial order builder validates its pairs") {
  REQUIRE_THROWS_AS(build_partial_order({{0, 0}}, 3), std::invalid_argument);
  REQUIRE_THROWS_AS(build_partial_order({{0, 1}, {0, 1}}, 3), std::invalid_argument);
  REQUIRE_THROWS_AS(build_partial_order({{0, 3}}, 3), std::invalid_argument);
  REQUIRE_THROWS_AS(build_partial_order({}, 3), std::invalid_argument);

  const ConstraintMatrix chain = build_partial_order({{0, 1}, {1, 2}}, 3);
  REQUIRE_FALSE(chain.certified_irreducible);  // arbitrary pair lists need the check
  REQUIRE(check_irreducible(chain).irreducible);
}

TEST_CASE("transitive edges are detected with a usable witness") {
  const ConstraintMatrix A = build_partial_order({{0, 1}, {1, 2}, {0, 2}}, 3);
  const IrreducibilityCertificate cert = check_irreducible(A);
  REQUIRE_FALSE(cert.irreducible);
  REQUIRE(cert.witness_row == 2);
  REQUIRE(cert.witness[0] == Catch::Approx(1.0).margin(1e-8));
  REQUIRE(cert.witness[1] == Catch::Approx(1.0).margin(1e-8));
  REQUIRE(cert.witness[2] == 0.0);
  REQUIRE(cert.describe().find("row 3") != std::string::npos);

  ConstraintMatrix B = A;
  REQUIRE_THROWS_AS(certify_irreducible(B), ReducibleMatrixError);
}

TEST_CASE("opposing rows put the origin in the conic hull") {
  Eigen::MatrixXd rows(2, 2);
  rows << -1, 1,
           1, -1;
  const ConstraintMatrix A = make_constraint_matrix(rows);
  const IrreducibilityCertificate cert = check_irreducible(A);
  REQUIRE_FALSE(cert.irreducible);
  REQUIRE(cert.witness_row == -1);
  REQUIRE(cert.describe().find("origin") != std::string::npos);
}

TEST_CASE("grid and tree constructions pass the irreducibility check") {
  RngStream rng(31, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const int p = 1 + static_cast<int>(rng.next_below(3));
    std::vector<int> sizes;
    for (int i = 0; i < p; ++i) sizes.push_back(2 + static_cast<int>(rng.next_below(3)));
    DomainGrid grid(sizes);
    std::vector<MonotoneAxis> axes;
    for (int i = 0; i < p; ++i)
      if (grid.size(i) >= 2 && (axes.empty() || rng.next_below(2) == 0))
        axes.push_back({i, rng.next_below(2) == 0 ? Direction::increasing : Direction::decreasing});
    if (axes.empty()) continue;
    const ConstraintMatrix A = build_monotone(grid, axes);
    REQUIRE(check_irreducible(A).irreducible);
  }
  for (int D : {2, 5, 9})
    for (int root : {0, D - 1}) {
      const ConstraintMatrix T = build_tree_order(D, root, TreeDirection::root_smallest);
      REQUIRE(check_irreducible(T).irreducible);
    }
}

TEST_CASE("irreducibility is invariant under positive column scaling") {
  RngStream rng(67, 0);
  const ConstraintMatrix good = build_partial_order({{0, 1}, {1, 2}, {2, 3}}, 4);
  const ConstraintMatrix bad = build_partial_order({{0, 1}, {1, 2}, {0, 2}}, 3);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::VectorXd dg(4), db(3);
    for (int d = 0; d < 4; ++d) dg[d] = 0.05 + 5.0 * rng.next_double();
    for (int d = 0; d < 3; ++d) db[d] = 0.05 + 5.0 * rng.next_double();
    const ConstraintMatrix g2 = make_constraint_matrix(good.rows * dg.asDiagonal());
    const ConstraintMatrix b2 = make_constraint_matrix(bad.rows * db.asDiagonal());
    REQUIRE(check_irreducible(g2).irreducible);
    REQUIRE_FALSE(check_irreducible(b2).irreducible);
  }
}

TEST_CASE("weight transform rescales columns and negates them for the polar edges") {
  Eigen::MatrixXd rows(1, 2);
  rows << -1, 1;
  const ConstraintMatrix A = make_constraint_matrix(rows);
  Eigen::VectorXd w(2);
  w << 4.0, 1.0;
  const WeightedConstraints t = transform_by_weights(A, w);
  REQUIRE(t.scaled.rows(0, 0) == Catch::Approx(-0.5).margin(1e-15));
  REQUIRE(t.scaled.rows(0, 1) == Catch::Approx(1.0).margin(1e-15));
  REQUIRE(t.polar.edges(0, 0) == Catch::Approx(0.5).margin(1e-15));
  REQUIRE(t.polar.edges(0, 1) == Catch::Approx(-1.0).margin(1e-15));

  // Undoing the scaling recovers the original matrix.
  const Eigen::MatrixXd back = t.scaled.rows * w.cwiseSqrt().asDiagonal();
  REQUIRE((back - A.rows).cwiseAbs().maxCoeff() < 1e-12);

  Eigen::VectorXd wbad(2);
  wbad << 1.0, 0.0;
  REQUIRE_THROWS_AS(transform_by_weights(A, wbad), std::invalid_argument);
}

TEST_CASE("difference-matrix detection is exact about the allowed pattern") {
  DomainGrid grid({2, 2});
  REQUIRE(is_difference_matrix(build_monotone(grid, {{0, Direction::increasing}})));
  Eigen::MatrixXd rows(1, 3);
  rows << -1, 0.5, 0.5;
  REQUIRE_FALSE(is_difference_matrix(make_constraint_matrix(rows)));
}

TEST_CASE("matrix wrapper rejects degenerate input") {
  REQUIRE_THROWS_AS(make_constraint_matrix(Eigen::MatrixXd(0, 3)), std::invalid_argument);
  REQUIRE_THROWS_AS(make_constraint_matrix(Eigen::MatrixXd::Zero(1, 1)), std::invalid_argument);
  REQUIRE_THROWS_AS(make_constraint_matrix(Eigen::MatrixXd::Zero(2, 3)), std::invalid_argument);
}
