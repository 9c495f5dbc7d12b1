#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "conest/cone.hpp"
#include "conest/constraints.hpp"

namespace conest {

class EmptyDomainError : public std::runtime_error {
 public:
  explicit EmptyDomainError(int domain0)
      : std::runtime_error("domain " + std::to_string(domain0 + 1) + " has no sampled units"),
        domain(domain0) {}
  EmptyDomainError(int domain0, const std::string& message)
      : std::runtime_error(message), domain(domain0) {}
  int domain;  // 0-based
};

// Unit-level sample: outcomes, inclusion probabilities, domain membership,
// and optionally stratum labels and pairwise inclusion probabilities.
struct SampleData {
  Eigen::VectorXd y;
  Eigen::VectorXd pi;
  std::vector<int> domain;   // 0-based, one per unit
  std::vector<int> stratum;  // empty, or 0-based label per unit
  std::map<std::pair<int, int>, double> joint_pi;  // key (k,l) with k <= l

  int n() const { return static_cast<int>(y.size()); }

  void validate(int D) const {
    const int nn = n();
    if (pi.size() != nn || static_cast<int>(domain.size()) != nn)
      throw std::invalid_argument("sample columns have mismatched lengths");
    if (!stratum.empty() && static_cast<int>(stratum.size()) != nn)
      throw std::invalid_argument("stratum column has mismatched length");
    for (int k = 0; k < nn; ++k) {
      if (!(pi[k] > 0.0) || pi[k] > 1.0)
        throw std::invalid_argument("inclusion probability out of (0,1] at unit " + std::to_string(k + 1));
      if (domain[k] < 0 || domain[k] >= D)
        throw std::invalid_argument("domain index out of range at unit " + std::to_string(k + 1));
    }
    for (const auto& [key, p] : joint_pi) {
      if (key.first > key.second) throw std::invalid_argument("joint probability keys must be ordered");
      if (!(p > 0.0)) throw std::invalid_argument("joint probabilities must be positive");
    }
  }

  // Symmetric lookup; diagonal falls back to pi.
  std::optional<double> joint(int k, int l) const {
    if (k == l) return pi[k];
    if (k > l) std::swap(k, l);
    auto it = joint_pi.find({k, l});
    if (it == joint_pi.end()) return std::nullopt;
    return it->second;
  }
};

// Per-domain inverse-probability totals and means.
struct DomainEstimates {
  Eigen::VectorXd t_hat;   // estimated domain totals, sum y_k/pi_k
  Eigen::VectorXd n_hat;   // estimated domain sizes, sum 1/pi_k
  Eigen::VectorXd hajek;   // t_hat / n_hat
  std::vector<int> count;  // sampled units per domain
  std::optional<Eigen::VectorXd> ht_mean;  // t_hat / N_d when sizes are known
};

inline DomainEstimates domain_estimates(const SampleData& s, int D,
                                        const std::optional<Eigen::VectorXd>& N_d = std::nullopt) {
  s.validate(D);
  DomainEstimates out;
  out.t_hat = Eigen::VectorXd::Zero(D);
  out.n_hat = Eigen::VectorXd::Zero(D);
  out.count.assign(static_cast<std::size_t>(D), 0);
  for (int k = 0; k < s.n(); ++k) {
    const int d = s.domain[k];
    out.t_hat[d] += s.y[k] / s.pi[k];
    out.n_hat[d] += 1.0 / s.pi[k];
    ++out.count[static_cast<std::size_t>(d)];
  }
  for (int d = 0; d < D; ++d)
    if (out.count[static_cast<std::size_t>(d)] == 0) throw EmptyDomainError(d);
  out.hajek = out.t_hat.cwiseQuotient(out.n_hat);
  if (N_d) {
    if (N_d->size() != D) throw std::invalid_argument("population size vector length mismatch");
    out.ht_mean = out.t_hat.cwiseQuotient(*N_d);
  }
  return out;
}

// Same totals computed from explicit weights (replicate weights are not
// inclusion probabilities, so they enter directly as w_k).
inline DomainEstimates domain_estimates_weighted(const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                                 const std::vector<int>& domain, int D) {
  if (y.size() != w.size() || static_cast<int>(domain.size()) != y.size())
    throw std::invalid_argument("weighted estimate inputs have mismatched lengths");
  DomainEstimates out;
  out.t_hat = Eigen::VectorXd::Zero(D);
  out.n_hat = Eigen::VectorXd::Zero(D);
  out.count.assign(static_cast<std::size_t>(D), 0);
  for (Eigen::Index k = 0; k < y.size(); ++k) {
    const int d = domain[static_cast<std::size_t>(k)];
    if (d < 0 || d >= D) throw std::invalid_argument("domain index out of range");
    if (!(w[k] > 0.0)) throw std::invalid_argument("weights must be strictly positive");
    out.t_hat[d] += w[k] * y[k];
    out.n_hat[d] += w[k];
    ++out.count[static_cast<std::size_t>(d)];
  }
  for (int d = 0; d < D; ++d)
    if (out.count[static_cast<std::size_t>(d)] == 0) throw EmptyDomainError(d);
  out.hajek = out.t_hat.cwiseQuotient(out.n_hat);
  return out;
}

struct ConstrainedEstimate {
  Eigen::VectorXd theta;
  std::vector<int> face;             // reduced to a linearly independent set
  Eigen::VectorXd weights_used;      // n_hat / sum(n_hat)
  std::optional<std::vector<int>> pooled_blocks;  // 0-based block id per domain
};

namespace detail {

// Connected components of domains linked by binding constraint rows; only
// meaningful when every row is a +1/-1 difference, where a binding row means
// the two domains share a value.
inline std::vector<int> pooled_blocks(const ConstraintMatrix& A, const Eigen::VectorXd& theta) {
  const int D = A.D();
  std::vector<int> parent(static_cast<std::size_t>(D));
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  const double tol = 1e-8 * (1.0 + theta.norm());
  for (int i = 0; i < A.m(); ++i) {
    if (std::abs(A.rows.row(i).dot(theta)) >= tol) continue;
    int lo = -1, hi = -1;
    for (int d = 0; d < D; ++d) {
      if (A.rows(i, d) < 0.0) lo = d;
      if (A.rows(i, d) > 0.0) hi = d;
    }
    const int a = find(lo), b = find(hi);
    if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
  }
  std::vector<int> block(static_cast<std::size_t>(D), -1);
  int next = 0;
  for (int d = 0; d < D; ++d) {
    const int r = find(d);
    if (block[static_cast<std::size_t>(r)] < 0) block[static_cast<std::size_t>(r)] = next++;
    block[static_cast<std::size_t>(d)] = block[static_cast<std::size_t>(r)];
  }
  return block;
}

}  // namespace detail

// Weighted projection of the Hajek vector onto {theta : A theta >= 0} with
// weights n_hat_d / n_hat.  An already-feasible vector is returned untouched
// (exact comparison, no projection round-off); otherwise the face reported
// by the active set is reduced to a linearly independent subset.
inline ConstrainedEstimate constrained_estimate(const DomainEstimates& est, const ConstraintMatrix& A) {
  if (!A.certified_irreducible)
    throw std::invalid_argument("constrained_estimate: constraint matrix must be certified irreducible");
  if (est.hajek.size() != A.D())
    throw std::invalid_argument("constrained_estimate: dimension mismatch");

  ConstrainedEstimate out;
  out.weights_used = est.n_hat / est.n_hat.sum();

  const Eigen::VectorXd slack = A.rows * est.hajek;
  if ((slack.array() >= 0.0).all()) {
    out.theta = est.hajek;
    out.face = {};
  } else {
    ConeFitResult fit = project_cone(est.hajek, out.weights_used, A);
    const Eigen::VectorXd z = out.weights_used.cwiseSqrt().cwiseProduct(est.hajek);
    out.theta = fit.theta;
    out.face = reduce_face(fit.projection.face, fit.transformed.polar, z);
  }

  if (is_difference_matrix(A)) out.pooled_blocks = detail::pooled_blocks(A, out.theta);
  return out;
}

// Closed form for the constrained estimator under a partial order: for each
// domain, the maximum over upper sets containing it of the minimum over
// lower sets containing it of the weighted mean over the intersection.
// Exponential in D, so capped; serves as an independent reference for the
// projection path.
inline Eigen::VectorXd maxmin_estimate(const DomainEstimates& est,
                                       const std::vector<std::pair<int, int>>& order) {
  const int D = static_cast<int>(est.hajek.size());
  if (D > 12) throw std::invalid_argument("max-min enumeration limited to 12 domains");
  if (order.empty()) return est.hajek;

  // Transitive closure; reject cycles.
  std::vector<std::uint32_t> above(static_cast<std::size_t>(D), 0);  // above[l] = set of u with l <= u
  for (const auto& [lo, hi] : order) {
    if (lo < 0 || lo >= D || hi < 0 || hi >= D || lo == hi)
      throw std::invalid_argument("order pair out of range");
    above[static_cast<std::size_t>(lo)] |= (1u << hi);
  }
  for (int k = 0; k < D; ++k)
    for (int i = 0; i < D; ++i)
      if (above[static_cast<std::size_t>(i)] & (1u << k))
        above[static_cast<std::size_t>(i)] |= above[static_cast<std::size_t>(k)];
  std::vector<std::uint32_t> below(static_cast<std::size_t>(D), 0);
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j)
      if (above[static_cast<std::size_t>(i)] & (1u << j)) {
        if (above[static_cast<std::size_t>(j)] & (1u << i))
          throw std::invalid_argument("cyclic order");
        below[static_cast<std::size_t>(j)] |= (1u << i);
      }

  const std::uint32_t full = (D == 32) ? 0xffffffffu : ((1u << D) - 1u);
  // Subset sums of n_hat and n_hat*hajek over every domain subset.
  std::vector<double> sn(static_cast<std::size_t>(full) + 1, 0.0);
  std::vector<double> sy(static_cast<std::size_t>(full) + 1, 0.0);
  for (std::uint32_t mask = 1; mask <= full; ++mask) {
    const int low = __builtin_ctz(mask);
    const std::uint32_t rest = mask & (mask - 1);
    sn[mask] = sn[rest] + est.n_hat[low];
    sy[mask] = sy[rest] + est.n_hat[low] * est.hajek[low];
  }

  // A set is upper when it contains everything above each member, lower when
  // it contains everything below.
  std::vector<std::uint32_t> uppers, lowers;
  for (std::uint32_t mask = 1; mask <= full; ++mask) {
    bool up = true, down = true;
    for (std::uint32_t rem = mask; rem; rem &= rem - 1) {
      const int d = __builtin_ctz(rem);
      if (above[static_cast<std::size_t>(d)] & ~mask) up = false;
      if (below[static_cast<std::size_t>(d)] & ~mask) down = false;
      if (!up && !down) break;
    }
    if (up) uppers.push_back(mask);
    if (down) lowers.push_back(mask);
  }

  Eigen::VectorXd theta(D);
  for (int d = 0; d < D; ++d) {
    const std::uint32_t bit = 1u << d;
    double best = -std::numeric_limits<double>::infinity();
    for (const std::uint32_t U : uppers) {
      if (!(U & bit)) continue;
      double worst = std::numeric_limits<double>::infinity();
      for (const std::uint32_t L : lowers) {
        if (!(L & bit)) continue;
        const std::uint32_t both = U & L;
        const double mean = sy[both] / sn[both];
        if (mean < worst) worst = mean;
      }
      if (worst > best) best = worst;
    }
    theta[d] = best;
  }
  return theta;
}

}  // namespace conest
