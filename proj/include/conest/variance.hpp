#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "conest/cone.hpp"
#include "conest/constraints.hpp"
#include "conest/estimation.hpp"
#include "conest/normal.hpp"
#include "conest/rng.hpp"

namespace conest {

// How pairwise inclusion probabilities are obtained for the double-sum
// variance: closed forms for the two supported designs, or an explicit map.
enum class DesignTag { stratified_srswor, poisson, joint_map };

struct LinearizedVariance {
  Eigen::VectorXd variance;  // one per target domain
  Eigen::MatrixXd alpha;     // (target, source): d theta_target / d t_hat_source
  Eigen::MatrixXd beta;      // (target, source): d theta_target / d n_hat_source
  Eigen::MatrixXd u_hat;     // (target, unit): linearized values
  int negative_clamps = 0;   // double sums clamped up to zero
};

// Value of the constrained estimator at given totals when the face is held
// fixed: rebuild the weights and the transformed edges from n_hat, project
// onto the span of the fixed face, and map back.  This is the map whose
// partial derivatives drive the linearization.
inline Eigen::VectorXd theta_for_face(const Eigen::VectorXd& t_hat, const Eigen::VectorXd& n_hat,
                                      const ConstraintMatrix& A, const std::vector<int>& face) {
  const Eigen::VectorXd ytilde = t_hat.cwiseQuotient(n_hat);
  if (face.empty()) return ytilde;
  const Eigen::VectorXd w = n_hat / n_hat.sum();
  WeightedConstraints tw = transform_by_weights(A, w);
  const Eigen::VectorXd root_w = w.cwiseSqrt();
  const Eigen::VectorXd z = root_w.cwiseProduct(ytilde);
  Eigen::VectorXd coef, rho;
  detail::fit_on_span(z, tw.polar, face, coef, rho);
  return (z - rho).cwiseQuotient(root_w);
}

namespace detail {

// Double sum over unit pairs of (1 - pi_k pi_l / pi_kl) a_k a_l with
// a_k = u_k / pi_k, specialised per design.  For stratified simple random
// sampling the cross terms regroup into per-stratum power sums, so the cost
// is linear in n.
inline double design_double_sum(const SampleData& s, const Eigen::VectorXd& u, DesignTag tag) {
  const int n = s.n();
  switch (tag) {
    case DesignTag::poisson: {
      double v = 0.0;
      for (int k = 0; k < n; ++k) {
        const double a = u[k] / s.pi[k];
        v += (1.0 - s.pi[k]) * a * a;
      }
      return v;
    }
    case DesignTag::stratified_srswor: {
      if (s.stratum.empty())
        throw std::invalid_argument("stratified variance requires stratum labels");
      // Units in different strata are independent, contributing nothing.
      const std::vector<int>& label = s.stratum;
      int H = 1;
      for (int k = 0; k < n; ++k) H = std::max(H, label[static_cast<std::size_t>(k)] + 1);
      std::vector<double> s1(static_cast<std::size_t>(H), 0.0), s2(static_cast<std::size_t>(H), 0.0);
      std::vector<double> f(static_cast<std::size_t>(H), -1.0);
      std::vector<int> nh(static_cast<std::size_t>(H), 0);
      for (int k = 0; k < n; ++k) {
        const auto h = static_cast<std::size_t>(label[static_cast<std::size_t>(k)]);
        const double a = u[k] / s.pi[k];
        s1[h] += a;
        s2[h] += a * a;
        ++nh[h];
        if (f[h] < 0.0)
          f[h] = s.pi[k];
        else if (std::abs(f[h] - s.pi[k]) > 1e-9 * f[h])
          throw std::invalid_argument(
              "stratified design requires a constant inclusion probability within each stratum");
      }
      double v = 0.0;
      for (std::size_t h = 0; h < static_cast<std::size_t>(H); ++h) {
        if (nh[h] == 0) continue;
        v += (1.0 - f[h]) * s2[h];
        if (nh[h] < 2) continue;  // no pairs, no cross terms
        const double Nh = nh[h] / f[h];
        const double pair_pi = (nh[h] * (nh[h] - 1.0)) / (Nh * (Nh - 1.0));
        const double c = 1.0 - f[h] * f[h] / pair_pi;
        v += c * (s1[h] * s1[h] - s2[h]);
      }
      return v;
    }
    case DesignTag::joint_map: {
      double v = 0.0;
      for (int k = 0; k < n; ++k) {
        const double ak = u[k] / s.pi[k];
        v += (1.0 - s.pi[k]) * ak * ak;
        for (int l = k + 1; l < n; ++l) {
          const auto pkl = s.joint(k, l);
          if (!pkl)
            throw std::invalid_argument("missing joint inclusion probability for a sampled pair");
          const double al = u[l] / s.pi[l];
          v += 2.0 * (1.0 - s.pi[k] * s.pi[l] / *pkl) * ak * al;
        }
      }
      return v;
    }
  }
  throw std::logic_error("unreachable design tag");
}

}  // namespace detail

// Linearization variance of the constrained estimator for every target
// domain at once.  Partials with respect to the estimated totals and sizes
// are central finite differences of theta_for_face (face held fixed, weights
// and edges rebuilt at each perturbed point); the unit-level linearized
// values then enter the design double sum.  Negative double sums — possible
// with unstable pairwise probabilities — are clamped to zero and counted.
inline LinearizedVariance linearized_variance_all(const SampleData& s, const DomainEstimates& est,
                                                  const std::vector<int>& face, const ConstraintMatrix& A,
                                                  DesignTag tag) {
  const int D = static_cast<int>(est.hajek.size());
  const int n = s.n();
  LinearizedVariance out;
  out.alpha.resize(D, D);
  out.beta.resize(D, D);

  for (int i = 0; i < D; ++i) {
    const double ht = 1e-6 * std::max(1.0, std::abs(est.t_hat[i]));
    Eigen::VectorXd tp = est.t_hat, tm = est.t_hat;
    tp[i] += ht;
    tm[i] -= ht;
    out.alpha.col(i) =
        (theta_for_face(tp, est.n_hat, A, face) - theta_for_face(tm, est.n_hat, A, face)) / (2.0 * ht);

    const double hn = 1e-6 * std::max(1.0, std::abs(est.n_hat[i]));
    Eigen::VectorXd np = est.n_hat, nm = est.n_hat;
    np[i] += hn;
    nm[i] -= hn;
    out.beta.col(i) =
        (theta_for_face(est.t_hat, np, A, face) - theta_for_face(est.t_hat, nm, A, face)) / (2.0 * hn);
  }

  out.u_hat.resize(D, n);
  for (int k = 0; k < n; ++k) {
    const int i = s.domain[static_cast<std::size_t>(k)];
    for (int d = 0; d < D; ++d) out.u_hat(d, k) = out.alpha(d, i) * s.y[k] + out.beta(d, i);
  }

  out.variance.resize(D);
  for (int d = 0; d < D; ++d) {
    double v = detail::design_double_sum(s, out.u_hat.row(d).transpose(), tag);
    if (v < 0.0) {
      v = 0.0;
      ++out.negative_clamps;
    }
    out.variance[d] = v;
  }
  return out;
}

inline double linearized_variance(const SampleData& s, const DomainEstimates& est,
                                  const std::vector<int>& face, const ConstraintMatrix& A, int target,
                                  DesignTag tag) {
  LinearizedVariance all = linearized_variance_all(s, est, face, A, tag);
  if (target < 0 || target >= all.variance.size()) throw std::invalid_argument("target domain out of range");
  return all.variance[target];
}

// Replicate weight sets plus the coefficients combining the squared
// deviations.  For the delete-a-group jackknife, group membership is also
// recorded.
struct ReplicateScheme {
  int groups = 0;
  Eigen::VectorXd combination;  // c_g, length groups
  std::vector<int> group;       // per unit, 0-based (empty for external schemes)
  Eigen::MatrixXd weights;      // n x groups replicate weights
};

// Delete-a-group jackknife: shuffle each stratum with the supplied stream,
// deal its units round-robin into G groups (sizes differ by at most one),
// then replicate g deletes group g everywhere and scales the surviving
// weights by G/(G-1).
inline ReplicateScheme dagjk_replicates(const SampleData& s, int G, RngStream rng) {
  if (G < 2) throw std::invalid_argument("delete-a-group jackknife needs at least two groups");
  if (s.stratum.empty())
    throw std::invalid_argument("delete-a-group jackknife requires stratum labels");
  const int n = s.n();

  int H = 0;
  for (int k = 0; k < n; ++k) H = std::max(H, s.stratum[static_cast<std::size_t>(k)] + 1);
  std::vector<std::vector<int>> members(static_cast<std::size_t>(H));
  for (int k = 0; k < n; ++k) members[static_cast<std::size_t>(s.stratum[static_cast<std::size_t>(k)])].push_back(k);

  for (const auto& mem : members)
    if (!mem.empty() && static_cast<int>(mem.size()) < G)
      throw std::invalid_argument("number of groups exceeds a stratum's sample size");

  ReplicateScheme scheme;
  scheme.groups = G;
  scheme.combination = Eigen::VectorXd::Constant(G, (G - 1.0) / G);
  scheme.group.assign(static_cast<std::size_t>(n), -1);
  for (auto& mem : members) {
    for (std::size_t t = 0; t + 1 < mem.size(); ++t) {
      const auto j = t + static_cast<std::size_t>(rng.next_below(mem.size() - t));
      std::swap(mem[t], mem[j]);
    }
    for (std::size_t t = 0; t < mem.size(); ++t)
      scheme.group[static_cast<std::size_t>(mem[t])] = static_cast<int>(t % static_cast<std::size_t>(G));
  }

  scheme.weights.resize(n, G);
  const double bump = G / (G - 1.0);
  for (int k = 0; k < n; ++k) {
    const double w = 1.0 / s.pi[k];
    for (int g = 0; g < G; ++g)
      scheme.weights(k, g) = (scheme.group[static_cast<std::size_t>(k)] == g) ? 0.0 : w * bump;
  }
  return scheme;
}

// Combined squared deviations of the replicate estimates around the
// full-sample point estimate.
inline double replicate_variance(double point, const Eigen::VectorXd& replicates,
                                 const Eigen::VectorXd& combination) {
  if (replicates.size() < 2) throw std::invalid_argument("replicate variance needs at least two replicates");
  if (replicates.size() != combination.size())
    throw std::invalid_argument("combination coefficients must match the replicate count");
  double v = 0.0;
  for (Eigen::Index g = 0; g < replicates.size(); ++g) {
    const double d = replicates[g] - point;
    v += combination[g] * d * d;
  }
  return v;
}

// Two-sided normal-theory interval theta -+ z * sqrt(variance).
inline std::pair<double, double> wald_interval(double theta, double variance, double level) {
  if (!(variance >= 0.0)) throw std::invalid_argument("wald_interval: variance must be nonnegative");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("wald_interval: level must be in (0,1)");
  const double z = normal_quantile(0.5 * (1.0 + level));
  const double half = z * std::sqrt(variance);
  return {theta - half, theta + half};
}

}  // namespace conest
