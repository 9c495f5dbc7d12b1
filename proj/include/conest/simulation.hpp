#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "conest/constraints.hpp"
#include "conest/estimation.hpp"
#include "conest/grid.hpp"
#include "conest/rng.hpp"
#include "conest/variance.hpp"

namespace conest {

// Smooth doubly increasing surface evaluated on the integer grid: a square
// root ramp in the first coordinate plus a logistic ramp in the second.
inline double bivariate_mean(double x1, double x2, int d1, int d2) {
  const double e = std::exp(0.5 + 2.0 * x2 / d2);
  return std::sqrt(1.0 + 4.0 * x1 / d1) + 4.0 * e / (1.0 + e);
}

struct PopulationSpec {
  int d1 = 6;
  int d2 = 4;
  int units_per_domain = 400;
  double sigma = 1.0;
  std::uint64_t seed = 1;
};

struct Population {
  DomainGrid grid;
  Eigen::VectorXd mu;          // surface values per domain
  Eigen::VectorXd true_means;  // realized finite-population domain means
  Eigen::VectorXd y;
  std::vector<int> domain;  // 0-based, per unit
  double sigma = 0.0;
  std::uint64_t seed = 0;

  int N() const { return static_cast<int>(y.size()); }
  Eigen::VectorXd domain_sizes() const {
    Eigen::VectorXd sizes = Eigen::VectorXd::Zero(grid.domains());
    for (int d : domain) sizes[d] += 1.0;
    return sizes;
  }
};

// Units are mu_d plus sigma times standard normal noise, blocked by domain;
// the estimand is the realized finite-population mean per domain, not the
// surface value.
inline Population generate_population(const PopulationSpec& spec) {
  if (spec.d1 < 1 || spec.d2 < 1) throw std::invalid_argument("grid sizes must be positive");
  if (spec.units_per_domain < 1) throw std::invalid_argument("units_per_domain must be positive");

  Population pop{DomainGrid({spec.d1, spec.d2}), {}, {}, {}, {}, spec.sigma, spec.seed};
  const int D = pop.grid.domains();
  const int N = D * spec.units_per_domain;

  pop.mu.resize(D);
  for (int d = 0; d < D; ++d) {
    const std::vector<int> lv = pop.grid.unflatten(d);
    pop.mu[d] = bivariate_mean(lv[0] + 1.0, lv[1] + 1.0, spec.d1, spec.d2);
  }

  pop.y.resize(N);
  pop.domain.resize(static_cast<std::size_t>(N));
  RngStream noise(spec.seed, 0);
  for (int d = 0; d < D; ++d) {
    for (int u = 0; u < spec.units_per_domain; ++u) {
      const int k = d * spec.units_per_domain + u;
      pop.domain[static_cast<std::size_t>(k)] = d;
      pop.y[k] = pop.mu[d] + spec.sigma * noise.next_normal();
    }
  }

  // Accumulate deviations from the surface rather than raw values, so a
  // noiseless population realizes its domain means bit for bit.
  pop.true_means = Eigen::VectorXd::Zero(D);
  for (int k = 0; k < N; ++k) {
    const int d = pop.domain[static_cast<std::size_t>(k)];
    pop.true_means[d] += pop.y[k] - pop.mu[d];
  }
  pop.true_means /= static_cast<double>(spec.units_per_domain);
  pop.true_means += pop.mu;
  return pop;
}

// Strata are contiguous rank blocks of an auxiliary variable that drifts
// with the domain index, so inclusion probabilities end up correlated with
// the outcome (an informative design).
inline std::vector<int> assign_strata(const Population& pop, int H, RngStream rng) {
  if (H < 1) throw std::invalid_argument("stratum count must be positive");
  const int N = pop.N();
  if (H > N) throw std::invalid_argument("more strata than units");
  const int D = pop.grid.domains();

  std::vector<double> nu(static_cast<std::size_t>(N));
  for (int k = 0; k < N; ++k)
    nu[static_cast<std::size_t>(k)] =
        pop.sigma * (pop.domain[static_cast<std::size_t>(k)] + 1.0) / D + rng.next_normal();

  std::vector<int> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return nu[static_cast<std::size_t>(a)] < nu[static_cast<std::size_t>(b)]; });

  std::vector<int> stratum(static_cast<std::size_t>(N));
  const int base = N / H, extra = N % H;
  int pos = 0;
  for (int h = 0; h < H; ++h) {
    const int size = base + (h < extra ? 1 : 0);
    for (int t = 0; t < size; ++t) stratum[static_cast<std::size_t>(order[static_cast<std::size_t>(pos++)])] = h;
  }
  return stratum;
}

// Simple random sampling without replacement within each stratum;
// pi_k = n_h / N_h for every unit of stratum h.
inline SampleData draw_sample(const Population& pop, const std::vector<int>& stratum,
                              const std::vector<int>& allocation, RngStream rng) {
  const int H = static_cast<int>(allocation.size());
  if (static_cast<int>(stratum.size()) != pop.N()) throw std::invalid_argument("stratum labels mismatch");

  std::vector<std::vector<int>> members(static_cast<std::size_t>(H));
  for (int k = 0; k < pop.N(); ++k) {
    const int h = stratum[static_cast<std::size_t>(k)];
    if (h < 0 || h >= H) throw std::invalid_argument("stratum label out of range");
    members[static_cast<std::size_t>(h)].push_back(k);
  }

  std::vector<int> picked;
  std::vector<double> pis;
  std::vector<int> strat_of;
  for (int h = 0; h < H; ++h) {
    auto& mem = members[static_cast<std::size_t>(h)];
    const int Nh = static_cast<int>(mem.size());
    const int nh = allocation[static_cast<std::size_t>(h)];
    if (nh < 1 || nh > Nh) throw std::invalid_argument("allocation exceeds stratum size");
    for (int t = 0; t < nh; ++t) {
      const auto j = static_cast<std::size_t>(t) + static_cast<std::size_t>(rng.next_below(static_cast<std::uint64_t>(Nh - t)));
      std::swap(mem[static_cast<std::size_t>(t)], mem[j]);
    }
    std::sort(mem.begin(), mem.begin() + nh);
    const double pi = static_cast<double>(nh) / Nh;
    for (int t = 0; t < nh; ++t) {
      picked.push_back(mem[static_cast<std::size_t>(t)]);
      pis.push_back(pi);
      strat_of.push_back(h);
    }
  }

  SampleData s;
  const int n = static_cast<int>(picked.size());
  s.y.resize(n);
  s.pi.resize(n);
  s.domain.resize(static_cast<std::size_t>(n));
  s.stratum.resize(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    const int k = picked[static_cast<std::size_t>(t)];
    s.y[t] = pop.y[k];
    s.pi[t] = pis[static_cast<std::size_t>(t)];
    s.domain[static_cast<std::size_t>(t)] = pop.domain[static_cast<std::size_t>(k)];
    s.stratum[static_cast<std::size_t>(t)] = strat_of[static_cast<std::size_t>(t)];
  }
  return s;
}

// Average over replications of the size-weighted squared error against the
// true domain means.
inline double wmse(const Eigen::MatrixXd& estimates, const Eigen::VectorXd& truth,
                   const Eigen::VectorXd& domain_sizes) {
  if (estimates.rows() < 1) throw std::invalid_argument("wmse needs at least one replication");
  if (estimates.cols() != truth.size() || truth.size() != domain_sizes.size())
    throw std::invalid_argument("wmse dimension mismatch");
  const Eigen::VectorXd w = domain_sizes / domain_sizes.sum();
  double total = 0.0;
  for (Eigen::Index r = 0; r < estimates.rows(); ++r) {
    const Eigen::VectorXd diff = estimates.row(r).transpose() - truth;
    total += diff.cwiseAbs2().dot(w);
  }
  return total / static_cast<double>(estimates.rows());
}

enum class Shape { double_monotone, x1_only };
enum class VarianceMethod { none, linearization, dagjk };

struct StudyConfig {
  PopulationSpec population;
  std::vector<int> allocation = {60, 120, 120, 180};
  Shape shape = Shape::double_monotone;
  VarianceMethod variance = VarianceMethod::none;
  int groups = 10;  // delete-a-group jackknife only
  double level = 0.95;
  int reps = 1000;
  int threads = 1;
};

struct DomainSummary {
  double true_mean = 0.0;
  double mean_unconstrained = 0.0, mean_constrained = 0.0;
  double p025_unconstrained = 0.0, p975_unconstrained = 0.0;
  double p025_constrained = 0.0, p975_constrained = 0.0;
  double mc_var_unconstrained = 0.0, mc_var_constrained = 0.0;
  double mean_varest_unconstrained = 0.0, mean_varest_constrained = 0.0;
  double coverage_unconstrained = 0.0, coverage_constrained = 0.0;
};

struct FaceFrequency {
  std::vector<int> face;
  long count = 0;
};

struct SimulationReport {
  int reps = 0;
  double wmse_unconstrained = 0.0;
  double wmse_constrained = 0.0;
  std::vector<DomainSummary> domains;
  std::vector<FaceFrequency> faces;  // reduced faces, lexicographic order
  long negative_clamps = 0;
  bool has_variance = false;
};

namespace detail {

// Linear-interpolation percentile of a copy of the values.
inline double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  if (v.size() == 1) return v[0];
  const double h = p * (static_cast<double>(v.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= v.size()) return v.back();
  const double frac = h - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[lo + 1] * frac;
}

}  // namespace detail

// Repeated-sampling study against one fixed population: per replication,
// draw a stratified sample, estimate with and without the shape constraint,
// and (optionally) attach variance estimates and interval coverage.
// Replication r uses RNG stream 2+r regardless of the thread that runs it,
// so reports are identical for any thread count.
inline SimulationReport run_study(const StudyConfig& config) {
  if (config.reps < 1) throw std::invalid_argument("reps must be positive");
  const Population pop = generate_population(config.population);
  const int D = pop.grid.domains();
  const std::vector<int> stratum =
      assign_strata(pop, static_cast<int>(config.allocation.size()), RngStream(config.population.seed, 1));

  std::vector<MonotoneAxis> axes;
  axes.push_back({0, Direction::increasing});
  if (config.shape == Shape::double_monotone) axes.push_back({1, Direction::increasing});
  const ConstraintMatrix A = build_monotone(pop.grid, axes);

  const int R = config.reps;
  Eigen::MatrixXd est_unc(R, D), est_con(R, D);
  Eigen::MatrixXd var_unc, var_con;
  const bool with_variance = config.variance != VarianceMethod::none;
  if (with_variance) {
    var_unc.resize(R, D);
    var_con.resize(R, D);
  }
  std::vector<std::vector<int>> faces(static_cast<std::size_t>(R));
  std::vector<int> clamps(static_cast<std::size_t>(R), 0);

  auto run_range = [&](int lo, int hi) {
    for (int r = lo; r < hi; ++r) {
      RngStream rng(config.population.seed, 2 + static_cast<std::uint64_t>(r));
      const SampleData sample = draw_sample(pop, stratum, config.allocation, rng);
      const DomainEstimates est = domain_estimates(sample, D);
      const ConstrainedEstimate ce = constrained_estimate(est, A);
      est_unc.row(r) = est.hajek.transpose();
      est_con.row(r) = ce.theta.transpose();
      faces[static_cast<std::size_t>(r)] = ce.face;

      if (config.variance == VarianceMethod::linearization) {
        LinearizedVariance lu = linearized_variance_all(sample, est, {}, A, DesignTag::stratified_srswor);
        LinearizedVariance lc =
            linearized_variance_all(sample, est, ce.face, A, DesignTag::stratified_srswor);
        var_unc.row(r) = lu.variance.transpose();
        var_con.row(r) = lc.variance.transpose();
        clamps[static_cast<std::size_t>(r)] = lu.negative_clamps + lc.negative_clamps;
      } else if (config.variance == VarianceMethod::dagjk) {
        const ReplicateScheme scheme = dagjk_replicates(sample, config.groups, rng.derive(997));
        Eigen::MatrixXd rep_unc(config.groups, D), rep_con(config.groups, D);
        for (int g = 0; g < config.groups; ++g) {
          std::vector<double> wy, wv;
          std::vector<int> wd;
          for (int k = 0; k < sample.n(); ++k) {
            const double w = scheme.weights(k, g);
            if (w <= 0.0) continue;
            wy.push_back(sample.y[k]);
            wv.push_back(w);
            wd.push_back(sample.domain[static_cast<std::size_t>(k)]);
          }
          Eigen::VectorXd yy = Eigen::Map<Eigen::VectorXd>(wy.data(), static_cast<Eigen::Index>(wy.size()));
          Eigen::VectorXd ww = Eigen::Map<Eigen::VectorXd>(wv.data(), static_cast<Eigen::Index>(wv.size()));
          const DomainEstimates rep = domain_estimates_weighted(yy, ww, wd, D);
          rep_unc.row(g) = rep.hajek.transpose();
          rep_con.row(g) = constrained_estimate(rep, A).theta.transpose();
        }
        for (int d = 0; d < D; ++d) {
          var_unc(r, d) = replicate_variance(est.hajek[d], rep_unc.col(d), scheme.combination);
          var_con(r, d) = replicate_variance(ce.theta[d], rep_con.col(d), scheme.combination);
        }
      }
    }
  };

  const int workers = std::max(1, std::min(config.threads, R));
  if (workers == 1) {
    run_range(0, R);
  } else {
    // Capture worker failures and rethrow on the calling thread; an escaped
    // exception in a std::thread would otherwise terminate the process.
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    const int chunk = (R + workers - 1) / workers;
    for (int t = 0; t < workers; ++t) {
      const int lo = t * chunk;
      const int hi = std::min(R, lo + chunk);
      if (lo >= hi) continue;
      pool.emplace_back([&run_range, &errors, t, lo, hi] {
        try {
          run_range(lo, hi);
        } catch (...) {
          errors[static_cast<std::size_t>(t)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const std::exception_ptr& e : errors)
      if (e) std::rethrow_exception(e);
  }

  SimulationReport report;
  report.reps = R;
  report.has_variance = with_variance;
  report.wmse_unconstrained = wmse(est_unc, pop.true_means, pop.domain_sizes());
  report.wmse_constrained = wmse(est_con, pop.true_means, pop.domain_sizes());
  for (int c : clamps) report.negative_clamps += c;

  const double zstar = normal_quantile(0.5 * (1.0 + config.level));
  report.domains.resize(static_cast<std::size_t>(D));
  for (int d = 0; d < D; ++d) {
    DomainSummary& ds = report.domains[static_cast<std::size_t>(d)];
    ds.true_mean = pop.true_means[d];
    std::vector<double> u(est_unc.col(d).data(), est_unc.col(d).data() + R);
    std::vector<double> c(est_con.col(d).data(), est_con.col(d).data() + R);
    ds.mean_unconstrained = est_unc.col(d).mean();
    ds.mean_constrained = est_con.col(d).mean();
    ds.p025_unconstrained = detail::percentile(u, 0.025);
    ds.p975_unconstrained = detail::percentile(u, 0.975);
    ds.p025_constrained = detail::percentile(c, 0.025);
    ds.p975_constrained = detail::percentile(c, 0.975);
    if (R > 1) {
      ds.mc_var_unconstrained = (est_unc.col(d).array() - ds.mean_unconstrained).square().sum() / (R - 1.0);
      ds.mc_var_constrained = (est_con.col(d).array() - ds.mean_constrained).square().sum() / (R - 1.0);
    }
    if (with_variance) {
      ds.mean_varest_unconstrained = var_unc.col(d).mean();
      ds.mean_varest_constrained = var_con.col(d).mean();
      long cov_u = 0, cov_c = 0;
      const double truth = pop.true_means[d];
      for (int r = 0; r < R; ++r) {
        const double hu = zstar * std::sqrt(std::max(0.0, var_unc(r, d)));
        if (est_unc(r, d) - hu <= truth && truth <= est_unc(r, d) + hu) ++cov_u;
        const double hc = zstar * std::sqrt(std::max(0.0, var_con(r, d)));
        if (est_con(r, d) - hc <= truth && truth <= est_con(r, d) + hc) ++cov_c;
      }
      ds.coverage_unconstrained = static_cast<double>(cov_u) / R;
      ds.coverage_constrained = static_cast<double>(cov_c) / R;
    }
  }

  std::map<std::vector<int>, long> face_counts;
  for (const auto& f : faces) ++face_counts[f];
  for (const auto& [f, cnt] : face_counts) report.faces.push_back({f, cnt});
  return report;
}

}  // namespace conest
