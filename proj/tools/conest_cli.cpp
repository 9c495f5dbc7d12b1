// Command-line front end: estimate from a sample file, run a simulation
// study, or check a constraint specification.
//
// Exit codes: 0 success, 2 bad input or configuration, 3 reducible
// constraint matrix (a witness is printed), 4 empty domain.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "conest/cone.hpp"
#include "conest/constraints.hpp"
#include "conest/estimation.hpp"
#include "conest/io.hpp"
#include "conest/rng.hpp"
#include "conest/simulation.hpp"
#include "conest/variance.hpp"

namespace {

using namespace conest;

struct EstimateArgs {
  std::string data, constraints, out;
  std::string variance = "linearization";
  std::string design = "auto";
  double level = 0.95;
  std::uint64_t seed = 0;
};

struct SimulateArgs {
  std::string config, out;
  std::uint64_t seed = 0;
  int reps = 0;     // 0 = keep config value
  int threads = 0;  // 0 = keep config value
};

// Point estimates of every replicate, rows g, columns d.
struct ReplicateRun {
  Eigen::MatrixXd unconstrained;
  Eigen::MatrixXd constrained;
};

ReplicateRun run_replicates(const SampleData& s, const Eigen::MatrixXd& weights, int D,
                            const ConstraintMatrix& A) {
  const auto G = weights.cols();
  ReplicateRun out;
  out.unconstrained.resize(G, D);
  out.constrained.resize(G, D);
  for (Eigen::Index g = 0; g < G; ++g) {
    std::vector<double> y, w;
    std::vector<int> dom;
    for (Eigen::Index k = 0; k < s.y.size(); ++k) {
      if (weights(k, g) > 0.0) {
        y.push_back(s.y[k]);
        w.push_back(weights(k, g));
        dom.push_back(s.domain[static_cast<std::size_t>(k)]);
      }
    }
    DomainEstimates est;
    try {
      est = domain_estimates_weighted(
          Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())),
          Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size())), dom, D);
    } catch (const EmptyDomainError& e) {
      throw EmptyDomainError(e.domain, "replicate " + std::to_string(g + 1) + " leaves domain " +
                                           std::to_string(e.domain + 1) +
                                           " with no sampled units; use fewer groups");
    }
    out.unconstrained.row(g) = est.hajek.transpose();
    out.constrained.row(g) = constrained_estimate(est, A).theta.transpose();
  }
  return out;
}

int run_estimate(const EstimateArgs& args) {
  io::ConstraintSpec spec = io::read_constraint_spec(args.constraints);
  certify_irreducible(spec.matrix);
  const int D = spec.matrix.D();

  io::LoadedSample loaded = io::read_sample_csv(args.data);
  if (loaded.max_domain > D)
    throw std::invalid_argument("data references domain " + std::to_string(loaded.max_domain) +
                                " but the constraints define only " + std::to_string(D));

  const DomainEstimates est = domain_estimates(loaded.sample, D);
  const ConstrainedEstimate ce = constrained_estimate(est, spec.matrix);

  Eigen::VectorXd var_unc(D), var_con(D);
  std::string variance_label;
  if (args.variance == "linearization") {
    variance_label = "linearization";
    DesignTag tag;
    if (args.design == "stratified" || (args.design == "auto" && loaded.has_stratum)) {
      if (!loaded.has_stratum)
        throw std::invalid_argument("stratified variance needs a stratum column in the data");
      tag = DesignTag::stratified_srswor;
    } else {
      tag = DesignTag::poisson;
    }
    var_unc = linearized_variance_all(loaded.sample, est, {}, spec.matrix, tag).variance;
    var_con = linearized_variance_all(loaded.sample, est, ce.face, spec.matrix, tag).variance;
  } else if (args.variance.rfind("dagjk:", 0) == 0) {
    const int G = std::stoi(args.variance.substr(6));
    variance_label = "dagjk:" + std::to_string(G);
    RngStream rng(args.seed, 2);
    const ReplicateScheme scheme = dagjk_replicates(loaded.sample, G, rng);
    const ReplicateRun reps = run_replicates(loaded.sample, scheme.weights, D, spec.matrix);
    for (int d = 0; d < D; ++d) {
      var_unc[d] = replicate_variance(est.hajek[d], reps.unconstrained.col(d), scheme.combination);
      var_con[d] = replicate_variance(ce.theta[d], reps.constrained.col(d), scheme.combination);
    }
  } else if (args.variance.rfind("replicate:", 0) == 0) {
    variance_label = "replicate";
    const io::ReplicateWeights rw = io::read_replicate_weights(args.variance.substr(10), loaded.unit_id);
    const ReplicateRun reps = run_replicates(loaded.sample, rw.weights, D, spec.matrix);
    for (int d = 0; d < D; ++d) {
      var_unc[d] = replicate_variance(est.hajek[d], reps.unconstrained.col(d), rw.combination);
      var_con[d] = replicate_variance(ce.theta[d], reps.constrained.col(d), rw.combination);
    }
  } else {
    throw std::invalid_argument("unknown variance method: " + args.variance);
  }

  nlohmann::json out;
  out["schema_version"] = 1;
  out["level"] = args.level;
  out["variance"] = variance_label;
  out["domains"] = nlohmann::json::array();
  std::vector<int> face1;
  for (int e : ce.face) face1.push_back(e + 1);
  for (int d = 0; d < D; ++d) {
    const auto [lo, hi] = wald_interval(ce.theta[d], var_con[d], args.level);
    nlohmann::json rec;
    rec["domain"] = d + 1;
    rec["n_d"] = est.count[static_cast<std::size_t>(d)];
    rec["N_hat"] = est.n_hat[d];
    rec["unconstrained"] = est.hajek[d];
    rec["constrained"] = ce.theta[d];
    rec["se_unconstrained"] = std::sqrt(var_unc[d]);
    rec["se_constrained"] = std::sqrt(var_con[d]);
    rec["ci_lo"] = lo;
    rec["ci_hi"] = hi;
    if (ce.pooled_blocks)
      rec["pooled_block_id"] = (*ce.pooled_blocks)[static_cast<std::size_t>(d)] + 1;
    else
      rec["pooled_block_id"] = nullptr;
    rec["face_J"] = face1;
    out["domains"].push_back(rec);
  }

  std::ofstream os(args.out);
  if (!os) throw std::invalid_argument("cannot write output file: " + args.out);
  os << out.dump(2) << '\n';
  std::cout << "wrote " << args.out << " (" << D << " domains, " << ce.face.size()
            << " active constraints)\n";
  return 0;
}

int run_simulate(const SimulateArgs& args) {
  StudyConfig cfg = io::read_study_config(args.config);
  cfg.population.seed = args.seed;
  if (args.reps > 0) cfg.reps = args.reps;
  if (args.threads > 0) cfg.threads = args.threads;

  const SimulationReport rep = run_study(cfg);
  io::write_report_files(args.out, rep, cfg);
  std::cout << "reps=" << rep.reps << " wmse_unconstrained=" << rep.wmse_unconstrained
            << " wmse_constrained=" << rep.wmse_constrained << '\n';
  std::cout << "wrote " << args.out << "/report.json\n";
  return 0;
}

int run_check(const std::string& path) {
  io::ConstraintSpec spec = io::read_constraint_spec(path);
  const IrreducibilityCertificate cert = check_irreducible(spec.matrix);
  std::cout << (cert.irreducible ? "irreducible" : "reducible") << ", " << spec.matrix.m()
            << " constraints, " << spec.matrix.D() << " domains\n";
  bool zero_sums = true;
  for (Eigen::Index i = 0; i < spec.matrix.rows.rows(); ++i)
    if (std::abs(spec.matrix.rows.row(i).sum()) > 1e-12) zero_sums = false;
  std::cout << "all rows sum to zero: " << (zero_sums ? "yes" : "no") << '\n';
  if (!cert.irreducible) {
    std::cout << cert.describe() << '\n';
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"constrained domain estimation for survey samples"};
  app.require_subcommand(1);

  EstimateArgs est_args;
  CLI::App* est = app.add_subcommand("estimate", "estimate domain means under inequality constraints");
  est->add_option("--data", est_args.data, "sample CSV (unit_id, y, pi or weight, domain[, stratum])")
      ->required();
  est->add_option("--constraints", est_args.constraints, "constraint spec JSON")->required();
  est->add_option("--variance", est_args.variance,
                  "linearization | dagjk:G | replicate:MANIFEST (default linearization)");
  est->add_option("--design", est_args.design,
                  "stratified | poisson | auto (default auto: stratified when a stratum column exists)")
      ->check(CLI::IsMember({"stratified", "poisson", "auto"}));
  est->add_option("--level", est_args.level, "confidence level (default 0.95)");
  est->add_option("--seed", est_args.seed, "seed for dagjk grouping (default 0)");
  est->add_option("--out", est_args.out, "output JSON path")->required();

  SimulateArgs sim_args;
  CLI::App* sim = app.add_subcommand("simulate", "run a repeated-sampling study");
  sim->add_option("--config", sim_args.config, "study config JSON")->required();
  sim->add_option("--reps", sim_args.reps, "replication count (overrides config)");
  sim->add_option("--seed", sim_args.seed, "master seed")->required();
  sim->add_option("--threads", sim_args.threads, "worker threads (overrides config)");
  sim->add_option("--out", sim_args.out, "output directory")->required();

  std::string check_path;
  CLI::App* chk = app.add_subcommand("check-constraints", "report whether a constraint spec is irreducible");
  chk->add_option("--constraints", check_path, "constraint spec JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (est->parsed()) return run_estimate(est_args);
    if (sim->parsed()) return run_simulate(sim_args);
    return run_check(check_path);
  } catch (const conest::ReducibleMatrixError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const conest::EmptyDomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
