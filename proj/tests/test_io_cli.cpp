#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "conest/estimation.hpp"
#include "conest/io.hpp"

using namespace conest;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "conest-io-tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p);
  out << content;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int run_cli(const std::string& args, const fs::path& capture = {}) {
  std::string cmd = std::string(CONEST_CLI_PATH) + " " + args;
  if (!capture.empty()) cmd += " > " + capture.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

const std::string kToyCsv =
    "unit_id,y,pi,domain\n"
    "u1,3.0,0.5,1\n"
    "u2,3.0,0.5,1\n"
    "u3,1.0,0.5,2\n"
    "u4,1.0,0.5,2\n"
    "u5,2.0,0.5,3\n"
    "u6,2.0,0.5,3\n";

const std::string kChainJson = R"({"pairs": [[1,2],[2,3]], "D": 3})";

}  // namespace

TEST_CASE("sample csv accepts pi or weight spellings identically") {
  const fs::path dir = scratch("csv");
  write_file(dir / "pi.csv", kToyCsv);
  write_file(dir / "w.csv",
             "unit_id,y,weight,domain\n"
             "u1,3.0,2,1\n"
             "u2,3.0,2,1\n"
             "u3,1.0,2,2\n"
             "u4,1.0,2,2\n"
             "u5,2.0,2,3\n"
             "u6,2.0,2,3\n");
  const io::LoadedSample a = io::read_sample_csv((dir / "pi.csv").string());
  const io::LoadedSample b = io::read_sample_csv((dir / "w.csv").string());
  REQUIRE(a.sample.n() == 6);
  REQUIRE(a.max_domain == 3);
  REQUIRE_FALSE(a.has_stratum);
  REQUIRE((a.sample.pi - b.sample.pi).norm() == 0.0);
  REQUIRE((a.sample.y - b.sample.y).norm() == 0.0);
  REQUIRE(a.sample.domain == b.sample.domain);
  REQUIRE(a.unit_id == std::vector<std::string>{"u1", "u2", "u3", "u4", "u5", "u6"});
}

TEST_CASE("sample csv maps stratum labels in order of first appearance") {
  const fs::path dir = scratch("csv-stratum");
  write_file(dir / "s.csv",
             "unit_id,y,pi,domain,stratum\n"
             "a,1,0.5,1,east\n"
             "b,2,0.5,1,west\n"
             "c,3,0.5,2,east\n");
  const io::LoadedSample s = io::read_sample_csv((dir / "s.csv").string());
  REQUIRE(s.has_stratum);
  REQUIRE(s.sample.stratum == std::vector<int>{0, 1, 0});
}

TEST_CASE("sample csv rejects malformed files with clear messages") {
  const fs::path dir = scratch("csv-bad");
  write_file(dir / "nopi.csv", "unit_id,y,domain\nu1,1,1\n");
  REQUIRE_THROWS_AS(io::read_sample_csv((dir / "nopi.csv").string()), std::invalid_argument);

  write_file(dir / "both.csv", "unit_id,y,pi,weight,domain\nu1,1,0.5,2,1\n");
  REQUIRE_THROWS_AS(io::read_sample_csv((dir / "both.csv").string()), std::invalid_argument);

  write_file(dir / "smallw.csv", "unit_id,y,weight,domain\nu1,1,0.5,1\n");
  REQUIRE_THROWS_AS(io::read_sample_csv((dir / "smallw.csv").string()), std::invalid_argument);

  write_file(dir / "bigpi.csv", "unit_id,y,pi,domain\nu1,1,1.5,1\n");
  REQUIRE_THROWS_AS(io::read_sample_csv((dir / "bigpi.csv").string()), std::invalid_argument);

  write_file(dir / "dom0.csv", "unit_id,y,pi,domain\nu1,1,0.5,0\n");
  REQUIRE_THROWS_AS(io::read_sample_csv((dir / "dom0.csv").string()), std::invalid_argument);

  write_file(dir / "notnum.csv", "unit_id,y,pi,domain\nu1,abc,0.5,1\n");
  REQUIRE_THROWS_AS(io::read_sample_csv((dir / "notnum.csv").string()), std::invalid_argument);

  write_file(dir / "empty.csv", "unit_id,y,pi,domain\n");
  REQUIRE_THROWS_AS(io::read_sample_csv((dir / "empty.csv").string()), std::invalid_argument);
}

TEST_CASE("constraint specs cover all four forms with one-based indices") {
  using nlohmann::json;

  const json grid_form = json::parse(
      R"({"grid": [3,2], "monotone": [{"axis": 1, "direction": "inc"},
                                      {"axis": 2, "direction": "inc"}]})");
  const io::ConstraintSpec g = io::parse_constraint_spec(grid_form);
  const ConstraintMatrix direct = build_monotone(
      DomainGrid({3, 2}), {{0, Direction::increasing}, {1, Direction::increasing}});
  REQUIRE(g.matrix.m() == 7);
  REQUIRE((g.matrix.rows - direct.rows).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(g.matrix.certified_irreducible);

  const json tree_form =
      json::parse(R"({"tree": {"D": 4, "root": 2, "direction": "root_smallest"}})");
  const io::ConstraintSpec t = io::parse_constraint_spec(tree_form);
  REQUIRE(t.matrix.m() == 3);
  REQUIRE(t.matrix.rows(0, 1) == -1.0);  // root is domain index 1 after conversion

  const json pair_form = json::parse(kChainJson);
  const io::ConstraintSpec p = io::parse_constraint_spec(pair_form);
  REQUIRE(p.matrix.m() == 2);
  REQUIRE(p.order_pairs.has_value());
  REQUIRE((*p.order_pairs)[0] == std::pair<int, int>{0, 1});

  const json matrix_form = json::parse(R"({"matrix": [[-1, 0.5, 0.5]]})");
  const io::ConstraintSpec m = io::parse_constraint_spec(matrix_form);
  REQUIRE(m.matrix.m() == 1);
  REQUIRE(m.matrix.rows(0, 1) == 0.5);
  REQUIRE_FALSE(m.matrix.certified_irreducible);

  REQUIRE_THROWS_AS(io::parse_constraint_spec(json::parse(R"({"grid": [2,2]})")),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(
      io::parse_constraint_spec(json::parse(R"({"pairs": [[1,2]], "D": 2, "matrix": [[1,-1]]})")),
      std::invalid_argument);
  REQUIRE_THROWS_AS(io::parse_constraint_spec(json::parse(
                        R"({"grid": [2,2], "monotone": [{"axis": 1, "direction": "up"}]})")),
                    std::invalid_argument);
}

TEST_CASE("replicate manifests join weights to the sample by unit id") {
  const fs::path dir = scratch("manifest");
  write_file(dir / "w.csv",
             "unit_id,g1,g2\n"
             "u2,0,2.2\n"
             "u1,2.0,0\n"
             "u3,2.0,2.2\n");
  write_file(dir / "m.json",
             R"({"weights_csv": "w.csv", "coefficients": [0.5, 0.5]})");
  const io::ReplicateWeights rw =
      io::read_replicate_weights((dir / "m.json").string(), {"u1", "u2", "u3"});
  REQUIRE(rw.weights.rows() == 3);
  REQUIRE(rw.weights(0, 0) == 2.0);
  REQUIRE(rw.weights(1, 0) == 0.0);
  REQUIRE(rw.weights(1, 1) == 2.2);
  REQUIRE(rw.combination[1] == 0.5);

  REQUIRE_THROWS_AS(io::read_replicate_weights((dir / "m.json").string(), {"u1", "u9"}),
                    std::invalid_argument);

  write_file(dir / "short.json", R"({"weights_csv": "w.csv", "coefficients": [0.5]})");
  REQUIRE_THROWS_AS(io::read_replicate_weights((dir / "short.json").string(), {"u1", "u2", "u3"}),
                    std::invalid_argument);
}

TEST_CASE("study configs fill defaults and scale the allocation") {
  const fs::path dir = scratch("config");
  write_file(dir / "min.json", R"({})");
  const StudyConfig defaults = io::read_study_config((dir / "min.json").string());
  REQUIRE(defaults.population.d1 == 6);
  REQUIRE(defaults.allocation == std::vector<int>{60, 120, 120, 180});
  REQUIRE(defaults.reps == 1000);

  write_file(dir / "n960.json", R"({"n": 960, "sigma": 2.0, "variance": "dagjk", "groups": 20})");
  const StudyConfig scaled = io::read_study_config((dir / "n960.json").string());
  REQUIRE(scaled.allocation == std::vector<int>{120, 240, 240, 360});
  REQUIRE(scaled.population.sigma == 2.0);
  REQUIRE(scaled.variance == VarianceMethod::dagjk);
  REQUIRE(scaled.groups == 20);

  write_file(dir / "badn.json", R"({"n": 500})");
  REQUIRE_THROWS_AS(io::read_study_config((dir / "badn.json").string()), std::invalid_argument);

  write_file(dir / "badshape.json", R"({"shape": "cubic"})");
  REQUIRE_THROWS_AS(io::read_study_config((dir / "badshape.json").string()), std::invalid_argument);
}

TEST_CASE("estimate subcommand writes the documented record layout") {
  const fs::path dir = scratch("cli-estimate");
  write_file(dir / "data.csv", kToyCsv);
  write_file(dir / "cons.json", kChainJson);
  const fs::path out = dir / "result.json";

  const int rc = run_cli("estimate --data " + (dir / "data.csv").string() + " --constraints " +
                             (dir / "cons.json").string() + " --out " + out.string(),
                         dir / "stdout.txt");
  REQUIRE(rc == 0);

  const nlohmann::json result = nlohmann::json::parse(read_file(out));
  REQUIRE(result.at("schema_version") == 1);
  REQUIRE(result.at("level") == 0.95);
  REQUIRE(result.at("variance") == "linearization");
  REQUIRE(result.at("domains").size() == 3);

  const auto& rec = result.at("domains")[0];
  for (const char* key : {"domain", "n_d", "N_hat", "unconstrained", "constrained",
                          "se_unconstrained", "se_constrained", "ci_lo", "ci_hi",
                          "pooled_block_id", "face_J"})
    REQUIRE(rec.contains(key));
  REQUIRE(rec.at("domain") == 1);
  REQUIRE(rec.at("n_d") == 2);
  REQUIRE(rec.at("N_hat").get<double>() == 4.0);
  REQUIRE(rec.at("unconstrained").get<double>() == 3.0);
  REQUIRE(rec.at("constrained").get<double>() == Catch::Approx(2.0).margin(1e-10));
  REQUIRE(result.at("domains")[1].at("constrained").get<double>() ==
          Catch::Approx(2.0).margin(1e-10));
  REQUIRE(rec.at("pooled_block_id") == 1);
  REQUIRE(result.at("domains")[2].at("pooled_block_id") == 1);  // all three values coincide
  for (const auto& d : result.at("domains")) {
    REQUIRE(d.at("ci_lo").get<double>() <= d.at("constrained").get<double>());
    REQUIRE(d.at("constrained").get<double>() <= d.at("ci_hi").get<double>());
    REQUIRE(d.at("face_J").is_array());
  }

  // In-process computation gives bit-identical numbers.
  const io::LoadedSample loaded = io::read_sample_csv((dir / "data.csv").string());
  io::ConstraintSpec spec = io::read_constraint_spec((dir / "cons.json").string());
  certify_irreducible(spec.matrix);
  const DomainEstimates est = domain_estimates(loaded.sample, 3);
  const ConstrainedEstimate ce = constrained_estimate(est, spec.matrix);
  for (int d = 0; d < 3; ++d) {
    REQUIRE(result.at("domains")[static_cast<std::size_t>(d)].at("unconstrained").get<double>() ==
            est.hajek[d]);
    REQUIRE(result.at("domains")[static_cast<std::size_t>(d)].at("constrained").get<double>() ==
            ce.theta[d]);
  }

  // Rerunning produces a byte-identical file.
  const fs::path out2 = dir / "result2.json";
  REQUIRE(run_cli("estimate --data " + (dir / "data.csv").string() + " --constraints " +
                      (dir / "cons.json").string() + " --out " + out2.string(),
                  dir / "stdout2.txt") == 0);
  REQUIRE(read_file(out) == read_file(out2));
}

TEST_CASE("estimate subcommand supports external replicate weights") {
  const fs::path dir = scratch("cli-replicate");
  write_file(dir / "data.csv", kToyCsv);
  write_file(dir / "cons.json", kChainJson);
  // Two half-sample replicates; every domain keeps one unit in each.
  write_file(dir / "w.csv",
             "unit_id,g1,g2\n"
             "u1,4,0\n"
             "u2,0,4\n"
             "u3,4,0\n"
             "u4,0,4\n"
             "u5,4,0\n"
             "u6,0,4\n");
  write_file(dir / "m.json", R"({"weights_csv": "w.csv", "coefficients": [0.5, 0.5]})");

  const fs::path out = dir / "result.json";
  const int rc = run_cli("estimate --data " + (dir / "data.csv").string() + " --constraints " +
                             (dir / "cons.json").string() + " --variance replicate:" +
                             (dir / "m.json").string() + " --out " + out.string(),
                         dir / "stdout.txt");
  REQUIRE(rc == 0);
  const nlohmann::json result = nlohmann::json::parse(read_file(out));
  REQUIRE(result.at("variance") == "replicate");
  for (const auto& d : result.at("domains")) {
    REQUIRE(d.at("se_constrained").get<double>() >= 0.0);
    // Within each replicate the domain means stay 3, 1, 2. so the
    // constrained replicates equal the full-sample estimate: zero variance.
    REQUIRE(d.at("se_constrained").get<double>() < 1e-8);
  }
}

TEST_CASE("estimate subcommand runs the grouped jackknife end to end") {
  const fs::path dir = scratch("cli-dagjk");
  std::ostringstream csv;
  csv << "unit_id,y,pi,domain,stratum\n";
  for (int k = 0; k < 8; ++k)
    csv << "a" << k << "," << 5.0 + k << ",0.5,1,s1\n";
  for (int k = 0; k < 8; ++k)
    csv << "b" << k << "," << 1.0 + k << ",0.5,2,s2\n";
  write_file(dir / "data.csv", csv.str());
  write_file(dir / "cons.json", R"({"pairs": [[1,2]], "D": 2})");

  const fs::path out = dir / "result.json";
  const int rc = run_cli("estimate --data " + (dir / "data.csv").string() + " --constraints " +
                             (dir / "cons.json").string() +
                             " --variance dagjk:4 --seed 7 --out " + out.string(),
                         dir / "stdout.txt");
  REQUIRE(rc == 0);
  const nlohmann::json result = nlohmann::json::parse(read_file(out));
  REQUIRE(result.at("variance") == "dagjk:4");
  for (const auto& d : result.at("domains"))
    REQUIRE(d.at("se_constrained").get<double>() >= 0.0);

  // Same seed, same answer.
  const fs::path out2 = dir / "result2.json";
  REQUIRE(run_cli("estimate --data " + (dir / "data.csv").string() + " --constraints " +
                      (dir / "cons.json").string() +
                      " --variance dagjk:4 --seed 7 --out " + out2.string(),
                  dir / "stdout2.txt") == 0);
  REQUIRE(read_file(out) == read_file(out2));
}

TEST_CASE("cli exit codes distinguish schema, reducibility and empty domains") {
  const fs::path dir = scratch("cli-exits");
  write_file(dir / "data.csv", kToyCsv);
  write_file(dir / "cons.json", kChainJson);

  // Missing pi column: schema error.
  write_file(dir / "bad.csv", "unit_id,y,domain\nu1,1,1\n");
  REQUIRE(run_cli("estimate --data " + (dir / "bad.csv").string() + " --constraints " +
                      (dir / "cons.json").string() + " --out " + (dir / "o.json").string(),
                  dir / "e2.txt") == 2);

  // Unknown variance spelling: schema error.
  REQUIRE(run_cli("estimate --data " + (dir / "data.csv").string() + " --constraints " +
                      (dir / "cons.json").string() + " --variance bootstrap --out " +
                      (dir / "o.json").string(),
                  dir / "e2b.txt") == 2);

  // Transitive pair: reducible, witness on stderr.
  write_file(dir / "red.json", R"({"pairs": [[1,2],[2,3],[1,3]], "D": 3})");
  REQUIRE(run_cli("estimate --data " + (dir / "data.csv").string() + " --constraints " +
                      (dir / "red.json").string() + " --out " + (dir / "o.json").string(),
                  dir / "e3.txt") == 3);
  REQUIRE(read_file(dir / "e3.txt").find("row 3") != std::string::npos);

  // Constraints mention a fourth domain the data never samples.
  write_file(dir / "four.json", R"({"pairs": [[1,2],[2,3],[3,4]], "D": 4})");
  REQUIRE(run_cli("estimate --data " + (dir / "data.csv").string() + " --constraints " +
                      (dir / "four.json").string() + " --out " + (dir / "o.json").string(),
                  dir / "e4.txt") == 4);
  REQUIRE(read_file(dir / "e4.txt").find("domain 4") != std::string::npos);
}

TEST_CASE("check-constraints prints the advertised summary lines") {
  const fs::path dir = scratch("cli-check");
  write_file(dir / "grid.json",
             R"({"grid": [3,2], "monotone": [{"axis": 1, "direction": "inc"},
                                             {"axis": 2, "direction": "inc"}]})");
  const fs::path cap = dir / "out.txt";
  REQUIRE(run_cli("check-constraints --constraints " + (dir / "grid.json").string(), cap) == 0);
  REQUIRE(read_file(cap) == "irreducible, 7 constraints, 6 domains\nall rows sum to zero: yes\n");

  write_file(dir / "big.json",
             R"({"grid": [6,4], "monotone": [{"axis": 1, "direction": "inc"},
                                             {"axis": 2, "direction": "inc"}]})");
  REQUIRE(run_cli("check-constraints --constraints " + (dir / "big.json").string(), cap) == 0);
  REQUIRE(read_file(cap) == "irreducible, 38 constraints, 24 domains\nall rows sum to zero: yes\n");

  write_file(dir / "red.json", R"({"pairs": [[1,2],[2,3],[1,3]], "D": 3})");
  REQUIRE(run_cli("check-constraints --constraints " + (dir / "red.json").string(), cap) == 3);
  const std::string text = read_file(cap);
  REQUIRE(text.find("reducible, 3 constraints, 3 domains") == 0);
  REQUIRE(text.find("row 3 is a nonnegative combination of rows {1, 2}") != std::string::npos);

  // A matrix with rows that do not sum to zero flips the second line.
  write_file(dir / "nonzero.json", R"({"matrix": [[1, 1, -1], [0, -1, 1]]})");
  REQUIRE(run_cli("check-constraints --constraints " + (dir / "nonzero.json").string(), cap) == 0);
  REQUIRE(read_file(cap).find("all rows sum to zero: no") != std::string::npos);
}

TEST_CASE("simulate subcommand produces a reproducible report directory") {
  const fs::path dir = scratch("cli-simulate");
  write_file(dir / "study.json",
             R"({"grid": [3,2], "units_per_domain": 50, "sigma": 1.0,
                 "shape": "double_monotone", "variance": "none", "reps": 4,
                 "allocation": [10, 20, 20, 30]})");

  // The seed flag is mandatory for simulations.
  REQUIRE(run_cli("simulate --config " + (dir / "study.json").string() + " --out " +
                      (dir / "never").string(),
                  dir / "noseed.txt") == 2);

  const int rc = run_cli("simulate --config " + (dir / "study.json").string() +
                             " --seed 12 --threads 2 --out " + (dir / "run1").string(),
                         dir / "run1.txt");
  REQUIRE(rc == 0);
  REQUIRE(fs::exists(dir / "run1" / "report.json"));
  REQUIRE(fs::exists(dir / "run1" / "domains.csv"));
  REQUIRE(fs::exists(dir / "run1" / "wmse.csv"));

  const nlohmann::json report = nlohmann::json::parse(read_file(dir / "run1" / "report.json"));
  REQUIRE(report.at("schema_version") == 1);
  REQUIRE(report.at("reps") == 4);
  REQUIRE(report.at("domains").size() == 6);
  REQUIRE(report.at("config").at("seed") == 12);

  // Same seed, different thread count: byte-identical report.
  REQUIRE(run_cli("simulate --config " + (dir / "study.json").string() +
                      " --seed 12 --threads 1 --out " + (dir / "run2").string(),
                  dir / "run2.txt") == 0);
  REQUIRE(read_file(dir / "run1" / "report.json") == read_file(dir / "run2" / "report.json"));
  REQUIRE(read_file(dir / "run1" / "domains.csv") == read_file(dir / "run2" / "domains.csv"));
}
