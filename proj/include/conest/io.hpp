#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "conest/constraints.hpp"
#include "conest/estimation.hpp"
#include "conest/simulation.hpp"
#include "conest/variance.hpp"

namespace conest::io {

using nlohmann::json;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline double parse_double(const std::string& tok, const std::string& what, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("line " + std::to_string(line_no) + ": cannot parse " + what + " value '" +
                                tok + "'");
  }
}

inline long parse_long(const std::string& tok, const std::string& what, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const long v = std::stol(tok, &used);
    if (used != tok.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("line " + std::to_string(line_no) + ": cannot parse " + what + " value '" +
                                tok + "'");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sample CSV: header row naming unit_id, y, domain, and either pi or weight
// (weight = 1/pi); an optional stratum column; extra columns are ignored.
// Plain comma separation, UTF-8, '.' decimal point, no quoting.
// ---------------------------------------------------------------------------

struct LoadedSample {
  SampleData sample;
  std::vector<std::string> unit_id;
  int max_domain = 0;  // largest 1-based domain index seen
  bool has_stratum = false;
};

inline LoadedSample read_sample_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open data file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("data file is empty: " + path);
  const std::vector<std::string> header = detail::split_csv_line(line);
  auto col = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  };
  const int c_id = col("unit_id"), c_y = col("y"), c_pi = col("pi"), c_w = col("weight"),
            c_dom = col("domain"), c_str = col("stratum");
  if (c_id < 0 || c_y < 0 || c_dom < 0)
    throw std::invalid_argument("data file must have unit_id, y and domain columns");
  if (c_pi < 0 && c_w < 0) throw std::invalid_argument("data file must have a pi or weight column");
  if (c_pi >= 0 && c_w >= 0)
    throw std::invalid_argument("data file must not have both pi and weight columns");

  LoadedSample out;
  out.has_stratum = c_str >= 0;
  std::vector<double> ys, pis;
  std::map<std::string, int> stratum_ids;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> f = detail::split_csv_line(line);
    if (f.size() < header.size())
      throw std::invalid_argument("line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(header.size()) + " fields");
    out.unit_id.push_back(f[static_cast<std::size_t>(c_id)]);
    ys.push_back(detail::parse_double(f[static_cast<std::size_t>(c_y)], "y", line_no));
    double pi;
    if (c_pi >= 0) {
      pi = detail::parse_double(f[static_cast<std::size_t>(c_pi)], "pi", line_no);
    } else {
      const double w = detail::parse_double(f[static_cast<std::size_t>(c_w)], "weight", line_no);
      if (!(w >= 1.0))
        throw std::invalid_argument("line " + std::to_string(line_no) +
                                    ": weight must be >= 1 (weight = 1/pi)");
      pi = 1.0 / w;
    }
    if (!(pi > 0.0) || pi > 1.0)
      throw std::invalid_argument("line " + std::to_string(line_no) + ": pi must lie in (0,1]");
    pis.push_back(pi);
    const long dom = detail::parse_long(f[static_cast<std::size_t>(c_dom)], "domain", line_no);
    if (dom < 1)
      throw std::invalid_argument("line " + std::to_string(line_no) + ": domain indices are 1-based");
    out.sample.domain.push_back(static_cast<int>(dom - 1));
    out.max_domain = std::max(out.max_domain, static_cast<int>(dom));
    if (c_str >= 0) {
      const std::string& tok = f[static_cast<std::size_t>(c_str)];
      auto [it, fresh] = stratum_ids.try_emplace(tok, static_cast<int>(stratum_ids.size()));
      (void)fresh;
      out.sample.stratum.push_back(it->second);
    }
  }
  if (ys.empty()) throw std::invalid_argument("data file has no rows: " + path);
  out.sample.y = Eigen::Map<Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  out.sample.pi = Eigen::Map<Eigen::VectorXd>(pis.data(), static_cast<Eigen::Index>(pis.size()));
  return out;
}

// ---------------------------------------------------------------------------
// Constraint specification (JSON), one of:
//   {"grid": [D1,...], "monotone": [{"axis": k, "direction": "inc"|"dec"}, ...]}
//   {"tree": {"D": n, "root": r, "direction": "root_smallest"|"root_largest"}}
//   {"pairs": [[lower, upper], ...], "D": n}
//   {"matrix": [[...], ...]}
// Axis, root, domain and pair indices are 1-based in the file.
// ---------------------------------------------------------------------------

struct ConstraintSpec {
  ConstraintMatrix matrix;
  std::optional<std::vector<std::pair<int, int>>> order_pairs;  // 0-based, when given as pairs
};

inline ConstraintSpec parse_constraint_spec(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("constraint spec must be a JSON object");
  const int forms = static_cast<int>(j.contains("grid")) + static_cast<int>(j.contains("tree")) +
                    static_cast<int>(j.contains("pairs")) + static_cast<int>(j.contains("matrix"));
  if (forms != 1)
    throw std::invalid_argument("constraint spec needs exactly one of: grid, tree, pairs, matrix");

  ConstraintSpec out;
  if (j.contains("grid")) {
    std::vector<int> sizes = j.at("grid").get<std::vector<int>>();
    DomainGrid grid(sizes);
    if (!j.contains("monotone") || !j.at("monotone").is_array() || j.at("monotone").empty())
      throw std::invalid_argument("grid form requires a nonempty monotone array");
    std::vector<MonotoneAxis> axes;
    for (const auto& a : j.at("monotone")) {
      MonotoneAxis ax;
      ax.axis = a.at("axis").get<int>() - 1;
      const std::string dir = a.at("direction").get<std::string>();
      if (dir == "inc" || dir == "increasing")
        ax.direction = Direction::increasing;
      else if (dir == "dec" || dir == "decreasing")
        ax.direction = Direction::decreasing;
      else
        throw std::invalid_argument("monotone direction must be 'inc' or 'dec'");
      axes.push_back(ax);
    }
    out.matrix = build_monotone(grid, axes);
  } else if (j.contains("tree")) {
    const auto& t = j.at("tree");
    const int D = t.at("D").get<int>();
    const int root = t.at("root").get<int>() - 1;
    const std::string dir = t.at("direction").get<std::string>();
    TreeDirection td;
    if (dir == "root_smallest")
      td = TreeDirection::root_smallest;
    else if (dir == "root_largest")
      td = TreeDirection::root_largest;
    else
      throw std::invalid_argument("tree direction must be 'root_smallest' or 'root_largest'");
    out.matrix = build_tree_order(D, root, td);
  } else if (j.contains("pairs")) {
    const int D = j.at("D").get<int>();
    std::vector<std::pair<int, int>> pairs;
    for (const auto& p : j.at("pairs")) {
      if (!p.is_array() || p.size() != 2)
        throw std::invalid_argument("each pair must be [lower, upper]");
      pairs.emplace_back(p[0].get<int>() - 1, p[1].get<int>() - 1);
    }
    out.matrix = build_partial_order(pairs, D);
    out.order_pairs = std::move(pairs);
  } else {
    const auto& rows = j.at("matrix");
    if (!rows.is_array() || rows.empty()) throw std::invalid_argument("matrix must be a nonempty array");
    const auto m = static_cast<Eigen::Index>(rows.size());
    const auto D = static_cast<Eigen::Index>(rows[0].size());
    Eigen::MatrixXd M(m, D);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != D)
        throw std::invalid_argument("matrix rows must have equal length");
      for (Eigen::Index d = 0; d < D; ++d)
        M(i, d) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)].get<double>();
    }
    out.matrix = make_constraint_matrix(std::move(M));
  }
  return out;
}

inline ConstraintSpec read_constraint_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open constraint spec: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::invalid_argument("constraint spec is not valid JSON: " + std::string(e.what()));
  }
  return parse_constraint_spec(j);
}

// ---------------------------------------------------------------------------
// Replicate weights: a manifest {"weights_csv": path, "coefficients": [...]}
// next to a CSV holding unit_id plus one weight column per replicate.  Zero
// weights mark deleted units.  Relative CSV paths resolve against the
// manifest's directory.
// ---------------------------------------------------------------------------

struct ReplicateWeights {
  Eigen::MatrixXd weights;      // n x G, aligned with the sample rows
  Eigen::VectorXd combination;  // c_g
};

inline ReplicateWeights read_replicate_weights(const std::string& manifest_path,
                                               const std::vector<std::string>& unit_id) {
  std::ifstream in(manifest_path);
  if (!in) throw std::invalid_argument("cannot open replicate manifest: " + manifest_path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::invalid_argument("replicate manifest is not valid JSON: " + std::string(e.what()));
  }
  if (!j.contains("weights_csv") || !j.contains("coefficients"))
    throw std::invalid_argument("replicate manifest needs weights_csv and coefficients");

  std::filesystem::path csv = j.at("weights_csv").get<std::string>();
  if (csv.is_relative()) csv = std::filesystem::path(manifest_path).parent_path() / csv;

  std::ifstream win(csv);
  if (!win) throw std::invalid_argument("cannot open replicate weights: " + csv.string());
  std::string line;
  if (!std::getline(win, line)) throw std::invalid_argument("replicate weights file is empty");
  const std::vector<std::string> header = detail::split_csv_line(line);
  if (header.size() < 2 || header[0] != "unit_id")
    throw std::invalid_argument("replicate weights must start with a unit_id column");
  const int G = static_cast<int>(header.size()) - 1;

  std::map<std::string, std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(win, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> f = detail::split_csv_line(line);
    if (f.size() != header.size())
      throw std::invalid_argument("replicate weights line " + std::to_string(line_no) +
                                  ": wrong field count");
    std::vector<double> w(static_cast<std::size_t>(G));
    for (int g = 0; g < G; ++g)
      w[static_cast<std::size_t>(g)] =
          detail::parse_double(f[static_cast<std::size_t>(g + 1)], "weight", line_no);
    rows[f[0]] = std::move(w);
  }

  ReplicateWeights out;
  out.weights.resize(static_cast<Eigen::Index>(unit_id.size()), G);
  for (std::size_t k = 0; k < unit_id.size(); ++k) {
    auto it = rows.find(unit_id[k]);
    if (it == rows.end())
      throw std::invalid_argument("replicate weights missing unit_id '" + unit_id[k] + "'");
    for (int g = 0; g < G; ++g) out.weights(static_cast<Eigen::Index>(k), g) = it->second[static_cast<std::size_t>(g)];
  }
  const std::vector<double> c = j.at("coefficients").get<std::vector<double>>();
  if (static_cast<int>(c.size()) != G)
    throw std::invalid_argument("coefficients length must match the weight column count");
  out.combination = Eigen::Map<const Eigen::VectorXd>(c.data(), G);
  return out;
}

// ---------------------------------------------------------------------------
// Study configuration (JSON) for the simulation driver.
// ---------------------------------------------------------------------------

inline StudyConfig read_study_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open study config: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::invalid_argument("study config is not valid JSON: " + std::string(e.what()));
  }

  StudyConfig cfg;
  if (j.contains("grid")) {
    const std::vector<int> g = j.at("grid").get<std::vector<int>>();
    if (g.size() != 2) throw std::invalid_argument("grid must have two factor sizes");
    cfg.population.d1 = g[0];
    cfg.population.d2 = g[1];
  }
  if (j.contains("units_per_domain")) cfg.population.units_per_domain = j.at("units_per_domain").get<int>();
  if (j.contains("sigma")) cfg.population.sigma = j.at("sigma").get<double>();
  if (j.contains("shape")) {
    const std::string s = j.at("shape").get<std::string>();
    if (s == "double_monotone")
      cfg.shape = Shape::double_monotone;
    else if (s == "x1_only")
      cfg.shape = Shape::x1_only;
    else
      throw std::invalid_argument("shape must be 'double_monotone' or 'x1_only'");
  }
  if (j.contains("allocation")) {
    cfg.allocation = j.at("allocation").get<std::vector<int>>();
    if (cfg.allocation.empty()) throw std::invalid_argument("allocation must be nonempty");
  } else if (j.contains("n")) {
    const int n = j.at("n").get<int>();
    if (n % 480 != 0) throw std::invalid_argument("n must be a multiple of 480, or give allocation");
    const int scale = n / 480;
    cfg.allocation = {60 * scale, 120 * scale, 120 * scale, 180 * scale};
  }
  if (j.contains("variance")) {
    const std::string v = j.at("variance").get<std::string>();
    if (v == "none")
      cfg.variance = VarianceMethod::none;
    else if (v == "linearization")
      cfg.variance = VarianceMethod::linearization;
    else if (v == "dagjk")
      cfg.variance = VarianceMethod::dagjk;
    else
      throw std::invalid_argument("variance must be 'none', 'linearization' or 'dagjk'");
  }
  if (j.contains("groups")) cfg.groups = j.at("groups").get<int>();
  if (j.contains("level")) cfg.level = j.at("level").get<double>();
  if (j.contains("reps")) cfg.reps = j.at("reps").get<int>();
  if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();
  return cfg;
}

inline json study_config_json(const StudyConfig& cfg) {
  json j;
  j["grid"] = {cfg.population.d1, cfg.population.d2};
  j["units_per_domain"] = cfg.population.units_per_domain;
  j["sigma"] = cfg.population.sigma;
  j["shape"] = cfg.shape == Shape::double_monotone ? "double_monotone" : "x1_only";
  j["allocation"] = cfg.allocation;
  switch (cfg.variance) {
    case VarianceMethod::none: j["variance"] = "none"; break;
    case VarianceMethod::linearization: j["variance"] = "linearization"; break;
    case VarianceMethod::dagjk:
      j["variance"] = "dagjk";
      j["groups"] = cfg.groups;
      break;
  }
  // The thread count is deliberately not echoed: results are identical for
  // any thread count, and the echo should be too.
  j["level"] = cfg.level;
  j["reps"] = cfg.reps;
  j["seed"] = cfg.population.seed;
  return j;
}

// ---------------------------------------------------------------------------
// Simulation report: JSON plus two CSV tables (per-domain figures and the
// study-level error summary).
// ---------------------------------------------------------------------------

inline json report_json(const SimulationReport& rep, const StudyConfig& cfg) {
  json j;
  j["schema_version"] = 1;
  j["config"] = study_config_json(cfg);
  j["reps"] = rep.reps;
  j["wmse"] = {{"unconstrained", rep.wmse_unconstrained}, {"constrained", rep.wmse_constrained}};
  j["negative_variance_clamps"] = rep.negative_clamps;
  j["domains"] = json::array();
  for (std::size_t d = 0; d < rep.domains.size(); ++d) {
    const DomainSummary& ds = rep.domains[d];
    json rec;
    rec["domain"] = d + 1;
    rec["true_mean"] = ds.true_mean;
    rec["mean_unconstrained"] = ds.mean_unconstrained;
    rec["mean_constrained"] = ds.mean_constrained;
    rec["p2_5_unconstrained"] = ds.p025_unconstrained;
    rec["p97_5_unconstrained"] = ds.p975_unconstrained;
    rec["p2_5_constrained"] = ds.p025_constrained;
    rec["p97_5_constrained"] = ds.p975_constrained;
    rec["mc_variance_unconstrained"] = ds.mc_var_unconstrained;
    rec["mc_variance_constrained"] = ds.mc_var_constrained;
    if (rep.has_variance) {
      rec["mean_varest_unconstrained"] = ds.mean_varest_unconstrained;
      rec["mean_varest_constrained"] = ds.mean_varest_constrained;
      rec["coverage_unconstrained"] = ds.coverage_unconstrained;
      rec["coverage_constrained"] = ds.coverage_constrained;
    }
    j["domains"].push_back(rec);
  }
  j["faces"] = json::array();
  for (const FaceFrequency& ff : rep.faces) {
    std::vector<int> face1;
    face1.reserve(ff.face.size());
    for (int e : ff.face) face1.push_back(e + 1);
    j["faces"].push_back({{"face", face1}, {"count", ff.count}});
  }
  return j;
}

inline void write_report_files(const std::string& dir, const SimulationReport& rep, const StudyConfig& cfg) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(std::filesystem::path(dir) / "report.json");
    out << report_json(rep, cfg).dump(2) << '\n';
  }
  {
    std::ofstream out(std::filesystem::path(dir) / "domains.csv");
    out.precision(17);
    out << "domain,true_mean,mean_unconstrained,mean_constrained,p2_5_unconstrained,p97_5_unconstrained,"
           "p2_5_constrained,p97_5_constrained,mc_variance_unconstrained,mc_variance_constrained,"
           "mean_varest_unconstrained,mean_varest_constrained,coverage_unconstrained,coverage_constrained\n";
    for (std::size_t d = 0; d < rep.domains.size(); ++d) {
      const DomainSummary& ds = rep.domains[d];
      out << d + 1 << ',' << ds.true_mean << ',' << ds.mean_unconstrained << ',' << ds.mean_constrained
          << ',' << ds.p025_unconstrained << ',' << ds.p975_unconstrained << ',' << ds.p025_constrained
          << ',' << ds.p975_constrained << ',' << ds.mc_var_unconstrained << ',' << ds.mc_var_constrained;
      if (rep.has_variance)
        out << ',' << ds.mean_varest_unconstrained << ',' << ds.mean_varest_constrained << ','
            << ds.coverage_unconstrained << ',' << ds.coverage_constrained;
      else
        out << ",,,,";
      out << '\n';
    }
  }
  {
    std::ofstream out(std::filesystem::path(dir) / "wmse.csv");
    out.precision(17);
    out << "estimator,wmse\n";
    out << "unconstrained," << rep.wmse_unconstrained << '\n';
    out << "constrained," << rep.wmse_constrained << '\n';
  }
}

}  // namespace conest::io
