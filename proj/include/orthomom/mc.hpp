#ifndef ORTHOMOM_MC_HPP
#define ORTHOMOM_MC_HPP

#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace orthomom {

// One Monte Carlo study: R replications of simulate -> pipeline. Replication
// r draws its dataset with derive_seed(seed, r) and seeds folds with
// derive_seed(derive_seed(seed, r), 77), so each record is fully determined
// by (config, r) regardless of thread count.
//
// pipelines:
//   plm-test      score test of theta = theta_bar        -> statistic, p_value, reject
//   plm-estimate  one or more theta estimators           -> tag.theta_hat, tag.se, tag.covered
//   hte-test      orthogonal test of eta4_l = eta4_bar   -> statistic, p_value, reject
//   hte-estimate  ratio estimator of eta4_l              -> eta4_hat, se, covered
//   hte-ci        test-inversion confidence interval     -> lo, hi, covered, length, empty
//   funcdiff-test t-test of a fixed mixture moment       -> statistic, p_value, reject
struct McConfig {
  std::string pipeline;
  int R = 100;
  long long n = 1000;
  std::uint64_t seed = 0;
  double level = 0.05;
  int threads = 1;              // execution hint only; never serialized
  nlohmann::json dgp;           // family-specific settings (seed/n come from above)
  nlohmann::json pipeline_config;

  static McConfig from_json(const nlohmann::json& j);
  static McConfig from_json_file(const std::string& path);
  nlohmann::json to_json() const;  // canonical echo, excludes threads
};

struct McRecord {
  int rep = 0;
  bool failed = false;
  std::string error_code;      // set when failed
  std::vector<double> values;  // aligned with McReport::value_names; empty when failed
};

struct McReport {
  McConfig config;
  std::vector<std::string> value_names;
  std::vector<McRecord> records;  // size R, in replication order
  int n_failed = 0;
  nlohmann::json aggregates;      // pipeline-specific summary block
  double wall_seconds = 0;        // informational; never serialized

  // schema_version / config echo / counts / failure_codes / aggregates.
  // Deterministic for a fixed config: independent of threads and wall clock.
  nlohmann::json to_json() const;

  // rep, failed, then one numeric column per value name ("%.17g"); failed
  // replications carry nan in every value column. Header + R rows.
  void write_records_csv(const std::string& path) const;
};

// Failed replications are excluded from every aggregate; rejection and
// coverage rates divide by the success count (reported as "denominator").
McReport mc_run(const McConfig& cfg);

}  // namespace orthomom

#endif
