#pragma once

#include "edln/io.hpp"
#include "edln/trainer.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace edln {

inline constexpr const char* kVersion = "1.0.0";

/// Module name -> version, embedded in every scenario output header.
const std::vector<std::pair<std::string, std::string>>& module_versions();

const std::vector<std::string>& scenario_names();

struct NetSpec {
  int depth = 2;
  /// Used for every hidden layer unless `widths` is given.
  Eigen::Index width = 6;
  /// D-1 explicit hidden widths; empty means `width` everywhere.
  std::vector<Eigen::Index> widths;
  double embedding_cond = 3.0;
  double init_scale = 1.0;
  /// M^I = M^O = I.
  bool identity_embeddings = false;

  std::vector<Eigen::Index> hidden_dims() const;
};

struct ScenarioConfig {
  std::string scenario;
  std::uint64_t seed = 0;
  /// Independent repetitions (data models, initializations or transform draws).
  int instances = 1;
  DataModelOptions data;
  NetSpec net_a;
  NetSpec net_b;
  TrainConfig train;
  int probes = 64;
  std::uint64_t probe_seed = 4242;
  std::string outdir = "runs";
  /// False skips every file write.
  bool write_artifacts = true;
  /// Sweep parallelism.
  int parallelism = 1;
  /// Scenario-specific knobs; the accepted keys are fixed per scenario.
  std::map<std::string, double> params;
  /// Verdict thresholds; the accepted keys are fixed per scenario.
  std::map<std::string, double> thresholds;

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
  /// 16 hex digits of FNV-1a over the snapshot without outdir/parallelism.
  std::string hash() const;
};

/// Fully populated default document for a scenario.
Json default_config_json(const std::string& scenario);

/// Overlays `user` onto the scenario defaults (RFC 7386 merge) and parses.
/// `scenario` overrides the document's "scenario" key when non-empty.
ScenarioConfig load_config(const Json& user, const std::string& scenario = "");
ScenarioConfig config_from_json(const Json& j);
Json config_to_json(const ScenarioConfig& cfg);

struct Check {
  std::string name;
  double value = 0.0;
  /// One of "<", "<=", ">", ">=".
  std::string op;
  double threshold = 0.0;
  bool pass = false;
};

struct ScenarioResult {
  std::string scenario;
  std::string config_hash;
  /// Ordered named scalars.
  std::vector<std::pair<std::string, double>> summary;
  std::vector<Check> checks;
  /// Artifact kind -> path.
  std::map<std::string, std::string> artifacts;
  bool pass = false;
  /// Set when the run aborted; pass is then false.
  std::string error;

  double metric(const std::string& name) const;
  std::string summary_csv() const;
};

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs one scenario end to end. Failures of sub-operations are rethrown as
/// ScenarioError carrying the scenario name; artifacts written so far stay.
ScenarioResult run_scenario(const ScenarioConfig& cfg);

struct SweepAxis {
  /// Dotted path into the config document ("train.weight_decay"), or a bare
  /// key that is set wherever it occurs in the top level, data, train,
  /// params, thresholds, net_a and net_b sections.
  std::string name;
  std::vector<Json> values;
};

/// Parses "name=v1,v2,..."; values are read as JSON scalars, else strings.
SweepAxis parse_axis(const std::string& text);

struct SweepRun {
  std::map<std::string, Json> point;
  ScenarioResult result;
};

/// Cartesian product over the axes, one run each, up to cfg parallelism at a
/// time. Failed runs are recorded and the sweep continues. Writes
/// <outdir>/sweep_<hash>.csv when artifacts are enabled.
std::vector<SweepRun> sweep(const Json& base, const std::vector<SweepAxis>& axes,
                            std::string* csv_path = nullptr);

std::string sweep_csv(const std::vector<SweepRun>& runs, const std::vector<SweepAxis>& axes);

}  // namespace edln
