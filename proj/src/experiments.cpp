#include "edln/experiments.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace edln {

namespace fs = std::filesystem;

const std::vector<std::pair<std::string, std::string>>& module_versions() {
  static const std::vector<std::pair<std::string, std::string>> v{
      {"edln_core", kVersion}, {"data_gen", kVersion}, {"trainer", kVersion},
      {"theory", kVersion},    {"metrics", kVersion},  {"experiments", kVersion}};
  return v;
}

const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{
      "platonic_closed_form", "platonic_sgd",        "non_platonic_minima",
      "weight_decay_break",   "gradient_flow_break", "label_transform_break",
      "saddle_break",         "heterogeneity_break", "progressive_sharpening",
      "invariant_suite"};
  return names;
}

namespace {

const std::map<std::string, std::string>& scenario_descriptions() {
  static const std::map<std::string, std::string> d{
      {"platonic_closed_form", "closed-form entropic minima of two embedded nets are perfectly aligned"},
      {"platonic_sgd", "entropic training from independent inits reaches aligned, balanced minima"},
      {"non_platonic_minima", "interface transforms keep the loss and break alignment"},
      {"weight_decay_break", "weight decay selects view-dependent representations"},
      {"gradient_flow_break", "gradient flow conserves Q_i and keeps init dependence"},
      {"label_transform_break", "label transforms change the whitened representation"},
      {"saddle_break", "low-rank saddles are only partially aligned with the minimum"},
      {"heterogeneity_break", "view-specific feature noise breaks alignment"},
      {"progressive_sharpening", "sharpness grows while training toward the entropic minimum"},
      {"invariant_suite", "numerical foundations and module invariants"}};
  return d;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for stream `stream`, repetition k.
std::uint64_t derive(std::uint64_t seed, std::uint64_t stream, int k) {
  return splitmix(seed ^ splitmix(stream * 1000003ULL + static_cast<std::uint64_t>(k)));
}

enum Stream : std::uint64_t {
  kData = 1, kNetA, kNetB, kRotA, kRotB, kTrainA, kTrainB, kTransform, kLabel, kProbe, kSuite
};

Json net_json(int depth, Eigen::Index width, double init_scale = 1.0) {
  return {{"depth", depth},
          {"width", width},
          {"widths", Json::array()},
          {"embedding_cond", 3.0},
          {"init_scale", init_scale},
          {"identity_embeddings", false}};
}

Json train_json(const TrainConfig& t) {
  return {{"algorithm", to_string(t.algorithm)},
          {"learning_rate", t.learning_rate},
          {"batch_size", t.batch_size},
          {"steps", t.steps},
          {"weight_decay", t.weight_decay},
          {"entropic_coeff", t.entropic_coeff},
          {"expectation_mode", t.expectation_mode == ExpectationMode::kAnalytic ? "analytic" : "monte_carlo"},
          {"mc_samples", t.mc_samples},
          {"record_every", t.record_every},
          {"sharpness_every", t.sharpness_every},
          {"checkpoint_every", t.checkpoint_every},
          {"entropy_gradient", t.entropy_gradient == EntropyGradient::kAnalytic ? "analytic" : "finite_difference"},
          {"constraint_tol", t.constraint_tol},
          {"stationarity_tol", t.stationarity_tol}};
}

TrainConfig constrained_defaults() {
  TrainConfig t;
  t.algorithm = Algorithm::kEntropicConstrained;
  t.learning_rate = 1e-3;
  t.steps = 1000;
  t.record_every = 100;
  return t;
}

void check_keys(const Json& defaults, const Json& actual, const std::string& path) {
  for (const auto& [key, value] : actual.items()) {
    if (path == "/params" || path == "/thresholds") {
      if (!defaults.contains(key))
        throw std::invalid_argument("unknown key '" + key + "' in " + path.substr(1));
      if (!value.is_number()) throw std::invalid_argument(path.substr(1) + "." + key + " must be a number");
      continue;
    }
    if (!defaults.contains(key))
      throw std::invalid_argument("unknown config key '" + (path.empty() ? "" : path.substr(1) + ".") + key + "'");
    if (defaults[key].is_object()) {
      if (!value.is_object()) throw std::invalid_argument("config key '" + key + "' must be an object");
      check_keys(defaults[key], value, path + "/" + key);
    }
  }
}

ExpectationMode mode_from_string(const std::string& s) {
  if (s == "analytic") return ExpectationMode::kAnalytic;
  if (s == "monte_carlo") return ExpectationMode::kMonteCarlo;
  throw std::invalid_argument("unknown expectation_mode '" + s + "'");
}

EntropyGradient entropy_gradient_from_string(const std::string& s) {
  if (s == "analytic") return EntropyGradient::kAnalytic;
  if (s == "finite_difference") return EntropyGradient::kFiniteDifference;
  throw std::invalid_argument("unknown entropy_gradient '" + s + "'");
}

NetSpec net_from_json(const Json& j) {
  NetSpec n;
  n.depth = j.at("depth").get<int>();
  n.width = j.at("width").get<Eigen::Index>();
  n.widths = j.at("widths").get<std::vector<Eigen::Index>>();
  n.embedding_cond = j.at("embedding_cond").get<double>();
  n.init_scale = j.at("init_scale").get<double>();
  n.identity_embeddings = j.at("identity_embeddings").get<bool>();
  return n;
}

Json net_to_json(const NetSpec& n) {
  return {{"depth", n.depth},
          {"width", n.width},
          {"widths", n.widths},
          {"embedding_cond", n.embedding_cond},
          {"init_scale", n.init_scale},
          {"identity_embeddings", n.identity_embeddings}};
}

std::string fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << h;
  return out.str();
}

}  // namespace

std::vector<Eigen::Index> NetSpec::hidden_dims() const {
  if (!widths.empty()) return widths;
  return std::vector<Eigen::Index>(static_cast<std::size_t>(std::max(depth - 1, 0)), width);
}

Json default_config_json(const std::string& scenario) {
  const auto& names = scenario_names();
  if (std::find(names.begin(), names.end(), scenario) == names.end())
    throw std::invalid_argument("unknown scenario '" + scenario + "'");
  const DataModelOptions d;
  Json j{{"scenario", scenario},
         {"seed", 0},
         {"instances", 1},
         {"data",
          {{"input_dim", d.input_dim},
           {"output_dim", d.output_dim},
           {"rank", d.rank},
           {"cond_x", d.cond_x},
           {"cond_z", d.cond_z},
           {"cond_eps", d.cond_eps},
           {"noise_var", d.noise_var}}},
         {"net_a", net_json(2, 6)},
         {"net_b", net_json(3, 10)},
         {"train", train_json(constrained_defaults())},
         {"probes", 64},
         {"probe_seed", 4242},
         {"outdir", "runs"},
         {"write_artifacts", true},
         {"parallelism", 1},
         {"params", Json::object()},
         {"thresholds", Json::object()}};
  Json& p = j["params"];
  Json& t = j["thresholds"];

  if (scenario == "platonic_closed_form") {
    j["instances"] = 20;
    t = {{"min_alignment", 1 - 1e-8},
         {"max_loss_gap", 1e-10},
         {"max_product_error", 1e-9},
         {"max_balance_residual", 1e-8}};
  } else if (scenario == "platonic_sgd") {
    j["instances"] = 5;
    t = {{"min_alignment", 0.99}, {"max_balance_residual", 1e-3}, {"max_loss_gap", 1e-2}};
  } else if (scenario == "non_platonic_minima") {
    j["instances"] = 20;
    p = {{"transform_magnitude", 2.0}, {"interface", 1}};
    t = {{"max_loss_delta", 1e-10}, {"alignment_below", 0.95}, {"min_successes", 18}};
  } else if (scenario == "weight_decay_break") {
    j["instances"] = 3;
    j["data"]["cond_z"] = 10.0;
    j["net_a"] = net_json(2, 8);
    j["net_b"] = net_json(2, 8);
    TrainConfig sgd;
    sgd.algorithm = Algorithm::kSgd;
    sgd.learning_rate = 0.005;
    sgd.steps = 40000;
    sgd.weight_decay = 1e-2;
    sgd.record_every = 4000;
    j["train"] = train_json(sgd);
    p = {{"entropic_learning_rate", 1e-3},
         {"entropic_steps", 1000},
         {"commuting_dim", 6},
         {"commuting_rank", 6},
         {"commuting_depth", 2},
         {"commuting_cond_z", 3.0},
         {"commuting_weight_decay", 1e-2},
         {"commuting_learning_rate", 0.01},
         {"commuting_steps", 40000}};
    t = {{"min_gap", 0.05}, {"max_layer_error", 0.05}, {"max_hidden_error", 1e-2}};
  } else if (scenario == "gradient_flow_break") {
    j["instances"] = 3;
    j["net_a"] = net_json(2, 6, 0.5);
    j["net_b"] = net_json(2, 6, 1.3);
    TrainConfig gf;
    gf.algorithm = Algorithm::kGradientFlow;
    gf.learning_rate = 1e-3;
    gf.steps = 40000;
    gf.record_every = 1000;
    j["train"] = train_json(gf);
    t = {{"max_relative_drift", 1e-6},
         {"min_init_gap", 1.0},
         {"max_alignment", 0.99},
         {"max_loss_gap", 1e-2}};
  } else if (scenario == "label_transform_break") {
    j["instances"] = 20;
    j["net_b"] = net_json(2, 6);
    p = {{"label_cond", 5.0}};
    t = {{"max_label_alignment", 1 - 1e-3}, {"min_control_alignment", 1 - 1e-8}};
  } else if (scenario == "saddle_break") {
    j["instances"] = 20;
    p = {{"saddle_rank", 2}};
    t = {{"min_alignment", 0.0}, {"max_alignment", 1 - 1e-6}};
  } else if (scenario == "heterogeneity_break") {
    j["instances"] = 3;
    p = {{"feature_variance", 0.5}};
    t = {{"max_alignment", 0.95}};
  } else if (scenario == "progressive_sharpening") {
    j["instances"] = 5;
    j["data"]["cond_z"] = 100.0;
    j["net_a"] = net_json(2, 8, 0.1);
    TrainConfig ent;
    ent.algorithm = Algorithm::kEntropicExplicit;
    ent.learning_rate = 1e-3;
    ent.entropic_coeff = 1e-3;
    ent.steps = 40000;
    ent.record_every = 4000;
    ent.sharpness_every = 4000;
    j["train"] = train_json(ent);
    p = {{"early_fraction", 0.1}};
    t = {{"min_sharpening_runs", 4}};
  } else if (scenario == "invariant_suite") {
    j["instances"] = 50;
    p = {{"mc_samples", 100000}};
    t = {{"max_gradient_error", 1e-6},
         {"max_mc_error", 0.03},
         {"max_symmetry_error", 1e-8},
         {"max_sharpness_error", 1e-3},
         {"max_orbit_violations", 0},
         {"max_closed_form_error", 1e-8},
         {"max_gf_drift", 1e-6}};
  }
  return j;
}

ScenarioConfig config_from_json(const Json& j) {
  ScenarioConfig c;
  try {
    c.scenario = j.at("scenario").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.instances = j.at("instances").get<int>();
    const Json& d = j.at("data");
    c.data.input_dim = d.at("input_dim").get<Eigen::Index>();
    c.data.output_dim = d.at("output_dim").get<Eigen::Index>();
    c.data.rank = d.at("rank").get<Eigen::Index>();
    c.data.cond_x = d.at("cond_x").get<double>();
    c.data.cond_z = d.at("cond_z").get<double>();
    c.data.cond_eps = d.at("cond_eps").get<double>();
    c.data.noise_var = d.at("noise_var").get<double>();
    c.net_a = net_from_json(j.at("net_a"));
    c.net_b = net_from_json(j.at("net_b"));
    const Json& t = j.at("train");
    c.train.algorithm = algorithm_from_string(t.at("algorithm").get<std::string>());
    c.train.learning_rate = t.at("learning_rate").get<double>();
    c.train.batch_size = t.at("batch_size").get<int>();
    c.train.steps = t.at("steps").get<int>();
    c.train.weight_decay = t.at("weight_decay").get<double>();
    c.train.entropic_coeff = t.at("entropic_coeff").get<double>();
    c.train.expectation_mode = mode_from_string(t.at("expectation_mode").get<std::string>());
    c.train.mc_samples = t.at("mc_samples").get<int>();
    c.train.record_every = t.at("record_every").get<int>();
    c.train.sharpness_every = t.at("sharpness_every").get<int>();
    c.train.checkpoint_every = t.at("checkpoint_every").get<int>();
    c.train.entropy_gradient = entropy_gradient_from_string(t.at("entropy_gradient").get<std::string>());
    c.train.constraint_tol = t.at("constraint_tol").get<double>();
    c.train.stationarity_tol = t.at("stationarity_tol").get<double>();
    c.probes = j.at("probes").get<int>();
    c.probe_seed = j.at("probe_seed").get<std::uint64_t>();
    c.outdir = j.at("outdir").get<std::string>();
    c.write_artifacts = j.at("write_artifacts").get<bool>();
    c.parallelism = j.at("parallelism").get<int>();
    c.params = j.at("params").get<std::map<std::string, double>>();
    c.thresholds = j.at("thresholds").get<std::map<std::string, double>>();
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("malformed config: ") + e.what());
  }
  return c;
}

Json config_to_json(const ScenarioConfig& c) {
  Json j = default_config_json(c.scenario);
  j["seed"] = c.seed;
  j["instances"] = c.instances;
  j["data"] = {{"input_dim", c.data.input_dim}, {"output_dim", c.data.output_dim},
               {"rank", c.data.rank},           {"cond_x", c.data.cond_x},
               {"cond_z", c.data.cond_z},       {"cond_eps", c.data.cond_eps},
               {"noise_var", c.data.noise_var}};
  j["net_a"] = net_to_json(c.net_a);
  j["net_b"] = net_to_json(c.net_b);
  j["train"] = train_json(c.train);
  j["probes"] = c.probes;
  j["probe_seed"] = c.probe_seed;
  j["outdir"] = c.outdir;
  j["write_artifacts"] = c.write_artifacts;
  j["parallelism"] = c.parallelism;
  j["params"] = c.params;
  j["thresholds"] = c.thresholds;
  return j;
}

ScenarioConfig load_config(const Json& user, const std::string& scenario) {
  if (!user.is_null() && !user.is_object()) throw std::invalid_argument("config must be an object");
  std::string name = scenario;
  if (name.empty()) {
    if (!user.is_object() || !user.contains("scenario"))
      throw std::invalid_argument("config names no scenario");
    name = user["scenario"].get<std::string>();
  }
  const Json defaults = default_config_json(name);
  Json merged = defaults;
  if (user.is_object()) {
    check_keys(defaults, user, "");
    merged.merge_patch(user);
  }
  merged["scenario"] = name;
  ScenarioConfig c = config_from_json(merged);
  c.validate();
  return c;
}

void ScenarioConfig::validate() const {
  auto fail = [&](const std::string& m) { throw std::invalid_argument(scenario + ": " + m); };
  const auto& names = scenario_names();
  if (std::find(names.begin(), names.end(), scenario) == names.end()) fail("unknown scenario");
  if (instances < 1) fail("instances must be >= 1");
  if (probes < 10) fail("probes must be >= 10");
  if (parallelism < 1) fail("parallelism must be >= 1");
  if (data.input_dim < 1 || data.output_dim < 1) fail("data dims must be positive");
  if (data.rank < 1 || data.rank > std::min(data.input_dim, data.output_dim))
    fail("data.rank must lie in [1, min(input_dim, output_dim)]");
  if (data.cond_x < 1 || data.cond_z < 1 || data.cond_eps < 1) fail("condition numbers must be >= 1");
  if (data.noise_var <= 0) fail("data.noise_var must be positive");
  for (const NetSpec* n : {&net_a, &net_b}) {
    if (n->depth < 1) fail("network depth must be >= 1");
    if (!n->widths.empty() && static_cast<int>(n->widths.size()) != n->depth - 1)
      fail("widths must list depth - 1 hidden sizes");
    for (Eigen::Index w : n->hidden_dims())
      if (w < 1) fail("hidden widths must be positive");
    if (n->embedding_cond < 1) fail("embedding_cond must be >= 1");
    if (n->init_scale <= 0) fail("init_scale must be positive");
  }
  train.validate();
  for (const auto& [k, v] : default_config_json(scenario)["thresholds"].items())
    if (!thresholds.count(k)) fail("missing threshold '" + k + "'");
  for (const auto& [k, v] : default_config_json(scenario)["params"].items())
    if (!params.count(k)) fail("missing parameter '" + k + "'");

  auto closed_form_ok = [&](const NetSpec& n) {
    if (n.depth < 2) fail("closed-form scenarios need depth >= 2");
    for (Eigen::Index w : n.hidden_dims())
      if (w < data.rank) fail("hidden widths must be >= data.rank for the closed form");
  };
  if (scenario == "platonic_closed_form" || scenario == "platonic_sgd" ||
      scenario == "label_transform_break" || scenario == "saddle_break") {
    closed_form_ok(net_a);
    closed_form_ok(net_b);
  }
  if (scenario == "non_platonic_minima") {
    closed_form_ok(net_a);
    closed_form_ok(net_b);
    const int i = static_cast<int>(params.at("interface"));
    if (i < 1 || i > net_a.depth - 1) fail("params.interface must lie in 1..net_a.depth-1");
    if (params.at("transform_magnitude") <= 0) fail("transform_magnitude must be positive");
  }
  if (scenario == "saddle_break") {
    const double r = params.at("saddle_rank");
    if (r < 1 || r >= static_cast<double>(data.rank)) fail("saddle_rank must lie in [1, rank)");
  }
  if (scenario == "label_transform_break" && params.at("label_cond") < 1) fail("label_cond must be >= 1");
  if (scenario == "heterogeneity_break" && params.at("feature_variance") <= 0)
    fail("feature_variance must be positive");
  if (scenario == "weight_decay_break") {
    if (params.at("commuting_depth") < 2) fail("commuting_depth must be >= 2");
    if (params.at("commuting_rank") < 1 || params.at("commuting_rank") > params.at("commuting_dim"))
      fail("commuting_rank must lie in [1, commuting_dim]");
    if (params.at("commuting_weight_decay") <= 0) fail("commuting_weight_decay must be positive");
    if (params.at("entropic_steps") < 1 || params.at("commuting_steps") < 1) fail("step counts must be positive");
  }
  if (scenario == "progressive_sharpening") {
    const double f = params.at("early_fraction");
    if (f <= 0 || f >= 1) fail("early_fraction must lie in (0, 1)");
    const int early = static_cast<int>(std::lround(f * train.steps));
    const int every = train.sharpness_every > 0 ? train.sharpness_every : early;
    if (early < 1 || early % every != 0 || train.steps % every != 0)
      fail("sharpness_every must divide both the early step and the step count");
  }
}

std::string ScenarioConfig::hash() const {
  Json j = config_to_json(*this);
  j.erase("outdir");
  j.erase("parallelism");
  j.erase("write_artifacts");
  return fnv1a(j.dump());
}

double ScenarioResult::metric(const std::string& name) const {
  for (const auto& [k, v] : summary)
    if (k == name) return v;
  throw std::out_of_range("no metric '" + name + "'");
}

std::string ScenarioResult::summary_csv() const {
  std::ostringstream out;
  out << "# edln scenario=" << scenario << " config_hash=" << config_hash << " versions=";
  bool first = true;
  for (const auto& [m, v] : module_versions()) {
    out << (first ? "" : ";") << m << ":" << v;
    first = false;
  }
  out << "\n";
  if (auto it = scenario_descriptions().find(scenario); it != scenario_descriptions().end())
    out << "# " << it->second << "\n";
  out << "kind,name,value,op,threshold,pass\n";
  for (const auto& [k, v] : summary) out << "metric," << k << "," << format_double(v) << ",,,\n";
  for (const auto& c : checks)
    out << "check," << c.name << "," << format_double(c.value) << "," << c.op << ","
        << format_double(c.threshold) << "," << (c.pass ? 1 : 0) << "\n";
  out << "verdict,pass," << (pass ? 1 : 0) << ",,," << (pass ? 1 : 0) << "\n";
  return out.str();
}

namespace {

class Recorder {
 public:
  explicit Recorder(const ScenarioConfig& cfg) : cfg_(cfg) {
    result_.scenario = cfg.scenario;
    result_.config_hash = cfg.hash();
    if (cfg.write_artifacts) {
      dir_ = fs::path(cfg.outdir) / cfg.scenario / result_.config_hash;
      fs::create_directories(dir_);
      write("config", "config.snapshot", config_to_json(cfg).dump(2) + "\n");
    }
  }

  void metric(const std::string& name, double v) { result_.summary.emplace_back(name, v); }

  void check(const std::string& name, double value, const std::string& op, const std::string& threshold) {
    const double t = cfg_.thresholds.at(threshold);
    bool ok = false;
    if (op == "<") ok = value < t;
    else if (op == "<=") ok = value <= t;
    else if (op == ">") ok = value > t;
    else if (op == ">=") ok = value >= t;
    result_.checks.push_back({name, value, op, t, ok});
  }

  void write(const std::string& kind, const std::string& file, const std::string& text) {
    if (!cfg_.write_artifacts) return;
    const fs::path p = dir_ / file;
    write_text_file(p, text);
    result_.artifacts[kind] = p.string();
  }

  void network(const std::string& kind, const std::string& file, const EdlnNetwork& net) {
    if (!cfg_.write_artifacts) return;
    const fs::path p = dir_ / "networks" / file;
    save_network(net, p);
    result_.artifacts[kind] = p.string();
  }

  void trace(const std::string& kind, const std::string& file, const TrainTrace& trace,
             const std::string& ckpt_dir) {
    if (!cfg_.write_artifacts) return;
    write(kind, file, trace.csv());
    for (const auto& c : trace.checkpoints)
      save_network(c.net, dir_ / "networks" / ckpt_dir / ("ckpt_" + std::to_string(c.step) + ".net"));
    if (!trace.checkpoints.empty()) result_.artifacts[kind + "_checkpoints"] = (dir_ / "networks" / ckpt_dir).string();
  }

  void model(const DataModel& dm) {
    if (!cfg_.write_artifacts) return;
    const fs::path p = dir_ / "data_model.json";
    save_data_model(dm, p);
    result_.artifacts["data_model"] = p.string();
  }

  void alignment(const Matrix& scores, const EdlnNetwork& a, const EdlnNetwork& b) {
    write("alignment", "alignment.csv", alignment_csv(scores, alignment_layers(a), alignment_layers(b)));
  }

  ScenarioResult finish() {
    result_.pass = !result_.checks.empty();
    for (const auto& c : result_.checks) result_.pass = result_.pass && c.pass;
    write("summary", "summary.csv", result_.summary_csv());
    return result_;
  }

  ScenarioResult& result() { return result_; }
  const fs::path& dir() const { return dir_; }

 private:
  const ScenarioConfig& cfg_;
  ScenarioResult result_;
  fs::path dir_;
};

DataModel make_model(const ScenarioConfig& cfg, int k) {
  DataModelOptions o = cfg.data;
  o.tags = {"A", "B"};
  o.seed = derive(cfg.seed, kData, k);
  return make_data_model(o);
}

EdlnNetwork make_net(const NetSpec& spec, Eigen::Index in, Eigen::Index out, std::uint64_t seed) {
  EdlnNetwork net = random_network(in, spec.hidden_dims(), out, spec.embedding_cond, seed, spec.init_scale);
  if (spec.identity_embeddings) return EdlnNetwork(identity(in), identity(out), net.weights());
  return net;
}

EdlnNetwork make_net_a(const ScenarioConfig& cfg, int k) {
  return make_net(cfg.net_a, cfg.data.input_dim, cfg.data.output_dim, derive(cfg.seed, kNetA, k));
}

EdlnNetwork make_net_b(const ScenarioConfig& cfg, int k) {
  return make_net(cfg.net_b, cfg.data.input_dim, cfg.data.output_dim, derive(cfg.seed, kNetB, k));
}

PairedBatch probes(const ScenarioConfig& cfg, const DataModel& dm, int k) {
  // Instance 0 uses probe_seed itself so `edln align` reproduces alignment.csv.
  return sample_batch(dm, cfg.probes, {"A", "B"}, k == 0 ? cfg.probe_seed : derive(cfg.probe_seed, kProbe, k));
}

Matrix scores(const EdlnNetwork& a, const EdlnNetwork& b, const PairedBatch& p) {
  return pairwise_alignment(a, b, p.views.at("A"), p.views.at("B"));
}

double loss_gap(const EdlnNetwork& net, const DataModel& dm, const std::string& tag) {
  const ViewModel vm = view_model(dm, tag);
  return std::abs(empirical_loss(net, Expectation::analytic(vm)) - vm.min_loss) / vm.min_loss;
}

double balance(const EdlnNetwork& net, const DataModel& dm, const std::string& tag) {
  return balance_report(net, Expectation::analytic(view_model(dm, tag))).max_residual();
}

TrainConfig train_cfg(const ScenarioConfig& cfg, Stream s, int k) {
  TrainConfig t = cfg.train;
  t.seed = derive(cfg.seed, s, k);
  return t;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

void platonic_closed_form(const ScenarioConfig& cfg, Recorder& rec) {
  double min_al = kInf, max_al = -kInf, gap = 0, prod = 0, bal = 0;
  for (int k = 0; k < cfg.instances; ++k) {
    const DataModel dm = make_model(cfg, k);
    const auto sa = closed_form_platonic(dm, "A", make_net_a(cfg, k), derive(cfg.seed, kRotA, k));
    const auto sb = closed_form_platonic(dm, "B", make_net_b(cfg, k), derive(cfg.seed, kRotB, k));
    for (const auto* s : {&sa, &sb}) {
      gap = std::max(gap, loss_gap(s->network, dm, s->tag));
      prod = std::max(prod, relative_error(s->network.weight_product(), global_min_target(dm, s->tag, s->network)));
      bal = std::max(bal, balance(s->network, dm, s->tag));
    }
    const Matrix sc = scores(sa.network, sb.network, probes(cfg, dm, k));
    if (k == 0) {
      rec.model(dm);
      rec.alignment(sc, sa.network, sb.network);
      rec.network("net_a", "net_a.net", sa.network);
      rec.network("net_b", "net_b.net", sb.network);
    }
    min_al = std::min(min_al, min_score(sc));
    max_al = std::max(max_al, max_score(sc));
  }
  rec.metric("instances", cfg.instances);
  rec.metric("min_alignment", min_al);
  rec.metric("max_alignment", max_al);
  rec.metric("max_loss_gap", gap);
  rec.metric("max_product_error", prod);
  rec.metric("max_balance_residual", bal);
  rec.check("min_alignment", min_al, ">=", "min_alignment");
  rec.check("max_loss_gap", gap, "<=", "max_loss_gap");
  rec.check("max_product_error", prod, "<=", "max_product_error");
  rec.check("max_balance_residual", bal, "<=", "max_balance_residual");
}

void platonic_sgd(const ScenarioConfig& cfg, Recorder& rec) {
  double min_al = kInf, max_al = -kInf, gap = 0, bal = 0, excess = -kInf;
  for (int k = 0; k < cfg.instances; ++k) {
    const DataModel dm = make_model(cfg, k);
    const EdlnNetwork ia = make_net_a(cfg, k), ib = make_net_b(cfg, k);
    const TrainResult ra = train(ia, dm, "A", train_cfg(cfg, kTrainA, k));
    const TrainResult rb = train(ib, dm, "B", train_cfg(cfg, kTrainB, k));
    for (const auto& [r, init, tag] : {std::tuple{&ra, &ia, "A"}, std::tuple{&rb, &ib, "B"}}) {
      gap = std::max(gap, loss_gap(r->net, dm, tag));
      bal = std::max(bal, balance(r->net, dm, tag));
      const Expectation ex = Expectation::analytic(view_model(dm, tag));
      const double s_cf = entropy_S(closed_form_platonic(dm, tag, *init, 0).network, ex);
      excess = std::max(excess, entropy_S(r->net, ex) / s_cf - 1.0);
    }
    const Matrix sc = scores(ra.net, rb.net, probes(cfg, dm, k));
    if (k == 0) {
      rec.model(dm);
      rec.alignment(sc, ra.net, rb.net);
      rec.trace("trace", "trace.csv", ra.trace, "a");
      rec.trace("trace_b", "trace_b.csv", rb.trace, "b");
      rec.network("net_a", "net_a.net", ra.net);
      rec.network("net_b", "net_b.net", rb.net);
      rec.write("balance", "balance_a.csv", balance_csv(balance_report(ra.net, Expectation::analytic(view_model(dm, "A")))));
    }
    min_al = std::min(min_al, min_score(sc));
    max_al = std::max(max_al, max_score(sc));
  }
  rec.metric("instances", cfg.instances);
  rec.metric("min_alignment", min_al);
  rec.metric("max_alignment", max_al);
  rec.metric("max_balance_residual", bal);
  rec.metric("max_loss_gap", gap);
  rec.metric("max_entropy_excess", excess);
  rec.check("min_alignment", min_al, ">=", "min_alignment");
  rec.check("max_balance_residual", bal, "<", "max_balance_residual");
  rec.check("max_loss_gap", gap, "<=", "max_loss_gap");
}

void non_platonic_minima(const ScenarioConfig& cfg, Recorder& rec) {
  const DataModel dm = make_model(cfg, 0);
  const auto sa = closed_form_platonic(dm, "A", make_net_a(cfg, 0), derive(cfg.seed, kRotA, 0));
  const auto sb = closed_form_platonic(dm, "B", make_net_b(cfg, 0), derive(cfg.seed, kRotB, 0));
  const PairedBatch p = probes(cfg, dm, 0);
  const Expectation ex = Expectation::analytic(view_model(dm, "A"));
  const double base = empirical_loss(sa.network, ex);
  const int iface = static_cast<int>(cfg.params.at("interface"));
  const double mag = cfg.params.at("transform_magnitude");
  int successes = 0;
  double max_delta = 0, min_al = kInf, max_min_al = -kInf;
  for (int k = 0; k < cfg.instances; ++k) {
    const EdlnNetwork moved = non_platonic_transform(sa.network, iface, derive(cfg.seed, kTransform, k), mag);
    const double delta = std::abs(empirical_loss(moved, ex) - base) / base;
    const Matrix sc = scores(moved, sb.network, p);
    const double m = min_score(sc);
    if (k == 0) {
      rec.model(dm);
      rec.alignment(sc, moved, sb.network);
      rec.network("net_a", "net_a_moved.net", moved);
      rec.network("net_b", "net_b.net", sb.network);
    }
    if (delta < cfg.thresholds.at("max_loss_delta") && m < cfg.thresholds.at("alignment_below")) ++successes;
    max_delta = std::max(max_delta, delta);
    min_al = std::min(min_al, m);
    max_min_al = std::max(max_min_al, m);
  }
  rec.metric("draws", cfg.instances);
  rec.metric("successes", successes);
  rec.metric("max_loss_delta", max_delta);
  rec.metric("min_alignment", min_al);
  rec.metric("max_min_alignment", max_min_al);
  rec.metric("reference_alignment", min_score(scores(sa.network, sb.network, p)));
  rec.check("successes", successes, ">=", "min_successes");
}

void weight_decay_break(const ScenarioConfig& cfg, Recorder& rec) {
  double min_gap = kInf, max_wd = -kInf, min_ent = kInf, wd_loss = 0;
  TrainConfig ent = constrained_defaults();
  ent.learning_rate = cfg.params.at("entropic_learning_rate");
  ent.steps = static_cast<int>(cfg.params.at("entropic_steps"));
  ent.record_every = std::max(1, ent.steps / 10);
  for (int k = 0; k < cfg.instances; ++k) {
    const DataModel dm = make_model(cfg, k);
    const EdlnNetwork ia = make_net_a(cfg, k), ib = make_net_b(cfg, k);
    const TrainResult wa = train(ia, dm, "A", train_cfg(cfg, kTrainA, k));
    const TrainResult wb = train(ib, dm, "B", train_cfg(cfg, kTrainB, k));
    const TrainResult ea = train(ia, dm, "A", ent);
    const TrainResult eb = train(ib, dm, "B", ent);
    const PairedBatch p = probes(cfg, dm, k);
    const Matrix sc = scores(wa.net, wb.net, p);
    const double m_wd = min_score(sc);
    const double m_ent = min_score(scores(ea.net, eb.net, p));
    if (k == 0) {
      rec.model(dm);
      rec.alignment(sc, wa.net, wb.net);
      rec.trace("trace", "trace.csv", wa.trace, "a");
      rec.network("net_a", "net_a.net", wa.net);
      rec.network("net_b", "net_b.net", wb.net);
    }
    min_gap = std::min(min_gap, m_ent - m_wd);
    max_wd = std::max(max_wd, m_wd);
    min_ent = std::min(min_ent, m_ent);
    wd_loss = std::max({wd_loss, loss_gap(wa.net, dm, "A"), loss_gap(wb.net, dm, "B")});
  }

  // Commuting PSD case against the closed form.
  const auto dim = static_cast<Eigen::Index>(cfg.params.at("commuting_dim"));
  const int depth = static_cast<int>(cfg.params.at("commuting_depth"));
  const DataModel cm = make_commuting_data_model(dim, static_cast<Eigen::Index>(cfg.params.at("commuting_rank")),
                                                 cfg.params.at("commuting_cond_z"), derive(cfg.seed, kData, 1000));
  NetSpec spec = cfg.net_a;
  spec.depth = depth;
  spec.widths.clear();
  spec.width = dim;
  spec.identity_embeddings = true;
  TrainConfig gd;
  gd.algorithm = Algorithm::kFullBatchGd;
  gd.weight_decay = cfg.params.at("commuting_weight_decay");
  gd.learning_rate = cfg.params.at("commuting_learning_rate");
  gd.steps = static_cast<int>(cfg.params.at("commuting_steps"));
  gd.record_every = std::max(1, gd.steps / 10);
  const TrainResult rc = train(make_net(spec, dim, dim, derive(cfg.seed, kNetA, 1000)), cm, "A", gd);
  const std::vector<Matrix> closed = weight_decay_closed_form(cm, "A", depth);
  const std::vector<Matrix> aligned = gauge_align(rc.net.weights(), closed);
  double layer_err = 0, hidden_err = 0;
  for (int i = 0; i < depth; ++i) layer_err = std::max(layer_err, relative_error(aligned[i], closed[i]));
  Matrix chain = identity(dim);
  const Matrix& z = cm.view("A");
  for (int i = 1; i < depth; ++i) {
    chain = aligned[i - 1] * chain;
    const double f = static_cast<double>(i) / depth;
    hidden_err = std::max(hidden_err, relative_error(chain * z, psd_power(cm.v_star, f) * psd_power(z, 1.0 - f)));
  }
  rec.network("commuting", "commuting.net", rc.net);

  rec.metric("instances", cfg.instances);
  rec.metric("max_weight_decay_alignment", max_wd);
  rec.metric("min_entropic_alignment", min_ent);
  rec.metric("min_alignment_gap", min_gap);
  rec.metric("max_weight_decay_loss_gap", wd_loss);
  rec.metric("commuting_layer_error", layer_err);
  rec.metric("commuting_hidden_error", hidden_err);
  rec.check("min_alignment_gap", min_gap, ">=", "min_gap");
  rec.check("commuting_layer_error", layer_err, "<=", "max_layer_error");
  rec.check("commuting_hidden_error", hidden_err, "<=", "max_hidden_error");
}

double q_norm(const EdlnNetwork& net) {
  double s = 0;
  for (const Matrix& q : conserved_quantities(net)) s += q.squaredNorm();
  return std::sqrt(s);
}

double relative_drift(const EdlnNetwork& init, const TrainTrace& trace) {
  const std::vector<Matrix> q0 = conserved_quantities(init);
  double worst = 0;
  for (const auto& row : trace.rows)
    for (std::size_t i = 0; i < row.drift.size(); ++i)
      worst = std::max(worst, row.drift[i] / (q0[i].norm() + 1e-4));
  return worst;
}

void gradient_flow_break(const ScenarioConfig& cfg, Recorder& rec) {
  double drift = 0, min_gap = kInf, max_min_al = -kInf, min_al = kInf, gap = 0;
  for (int k = 0; k < cfg.instances; ++k) {
    const DataModel dm = make_model(cfg, k);
    const EdlnNetwork ia = make_net_a(cfg, k), ib = make_net_b(cfg, k);
    const TrainResult ra = train(ia, dm, "A", train_cfg(cfg, kTrainA, k));
    const TrainResult rb = train(ib, dm, "B", train_cfg(cfg, kTrainB, k));
    drift = std::max({drift, relative_drift(ia, ra.trace), relative_drift(ib, rb.trace)});
    min_gap = std::min(min_gap, std::abs(q_norm(ia) - q_norm(ib)));
    gap = std::max({gap, loss_gap(ra.net, dm, "A"), loss_gap(rb.net, dm, "B")});
    const Matrix sc = scores(ra.net, rb.net, probes(cfg, dm, k));
    if (k == 0) {
      rec.model(dm);
      rec.alignment(sc, ra.net, rb.net);
      rec.trace("trace", "trace.csv", ra.trace, "a");
      rec.trace("trace_b", "trace_b.csv", rb.trace, "b");
      rec.network("net_a", "net_a.net", ra.net);
      rec.network("net_b", "net_b.net", rb.net);
    }
    max_min_al = std::max(max_min_al, min_score(sc));
    min_al = std::min(min_al, min_score(sc));
  }
  rec.metric("instances", cfg.instances);
  rec.metric("max_relative_drift", drift);
  rec.metric("min_init_gap", min_gap);
  rec.metric("max_min_alignment", max_min_al);
  rec.metric("min_alignment", min_al);
  rec.metric("max_loss_gap", gap);
  rec.check("max_relative_drift", drift, "<", "max_relative_drift");
  rec.check("min_init_gap", min_gap, ">=", "min_init_gap");
  rec.check("max_min_alignment", max_min_al, "<", "max_alignment");
  rec.check("max_loss_gap", gap, "<=", "max_loss_gap");
}

void label_transform_break(const ScenarioConfig& cfg, Recorder& rec) {
  double max_label = -kInf, min_label = kInf, min_control = kInf;
  for (int k = 0; k < cfg.instances; ++k) {
    const DataModel dm = make_model(cfg, k);
    DataModel dl = dm;
    add_label_transforms(dl, cfg.params.at("label_cond"), derive(cfg.seed, kLabel, k), {"A", "B"});
    const EdlnNetwork sa = make_net_a(cfg, k), sb = make_net_b(cfg, k);
    const auto la = closed_form_platonic(dl, "A", sa, derive(cfg.seed, kRotA, k));
    const auto lb = closed_form_platonic(dl, "B", sb, derive(cfg.seed, kRotB, k));
    const auto ca = closed_form_platonic(dm, "A", sa, derive(cfg.seed, kRotA, k));
    const auto cb = closed_form_platonic(dm, "B", sb, derive(cfg.seed, kRotB, k));
    const PairedBatch p = probes(cfg, dm, k);
    const Matrix sc = scores(la.network, lb.network, p);
    if (k == 0) {
      rec.model(dl);
      rec.alignment(sc, la.network, lb.network);
      rec.network("net_a", "net_a.net", la.network);
      rec.network("net_b", "net_b.net", lb.network);
    }
    max_label = std::max(max_label, min_score(sc));
    min_label = std::min(min_label, min_score(sc));
    min_control = std::min(min_control, min_score(scores(ca.network, cb.network, p)));
  }
  rec.metric("instances", cfg.instances);
  rec.metric("max_label_alignment", max_label);
  rec.metric("min_label_alignment", min_label);
  rec.metric("min_control_alignment", min_control);
  rec.check("max_label_alignment", max_label, "<", "max_label_alignment");
  rec.check("min_control_alignment", min_control, ">=", "min_control_alignment");
}

void saddle_break(const ScenarioConfig& cfg, Recorder& rec) {
  const auto r = static_cast<Eigen::Index>(cfg.params.at("saddle_rank"));
  double min_al = kInf, max_al = -kInf, excess = kInf, grad = 0;
  for (int k = 0; k < cfg.instances; ++k) {
    const DataModel dm = make_model(cfg, k);
    const auto sad = low_rank_saddle(dm, "A", make_net_a(cfg, k), r, derive(cfg.seed, kRotA, k));
    const auto full = closed_form_platonic(dm, "B", make_net_b(cfg, k), derive(cfg.seed, kRotB, k));
    const Matrix sc = scores(sad.network, full.network, probes(cfg, dm, k));
    if (k == 0) {
      rec.model(dm);
      rec.alignment(sc, sad.network, full.network);
      rec.network("net_a", "saddle.net", sad.network);
      rec.network("net_b", "net_b.net", full.network);
    }
    min_al = std::min(min_al, min_score(sc));
    max_al = std::max(max_al, max_score(sc));
    const Expectation ex = Expectation::analytic(view_model(dm, "A"));
    const double l = empirical_loss(sad.network, ex);
    excess = std::min(excess, l / view_model(dm, "A").min_loss - 1.0);
    grad = std::max(grad, flatten_weights(loss_gradient(sad.network, ex)).norm() / l);
  }
  rec.metric("instances", cfg.instances);
  rec.metric("min_alignment", min_al);
  rec.metric("max_alignment", max_al);
  rec.metric("min_saddle_loss_excess", excess);
  rec.metric("max_saddle_gradient", grad);
  rec.check("min_alignment", min_al, ">", "min_alignment");
  rec.check("max_alignment", max_al, "<", "max_alignment");
}

void heterogeneity_break(const ScenarioConfig& cfg, Recorder& rec) {
  double max_min_al = -kInf, min_al = kInf, gap = 0;
  for (int k = 0; k < cfg.instances; ++k) {
    DataModel dm = make_model(cfg, k);
    add_heterogeneity(dm, cfg.params.at("feature_variance"), {"A", "B"});
    const TrainResult ra = train(make_net_a(cfg, k), dm, "A", train_cfg(cfg, kTrainA, k));
    const TrainResult rb = train(make_net_b(cfg, k), dm, "B", train_cfg(cfg, kTrainB, k));
    const Matrix sc = scores(ra.net, rb.net, probes(cfg, dm, k));
    if (k == 0) {
      rec.model(dm);
      rec.alignment(sc, ra.net, rb.net);
      rec.trace("trace", "trace.csv", ra.trace, "a");
      rec.network("net_a", "net_a.net", ra.net);
      rec.network("net_b", "net_b.net", rb.net);
    }
    max_min_al = std::max(max_min_al, min_score(sc));
    min_al = std::min(min_al, min_score(sc));
    gap = std::max({gap, loss_gap(ra.net, dm, "A"), loss_gap(rb.net, dm, "B")});
  }
  rec.metric("instances", cfg.instances);
  rec.metric("max_min_alignment", max_min_al);
  rec.metric("min_alignment", min_al);
  rec.metric("max_loss_gap", gap);
  rec.check("max_min_alignment", max_min_al, "<", "max_alignment");
}

void progressive_sharpening(const ScenarioConfig& cfg, Recorder& rec) {
  const int early = static_cast<int>(std::lround(cfg.params.at("early_fraction") * cfg.train.steps));
  int sharpened = 0;
  double min_ratio = kInf, max_ratio = -kInf, cf_sharp = 0, gap = 0;
  for (int k = 0; k < cfg.instances; ++k) {
    const DataModel dm = make_model(cfg, k);
    TrainConfig tc = train_cfg(cfg, kTrainA, k);
    if (tc.sharpness_every == 0) tc.sharpness_every = early;
    const EdlnNetwork init = make_net_a(cfg, k);
    const TrainResult r = train(init, dm, "A", tc);
    double s_early = std::nan(""), s_end = std::nan("");
    for (const auto& row : r.trace.rows) {
      if (row.step == early) s_early = row.sharpness;
      if (row.step == cfg.train.steps) s_end = row.sharpness;
    }
    if (!std::isfinite(s_early) || !std::isfinite(s_end))
      throw std::runtime_error("trace lacks sharpness at the early or final step");
    if (s_end > s_early) ++sharpened;
    min_ratio = std::min(min_ratio, s_end / s_early);
    max_ratio = std::max(max_ratio, s_end / s_early);
    const Expectation ex = Expectation::analytic(view_model(dm, "A"));
    cf_sharp += sharpness(closed_form_platonic(dm, "A", init, 0).network, ex).top_eigenvalue / cfg.instances;
    gap = std::max(gap, loss_gap(r.net, dm, "A"));
    if (k == 0) {
      rec.trace("trace", "trace.csv", r.trace, "a");
      rec.network("net_a", "net_a.net", r.net);
    }
  }
  rec.metric("runs", cfg.instances);
  rec.metric("sharpened_runs", sharpened);
  rec.metric("min_sharpness_ratio", min_ratio);
  rec.metric("max_sharpness_ratio", max_ratio);
  rec.metric("mean_closed_form_sharpness", cf_sharp);
  rec.metric("max_final_loss_gap", gap);
  rec.check("sharpened_runs", sharpened, ">=", "min_sharpening_runs");
}

double rel(const Vector& a, const Vector& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

/// Top eigenvalue of the Hessian of L assembled from second differences of L.
double dense_sharpness(const EdlnNetwork& net, const Expectation& ex) {
  const Vector t0 = net.flatten();
  const auto n = t0.size();
  const double h = 1e-4;
  auto f = [&](const Vector& t) { return empirical_loss(net.unflatten(t), ex); };
  Matrix hess(n, n);
  const double f0 = f(t0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) {
      Vector pp = t0, pm = t0, mp = t0, mm = t0;
      pp(i) += h; pp(j) += h;
      pm(i) += h; pm(j) -= h;
      mp(i) -= h; mp(j) += h;
      mm(i) -= h; mm(j) -= h;
      hess(i, j) = hess(j, i) = i == j ? (f(pp) - 2 * f0 + f(mm)) / (4 * h * h)
                                       : (f(pp) - f(pm) - f(mp) + f(mm)) / (4 * h * h);
    }
  return Eigen::SelfAdjointEigenSolver<Matrix>(hess).eigenvalues().maxCoeff();
}

void invariant_suite(const ScenarioConfig& cfg, Recorder& rec) {
  double grad_err = 0, s_grad_err = 0, sym_err = 0, cf_err = 0;
  int orbit_violations = 0;
  for (int k = 0; k < cfg.instances; ++k) {
    const DataModel dm = make_model(cfg, k);
    Rng rng(derive(cfg.seed, kSuite, k));
    const int depth = 1 + k % 4;
    std::vector<Eigen::Index> hidden;
    for (int i = 1; i < depth; ++i) hidden.push_back(4 + (k + i) % 5);
    const EdlnNetwork net = random_network(cfg.data.input_dim, hidden, cfg.data.output_dim, 3.0,
                                           derive(cfg.seed, kNetA, k));
    const Expectation ex = Expectation::analytic(view_model(dm, "A"));
    auto loss = [&](const Vector& t) { return empirical_loss(net.unflatten(t), ex); };
    grad_err = std::max(grad_err, rel(flatten_weights(loss_gradient(net, ex)),
                                      finite_difference_gradient(loss, net.flatten(), 1e-5)));
    s_grad_err = std::max(s_grad_err,
                          rel(flatten_weights(entropy_gradient(net, ex, EntropyGradient::kAnalytic)),
                              flatten_weights(entropy_gradient(net, ex, EntropyGradient::kFiniteDifference))));

    if (depth >= 2) {
      SymmetryGenerator g;
      g.layer_index = 1 + k % (depth - 1);
      g.generator = gaussian_matrix(net.weight(g.layer_index).rows(), net.weight(g.layer_index).rows(), rng, 0.3);
      g.scale = 0.7;
      const EdlnNetwork moved = apply_symmetry(net, g);
      sym_err = std::max(sym_err, std::abs(empirical_loss(moved, ex) - empirical_loss(net, ex)) / empirical_loss(net, ex));
      const PairedBatch b = sample_batch(dm, 3, {"A"}, derive(cfg.seed, kSuite, 100 + k));
      const Matrix fwd = matrix_exponential(g.generator.transpose(), g.scale);
      const Matrix bwd = matrix_exponential(g.generator.transpose(), -g.scale);
      for (Eigen::Index s = 0; s < b.size(); ++s) {
        const Vector x = b.views.at("A").col(s), y = b.labels.at("A").col(s);
        const auto g0 = gradients(net, x, y), g1 = gradients(moved, x, y);
        const int i = g.layer_index;
        sym_err = std::max(sym_err, relative_error(fwd * g1[i - 1], g0[i - 1]));
        sym_err = std::max(sym_err, relative_error(g1[i] * bwd, g0[i]));
      }
    }

    if (k < 3) {
      std::vector<Eigen::Index> cf_hidden(static_cast<std::size_t>(1 + k), cfg.data.rank + k);
      const EdlnNetwork shell = random_network(cfg.data.input_dim, cf_hidden, cfg.data.output_dim, 3.0,
                                               derive(cfg.seed, kNetB, k));
      const auto sol = closed_form_platonic(dm, "A", shell, derive(cfg.seed, kRotA, k));
      cf_err = std::max({cf_err, loss_gap(sol.network, dm, "A"),
                         relative_error(sol.network.weight_product(), global_min_target(dm, "A", shell)),
                         balance(sol.network, dm, "A")});
      const double s0 = entropy_S(sol.network, ex);
      for (int t = 0; t < 4; ++t) {
        SymmetryGenerator g;
        g.layer_index = 1 + t % (sol.depth() - 1);
        const auto d = sol.network.weight(g.layer_index).rows();
        g.generator = gaussian_matrix(d, d, rng, 1.0 / std::sqrt(static_cast<double>(d)));
        for (double l : {-0.2, -0.1, -0.05, 0.05, 0.1, 0.2}) {
          g.scale = l;
          if (entropy_S(apply_symmetry(sol.network, g), ex) < s0 * (1 - 1e-12)) ++orbit_violations;
        }
      }
    }
  }

  const DataModel dm = make_model(cfg, 0);
  const auto n_mc = static_cast<Eigen::Index>(cfg.params.at("mc_samples"));
  const EdlnNetwork net = random_network(cfg.data.input_dim, {6}, cfg.data.output_dim, 3.0, derive(cfg.seed, kNetA, 999));
  const Expectation an = Expectation::analytic(view_model(dm, "A"));
  const Expectation mc = Expectation::monte_carlo(sample_batch(dm, n_mc, {"A"}, derive(cfg.seed, kSuite, 999)), "A");
  const double mc_err = std::max(std::abs(empirical_loss(net, mc) / empirical_loss(net, an) - 1),
                                 std::abs(entropy_S(net, mc) / entropy_S(net, an) - 1));

  double sharp_err = 0;
  {
    DataModelOptions o;
    o.input_dim = 4;
    o.output_dim = 3;
    o.rank = 2;
    o.seed = derive(cfg.seed, kData, 500);
    const DataModel small = make_data_model(o);
    for (int k = 0; k < 2; ++k) {
      const EdlnNetwork sn = random_network(4, {4, 3}, 3, 2.0, derive(cfg.seed, kNetA, 500 + k));
      const Expectation ex = Expectation::analytic(view_model(small, "A"));
      const double dense = dense_sharpness(sn, ex);
      sharp_err = std::max(sharp_err, std::abs(sharpness(sn, ex).top_eigenvalue - dense) / std::abs(dense));
    }
  }

  double gf_drift = 0;
  {
    const EdlnNetwork base = random_network(cfg.data.input_dim, {6}, cfg.data.output_dim, 3.0, derive(cfg.seed, kNetB, 999));
    const EdlnNetwork gf_net(identity(cfg.data.input_dim), identity(cfg.data.output_dim), base.weights());
    TrainConfig gf;
    gf.algorithm = Algorithm::kGradientFlow;
    gf.learning_rate = 1e-3;
    gf.steps = 2000;
    gf.record_every = 200;
    gf_drift = relative_drift(gf_net, train(gf_net, dm, "A", gf).trace);
  }

  rec.metric("max_gradient_error", grad_err);
  rec.metric("max_entropy_gradient_error", s_grad_err);
  rec.metric("mc_relative_error", mc_err);
  rec.metric("max_symmetry_error", sym_err);
  rec.metric("sharpness_relative_error", sharp_err);
  rec.metric("orbit_violations", orbit_violations);
  rec.metric("max_closed_form_error", cf_err);
  rec.metric("gf_relative_drift", gf_drift);
  rec.check("gradient_vs_fd", grad_err, "<", "max_gradient_error");
  rec.check("entropy_gradient_vs_fd", s_grad_err, "<", "max_gradient_error");
  rec.check("monte_carlo_vs_analytic", mc_err, "<", "max_mc_error");
  rec.check("symmetry_invariance_and_covariance", sym_err, "<", "max_symmetry_error");
  rec.check("sharpness_vs_dense_hessian", sharp_err, "<", "max_sharpness_error");
  rec.check("orbit_scan_minimum", orbit_violations, "<=", "max_orbit_violations");
  rec.check("closed_form_minimum", cf_err, "<", "max_closed_form_error");
  rec.check("gradient_flow_conservation", gf_drift, "<", "max_gf_drift");
}

using ScenarioFn = std::function<void(const ScenarioConfig&, Recorder&)>;

const std::map<std::string, ScenarioFn>& scenario_table() {
  static const std::map<std::string, ScenarioFn> t{
      {"platonic_closed_form", platonic_closed_form},
      {"platonic_sgd", platonic_sgd},
      {"non_platonic_minima", non_platonic_minima},
      {"weight_decay_break", weight_decay_break},
      {"gradient_flow_break", gradient_flow_break},
      {"label_transform_break", label_transform_break},
      {"saddle_break", saddle_break},
      {"heterogeneity_break", heterogeneity_break},
      {"progressive_sharpening", progressive_sharpening},
      {"invariant_suite", invariant_suite}};
  return t;
}

}  // namespace

ScenarioResult run_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  Recorder rec(cfg);
  try {
    scenario_table().at(cfg.scenario)(cfg, rec);
  } catch (const std::exception& e) {
    rec.write("error", "error.txt", std::string(e.what()) + "\n");
    throw ScenarioError(cfg.scenario + ": " + e.what());
  }
  return rec.finish();
}

SweepAxis parse_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("axis must look like name=v1,v2,...");
  SweepAxis axis;
  axis.name = text.substr(0, eq);
  std::stringstream rest(text.substr(eq + 1));
  std::string item;
  while (std::getline(rest, item, ',')) {
    if (item.empty()) throw std::invalid_argument("empty value in axis '" + axis.name + "'");
    try {
      axis.values.push_back(Json::parse(item));
    } catch (const Json::parse_error&) {
      axis.values.emplace_back(item);
    }
  }
  if (axis.values.empty()) throw std::invalid_argument("axis '" + axis.name + "' has no values");
  return axis;
}

namespace {

void apply_axis(Json& doc, const std::string& name, const Json& value) {
  if (name.find('.') != std::string::npos) {
    std::string ptr = "/" + name;
    std::replace(ptr.begin(), ptr.end(), '.', '/');
    const Json::json_pointer p(ptr);
    if (!doc.contains(p)) throw std::invalid_argument("axis '" + name + "' does not exist in the config");
    doc[p] = value;
    return;
  }
  bool found = false;
  if (doc.contains(name) && !doc[name].is_object()) {
    doc[name] = value;
    found = true;
  }
  for (const char* section : {"data", "train", "params", "thresholds", "net_a", "net_b"})
    if (doc[section].contains(name)) {
      doc[section][name] = value;
      found = true;
    }
  if (!found) throw std::invalid_argument("axis '" + name + "' does not exist in the config");
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace

std::vector<SweepRun> sweep(const Json& base, const std::vector<SweepAxis>& axes, std::string* csv_path) {
  const ScenarioConfig base_cfg = load_config(base);
  Json resolved = default_config_json(base_cfg.scenario);
  if (base.is_object()) resolved.merge_patch(base);

  std::vector<std::map<std::string, Json>> points{{}};
  for (const auto& axis : axes) {
    std::vector<std::map<std::string, Json>> next;
    for (const auto& p : points)
      for (const auto& v : axis.values) {
        auto q = p;
        q[axis.name] = v;
        next.push_back(std::move(q));
      }
    points = std::move(next);
  }
  // Reject unknown axes before any run starts.
  for (const auto& axis : axes) {
    Json probe = resolved;
    apply_axis(probe, axis.name, axis.values.front());
  }

  std::vector<SweepRun> runs(points.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < points.size(); i = next++) {
      runs[i].point = points[i];
      runs[i].result.scenario = base_cfg.scenario;
      try {
        Json doc = resolved;
        for (const auto& axis : axes) apply_axis(doc, axis.name, points[i].at(axis.name));
        const ScenarioConfig cfg = load_config(doc);
        runs[i].result.config_hash = cfg.hash();
        runs[i].result = run_scenario(cfg);
      } catch (const std::exception& e) {
        runs[i].result.pass = false;
        runs[i].result.error = e.what();
      }
    }
  };
  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(base_cfg.parallelism), points.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  if (base_cfg.write_artifacts) {
    Json key = resolved;
    key.erase("outdir");
    key.erase("parallelism");
    for (const auto& a : axes) key["sweep_axes"][a.name] = a.values;
    const fs::path p = fs::path(base_cfg.outdir) / ("sweep_" + base_cfg.scenario + "_" + fnv1a(key.dump()) + ".csv");
    write_text_file(p, sweep_csv(runs, axes));
    if (csv_path) *csv_path = p.string();
  }
  return runs;
}

std::string sweep_csv(const std::vector<SweepRun>& runs, const std::vector<SweepAxis>& axes) {
  std::vector<std::string> metrics;
  for (const auto& r : runs)
    for (const auto& [k, v] : r.result.summary)
      if (std::find(metrics.begin(), metrics.end(), k) == metrics.end()) metrics.push_back(k);
  std::ostringstream out;
  out << "run";
  for (const auto& a : axes) out << "," << csv_escape(a.name);
  out << ",scenario,config_hash,pass,error";
  for (const auto& m : metrics) out << "," << m;
  out << "\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i];
    out << i;
    for (const auto& a : axes) {
      const Json& v = r.point.at(a.name);
      out << "," << csv_escape(v.is_string() ? v.get<std::string>() : v.dump());
    }
    out << "," << r.result.scenario << "," << r.result.config_hash << "," << (r.result.pass ? 1 : 0) << ","
        << csv_escape(r.result.error);
    for (const auto& m : metrics) {
      out << ",";
      for (const auto& [k, v] : r.result.summary)
        if (k == m) out << format_double(v);
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace edln
