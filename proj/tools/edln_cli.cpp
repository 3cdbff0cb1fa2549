#include "edln/experiments.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <optional>

using namespace edln;

namespace {

Json read_config(const std::string& path) {
  if (path.empty()) return Json::object();
  try {
    return Json::parse(read_text_file(path));
  } catch (const Json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void print_result(const ScenarioResult& r) {
  std::cout << "scenario " << r.scenario << "  config " << r.config_hash << "\n";
  for (const auto& [k, v] : r.summary) std::cout << "  " << k << " = " << format_double(v) << "\n";
  for (const auto& c : r.checks)
    std::cout << "  [" << (c.pass ? "PASS" : "FAIL") << "] " << c.name << ": " << format_double(c.value)
              << " " << c.op << " " << format_double(c.threshold) << "\n";
  if (auto it = r.artifacts.find("summary"); it != r.artifacts.end())
    std::cout << "  summary written to " << it->second << "\n";
  std::cout << "verdict: " << (r.pass ? "pass" : "fail") << "\n";
}

int run_one(Json doc, const std::string& scenario, std::optional<std::uint64_t> seed,
            const std::string& outdir) {
  if (seed) doc["seed"] = *seed;
  if (!outdir.empty()) doc["outdir"] = outdir;
  const ScenarioResult r = run_scenario(load_config(doc, scenario));
  print_result(r);
  return r.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Embedded deep linear network laboratory"};
  app.require_subcommand(1);

  std::string config, outdir, scenario;
  std::uint64_t seed = 0;

  auto* run = app.add_subcommand("run", "run one scenario");
  run->add_option("scenario", scenario, "scenario name")->required();
  run->add_option("--config", config, "JSON config file (all keys optional)");
  auto* seed_opt = run->add_option("--seed", seed, "base seed");
  run->add_option("--outdir", outdir, "output root");

  std::vector<std::string> axes;
  int parallelism = 0;
  auto* sw = app.add_subcommand("sweep", "Cartesian sweep over config keys");
  sw->add_option("--config", config, "JSON config file naming the scenario")->required();
  sw->add_option("--axis", axes, "name=v1,v2,... (repeatable)");
  sw->add_option("--outdir", outdir, "output root");
  sw->add_option("--parallelism", parallelism, "concurrent runs");
  sw->add_option("--scenario", scenario, "overrides the scenario in the config");

  auto* verify = app.add_subcommand("verify", "run the invariant suite");
  verify->add_option("--config", config, "JSON config file");
  verify->add_option("--outdir", outdir, "output root");

  auto* defaults = app.add_subcommand("defaults", "print a scenario's full default config");
  defaults->add_option("scenario", scenario, "scenario name")->required();

  std::string net_a, net_b, data, tag_a = "A", tag_b = "B";
  int probes = 64;
  std::uint64_t probe_seed = 4242;
  bool include_output = false;
  auto* align = app.add_subcommand("align", "pairwise alignment of two saved networks");
  align->add_option("--net-a", net_a, "network file")->required();
  align->add_option("--net-b", net_b, "network file")->required();
  align->add_option("--data", data, "data model file")->required();
  align->add_option("--tag-a", tag_a, "view of net A");
  align->add_option("--tag-b", tag_b, "view of net B");
  align->add_option("--probes", probes, "probe count");
  align->add_option("--probe-seed", probe_seed, "probe seed");
  align->add_flag("--include-output", include_output, "also compare the last layer");

  int depth = 2;
  Eigen::Index width = 0;
  std::string tag = "A", out;
  std::uint64_t embedding_seed = 0, rotation_seed = 0;
  double embedding_cond = 3.0;
  bool identity_embeddings = false;
  auto* solve = app.add_subcommand("solve", "closed-form entropic minimum for a data model");
  solve->add_option("--data", data, "data model file")->required();
  solve->add_option("--depth", depth, "network depth")->required()->check(CLI::PositiveNumber);
  solve->add_option("--width", width, "hidden width (default: input dim)");
  solve->add_option("--tag", tag, "view");
  solve->add_option("--embedding-seed", embedding_seed, "seed of the random embeddings");
  solve->add_option("--embedding-cond", embedding_cond, "condition number of the embeddings");
  solve->add_flag("--identity-embeddings", identity_embeddings, "use M^I = M^O = I");
  solve->add_option("--rotation-seed", rotation_seed, "seed of the hidden-layer gauge");
  solve->add_option("--out", out, "write the network here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      return run_one(read_config(config), scenario,
                     seed_opt->count() ? std::optional<std::uint64_t>(seed) : std::nullopt, outdir);
    }
    if (*defaults) {
      std::cout << default_config_json(scenario).dump(2) << "\n";
      return 0;
    }
    if (*verify) return run_one(read_config(config), "invariant_suite", std::nullopt, outdir);
    if (*sw) {
      Json doc = read_config(config);
      if (!scenario.empty()) doc["scenario"] = scenario;
      if (!outdir.empty()) doc["outdir"] = outdir;
      if (parallelism > 0) doc["parallelism"] = parallelism;
      std::vector<SweepAxis> parsed;
      for (const auto& a : axes) parsed.push_back(parse_axis(a));
      std::string csv;
      const auto runs = sweep(doc, parsed, &csv);
      bool all = true;
      for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto& r = runs[i].result;
        std::cout << "run " << i;
        for (const auto& [k, v] : runs[i].point) std::cout << " " << k << "=" << v.dump();
        std::cout << ": " << (r.pass ? "pass" : "fail");
        if (!r.error.empty()) std::cout << " (" << r.error << ")";
        std::cout << "\n";
        all = all && r.pass;
      }
      if (!csv.empty()) std::cout << "aggregate written to " << csv << "\n";
      bool errored = false;
      for (const auto& r : runs) errored = errored || !r.result.error.empty();
      if (errored) return 2;
      return all ? 0 : 1;
    }
    if (*align) {
      const DataModel dm = load_data_model(data);
      const EdlnNetwork a = load_network(net_a), b = load_network(net_b);
      const PairedBatch p = sample_batch(dm, probes, {tag_a, tag_b}, probe_seed);
      const Matrix scores = pairwise_alignment(a, b, p.views.at(tag_a), p.views.at(tag_b), include_output);
      std::cout << alignment_csv(scores, alignment_layers(a, include_output), alignment_layers(b, include_output));
      std::cerr << "min " << format_double(min_score(scores)) << " max " << format_double(max_score(scores)) << "\n";
      return 0;
    }
    if (*solve) {
      const DataModel dm = load_data_model(data);
      const Eigen::Index w = width > 0 ? width : dm.input_dim;
      EdlnNetwork shell = random_network(dm.input_dim, std::vector<Eigen::Index>(depth - 1, w), dm.output_dim,
                                         embedding_cond, embedding_seed);
      if (identity_embeddings) shell = EdlnNetwork(identity(dm.input_dim), identity(dm.output_dim), shell.weights());
      const ClosedFormSolution sol = closed_form_platonic(dm, tag, shell, rotation_seed);
      const Expectation ex = Expectation::analytic(view_model(dm, tag));
      const double floor = view_model(dm, tag).min_loss;
      std::cerr << "loss " << format_double(empirical_loss(sol.network, ex)) << " floor " << format_double(floor)
                << " S " << format_double(entropy_S(sol.network, ex)) << " balance "
                << format_double(balance_report(sol.network, ex).max_residual()) << "\n";
      const std::string text = solution_to_json(sol).dump(1) + "\n";
      if (out.empty()) std::cout << text;
      else save_network(sol.network, out);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
