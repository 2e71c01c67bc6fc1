#include <iostream>

#include "CLI11.hpp"
#include "l2g/experiments/commands.hpp"

namespace {

std::vector<double> parse_betas(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) throw std::invalid_argument(item);
    out.push_back(v);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learn-to-grow continual learning experiments"};
  app.require_subcommand(1);

  std::string config, results, betas;
  std::uint64_t seed = 0;
  std::string out_dir;
  auto add_overrides = [&](CLI::App* sub) {
    sub->add_option("--config", config, "experiment JSON")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "override the output directory");
  };

  auto* run = app.add_subcommand("run", "learn-to-grow plus the configured baselines");
  add_overrides(run);
  auto* sweep = app.add_subcommand("beta-sweep", "repeat learn-to-grow for several structure penalty weights");
  add_overrides(sweep);
  sweep->add_option("--betas", betas, "comma separated, e.g. 0.01,0.1,1.0 (default: config betas)");
  auto* report = app.add_subcommand("report", "metrics.csv and report.svg from a results.json");
  report->add_option("--results", results, "path to results.json")->required();
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  auto* enumerate = app.add_subcommand("enumerate", "rank every structure of a tiny instance against search");
  add_overrides(enumerate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : l2g::kExitConfig;
  }

  l2g::CliOverrides overrides;
  for (auto* sub : {run, sweep, enumerate}) {
    if (sub->parsed()) {
      if (sub->count("--seed")) overrides.seed = seed;
      if (sub->count("--out")) overrides.out_dir = out_dir;
    }
  }
  if (run->parsed()) return l2g::cmd_run(config, overrides, std::cout, std::cerr);
  if (sweep->parsed()) {
    std::vector<double> list;
    if (!betas.empty()) {
      try {
        list = parse_betas(betas);
      } catch (const std::exception&) {
        std::cerr << "config error: --betas: expected comma separated numbers, got '" << betas << "'\n";
        return l2g::kExitConfig;
      }
    }
    return l2g::cmd_beta_sweep(config, list, overrides, std::cout, std::cerr);
  }
  if (report->parsed()) return l2g::cmd_report(results, std::cout, std::cerr);
  if (gradcheck->parsed()) return l2g::cmd_gradcheck(std::cout, std::cerr);
  return l2g::cmd_enumerate(config, overrides, std::cout, std::cerr);
}
