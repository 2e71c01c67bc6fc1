#include "l2g/experiments/commands.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>

#include "l2g/benchmarks/learn2grow.hpp"
#include "l2g/supernet/checkpoint.hpp"

namespace l2g {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string method_name(StrategyKind kind) { return "learn2grow_" + to_string(kind); }

ExperimentConfig resolved(const std::filesystem::path& path, const CliOverrides& o) {
  ExperimentConfig c = load_config(path);
  if (o.seed) c.apply_seed(*o.seed);
  if (o.out_dir) c.output_dir = *o.out_dir;
  return c;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

/// Maps exceptions onto exit codes with one diagnostic line.
template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "input error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ContractError& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const StageError& e) {
    err << "runtime error: stage " << e.stage() << ", task " << e.task() << ": " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace

RunResults run_experiment(const ExperimentConfig& config, const TaskStream& stream,
                          const std::filesystem::path* out_dir, std::ostream* log) {
  const auto start = Clock::now();
  RunResults r;
  r.config = config_to_json(config);
  for (StrategyKind kind : config.strategies) {
    const auto t0 = Clock::now();
    RetrainConfig rc = config.retrain;
    rc.strategy.kind = kind;
    MethodResult m;
    m.name = method_name(kind);
    m.family = "learn2grow";
    std::ofstream trace;
    Learn2GrowOptions options;
    if (out_dir != nullptr) {
      std::filesystem::create_directories(*out_dir);
      trace.open(*out_dir / ("trace_" + m.name + ".jsonl"), std::ios::binary);
      options.trace = &trace;
    }
    Learn2GrowRun run = run_learn2grow(stream, config.topology, config.search, rc, options);
    if (out_dir != nullptr) save_checkpoint(run.net, *out_dir / ("checkpoint_" + m.name));
    m.accuracy = std::move(run.accuracy);
    m.metrics = compute_metrics(m.accuracy);
    m.structures = std::move(run.structures);
    m.growth = std::move(run.growth);
    m.seconds = seconds_since(t0);
    if (log) *log << m.name << ": final avg " << std::fixed << std::setprecision(4) << m.metrics.final_avg << '\n';
    r.methods.push_back(std::move(m));
  }
  for (BaselineKind kind : config.baselines) {
    const auto t0 = Clock::now();
    MethodResult m;
    m.name = to_string(kind);
    m.family = "baseline";
    m.accuracy = run_baseline(kind, stream, config.topology, config.baseline);
    m.metrics = compute_metrics(m.accuracy);
    m.seconds = seconds_since(t0);
    if (log) *log << m.name << ": final avg " << std::fixed << std::setprecision(4) << m.metrics.final_avg << '\n';
    r.methods.push_back(std::move(m));
  }
  r.seconds = seconds_since(start);
  return r;
}

std::vector<BetaSweepRow> beta_sweep(const ExperimentConfig& config, const TaskStream& stream,
                                     const std::vector<double>& betas, std::ostream* log) {
  std::vector<BetaSweepRow> rows;
  RetrainConfig rc = config.retrain;
  rc.strategy.kind = config.strategies.at(0);
  for (double beta : betas) {
    SearchConfig sc = config.search;
    sc.beta = beta;
    Learn2GrowRun run = run_learn2grow(stream, config.topology, sc, rc);
    BetaSweepRow row;
    row.beta = beta;
    row.total_params = run.accuracy.params_after.back();
    row.added_params = row.total_params - run.accuracy.params_after.front();
    row.final_avg = compute_metrics(run.accuracy).final_avg;
    std::size_t searched = 0;
    for (const auto& trace : run.search_traces) {
      if (trace.empty()) continue;
      row.mean_penalty += beta * trace.back().penalty;
      ++searched;
    }
    if (searched > 0) row.mean_penalty /= static_cast<double>(searched);
    row.structures = std::move(run.structures);
    if (log) *log << "beta " << beta << ": added " << row.added_params << " params\n";
    rows.push_back(std::move(row));
  }
  return rows;
}

EnumerateReport enumerate_against_search(const ExperimentConfig& config, const TaskStream& stream) {
  if (stream.size() < 2) throw ContractError("enumerate needs a stream with at least two tasks");
  Topology topo = config.topology;
  topo.resolve();
  SuperNet net(topo, stream.head_mode);
  RetrainConfig rc = config.retrain;
  rc.strategy.kind = config.strategies.at(0);
  const TaskStructure first{0, std::vector<LayerChoice>(topo.layers.size())};
  net.commit(retrain(net, first, stream.tasks[0].train, rc).request);

  EnumerateReport report;
  report.ranking =
      enumerate_oracle(net, stream.tasks[1].train, stream.tasks[1].val, rc, config.search.allow_adapt);
  report.searched = search(net, 1, stream.tasks[1].train, config.search).structure;
  report.rank = oracle_rank(report.ranking, report.searched);
  if (report.rank < 0) throw ContractError("searched structure is missing from the enumeration");
  report.gap = report.ranking[static_cast<std::size_t>(report.rank)].val_accuracy -
               report.ranking.front().val_accuracy;
  return report;
}

int cmd_run(const std::filesystem::path& config_path, const CliOverrides& overrides, std::ostream& out,
            std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig c = resolved(config_path, overrides);
    const TaskStream stream = build_stream(c);
    std::filesystem::create_directories(c.output_dir);
    write_text(c.output_dir / "config.json", config_to_json(c).dump(2) + "\n");
    const RunResults r = run_experiment(c, stream, &c.output_dir, &out);
    write_results(r, c.output_dir);
    out << "wrote " << (c.output_dir / "results.json").string() << '\n';
    return kExitOk;
  });
}

int cmd_beta_sweep(const std::filesystem::path& config_path, const std::vector<double>& betas,
                   const CliOverrides& overrides, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    ExperimentConfig c = resolved(config_path, overrides);
    if (!betas.empty()) c.betas = betas;
    for (double b : c.betas) {
      if (!(b >= 0.0)) throw ConfigError("betas", "every beta must be >= 0");
    }
    const TaskStream stream = build_stream(c);
    std::filesystem::create_directories(c.output_dir);
    write_text(c.output_dir / "config.json", config_to_json(c).dump(2) + "\n");
    const auto rows = beta_sweep(c, stream, c.betas);

    nlohmann::json j = nlohmann::json::array();
    std::string csv = "beta,added_params,total_params,final_avg,penalty\n";
    out << std::left << std::setw(10) << "beta" << std::setw(14) << "added_params" << std::setw(14) << "total_params"
        << std::setw(11) << "final_avg" << "penalty\n";
    for (const auto& row : rows) {
      nlohmann::json structures = nlohmann::json::array();
      for (const auto& s : row.structures) structures.push_back(describe(s));
      j.push_back({{"beta", row.beta},
                   {"added_params", row.added_params},
                   {"total_params", row.total_params},
                   {"final_avg", row.final_avg},
                   {"penalty", row.mean_penalty},
                   {"structures", std::move(structures)}});
      std::ostringstream line;
      line << row.beta << ',' << row.added_params << ',' << row.total_params << ',' << std::fixed
           << std::setprecision(6) << row.final_avg << ',' << row.mean_penalty << '\n';
      csv += line.str();
      out << std::left << std::setw(10) << row.beta << std::setw(14) << row.added_params << std::setw(14)
          << row.total_params << std::setw(11) << std::fixed << std::setprecision(4) << row.final_avg
          << std::setprecision(6) << row.mean_penalty << std::defaultfloat << '\n';
    }
    write_text(c.output_dir / "beta_sweep.json", j.dump(2) + "\n");
    write_text(c.output_dir / "beta_sweep.csv", csv);
    return kExitOk;
  });
}

int cmd_report(const std::filesystem::path& results_path, std::ostream& out, std::ostream& err) {
  try {
    const RunResults r = load_results(results_path);
    const auto dir = results_path.parent_path().empty() ? std::filesystem::path(".") : results_path.parent_path();
    write_text(dir / "metrics.csv", metrics_csv(r));
    write_text(dir / "report.svg", accuracy_svg(r));
    for (const auto& m : r.methods) {
      out << std::left << std::setw(22) << m.name << "final avg " << std::fixed << std::setprecision(4)
          << m.metrics.final_avg << "  params " << m.accuracy.params_after.back() << std::defaultfloat << '\n';
    }
    out << "wrote " << (dir / "metrics.csv").string() << " and " << (dir / "report.svg").string() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "report error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

int cmd_gradcheck(std::ostream& out, std::ostream& err, const std::vector<GradCheckCase>& cases) {
  const auto rows = run_gradcheck_suite(cases);
  bool ok = true;
  out << std::left << std::setw(24) << "op" << std::setw(14) << "max_rel_err" << std::setw(8) << "coords"
      << "result\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(24) << r.op << std::setw(14) << std::scientific << std::setprecision(3)
        << r.max_rel_error << std::defaultfloat << std::setw(8) << r.coords << (r.passed ? "pass" : "FAIL") << '\n';
    if (!r.error.empty()) err << r.op << ": " << r.error << '\n';
    if (!r.passed) {
      err << "gradient check failed for " << r.op << '\n';
      ok = false;
    }
  }
  return ok ? kExitOk : kExitRuntime;
}

int cmd_enumerate(const std::filesystem::path& config_path, const CliOverrides& overrides, std::ostream& out,
                  std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig c = resolved(config_path, overrides);
    const TaskStream stream = build_stream(c);
    EnumerateReport report;
    try {
      report = enumerate_against_search(c, stream);
    } catch (const ContractError& e) {
      err << "enumerate: " << e.what() << '\n';
      return kExitConfig;
    }
    for (std::size_t i = 0; i < report.ranking.size(); ++i) {
      const auto& e = report.ranking[i];
      out << (static_cast<int>(i) == report.rank ? "* " : "  ") << std::setw(3) << i + 1 << "  " << std::left
          << std::setw(24) << describe(e.structure) << std::right << std::fixed << std::setprecision(4)
          << e.val_accuracy << std::defaultfloat << "  +" << e.added_params << " params\n";
    }
    out << "search selected " << describe(report.searched) << ": rank " << report.rank + 1 << " of "
        << report.ranking.size() << ", gap " << std::showpos << std::fixed << std::setprecision(2)
        << 100.0 * report.gap << std::noshowpos << std::defaultfloat << " points\n";
    return kExitOk;
  });
}

}  // namespace l2g
