// fedsplit: generate data, run one experiment or the whole grid, and print
// summaries of earlier runs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "fedsplit/error.hpp"
#include "fedsplit/experiment.hpp"

namespace fs = std::filesystem;
using namespace fedsplit;

namespace {

const std::vector<std::string> kRunKeys = {
    "seed",        "paradigm",       "layout",          "granularity",     "aggregation",  "partition",
    "clients",     "client_fraction", "batch_size",     "client_lr",       "server_lr",    "max_epochs",
    "patience",    "cut_m",          "cut_n",           "hidden",          "majority_target", "label_low",
    "label_high",  "data.n_samples", "data.d",          "data.noise_scale", "data.seed",   "data.train_fraction",
    "data.signal_scale", "data.dir"};

const std::vector<std::string> kDataKeys = {"data.n_samples", "data.d", "data.noise_scale", "data.signal_scale",
                                            "data.seed", "data.train_fraction"};

std::string flag_name(const std::string& key) {
  std::string flag = "--";
  for (char c : key) flag += (c == '_' || c == '.') ? '-' : c;
  return flag;
}

struct Overrides {
  std::string config;
  std::map<std::string, std::string> values;
  std::vector<std::string> sets;

  void attach(CLI::App* app, const std::vector<std::string>& keys) {
    app->add_option("--config", config, "key=value file; flags override it")->check(CLI::ExistingFile);
    for (const auto& key : keys) app->add_option(flag_name(key), values[key], "sets '" + key + "'");
    app->add_option("--set", sets, "extra key=value override (repeatable)");
  }

  ExperimentSpec resolve(ExperimentSpec spec = {}) const {
    if (!config.empty()) spec = load_spec(config, std::move(spec));
    for (const auto& [key, value] : values) {
      if (!value.empty()) apply_setting(spec, key, value);
    }
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      apply_setting(spec, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return spec;
  }
};

int cmd_generate(const Overrides& overrides, const std::string& out) {
  const ExperimentSpec spec = overrides.resolve();
  spec.validate();
  if (!spec.data.dir.empty()) throw ConfigError("generate writes a dataset; data.dir makes no sense here");
  const DataBundle data = prepare_data(spec.data);
  fs::create_directories(out);
  save_dataset((fs::path(out) / "train.txt").string(), data.train);
  save_dataset((fs::path(out) / "val.txt").string(), data.val);
  std::ofstream prevalence(fs::path(out) / "prevalence.csv");
  write_prevalence_table(prevalence, data.train, data.val);
  write_prevalence_table(std::cout, data.train, data.val);
  std::cout << "wrote " << data.train.size() << " train / " << data.val.size() << " validation samples to " << out
            << '\n';
  return 0;
}

int cmd_run(const Overrides& overrides, std::string out) {
  ExperimentSpec spec = overrides.resolve();
  spec.validate();
  if (out.empty()) out = spec.out.empty() ? (fs::path("runs") / experiment_name(spec)).string() : spec.out;
  const DataBundle data = prepare_data(spec.data);
  const RunArtifacts artifacts = run_experiment(spec, data);
  write_artifacts(artifacts, out);
  std::cout << format_summary_table({artifacts.summary.front()});
  if (artifacts.server_parameter_fraction) {
    std::cout << "server holds " << format_double(*artifacts.server_parameter_fraction) << " of the parameters\n";
  }
  std::cout << "artifacts in " << out << '\n';
  return 0;
}

int cmd_grid(const Overrides& overrides, std::string out, std::size_t jobs) {
  ExperimentSpec base = overrides.resolve();
  if (out.empty()) out = base.out.empty() ? "runs/grid" : base.out;
  for (const auto& cell : grid_cells(base)) cell.resolved().validate();
  const DataBundle data = prepare_data(base.data);
  const GridResult grid = run_grid(base, data, jobs, out);
  std::cout << format_summary_table(grid.rows);
  bool failed = false;
  for (const auto& row : grid.rows) {
    if (!row.error.empty()) {
      std::cerr << row.experiment << " failed: " << row.error << '\n';
      failed = true;
    }
  }
  std::cout << "artifacts in " << out << '\n';
  return failed ? 1 : 0;
}

int cmd_report(const std::string& dir) {
  const fs::path path = fs::path(dir) / "summary.csv";
  std::ifstream in(path);
  if (!in) throw ConfigError("no summary.csv in '" + dir + "'");
  std::cout << format_summary_table(read_summary_csv(in));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated vs split learning on synthetic multi-label data"};
  app.require_subcommand(1);

  Overrides gen_over;
  std::string gen_out = "data";
  auto* generate = app.add_subcommand("generate", "generate a synthetic dataset and its train/validation split");
  gen_over.attach(generate, kDataKeys);
  generate->add_option("--out,-o", gen_out, "output directory");

  Overrides run_over;
  std::string run_out;
  auto* run = app.add_subcommand("run", "run one experiment");
  run_over.attach(run, kRunKeys);
  run->add_option("--out,-o", run_out, "artifact directory (default runs/<experiment>)");

  Overrides grid_over;
  std::string grid_out;
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  auto* grid = app.add_subcommand("grid", "run every paradigm/partition/granularity cell");
  grid_over.attach(grid, kRunKeys);
  grid->add_option("--out,-o", grid_out, "artifact directory (default runs/grid)");
  grid->add_option("--jobs,-j", jobs, "cells run in parallel")->check(CLI::PositiveNumber);

  std::string report_dir;
  auto* report = app.add_subcommand("report", "print the summary table of a run or grid directory");
  report->add_option("dir", report_dir, "directory containing summary.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*generate) return cmd_generate(gen_over, gen_out);
    if (*run) return cmd_run(run_over, run_out);
    if (*grid) return cmd_grid(grid_over, grid_out, jobs);
    if (*report) return cmd_report(report_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
