#include <filesystem>
#include <set>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fedsplit/error.hpp"
#include "fedsplit/experiment.hpp"

using namespace fedsplit;
namespace fs = std::filesystem;

namespace {

ExperimentSpec small_spec() {
  ExperimentSpec spec;
  spec.data.generation.n_samples = 1500;
  spec.data.generation.dim = 8;
  spec.hidden = {12, 10};
  spec.max_epochs = 2;
  spec.batch_size = 16;
  spec.client_lr = 0.01;
  return spec;
}

const DataBundle& small_data() {
  static const DataBundle data = prepare_data(small_spec().data);
  return data;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fedsplit_test_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("parse and echo round-trip") {
  std::istringstream in(
      "# comment\n"
      "paradigm = split\n"
      "layout=u-shaped\n"
      "granularity=coarse\n"
      "partition=unbalanced\n"
      "hidden=16,8\n"
      "batch_size=64\n"
      "client_lr=0.005\n"
      "data.noise_scale=2.5\n"
      "\n");
  const ExperimentSpec spec = parse_spec(in);
  CHECK(spec.paradigm == Paradigm::Split);
  CHECK(spec.layout == Layout::UShaped);
  CHECK(spec.partition == PartitionScheme::Skewed);
  CHECK(spec.hidden == std::vector<std::size_t>{16, 8});
  CHECK(spec.data.generation.noise_scale == 2.5);

  const std::string echoed = echo_spec(spec);
  std::istringstream again(echoed);
  const ExperimentSpec reparsed = parse_spec(again);
  CHECK(reparsed == spec.resolved());
  CHECK(echo_spec(reparsed) == echoed);
  CHECK(echoed.find("cut_n=3\n") != std::string::npos);
  CHECK(echoed.find("aggregation") == std::string::npos);
}

TEST_CASE("resolved defaults") {
  ExperimentSpec fed;
  fed.paradigm = Paradigm::Federated;
  CHECK(fed.resolved().granularity == Granularity::Fine);
  CHECK(fed.resolved().aggregation == Aggregation::FedSGD);
  CHECK(fed.resolved().partition == PartitionScheme::Uniform);
  fed.granularity = Granularity::Coarse;
  CHECK(fed.resolved().aggregation == Aggregation::FedAVG);

  ExperimentSpec split;
  split.paradigm = Paradigm::Split;
  CHECK(split.resolved().layout == Layout::Vanilla);
  CHECK(split.resolved().cut_m == 1u);
  CHECK_FALSE(split.resolved().cut_n);
  split.layout = Layout::UShaped;
  CHECK(split.resolved().cut_n == 5u);

  ExperimentSpec central;
  CHECK_FALSE(central.resolved().partition);
  CHECK(central.layer_dims() == std::vector<std::size_t>{32, 64, 48, 32, 14});
}

TEST_CASE("invalid settings") {
  ExperimentSpec spec;
  CHECK_THROWS_AS(apply_setting(spec, "nonsense", "1"), ConfigError);
  CHECK_THROWS_AS(apply_setting(spec, "paradigm", "gossip"), ConfigError);
  CHECK_THROWS_AS(apply_setting(spec, "batch_size", "-3"), ConfigError);
  CHECK_THROWS_AS(apply_setting(spec, "client_lr", "fast"), ConfigError);
  CHECK_THROWS_AS(apply_setting(spec, "hidden", "8,,4"), ConfigError);
  std::istringstream no_equals("paradigm split\n");
  CHECK_THROWS_AS(parse_spec(no_equals), ConfigError);

  auto rejects = [](std::initializer_list<std::pair<const char*, const char*>> settings) {
    ExperimentSpec s;
    for (const auto& [k, v] : settings) apply_setting(s, k, v);
    CHECK_THROWS_AS(s.resolved().validate(), ConfigError);
  };
  rejects({{"layout", "vanilla"}});
  rejects({{"paradigm", "federated"}, {"layout", "vanilla"}});
  rejects({{"paradigm", "split"}, {"aggregation", "fedavg"}});
  rejects({{"paradigm", "federated"}, {"granularity", "coarse"}, {"aggregation", "fedsgd"}});
  rejects({{"paradigm", "split"}, {"cut_n", "4"}});
  rejects({{"paradigm", "split"}, {"cut_m", "7"}});
  rejects({{"paradigm", "split"}, {"layout", "ushaped"}, {"cut_m", "4"}, {"cut_n", "3"}});
  rejects({{"paradigm", "federated"}, {"client_fraction", "0"}});
  rejects({{"paradigm", "federated"}, {"partition", "skewed"}, {"clients", "4"}});
  rejects({{"max_epochs", "0"}, {"data.train_fraction", "1.5"}});
  rejects({{"label_low", "0.9"}, {"label_high", "0.6"}});
}

TEST_CASE("grid cells") {
  const auto cells = grid_cells(ExperimentSpec{});
  CHECK(cells.size() == 15);
  std::set<std::string> names;
  for (const auto& c : cells) {
    CHECK_NOTHROW(c.resolved().validate());
    names.insert(experiment_name(c));
  }
  CHECK(names.size() == 15);
  CHECK(cells.front().paradigm == Paradigm::Centralized);
}

TEST_CASE("summary csv round-trip") {
  std::vector<SummaryRow> rows(2);
  rows[0].experiment = "a";
  rows[0].paradigm = "split";
  rows[0].mean_auc = 0.8123456789012345;
  rows[0].messages = 12;
  rows[0].bytes = 3456;
  rows[1].experiment = "b";
  rows[1].error = "failed, badly";
  std::stringstream s;
  write_summary_csv(s, rows);
  const auto back = read_summary_csv(s);
  REQUIRE(back.size() == 2);
  CHECK(back[0].mean_auc == rows[0].mean_auc);
  CHECK(back[0].bytes == 3456);
  CHECK_FALSE(back[1].mean_auc);
  CHECK_FALSE(back[1].error.empty());
}

TEST_CASE("run writes artifacts and reproduces from its echoed config") {
  ExperimentSpec spec = small_spec();
  spec.paradigm = Paradigm::Split;
  spec.layout = Layout::UShaped;
  const fs::path first = scratch("first");
  const RunArtifacts a = run_experiment(spec, small_data());
  write_artifacts(a, first.string());
  for (const char* f : {"summary.csv", "labels.csv", "comm.csv", "history.csv", "config.resolved"}) {
    CHECK(fs::exists(first / f));
  }
  CHECK(a.summary.size() == 1 + spec.clients);
  REQUIRE(a.summary.front().mean_auc);
  CHECK(a.summary.front().bytes == a.comm.total_bytes());

  double sum = 0.0;
  for (const auto& l : a.reports.front().labels) sum += *l.auc;
  CHECK(*a.summary.front().mean_auc == doctest::Approx(sum / 5.0).epsilon(1e-15));

  // U-shaped: nothing flagged as target-bearing goes to the server.
  std::istringstream comm(slurp(first / "comm.csv"));
  std::string line;
  std::getline(comm, line);
  while (std::getline(comm, line)) {
    std::vector<std::string> cols;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cols.push_back(c);
    REQUIRE(cols.size() == 7);
    if (cols[4] == "0") CHECK(cols[6] == "false");
  }

  const ExperimentSpec reloaded = load_spec((first / "config.resolved").string());
  CHECK(reloaded == a.spec);
  const fs::path second = scratch("second");
  write_artifacts(run_experiment(reloaded, prepare_data(reloaded.data)), second.string());
  for (const char* f : {"summary.csv", "labels.csv", "comm.csv", "history.csv"}) {
    CHECK(slurp(first / f) == slurp(second / f));
  }
  fs::remove_all(first);
  fs::remove_all(second);
}

TEST_CASE("local skewed baseline has one row per client") {
  ExperimentSpec spec = small_spec();
  spec.paradigm = Paradigm::Local;
  spec.partition = PartitionScheme::Skewed;
  const RunArtifacts a = run_experiment(spec, small_data());
  REQUIRE(a.summary.size() == 6);
  const auto& targets = default_target_labels();
  for (std::size_t c = 0; c < 5; ++c) {
    CHECK(a.summary[c + 1].experiment == experiment_name(spec) + "-" + targets[c]);
  }
  CHECK(a.summary.front().messages == 0);
  REQUIRE(a.partition);
  CHECK(a.partition->num_clients() == 5);
}

TEST_CASE("federated run reports communication") {
  ExperimentSpec spec = small_spec();
  spec.paradigm = Paradigm::Federated;
  const RunArtifacts a = run_experiment(spec, small_data());
  CHECK(a.summary.size() == 1);
  CHECK(a.summary.front().messages == a.comm.size());
  CHECK(a.summary.front().messages > 0);
  CHECK(a.summary.front().aggregation == "fedsgd");
}

TEST_CASE("summary table") {
  GridResult grid;
  SummaryRow r;
  r.experiment = "x";
  r.paradigm = "federated";
  r.granularity = "fine";
  r.partition = "uniform";
  r.mean_auc = 0.75;
  grid.rows.push_back(r);
  r.experiment = "x-client-0";
  r.mean_auc = 0.6;
  grid.rows.push_back(r);
  const std::string table = format_summary_table(grid.rows);
  CHECK(table.find("0.7500") != std::string::npos);
  CHECK(table.find("0.6000") == std::string::npos);
}
