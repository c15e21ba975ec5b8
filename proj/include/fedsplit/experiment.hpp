#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedsplit/dataio.hpp"
#include "fedsplit/fedlearn.hpp"
#include "fedsplit/metrics.hpp"
#include "fedsplit/simnet.hpp"
#include "fedsplit/splitlearn.hpp"
#include "fedsplit/training.hpp"

namespace fedsplit {

enum class Paradigm { Centralized, Federated, Split, Local };

const char* to_string(Paradigm paradigm);
const char* to_string(PartitionScheme scheme);

struct DataParams {
  GenerationParams generation;
  double train_fraction = 0.8;
  std::string dir;  // load train.txt / val.txt from here instead of generating

  bool operator==(const DataParams&) const = default;
};

// One cell of the experimental grid. Optional fields are only meaningful for
// some paradigms; resolved() fills their defaults and validate() rejects
// combinations that make no sense (e.g. a layout for a federated run).
struct ExperimentSpec {
  Paradigm paradigm = Paradigm::Centralized;
  std::optional<Layout> layout;
  std::optional<Granularity> granularity;
  std::optional<Aggregation> aggregation;
  std::optional<PartitionScheme> partition;
  std::size_t clients = 5;
  double client_fraction = 1.0;
  std::size_t batch_size = 32;
  double client_lr = 1e-3;
  double server_lr = 1.0;
  std::size_t max_epochs = 10;
  std::size_t patience = 4;
  std::optional<std::size_t> cut_m;
  std::optional<std::size_t> cut_n;
  std::vector<std::size_t> hidden{64, 48, 32};
  double majority_target = 0.45;
  LabelPolicy label_policy;
  std::uint64_t seed = 1;
  DataParams data;
  std::string out;

  std::vector<std::size_t> layer_dims() const;
  void validate() const;
  // Defaults for the optional fields that apply to this paradigm.
  ExperimentSpec resolved() const;

  bool operator==(const ExperimentSpec& other) const;
};

// key=value lines; '#' starts a comment. Unknown keys are a ConfigError.
void apply_setting(ExperimentSpec& spec, std::string_view key, std::string_view value);
ExperimentSpec parse_spec(std::istream& in, ExperimentSpec base = {});
ExperimentSpec load_spec(const std::string& path, ExperimentSpec base = {});
// Every key of the resolved spec, in a fixed order.
std::string echo_spec(const ExperimentSpec& spec);

std::string experiment_name(const ExperimentSpec& spec);

struct DataBundle {
  Dataset train;
  Dataset val;
};

DataBundle prepare_data(const DataParams& params);

struct SummaryRow {
  std::string experiment;
  std::string paradigm;
  std::string layout;
  std::string granularity;
  std::string partition;
  std::string aggregation;
  std::optional<double> mean_auc;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  std::size_t messages = 0;
  std::size_t bytes = 0;
  std::string error;
};

struct HistoryRow {
  std::string experiment;
  RoundRecord record;
};

struct RunArtifacts {
  ExperimentSpec spec;                  // resolved
  std::vector<MetricsReport> reports;   // reports[0] is the headline result
  std::vector<SummaryRow> summary;      // one per report
  std::vector<HistoryRow> history;
  CommLog comm;
  std::optional<PartitionPlan> partition;
  std::optional<double> server_parameter_fraction;  // split runs
};

RunArtifacts run_experiment(const ExperimentSpec& spec, const DataBundle& data);

void write_artifacts(const RunArtifacts& artifacts, const std::string& dir);

// The comparison grid: centralized once, then for each partition federated and
// both split layouts at both granularities, plus the local baseline.
std::vector<ExperimentSpec> grid_cells(const ExperimentSpec& base);

struct GridResult {
  std::vector<SummaryRow> rows;
  std::vector<MetricsReport> reports;  // headline report per row (empty on failure)
};

// Runs every cell (up to `jobs` at a time). A failing cell is recorded in its
// row and the rest still run. With a non-empty out_dir, each cell writes its
// artifacts to out_dir/<experiment>/ and the grid writes summary.csv,
// labels.csv and summary.json to out_dir.
GridResult run_grid(const ExperimentSpec& base, const DataBundle& data, std::size_t jobs, const std::string& out_dir);

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> read_summary_csv(std::istream& in);
void write_labels_csv(std::ostream& out, const std::vector<MetricsReport>& reports);
void write_summary_json(std::ostream& out, const std::vector<SummaryRow>& rows);
void write_prevalence_table(std::ostream& out, const Dataset& train, const Dataset& val);

// Pivot: one line per (paradigm, layout, granularity), one
// column per partition scheme, plus communication totals.
std::string format_summary_table(const std::vector<SummaryRow>& rows);

}  // namespace fedsplit
