#include "fedsplit/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "fedsplit/error.hpp"
#include "fedsplit/random.hpp"

namespace fedsplit {

namespace {

constexpr std::uint64_t kModelStream = 0x6d6f64656c000000ULL;
constexpr std::uint64_t kPartitionStream = 0x7061727469740000ULL;

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

template <typename Int>
Int parse_uint(std::string_view key, std::string_view value) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("'" + std::string(key) + "' expects a non-negative integer, got '" + std::string(value) + "'");
  }
  return out;
}

double parse_number(std::string_view key, std::string_view value) {
  try {
    return parse_double(value);
  } catch (const IoError&) {
    throw ConfigError("'" + std::string(key) + "' expects a number, got '" + std::string(value) + "'");
  }
}

Paradigm parse_paradigm(std::string_view value) {
  const auto v = lower(value);
  if (v == "centralized") return Paradigm::Centralized;
  if (v == "federated") return Paradigm::Federated;
  if (v == "split") return Paradigm::Split;
  if (v == "local") return Paradigm::Local;
  throw ConfigError("unknown paradigm '" + std::string(value) + "' (centralized, federated, split, local)");
}

Layout parse_layout(std::string_view value) {
  const auto v = lower(value);
  if (v == "vanilla") return Layout::Vanilla;
  if (v == "ushaped" || v == "u-shaped") return Layout::UShaped;
  throw ConfigError("unknown layout '" + std::string(value) + "' (vanilla, ushaped)");
}

Granularity parse_granularity(std::string_view value) {
  const auto v = lower(value);
  if (v == "fine") return Granularity::Fine;
  if (v == "coarse") return Granularity::Coarse;
  throw ConfigError("unknown granularity '" + std::string(value) + "' (fine, coarse)");
}

Aggregation parse_aggregation(std::string_view value) {
  const auto v = lower(value);
  if (v == "fedsgd") return Aggregation::FedSGD;
  if (v == "fedavg") return Aggregation::FedAVG;
  throw ConfigError("unknown aggregation '" + std::string(value) + "' (fedsgd, fedavg)");
}

PartitionScheme parse_partition(std::string_view value) {
  const auto v = lower(value);
  if (v == "uniform") return PartitionScheme::Uniform;
  if (v == "skewed" || v == "unbalanced") return PartitionScheme::Skewed;
  throw ConfigError("unknown partition '" + std::string(value) + "' (uniform, skewed)");
}

std::vector<std::size_t> parse_size_list(std::string_view key, std::string_view value) {
  std::vector<std::size_t> out;
  if (trim(value).empty()) return out;
  std::size_t start = 0;
  while (start <= value.size()) {
    const auto pos = value.find(',', start);
    out.push_back(parse_uint<std::size_t>(key, trim(value.substr(start, pos - start))));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

bool uses_partition(Paradigm p) { return p != Paradigm::Centralized; }
bool uses_granularity(Paradigm p) { return p == Paradigm::Federated || p == Paradigm::Split; }

std::string csv_safe(std::string text) {
  for (auto& c : text) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return text;
}

std::string optional_number(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

MetricsReport labelled(MetricsReport report, const ExperimentSpec& spec, std::string experiment) {
  report.experiment = std::move(experiment);
  report.paradigm = to_string(spec.paradigm);
  report.layout = spec.layout ? to_string(*spec.layout) : "";
  report.granularity = spec.granularity ? to_string(*spec.granularity) : "";
  report.partition = spec.partition ? to_string(*spec.partition) : "";
  return report;
}

SummaryRow summary_row(const MetricsReport& report, const ExperimentSpec& spec) {
  SummaryRow row;
  row.experiment = report.experiment;
  row.paradigm = report.paradigm;
  row.layout = report.layout;
  row.granularity = report.granularity;
  row.partition = report.partition;
  row.aggregation = spec.aggregation ? to_string(*spec.aggregation) : "";
  row.mean_auc = mean_auc(report);
  return row;
}

// Per-label average over several reports; undefined if any input is.
MetricsReport average_reports(const std::vector<MetricsReport>& reports) {
  MetricsReport avg;
  if (reports.empty()) return avg;
  for (std::size_t l = 0; l < reports.front().labels.size(); ++l) {
    LabelAuc entry{reports.front().labels[l].label, 0.0};
    for (const auto& r : reports) {
      if (!r.labels[l].auc) {
        entry.auc.reset();
        break;
      }
      *entry.auc += *r.labels[l].auc;
    }
    if (entry.auc) *entry.auc /= static_cast<double>(reports.size());
    avg.labels.push_back(std::move(entry));
  }
  return avg;
}

void add_history(RunArtifacts& artifacts, const std::string& experiment, const std::vector<RoundRecord>& records) {
  for (const auto& r : records) artifacts.history.push_back(HistoryRow{experiment, r});
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

}  // namespace

const char* to_string(Paradigm paradigm) {
  switch (paradigm) {
    case Paradigm::Centralized:
      return "centralized";
    case Paradigm::Federated:
      return "federated";
    case Paradigm::Split:
      return "split";
    case Paradigm::Local:
      return "local";
  }
  return "unknown";
}

const char* to_string(PartitionScheme scheme) { return scheme == PartitionScheme::Uniform ? "uniform" : "skewed"; }

std::vector<std::size_t> ExperimentSpec::layer_dims() const {
  std::vector<std::size_t> dims{data.generation.dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(kNumLabels);
  return dims;
}

void ExperimentSpec::validate() const {
  if (layout && paradigm != Paradigm::Split) throw ConfigError("layout only applies to split runs");
  if (granularity && !uses_granularity(paradigm)) {
    throw ConfigError("granularity only applies to federated and split runs");
  }
  if (aggregation && paradigm != Paradigm::Federated) throw ConfigError("aggregation only applies to federated runs");
  if ((cut_m || cut_n) && paradigm != Paradigm::Split) throw ConfigError("cut_m/cut_n only apply to split runs");
  if (cut_n && layout && *layout == Layout::Vanilla) throw ConfigError("the vanilla layout takes a single cut");
  if (granularity == Granularity::Coarse && aggregation == Aggregation::FedSGD) {
    throw ConfigError("coarse federated rounds aggregate weights (fedavg); fedsgd needs fine granularity");
  }
  if (clients == 0) throw ConfigError("clients must be at least 1");
  if (partition == PartitionScheme::Skewed && clients != default_target_labels().size()) {
    throw ConfigError("the skewed partition needs one client per target label (" +
                      std::to_string(default_target_labels().size()) + ")");
  }
  if (!(client_fraction > 0.0 && client_fraction <= 1.0)) throw ConfigError("client_fraction must lie in (0, 1]");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(client_lr > 0.0) || !(server_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(majority_target > 0.0 && majority_target <= 1.0)) throw ConfigError("majority_target must lie in (0, 1]");
  for (auto h : hidden) {
    if (h == 0) throw ConfigError("hidden widths must be positive");
  }
  label_policy.validate();
  if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0)) throw ConfigError("data.train_fraction must lie in (0, 1)");
  if (data.dir.empty()) {
    if (data.generation.n_samples < 100) throw ConfigError("data.n_samples must be at least 100");
    if (data.generation.dim < 8) throw ConfigError("data.d must be at least 8");
    if (!(data.generation.noise_scale >= 0.0)) throw ConfigError("data.noise_scale must be non-negative");
    if (!(data.generation.signal_scale > 0.0)) throw ConfigError("data.signal_scale must be positive");
  }
  if (paradigm == Paradigm::Split) {
    const std::size_t last_layer = 2 * (hidden.size() + 1) - 1;
    const std::size_t m = cut_m.value_or(1);
    if (m == 0 || m >= last_layer) {
      throw ConfigError("cut_m must satisfy 0 < cut_m < " + std::to_string(last_layer));
    }
    if (cut_n && (*cut_n <= m || *cut_n >= last_layer)) {
      throw ConfigError("cut_n must satisfy cut_m < cut_n < " + std::to_string(last_layer));
    }
  }
}

ExperimentSpec ExperimentSpec::resolved() const {
  ExperimentSpec r = *this;
  if (!uses_partition(r.paradigm)) {
    r.partition.reset();
  } else if (!r.partition) {
    r.partition = PartitionScheme::Uniform;
  }
  if (uses_granularity(r.paradigm) && !r.granularity) r.granularity = Granularity::Fine;
  if (r.paradigm == Paradigm::Federated && !r.aggregation) {
    r.aggregation = r.granularity == Granularity::Coarse ? Aggregation::FedAVG : Aggregation::FedSGD;
  }
  if (r.paradigm == Paradigm::Split) {
    if (!r.layout) r.layout = Layout::Vanilla;
    if (!r.cut_m) r.cut_m = 1;
    // U-shaped default: just before the last dense layer.
    if (*r.layout == Layout::UShaped && !r.cut_n) r.cut_n = 2 * (r.hidden.size() + 1) - 3;
  }
  return r;
}

bool ExperimentSpec::operator==(const ExperimentSpec& o) const {
  return paradigm == o.paradigm && layout == o.layout && granularity == o.granularity &&
         aggregation == o.aggregation && partition == o.partition && clients == o.clients &&
         client_fraction == o.client_fraction && batch_size == o.batch_size && client_lr == o.client_lr &&
         server_lr == o.server_lr && max_epochs == o.max_epochs && patience == o.patience && cut_m == o.cut_m &&
         cut_n == o.cut_n && hidden == o.hidden && majority_target == o.majority_target &&
         label_policy.smoothing_low == o.label_policy.smoothing_low &&
         label_policy.smoothing_high == o.label_policy.smoothing_high && seed == o.seed && data == o.data &&
         out == o.out;
}

void apply_setting(ExperimentSpec& spec, std::string_view raw_key, std::string_view raw_value) {
  const std::string key = trim(raw_key);
  const std::string value = trim(raw_value);
  if (key == "seed") {
    spec.seed = parse_uint<std::uint64_t>(key, value);
  } else if (key == "paradigm") {
    spec.paradigm = parse_paradigm(value);
  } else if (key == "layout") {
    spec.layout = parse_layout(value);
  } else if (key == "granularity") {
    spec.granularity = parse_granularity(value);
  } else if (key == "aggregation") {
    spec.aggregation = parse_aggregation(value);
  } else if (key == "partition") {
    spec.partition = parse_partition(value);
  } else if (key == "clients") {
    spec.clients = parse_uint<std::size_t>(key, value);
  } else if (key == "client_fraction") {
    spec.client_fraction = parse_number(key, value);
  } else if (key == "batch_size") {
    spec.batch_size = parse_uint<std::size_t>(key, value);
  } else if (key == "client_lr") {
    spec.client_lr = parse_number(key, value);
  } else if (key == "server_lr") {
    spec.server_lr = parse_number(key, value);
  } else if (key == "max_epochs") {
    spec.max_epochs = parse_uint<std::size_t>(key, value);
  } else if (key == "patience") {
    spec.patience = parse_uint<std::size_t>(key, value);
  } else if (key == "cut_m") {
    spec.cut_m = parse_uint<std::size_t>(key, value);
  } else if (key == "cut_n") {
    spec.cut_n = parse_uint<std::size_t>(key, value);
  } else if (key == "hidden") {
    spec.hidden = parse_size_list(key, value);
  } else if (key == "majority_target") {
    spec.majority_target = parse_number(key, value);
  } else if (key == "label_low") {
    spec.label_policy.smoothing_low = parse_number(key, value);
  } else if (key == "label_high") {
    spec.label_policy.smoothing_high = parse_number(key, value);
  } else if (key == "data.n_samples") {
    spec.data.generation.n_samples = parse_uint<std::size_t>(key, value);
  } else if (key == "data.d") {
    spec.data.generation.dim = parse_uint<std::size_t>(key, value);
  } else if (key == "data.noise_scale") {
    spec.data.generation.noise_scale = parse_number(key, value);
  } else if (key == "data.signal_scale") {
    spec.data.generation.signal_scale = parse_number(key, value);
  } else if (key == "data.seed") {
    spec.data.generation.seed = parse_uint<std::uint64_t>(key, value);
  } else if (key == "data.train_fraction") {
    spec.data.train_fraction = parse_number(key, value);
  } else if (key == "data.dir") {
    spec.data.dir = value;
  } else if (key == "out") {
    spec.out = value;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

ExperimentSpec parse_spec(std::istream& in, ExperimentSpec base) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string content = trim(std::string_view(line).substr(0, hash));
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + " is not key=value");
    apply_setting(base, content.substr(0, eq), content.substr(eq + 1));
  }
  return base;
}

ExperimentSpec load_spec(const std::string& path, ExperimentSpec base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  return parse_spec(in, std::move(base));
}

std::string echo_spec(const ExperimentSpec& input) {
  const ExperimentSpec s = input.resolved();
  std::ostringstream out;
  out << "seed=" << s.seed << '\n';
  out << "paradigm=" << to_string(s.paradigm) << '\n';
  if (s.layout) out << "layout=" << to_string(*s.layout) << '\n';
  if (s.granularity) out << "granularity=" << to_string(*s.granularity) << '\n';
  if (s.aggregation) out << "aggregation=" << to_string(*s.aggregation) << '\n';
  if (s.partition) out << "partition=" << to_string(*s.partition) << '\n';
  out << "clients=" << s.clients << '\n';
  out << "client_fraction=" << format_double(s.client_fraction) << '\n';
  out << "batch_size=" << s.batch_size << '\n';
  out << "client_lr=" << format_double(s.client_lr) << '\n';
  out << "server_lr=" << format_double(s.server_lr) << '\n';
  out << "max_epochs=" << s.max_epochs << '\n';
  out << "patience=" << s.patience << '\n';
  if (s.cut_m) out << "cut_m=" << *s.cut_m << '\n';
  if (s.cut_n) out << "cut_n=" << *s.cut_n << '\n';
  out << "hidden=" << join_sizes(s.hidden) << '\n';
  out << "majority_target=" << format_double(s.majority_target) << '\n';
  out << "label_low=" << format_double(s.label_policy.smoothing_low) << '\n';
  out << "label_high=" << format_double(s.label_policy.smoothing_high) << '\n';
  out << "data.n_samples=" << s.data.generation.n_samples << '\n';
  out << "data.d=" << s.data.generation.dim << '\n';
  out << "data.noise_scale=" << format_double(s.data.generation.noise_scale) << '\n';
  out << "data.signal_scale=" << format_double(s.data.generation.signal_scale) << '\n';
  out << "data.seed=" << s.data.generation.seed << '\n';
  out << "data.train_fraction=" << format_double(s.data.train_fraction) << '\n';
  if (!s.data.dir.empty()) out << "data.dir=" << s.data.dir << '\n';
  return out.str();
}

std::string experiment_name(const ExperimentSpec& input) {
  const ExperimentSpec s = input.resolved();
  std::string name = to_string(s.paradigm);
  if (s.layout) name += std::string("-") + to_string(*s.layout);
  if (s.partition) name += std::string("-") + to_string(*s.partition);
  if (s.granularity) name += std::string("-") + to_string(*s.granularity);
  return name;
}

DataBundle prepare_data(const DataParams& params) {
  if (!params.dir.empty()) {
    const std::filesystem::path dir(params.dir);
    return DataBundle{load_dataset((dir / "train.txt").string()), load_dataset((dir / "val.txt").string())};
  }
  const Dataset full = gen_synthetic(params.generation);
  auto [train, val] = split_train_val(full, params.train_fraction, params.generation.seed);
  return DataBundle{std::move(train), std::move(val)};
}

RunArtifacts run_experiment(const ExperimentSpec& input, const DataBundle& data) {
  ExperimentSpec spec = input.resolved();
  spec.validate();
  if (data.train.dim != data.val.dim) throw ConfigError("train and validation feature widths differ");
  ExperimentSpec model_spec = spec;
  model_spec.data.generation.dim = data.train.dim;

  RunArtifacts artifacts;
  artifacts.spec = spec;
  const std::string name = experiment_name(spec);
  const SequentialModel init = init_model(model_spec.layer_dims(), mix_seed(spec.seed, kModelStream));
  const EvalSet eval = make_eval_set(data.val);

  TrainingOptions options;
  options.batch_size = spec.batch_size;
  options.lr = spec.client_lr;
  options.max_epochs = spec.max_epochs;
  options.patience = spec.patience;
  options.seed = spec.seed;

  auto push_report = [&](MetricsReport report, std::size_t epochs_run, std::size_t best_epoch) {
    SummaryRow row = summary_row(report, spec);
    row.epochs_run = epochs_run;
    row.best_epoch = best_epoch;
    artifacts.summary.push_back(std::move(row));
    artifacts.reports.push_back(std::move(report));
  };

  if (spec.paradigm == Paradigm::Centralized) {
    const LocalData all = materialize(data.train.samples, 0, "all", spec.label_policy, spec.seed);
    SgdResult r = train_sgd(init, all, eval, options);
    push_report(labelled(r.best.report, spec, name), r.epochs_run, r.best_epoch);
    add_history(artifacts, name, r.history);
    return artifacts;
  }

  const std::uint64_t partition_seed = mix_seed(spec.seed, kPartitionStream);
  PartitionPlan plan = *spec.partition == PartitionScheme::Uniform
                           ? partition_uniform(data.train, spec.clients, partition_seed)
                           : partition_skewed(data.train, spec.clients, spec.majority_target, partition_seed);
  std::vector<LocalData> clients;
  for (const auto& c : resolve_partition(plan, data.train)) clients.push_back(materialize(c, spec.label_policy, spec.seed));
  artifacts.partition = std::move(plan);

  switch (spec.paradigm) {
    case Paradigm::Federated: {
      FedConfig config;
      config.num_clients = spec.clients;
      config.client_fraction = spec.client_fraction;
      config.client_lr = spec.client_lr;
      config.server_lr = spec.server_lr;
      config.aggregation = *spec.aggregation;
      config.granularity = *spec.granularity;
      config.batch_size = spec.batch_size;
      config.max_epochs = spec.max_epochs;
      config.patience = spec.patience;
      config.seed = spec.seed;
      FedResult r = run_federated(config, clients, init, eval);
      push_report(labelled(r.best.report, spec, name), r.epochs_run, r.best_epoch);
      add_history(artifacts, name, r.history);
      artifacts.comm = std::move(r.comm);
      break;
    }
    case Paradigm::Split: {
      SplitConfig config;
      config.layout = *spec.layout;
      config.cut_m = *spec.cut_m;
      config.cut_n = spec.cut_n;
      config.granularity = *spec.granularity;
      config.client_lr = spec.client_lr;
      config.batch_size = spec.batch_size;
      config.max_epochs = spec.max_epochs;
      config.patience = spec.patience;
      config.seed = spec.seed;
      SplitResult r = run_split(config, clients, init, eval);
      push_report(labelled(r.best.report, spec, name), r.epochs_run, r.best_epoch);
      for (std::size_t c = 0; c < r.client_best.size(); ++c) {
        push_report(labelled(r.client_best[c].report, spec, name + "-client-" + clients[c].name), r.epochs_run,
                    r.best_epoch);
      }
      add_history(artifacts, name, r.history);
      artifacts.server_parameter_fraction =
          static_cast<double>(r.state.server.parameter_count()) / static_cast<double>(init.parameter_count());
      artifacts.comm = std::move(r.comm);
      break;
    }
    case Paradigm::Local: {
      std::vector<MetricsReport> client_reports;
      std::vector<SummaryRow> client_rows;
      std::size_t max_epochs_run = 0;
      for (const auto& client : clients) {
        SgdResult r = train_sgd(init, client, eval, options);
        const std::string client_name = name + "-" + client.name;
        client_reports.push_back(labelled(r.best.report, spec, client_name));
        SummaryRow row = summary_row(client_reports.back(), spec);
        row.epochs_run = r.epochs_run;
        row.best_epoch = r.best_epoch;
        client_rows.push_back(std::move(row));
        max_epochs_run = std::max(max_epochs_run, r.epochs_run);
        add_history(artifacts, client_name, r.history);
      }
      push_report(labelled(average_reports(client_reports), spec, name), max_epochs_run, 0);
      for (std::size_t c = 0; c < client_reports.size(); ++c) {
        artifacts.summary.push_back(client_rows[c]);
        artifacts.reports.push_back(client_reports[c]);
      }
      break;
    }
    case Paradigm::Centralized:
      break;
  }
  const CommSummary comm = comm_summary(artifacts.comm);
  artifacts.summary.front().messages = comm.total.messages;
  artifacts.summary.front().bytes = comm.total.bytes;
  return artifacts;
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "experiment,paradigm,layout,granularity,partition,aggregation,mean_auc,epochs_run,best_epoch,messages,bytes,"
         "error\n";
  for (const auto& r : rows) {
    out << r.experiment << ',' << r.paradigm << ',' << r.layout << ',' << r.granularity << ',' << r.partition << ','
        << r.aggregation << ',' << optional_number(r.mean_auc) << ',' << r.epochs_run << ',' << r.best_epoch << ','
        << r.messages << ',' << r.bytes << ',' << csv_safe(r.error) << '\n';
  }
}

std::vector<SummaryRow> read_summary_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("summary.csv is empty");
  std::vector<SummaryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 12) throw IoError("summary.csv row has " + std::to_string(f.size()) + " fields, expected 12");
    SummaryRow r;
    r.experiment = f[0];
    r.paradigm = f[1];
    r.layout = f[2];
    r.granularity = f[3];
    r.partition = f[4];
    r.aggregation = f[5];
    if (!f[6].empty()) r.mean_auc = parse_double(f[6]);
    r.epochs_run = std::stoul(f[7]);
    r.best_epoch = std::stoul(f[8]);
    r.messages = std::stoul(f[9]);
    r.bytes = std::stoul(f[10]);
    r.error = f[11];
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_labels_csv(std::ostream& out, const std::vector<MetricsReport>& reports) {
  out << "experiment,label,auc\n";
  for (const auto& report : reports) {
    for (const auto& l : report.labels) out << report.experiment << ',' << l.label << ',' << optional_number(l.auc) << '\n';
  }
}

void write_summary_json(std::ostream& out, const std::vector<SummaryRow>& rows) {
  nlohmann::ordered_json doc;
  doc["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["experiment"] = r.experiment;
    row["paradigm"] = r.paradigm;
    row["layout"] = r.layout;
    row["granularity"] = r.granularity;
    row["partition"] = r.partition;
    row["aggregation"] = r.aggregation;
    row["mean_auc"] = r.mean_auc ? nlohmann::ordered_json(*r.mean_auc) : nlohmann::ordered_json(nullptr);
    row["messages"] = r.messages;
    row["bytes"] = r.bytes;
    if (!r.error.empty()) row["error"] = r.error;
    doc["rows"].push_back(std::move(row));
  }
  out << doc.dump(2) << '\n';
}

void write_prevalence_table(std::ostream& out, const Dataset& train, const Dataset& val) {
  const auto train_prev = train.prevalence();
  const auto val_prev = val.prevalence();
  const auto targets = train.target_indices();
  out << "label,train_prevalence,val_prevalence,target\n";
  for (std::size_t l = 0; l < kNumLabels; ++l) {
    const bool is_target = std::find(targets.begin(), targets.end(), l) != targets.end();
    out << train.label_names[l] << ',' << format_double(train_prev[l]) << ',' << format_double(val_prev[l]) << ','
        << (is_target ? "yes" : "no") << '\n';
  }
}

void write_artifacts(const RunArtifacts& artifacts, const std::string& dir) {
  ensure_dir(dir);
  const std::filesystem::path root(dir);
  {
    auto out = open_output(root / "summary.csv");
    write_summary_csv(out, artifacts.summary);
  }
  {
    auto out = open_output(root / "labels.csv");
    write_labels_csv(out, artifacts.reports);
  }
  {
    auto out = open_output(root / "summary.json");
    write_summary_json(out, artifacts.summary);
  }
  {
    auto out = open_output(root / "comm.csv");
    artifacts.comm.write_csv(out);
  }
  {
    auto out = open_output(root / "comm_summary.csv");
    const std::string run = artifacts.summary.empty() ? "" : artifacts.summary.front().experiment;
    const CommSummary summary = comm_summary(artifacts.comm, run);
    out << "run,round,direction,messages,bytes\n";
    for (const auto& r : summary.rows) {
      out << r.run << ',' << r.round << ',' << (r.direction == Direction::Uplink ? "uplink" : "downlink") << ','
          << r.totals.messages << ',' << r.totals.bytes << '\n';
    }
    out << run << ",total,all," << summary.total.messages << ',' << summary.total.bytes << '\n';
  }
  {
    auto out = open_output(root / "history.csv");
    out << "experiment,round,epoch,participants,val_loss,mean_auc,messages,bytes\n";
    for (const auto& h : artifacts.history) {
      std::string participants;
      for (std::size_t i = 0; i < h.record.participants.size(); ++i) {
        if (i) participants += ' ';
        participants += std::to_string(h.record.participants[i]);
      }
      out << h.experiment << ',' << h.record.round << ',' << h.record.epoch << ',' << participants << ','
          << format_double(h.record.val_loss) << ',' << optional_number(h.record.mean_auc) << ','
          << h.record.messages << ',' << h.record.bytes << '\n';
    }
  }
  {
    auto out = open_output(root / "config.resolved");
    out << echo_spec(artifacts.spec);
  }
  if (artifacts.partition) {
    auto out = open_output(root / "prevalence.csv");
    const auto& plan = *artifacts.partition;
    out << "client,name,size";
    const std::size_t n_targets = plan.achieved_prevalence.empty() ? 0 : plan.achieved_prevalence.front().size();
    for (std::size_t t = 0; t < n_targets; ++t) out << ",target" << t;
    out << ",majority_reached\n";
    for (std::size_t c = 0; c < plan.num_clients(); ++c) {
      out << c << ',' << plan.client_names[c] << ',' << plan.assignments[c].size();
      for (double p : plan.achieved_prevalence[c]) out << ',' << format_double(p);
      std::string reached = "-";
      if (plan.majority_label[c]) {
        reached = plan.achieved_prevalence[c][*plan.majority_label[c]] >= plan.majority_target ? "yes" : "no";
      }
      out << ',' << reached << '\n';
    }
  }
  if (artifacts.server_parameter_fraction) {
    auto out = open_output(root / "split.txt");
    out << "server_parameter_fraction=" << format_double(*artifacts.server_parameter_fraction) << '\n';
  }
}

std::vector<ExperimentSpec> grid_cells(const ExperimentSpec& base) {
  auto cell = [&](Paradigm paradigm) {
    ExperimentSpec s = base;
    s.paradigm = paradigm;
    s.layout.reset();
    s.granularity.reset();
    s.aggregation.reset();
    s.partition.reset();
    if (paradigm != Paradigm::Split) {
      s.cut_m.reset();
      s.cut_n.reset();
    }
    return s;
  };
  std::vector<ExperimentSpec> cells{cell(Paradigm::Centralized)};
  for (PartitionScheme scheme : {PartitionScheme::Uniform, PartitionScheme::Skewed}) {
    for (Granularity g : {Granularity::Fine, Granularity::Coarse}) {
      ExperimentSpec s = cell(Paradigm::Federated);
      s.partition = scheme;
      s.granularity = g;
      cells.push_back(s);
    }
    for (Layout layout : {Layout::Vanilla, Layout::UShaped}) {
      for (Granularity g : {Granularity::Fine, Granularity::Coarse}) {
        ExperimentSpec s = cell(Paradigm::Split);
        s.partition = scheme;
        s.granularity = g;
        s.layout = layout;
        if (layout == Layout::Vanilla) s.cut_n.reset();
        cells.push_back(s);
      }
    }
    ExperimentSpec local = cell(Paradigm::Local);
    local.partition = scheme;
    cells.push_back(local);
  }
  return cells;
}

GridResult run_grid(const ExperimentSpec& base, const DataBundle& data, std::size_t jobs, const std::string& out_dir) {
  const std::vector<ExperimentSpec> cells = grid_cells(base);
  GridResult result;
  result.rows.resize(cells.size());
  result.reports.resize(cells.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const ExperimentSpec& spec = cells[i];
      try {
        RunArtifacts artifacts = run_experiment(spec, data);
        if (!out_dir.empty()) {
          write_artifacts(artifacts, (std::filesystem::path(out_dir) / experiment_name(spec)).string());
        }
        result.rows[i] = artifacts.summary.front();
        result.reports[i] = artifacts.reports.front();
      } catch (const std::exception& e) {
        const ExperimentSpec r = spec.resolved();
        SummaryRow row;
        row.experiment = experiment_name(r);
        row.paradigm = to_string(r.paradigm);
        row.layout = r.layout ? to_string(*r.layout) : "";
        row.granularity = r.granularity ? to_string(*r.granularity) : "";
        row.partition = r.partition ? to_string(*r.partition) : "";
        row.error = e.what();
        result.rows[i] = std::move(row);
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, cells.size()));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    const std::filesystem::path root(out_dir);
    {
      auto out = open_output(root / "summary.csv");
      write_summary_csv(out, result.rows);
    }
    {
      auto out = open_output(root / "labels.csv");
      std::vector<MetricsReport> ok;
      for (const auto& r : result.reports) {
        if (!r.experiment.empty()) ok.push_back(r);
      }
      write_labels_csv(out, ok);
    }
    {
      auto out = open_output(root / "summary.json");
      write_summary_json(out, result.rows);
    }
    {
      auto out = open_output(root / "config.resolved");
      ExperimentSpec echo = base;
      echo.paradigm = Paradigm::Centralized;
      echo.layout.reset();
      echo.granularity.reset();
      echo.aggregation.reset();
      echo.partition.reset();
      echo.cut_m.reset();
      echo.cut_n.reset();
      out << echo_spec(echo);
    }
  }
  return result;
}

std::string format_summary_table(const std::vector<SummaryRow>& rows) {
  struct Cell {
    std::optional<double> uniform, skewed, shared;
    std::size_t messages = 0;
    std::size_t bytes = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Cell> cells;
  std::set<std::string> seen;
  for (const auto& r : rows) {
    std::string key = r.paradigm;
    if (!r.layout.empty()) key += " (" + r.layout + ")";
    if (!r.granularity.empty()) key += ", " + r.granularity;
    if (!cells.count(key)) order.push_back(key);
    // Per-client rows follow their headline row; only the headline is shown.
    if (!seen.insert(key + "|" + r.partition).second) continue;
    Cell& c = cells[key];
    if (r.partition == "uniform") {
      c.uniform = r.mean_auc;
    } else if (r.partition == "skewed") {
      c.skewed = r.mean_auc;
    } else {
      c.shared = r.mean_auc;
    }
    c.messages += r.messages;
    c.bytes += r.bytes;
  }
  auto fmt = [](const std::optional<double>& v) {
    if (!v) return std::string("n/a");
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << *v;
    return s.str();
  };
  std::ostringstream out;
  out << std::left << std::setw(34) << "experiment" << std::setw(10) << "uniform" << std::setw(10) << "skewed"
      << std::setw(12) << "messages" << "bytes\n";
  for (const auto& key : order) {
    const Cell& c = cells[key];
    if (c.shared) {
      out << std::setw(34) << key << std::setw(20) << fmt(c.shared);
    } else {
      out << std::setw(34) << key << std::setw(10) << fmt(c.uniform) << std::setw(10) << fmt(c.skewed);
    }
    out << std::setw(12) << c.messages << c.bytes << '\n';
  }
  return out.str();
}

}  // namespace fedsplit
