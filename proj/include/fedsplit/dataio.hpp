#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsplit/nn.hpp"
#include "fedsplit/random.hpp"
#include "fedsplit/tensor.hpp"

namespace fedsplit {

enum class LabelValue : std::uint8_t { Negative, Positive, Uncertain };

using LabelVector = std::array<LabelValue, kNumLabels>;

// Positive under the U-Ones reading (Uncertain counts as positive).
constexpr bool is_positive(LabelValue v) { return v != LabelValue::Negative; }

struct Sample {
  std::int64_t id = 0;
  std::vector<double> features;
  LabelVector labels{};
};

struct Dataset {
  std::size_t dim = 0;
  std::vector<std::string> label_names;
  std::vector<std::string> target_labels;
  std::uint64_t generation_seed = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  // Column of each target label inside label_names.
  std::vector<std::size_t> target_indices() const;
  // Fraction of samples positive (U-Ones) for each of the 14 labels.
  std::vector<double> prevalence() const;
  void validate() const;
};

// The 14 label names used by generated datasets, and the 5 evaluation targets.
const std::vector<std::string>& default_label_names();
const std::vector<std::string>& default_target_labels();

struct LabelPolicy {
  double smoothing_low = 0.55;
  double smoothing_high = 0.85;

  void validate() const;
};

struct GenerationParams {
  std::size_t n_samples = 6250;
  std::size_t dim = 32;
  std::uint64_t seed = 1;
  double noise_scale = 6.0;
  double signal_scale = 20.0;  // standard deviation of the label-to-feature mixing weights

  bool operator==(const GenerationParams&) const = default;
};

inline constexpr double kUncertainFraction = 0.10;

Dataset gen_synthetic(const GenerationParams& params);

// Positive -> 1, Negative -> 0, Uncertain -> U(low, high).
Tensor apply_label_policy(std::span<const LabelValue> labels, const LabelPolicy& policy, Rng& rng);

// Shuffled, disjoint, covering split. Validation labels are binarized
// (Uncertain -> Positive).
std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double train_fraction, std::uint64_t seed);

enum class PartitionScheme { Uniform, Skewed };

struct PartitionPlan {
  PartitionScheme scheme = PartitionScheme::Uniform;
  std::vector<std::vector<std::int64_t>> assignments;      // sample ids per client
  std::vector<std::vector<double>> achieved_prevalence;    // [client][target label]
  std::vector<std::string> client_names;
  std::vector<std::optional<std::size_t>> majority_label;  // index into target_labels (Skewed)
  double majority_target = 0.0;

  std::size_t num_clients() const { return assignments.size(); }
  std::size_t total_samples() const;
};

PartitionPlan partition_uniform(const Dataset& train, std::size_t k, std::uint64_t seed);
PartitionPlan partition_skewed(const Dataset& train, std::size_t k, double majority_target, std::uint64_t seed);

struct ClientDataset {
  std::size_t client_id = 0;
  std::string name;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

std::vector<ClientDataset> resolve_partition(const PartitionPlan& plan, const Dataset& train);

// Line-oriented text format:
//   d=<int> labels=<comma-list> targets=<comma-list> seed=<int>
//   <id>;<f1,...,fd>;<l1,...,l14>     (labels as P/N/U)
// Doubles use the shortest round-trippable decimal form.
void write_dataset(std::ostream& out, const Dataset& ds);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

std::string format_double(double value);
double parse_double(std::string_view text);

}  // namespace fedsplit
