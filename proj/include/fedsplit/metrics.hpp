#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsplit/tensor.hpp"

namespace fedsplit {

// Rank-based (Mann-Whitney) AUROC with midranks for ties, i.e. the fraction
// of (positive, negative) pairs ordered correctly with ties counting 1/2.
// Throws UndefinedMetricError unless both classes are present.
double auroc(std::span<const double> scores, std::span<const double> truths);

struct LabelAuc {
  std::string label;
  std::optional<double> auc;  // empty when the metric is undefined
};

struct MetricsReport {
  std::string experiment;
  std::string paradigm;
  std::string layout;
  std::string granularity;
  std::string partition;
  std::vector<LabelAuc> labels;

  bool complete() const;
};

// Arithmetic mean of the label AUCs; empty if any label is undefined.
std::optional<double> mean_auc(const MetricsReport& report);
double mean_auc(std::span<const double> label_aucs);

// Scores the target columns of `predictions` [n, 14] against binary `truths`
// [n, 14]. Undefined labels are recorded, not skipped.
MetricsReport score_predictions(const Tensor& predictions, const Tensor& truths,
                                std::span<const std::size_t> target_columns,
                                std::span<const std::string> target_names);

struct EarlyStopDecision {
  bool stop = false;
  std::size_t best_epoch = 0;  // 1-based
};

// Stop once `patience` consecutive epochs fail to beat the best value, or
// once max_epochs have run. History holds one mean AUC per epoch.
EarlyStopDecision early_stop(std::span<const double> history, std::size_t patience, std::size_t max_epochs);

}  // namespace fedsplit
