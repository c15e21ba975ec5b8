#include "fedsplit/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "fedsplit/error.hpp"

namespace fedsplit {

double auroc(std::span<const double> scores, std::span<const double> truths) {
  if (scores.size() != truths.size()) throw DimensionError("auroc: scores and truths differ in length");
  std::size_t n_pos = 0;
  for (double t : truths) {
    if (t != 0.0 && t != 1.0) throw ConfigError("auroc: truths must be 0 or 1");
    n_pos += t == 1.0 ? 1 : 0;
  }
  const std::size_t n_neg = truths.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("auroc needs at least one positive and one negative");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks (1-based) of the positives.
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t r = i; r < j; ++r) {
      if (truths[order[r]] == 1.0) positive_rank_sum += midrank;
    }
    i = j;
  }
  const double pos = static_cast<double>(n_pos);
  const double u = positive_rank_sum - pos * (pos + 1.0) / 2.0;
  return u / (pos * static_cast<double>(n_neg));
}

bool MetricsReport::complete() const {
  return !labels.empty() && std::all_of(labels.begin(), labels.end(), [](const LabelAuc& l) { return l.auc.has_value(); });
}

std::optional<double> mean_auc(const MetricsReport& report) {
  if (!report.complete()) return std::nullopt;
  std::vector<double> values;
  for (const auto& l : report.labels) values.push_back(*l.auc);
  return mean_auc(values);
}

double mean_auc(std::span<const double> label_aucs) {
  if (label_aucs.empty()) throw ConfigError("mean_auc of no labels");
  double sum = 0.0;
  for (double v : label_aucs) sum += v;
  return sum / static_cast<double>(label_aucs.size());
}

MetricsReport score_predictions(const Tensor& predictions, const Tensor& truths,
                                std::span<const std::size_t> target_columns,
                                std::span<const std::string> target_names) {
  require_same_shape(predictions, truths, "score_predictions");
  if (target_columns.size() != target_names.size()) throw ConfigError("one name per target column required");
  const std::size_t n = predictions.rows();
  MetricsReport report;
  std::vector<double> scores(n);
  std::vector<double> labels(n);
  for (std::size_t t = 0; t < target_columns.size(); ++t) {
    const std::size_t col = target_columns[t];
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = predictions.at(i, col);
      labels[i] = truths.at(i, col);
    }
    LabelAuc entry{target_names[t], std::nullopt};
    try {
      entry.auc = auroc(scores, labels);
    } catch (const UndefinedMetricError&) {
      entry.auc.reset();
    }
    report.labels.push_back(std::move(entry));
  }
  return report;
}

EarlyStopDecision early_stop(std::span<const double> history, std::size_t patience, std::size_t max_epochs) {
  if (history.empty()) throw ConfigError("early_stop needs at least one epoch of history");
  EarlyStopDecision decision;
  double best = history[0];
  std::size_t best_index = 0;
  std::size_t since_best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] > best) {
      best = history[i];
      best_index = i;
      since_best = 0;
    } else {
      ++since_best;
    }
  }
  decision.best_epoch = best_index + 1;
  decision.stop = since_best >= patience || history.size() >= max_epochs;
  return decision;
}

}  // namespace fedsplit
