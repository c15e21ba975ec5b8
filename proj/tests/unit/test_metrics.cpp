#include <cmath>

#include "doctest.h"
#include "fedsplit/error.hpp"
#include "fedsplit/metrics.hpp"
#include "helpers.hpp"

using namespace fedsplit;
using namespace testing;

TEST_CASE("auroc examples") {
  CHECK(auroc(std::vector<double>{0.9, 0.8, 0.3}, std::vector<double>{1, 1, 0}) == 1.0);
  CHECK(auroc(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 0}) == 0.5);
  CHECK(auroc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<double>{0, 0, 1, 1}) == 0.75);
}

TEST_CASE("auroc errors") {
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1, 0.2}, std::vector<double>{1, 1}), UndefinedMetricError);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1, 0.2}, std::vector<double>{0, 0}), UndefinedMetricError);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1, 0.2}, std::vector<double>{0, 0.5}), ConfigError);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1}, std::vector<double>{0, 1}), DimensionError);
}

TEST_CASE("auroc equals brute-force pairwise enumeration") {
  Rng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(199);
    const bool coarse = rng.bernoulli(0.5);
    std::vector<double> scores(n), truths(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = coarse ? static_cast<double>(rng.below(5)) / 4.0 : rng.uniform();
      truths[i] = rng.bernoulli(0.3) ? 1.0 : 0.0;
    }
    truths[0] = 1.0;
    truths[1] = 0.0;
    CHECK(auroc(scores, truths) == brute_force_auroc(scores, truths));
  }
}

TEST_CASE("auroc complement symmetry and monotone invariance") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 20 + rng.below(80);
    std::vector<double> scores(n), truths(n), flipped(n), warped(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = rng.uniform();
      truths[i] = i < 5 ? static_cast<double>(i % 2) : (rng.bernoulli(0.4) ? 1.0 : 0.0);
      flipped[i] = 1.0 - truths[i];
      warped[i] = std::exp(3.0 * scores[i]) - 7.0;
    }
    CHECK(auroc(scores, truths) + auroc(scores, flipped) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(auroc(warped, truths) == auroc(scores, truths));
  }
}

TEST_CASE("random predictor scores about one half") {
  Rng rng(1234);
  const std::size_t n = 10000;
  Tensor pred({n, kNumLabels}), truth({n, kNumLabels});
  for (auto& v : pred.data()) v = rng.uniform();
  for (auto& v : truth.data()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  const std::vector<std::size_t> cols{8, 2, 6, 5, 10};
  const std::vector<std::string> names{"a", "b", "c", "d", "e"};
  const MetricsReport report = score_predictions(pred, truth, cols, names);
  REQUIRE(report.complete());
  CHECK(std::abs(*mean_auc(report) - 0.5) <= 0.05);
}

TEST_CASE("mean_auc") {
  CHECK(mean_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5, 0.5}) == 0.5);
  CHECK(mean_auc(std::vector<double>{0.6, 0.7, 0.8, 0.9, 1.0}) == doctest::Approx(0.8).epsilon(1e-15));
  const double reference = mean_auc(std::vector<double>{0.7675, 0.7135, 0.8285, 0.7890, 0.8329});
  CHECK(std::round(reference * 1e4) / 1e4 == doctest::Approx(0.7863).epsilon(1e-12));

  MetricsReport incomplete;
  incomplete.labels = {{"a", 0.7}, {"b", std::nullopt}};
  CHECK_FALSE(incomplete.complete());
  CHECK_FALSE(mean_auc(incomplete).has_value());
}

TEST_CASE("score_predictions records undefined labels") {
  Tensor pred({4, kNumLabels}, 0.3);
  Tensor truth({4, kNumLabels});
  truth.at(0, 1) = 1.0;
  pred.at(0, 1) = 0.9;
  const std::vector<std::size_t> cols{1, 2};
  const std::vector<std::string> names{"one", "two"};
  const MetricsReport r = score_predictions(pred, truth, cols, names);
  REQUIRE(r.labels.size() == 2);
  CHECK(r.labels[0].label == "one");
  CHECK(r.labels[0].auc == 1.0);
  CHECK_FALSE(r.labels[1].auc.has_value());
  CHECK_FALSE(r.complete());
}

TEST_CASE("early_stop examples") {
  SUBCASE("monotone improvement runs to the limit") {
    const std::vector<double> h{0.5, 0.55, 0.6, 0.62, 0.64, 0.66, 0.68, 0.7, 0.71, 0.72};
    const EarlyStopDecision d = early_stop(h, 4, 10);
    CHECK(d.stop);
    CHECK(d.best_epoch == 10);
    CHECK_FALSE(early_stop(std::span(h).first(9), 4, 10).stop);
  }
  SUBCASE("patience exhausted") {
    const std::vector<double> h{0.7, 0.69, 0.68, 0.67, 0.66};
    const EarlyStopDecision d = early_stop(h, 4, 10);
    CHECK(d.stop);
    CHECK(d.best_epoch == 1);
    CHECK_FALSE(early_stop(std::span(h).first(4), 4, 10).stop);
  }
  SUBCASE("improvement resets patience") {
    const std::vector<double> h{0.6, 0.7, 0.65, 0.66, 0.71};
    const EarlyStopDecision d = early_stop(h, 4, 10);
    CHECK_FALSE(d.stop);
    CHECK(d.best_epoch == 5);
  }
  SUBCASE("ties do not count as improvement") {
    const std::vector<double> h{0.7, 0.7, 0.7, 0.7, 0.7};
    const EarlyStopDecision d = early_stop(h, 4, 10);
    CHECK(d.stop);
    CHECK(d.best_epoch == 1);
  }
}
