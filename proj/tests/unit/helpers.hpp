#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fedsplit/nn.hpp"
#include "fedsplit/random.hpp"
#include "fedsplit/tensor.hpp"
#include "fedsplit/training.hpp"

namespace testing {

using namespace fedsplit;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Targets in [0, 1] with a mix of hard and soft values.
inline Tensor random_targets(std::size_t rows, Rng& rng) {
  Tensor t({rows, kNumLabels});
  for (auto& v : t.data()) {
    const double u = rng.uniform();
    v = u < 0.4 ? 0.0 : (u < 0.8 ? 1.0 : rng.uniform(0.55, 0.85));
  }
  return t;
}

// Pairwise enumeration: correct pairs plus half the ties, over all pairs.
inline double brute_force_auroc(const std::vector<double>& scores, const std::vector<double>& truths) {
  double correct = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (truths[i] != 1.0) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (truths[j] != 0.0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) {
        correct += 1.0;
      } else if (scores[i] == scores[j]) {
        correct += 0.5;
      }
    }
  }
  return correct / pairs;
}

// |a - f| / max(|a|, |f|, floor)
inline double rel_error(double a, double f, double floor = 1e-8) {
  return std::abs(a - f) / std::max({std::abs(a), std::abs(f), floor});
}

inline double max_rel_error(const Tensor& a, const Tensor& f) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, rel_error(a[i], f[i]));
  return worst;
}

inline double max_rel_error(const GradientSet& a, const GradientSet& f) {
  double worst = max_rel_error(a.input, f.input);
  for (std::size_t p = 0; p < a.params.size(); ++p) worst = std::max(worst, max_rel_error(a.params[p], f.params[p]));
  return worst;
}

inline GradientSet analytic_grad(const SequentialModel& model, const Tensor& x, const Tensor& target) {
  auto [y, cache] = forward(model, x);
  return backward(model, cache, bce_loss(y, target).grad);
}

inline LocalData random_local_data(std::size_t n, std::size_t d, std::size_t client_id, Rng& rng) {
  LocalData data;
  data.client_id = client_id;
  data.name = "client" + std::to_string(client_id);
  data.features = random_tensor({n, d}, rng);
  data.targets = random_targets(n, rng);
  return data;
}

}  // namespace testing
