#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fedsplit/dataio.hpp"
#include "fedsplit/error.hpp"
#include "fedsplit/metrics.hpp"
#include "helpers.hpp"

using namespace fedsplit;
using namespace testing;

namespace {

const Dataset& default_train() {
  static const Dataset train = [] {
    const Dataset full = gen_synthetic(GenerationParams{});
    return split_train_val(full, 0.8, 1).first;
  }();
  return train;
}

std::set<std::int64_t> ids(const Dataset& ds) {
  std::set<std::int64_t> out;
  for (const auto& s : ds.samples) out.insert(s.id);
  return out;
}

void check_exact_partition(const PartitionPlan& plan, const Dataset& train) {
  std::multiset<std::int64_t> assigned;
  for (const auto& a : plan.assignments) assigned.insert(a.begin(), a.end());
  const auto all = ids(train);
  CHECK(assigned.size() == all.size());
  CHECK(std::set<std::int64_t>(assigned.begin(), assigned.end()) == all);
  CHECK(plan.total_samples() == train.size());
  for (const auto& row : plan.achieved_prevalence) {
    for (double p : row) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
    }
  }
}

}  // namespace

TEST_CASE("generator parameters are validated") {
  CHECK_THROWS_AS(gen_synthetic(GenerationParams{99, 32, 1}), ConfigError);
  CHECK_THROWS_AS(gen_synthetic(GenerationParams{100, 7, 1}), ConfigError);
  GenerationParams bad;
  bad.noise_scale = -1.0;
  CHECK_THROWS_AS(gen_synthetic(bad), ConfigError);
}

TEST_CASE("generator is deterministic and schema-complete") {
  const GenerationParams params{500, 16, 4};
  const Dataset a = gen_synthetic(params);
  const Dataset b = gen_synthetic(params);
  std::ostringstream sa, sb;
  write_dataset(sa, a);
  write_dataset(sb, b);
  CHECK(sa.str() == sb.str());
  CHECK(a.size() == 500);
  CHECK(a.dim == 16);
  CHECK(a.label_names == default_label_names());
  CHECK(a.target_labels == default_target_labels());
  CHECK(a.label_names.size() == kNumLabels);
  CHECK(a.target_labels.size() == 5);
  CHECK(ids(a).size() == a.size());
  CHECK_NOTHROW(a.validate());

  GenerationParams other = params;
  other.seed = 5;
  std::ostringstream sc;
  write_dataset(sc, gen_synthetic(other));
  CHECK(sc.str() != sa.str());
}

TEST_CASE("target prevalence is enforced for several seeds") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset ds = gen_synthetic(GenerationParams{2000, 32, seed});
    const auto prev = ds.prevalence();
    for (auto t : ds.target_indices()) {
      CHECK(prev[t] >= 0.1);
      CHECK(prev[t] <= 0.5);
    }
  }
}

TEST_CASE("ten percent of positive labels become uncertain") {
  const Dataset ds = gen_synthetic(GenerationParams{2000, 32, 1});
  std::size_t uncertain = 0, positive = 0;
  for (const auto& s : ds.samples) {
    for (auto v : s.labels) {
      uncertain += v == LabelValue::Uncertain;
      positive += v != LabelValue::Negative;
    }
  }
  CHECK(static_cast<double>(uncertain) == std::round(0.1 * static_cast<double>(positive)));
}

TEST_CASE("hierarchy: children are more likely given their parent") {
  const Dataset ds = gen_synthetic(GenerationParams{6250, 32, 1});
  const auto index = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(ds.label_names.begin(), ds.label_names.end(), name) -
                                    ds.label_names.begin());
  };
  for (auto [parent, child] : {std::pair{"Enlarged_Cardiomediastinum", "Cardiomegaly"},
                               std::pair{"Lung_Opacity", "Consolidation"}}) {
    const std::size_t p = index(parent), c = index(child);
    double with = 0, with_n = 0, without = 0, without_n = 0;
    for (const auto& s : ds.samples) {
      if (is_positive(s.labels[p])) {
        with_n += 1;
        with += is_positive(s.labels[c]);
      } else {
        without_n += 1;
        without += is_positive(s.labels[c]);
      }
    }
    CHECK(with / with_n > without / without_n + 0.1);
  }
  // No_Finding is positive exactly when no other finding is.
  for (const auto& s : ds.samples) {
    bool any = false;
    for (std::size_t l = 1; l + 1 < kNumLabels; ++l) any = any || is_positive(s.labels[l]);
    CHECK(is_positive(s.labels[0]) == !any);
  }
}

TEST_CASE("noise-free features are a deterministic function of labels") {
  GenerationParams params{600, 16, 2};
  params.noise_scale = 0.0;
  const Dataset ds = gen_synthetic(params);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = i + 1; j < std::min<std::size_t>(ds.size(), i + 40); ++j) {
      bool same = true;
      for (std::size_t l = 0; l < kNumLabels; ++l) {
        same = same && is_positive(ds.samples[i].labels[l]) == is_positive(ds.samples[j].labels[l]);
      }
      if (same) CHECK(ds.samples[i].features == ds.samples[j].features);
    }
  }
}

TEST_CASE("label policy maps values and respects bounds") {
  Rng rng(1);
  LabelVector neg{};
  neg.fill(LabelValue::Negative);
  const Tensor zeros = apply_label_policy(neg, LabelPolicy{}, rng);
  for (double v : zeros.data()) CHECK(v == 0.0);
  LabelVector pos{};
  pos.fill(LabelValue::Positive);
  const Tensor ones = apply_label_policy(pos, LabelPolicy{}, rng);
  for (double v : ones.data()) CHECK(v == 1.0);

  LabelVector unc{};
  unc.fill(LabelValue::Uncertain);
  double sum = 0.0;
  std::size_t count = 0;
  while (count < 10000) {
    const Tensor smoothed = apply_label_policy(unc, LabelPolicy{}, rng);
    for (double v : smoothed.data()) {
      CHECK(v >= 0.55);
      CHECK(v <= 0.85);
      sum += v;
      ++count;
    }
  }
  CHECK(sum / static_cast<double>(count) >= 0.69);
  CHECK(sum / static_cast<double>(count) <= 0.71);

  CHECK_THROWS_AS(LabelPolicy({0.9, 0.5}).validate(), ConfigError);
  CHECK_THROWS_AS(LabelPolicy({-0.1, 0.5}).validate(), ConfigError);
}

TEST_CASE("train/validation split") {
  const Dataset ds = gen_synthetic(GenerationParams{1000, 16, 3});
  auto [train, val] = split_train_val(ds, 0.8, 9);
  CHECK(train.size() == 800);
  CHECK(val.size() == 200);
  std::set<std::int64_t> joined = ids(train);
  for (auto id : ids(val)) CHECK(joined.insert(id).second);
  CHECK(joined == ids(ds));
  for (const auto& s : val.samples) {
    for (auto v : s.labels) CHECK(v != LabelValue::Uncertain);
  }
  auto [train2, val2] = split_train_val(ds, 0.8, 9);
  std::ostringstream a, b;
  write_dataset(a, train);
  write_dataset(b, train2);
  CHECK(a.str() == b.str());
  CHECK_THROWS_AS(split_train_val(ds, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split_train_val(ds, 1.0, 1), ConfigError);
}

TEST_CASE("uniform partition") {
  const Dataset& train = default_train();
  SUBCASE("k = 1 is the whole set") {
    const PartitionPlan plan = partition_uniform(train, 1, 1);
    REQUIRE(plan.num_clients() == 1);
    check_exact_partition(plan, train);
  }
  SUBCASE("k = 5 on 5000 samples") {
    REQUIRE(train.size() == 5000);
    const PartitionPlan plan = partition_uniform(train, 5, 1);
    check_exact_partition(plan, train);
    const auto global = train.prevalence();
    const auto targets = train.target_indices();
    for (std::size_t c = 0; c < 5; ++c) {
      CHECK(plan.assignments[c].size() == 1000);
      for (std::size_t t = 0; t < targets.size(); ++t) {
        CHECK(std::abs(plan.achieved_prevalence[c][t] - global[targets[t]]) <= 0.02);
      }
    }
    const PartitionPlan again = partition_uniform(train, 5, 1);
    CHECK(again.assignments == plan.assignments);
  }
  SUBCASE("too few samples") {
    CHECK_THROWS_AS(partition_uniform(train, 501, 1), ConfigError);
    CHECK_THROWS_AS(partition_uniform(train, 0, 1), ConfigError);
  }
}

TEST_CASE("uniform partition holds prevalence across seeds") {
  for (std::uint64_t seed = 2; seed <= 4; ++seed) {
    const Dataset full = gen_synthetic(GenerationParams{3000, 16, seed});
    const Dataset train = split_train_val(full, 0.8, seed).first;
    const PartitionPlan plan = partition_uniform(train, 5, seed);
    check_exact_partition(plan, train);
    const auto global = train.prevalence();
    const auto targets = train.target_indices();
    for (std::size_t c = 0; c < 5; ++c) {
      for (std::size_t t = 0; t < targets.size(); ++t) {
        CHECK(std::abs(plan.achieved_prevalence[c][t] - global[targets[t]]) <= 0.02);
      }
    }
  }
}

TEST_CASE("skewed partition") {
  const Dataset& train = default_train();
  const PartitionPlan plan = partition_skewed(train, 5, 0.45, 1);
  check_exact_partition(plan, train);
  CHECK(plan.client_names == default_target_labels());
  const double mean_size = static_cast<double>(train.size()) / 5.0;
  for (std::size_t c = 0; c < 5; ++c) {
    const double size = static_cast<double>(plan.assignments[c].size());
    CHECK(std::abs(size - mean_size) <= 0.1 * mean_size);
    REQUIRE(plan.majority_label[c].has_value());
    const std::size_t own = *plan.majority_label[c];
    CHECK(own == c);
    for (std::size_t other = 0; other < 5; ++other) {
      CHECK(plan.achieved_prevalence[c][own] >= plan.achieved_prevalence[other][own]);
    }
    // Feasible whenever the label has enough positives for one client.
    const double positives = train.prevalence()[train.target_indices()[own]] * static_cast<double>(train.size());
    if (positives >= 0.45 * size) CHECK(plan.achieved_prevalence[c][own] >= 0.45);
  }
  CHECK(partition_skewed(train, 5, 0.45, 1).assignments == plan.assignments);
  CHECK_THROWS_AS(partition_skewed(train, 4, 0.45, 1), ConfigError);
}

TEST_CASE("skewed partition reports an infeasible threshold") {
  const Dataset& train = default_train();
  const PartitionPlan plan = partition_skewed(train, 5, 0.95, 1);
  check_exact_partition(plan, train);
  bool shortfall = false;
  for (std::size_t c = 0; c < 5; ++c) shortfall = shortfall || plan.achieved_prevalence[c][c] < 0.95;
  CHECK(shortfall);
  CHECK(plan.majority_target == 0.95);
}

TEST_CASE("resolve_partition yields client datasets in plan order") {
  const Dataset& train = default_train();
  const PartitionPlan plan = partition_uniform(train, 5, 3);
  const auto clients = resolve_partition(plan, train);
  REQUIRE(clients.size() == 5);
  for (std::size_t c = 0; c < 5; ++c) {
    CHECK(clients[c].client_id == c);
    CHECK(clients[c].size() == plan.assignments[c].size());
    for (std::size_t i = 0; i < clients[c].size(); ++i) CHECK(clients[c].samples[i].id == plan.assignments[c][i]);
  }
}

TEST_CASE("text format round-trips bit-exactly") {
  GenerationParams params{300, 8, 6};
  const Dataset ds = gen_synthetic(params);
  std::stringstream buffer;
  write_dataset(buffer, ds);
  const Dataset back = read_dataset(buffer);
  REQUIRE(back.size() == ds.size());
  CHECK(back.dim == ds.dim);
  CHECK(back.label_names == ds.label_names);
  CHECK(back.target_labels == ds.target_labels);
  CHECK(back.generation_seed == ds.generation_seed);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.samples[i].id == ds.samples[i].id);
    CHECK(back.samples[i].labels == ds.samples[i].labels);
    CHECK(bitwise_equal(Tensor({ds.dim}, back.samples[i].features), Tensor({ds.dim}, ds.samples[i].features)));
  }
  for (double v : {0.1, -0.0, 1e-300, 5e-324, 1.7976931348623157e308, 3.0000000000000004}) {
    const double r = parse_double(format_double(v));
    CHECK(std::memcmp(&r, &v, sizeof v) == 0);
  }
}

TEST_CASE("malformed dataset text is rejected") {
  std::istringstream no_header("");
  CHECK_THROWS_AS(read_dataset(no_header), IoError);
  std::istringstream bad_row(
      "d=2 labels=No_Finding,Enlarged_Cardiomediastinum,Cardiomegaly,Lung_Opacity,Lung_Lesion,Edema,Consolidation,"
      "Pneumonia,Atelectasis,Pneumothorax,Pleural_Effusion,Pleural_Other,Fracture,Support_Devices "
      "targets=Atelectasis,Cardiomegaly,Consolidation,Edema,Pleural_Effusion seed=1\n"
      "0;1.0;NNNNNNNNNNNNNN\n");
  CHECK_THROWS_AS(read_dataset(bad_row), IoError);
  CHECK_THROWS_AS(load_dataset("/nonexistent/dir/train.txt"), IoError);
}

TEST_CASE("noise-free data is learnable to high train AUC") {
  GenerationParams params{800, 32, 1};
  params.noise_scale = 0.0;
  const Dataset ds = gen_synthetic(params);
  Dataset binarized = ds;
  for (auto& s : binarized.samples) {
    for (auto& v : s.labels) v = is_positive(v) ? LabelValue::Positive : LabelValue::Negative;
  }
  const LocalData data = materialize(binarized.samples, 0, "all", LabelPolicy{}, 1);
  SequentialModel model = init_model(std::vector<std::size_t>{32, 128, 14}, 1);
  // Standardize so a larger step is stable; the oracle is about separability.
  LocalData scaled = data;
  for (std::size_t j = 0; j < scaled.features.cols(); ++j) {
    double mean = 0, sq = 0;
    for (std::size_t i = 0; i < scaled.size(); ++i) mean += scaled.features.at(i, j);
    mean /= static_cast<double>(scaled.size());
    for (std::size_t i = 0; i < scaled.size(); ++i) sq += std::pow(scaled.features.at(i, j) - mean, 2);
    const double sd = std::sqrt(sq / static_cast<double>(scaled.size()));
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled.features.at(i, j) = (scaled.features.at(i, j) - mean) / sd;
  }
  for (std::size_t epoch = 0; epoch < 200; ++epoch) {
    for (const auto& batch : epoch_batch_data(scaled, 32, 1, epoch)) sgd_train_step(model, batch, 0.5);
  }
  const Tensor pred = predict(model, scaled.features);
  for (auto t : ds.target_indices()) {
    std::vector<double> scores, truths;
    for (std::size_t i = 0; i < scaled.size(); ++i) {
      scores.push_back(pred.at(i, t));
      truths.push_back(scaled.targets.at(i, t));
    }
    CHECK(auroc(scores, truths) > 0.95);
  }
}
