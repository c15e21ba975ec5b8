#include "fedsplit/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "fedsplit/error.hpp"

namespace fedsplit {

namespace {

// Indices into default_label_names().
constexpr std::size_t kNoFinding = 0;
constexpr std::size_t kEnlargedCardiomediastinum = 1;
constexpr std::size_t kCardiomegaly = 2;
constexpr std::size_t kLungOpacity = 3;
constexpr std::size_t kConsolidation = 6;
constexpr std::size_t kSupportDevices = 13;

constexpr int kMaxGenerationAttempts = 64;

struct LabelModel {
  std::array<double, kNumLabels> base_rate{};
  double child_given_parent = 0.0;  // elevated rate for both hierarchy children
  double child_without_parent = 0.0;
};

LabelModel draw_label_model(Rng& rng, const std::vector<std::size_t>& targets) {
  LabelModel m;
  for (std::size_t l = 0; l < kNumLabels; ++l) {
    const bool is_target = std::find(targets.begin(), targets.end(), l) != targets.end();
    m.base_rate[l] = is_target ? rng.uniform(0.12, 0.32) : rng.uniform(0.04, 0.30);
  }
  m.child_given_parent = rng.uniform(0.55, 0.80);
  m.child_without_parent = rng.uniform(0.05, 0.15);
  return m;
}

LabelVector draw_latent(const LabelModel& m, Rng& rng) {
  LabelVector labels;
  labels.fill(LabelValue::Negative);
  auto set = [&](std::size_t l, bool on) { labels[l] = on ? LabelValue::Positive : LabelValue::Negative; };
  for (std::size_t l = 1; l < kNumLabels; ++l) set(l, rng.bernoulli(m.base_rate[l]));
  // Hierarchy: each child is far more likely when its parent is present.
  for (auto [parent, child] : {std::pair{kEnlargedCardiomediastinum, kCardiomegaly},
                               std::pair{kLungOpacity, kConsolidation}}) {
    const bool parent_on = is_positive(labels[parent]);
    set(child, rng.bernoulli(parent_on ? m.child_given_parent : m.child_without_parent));
  }
  bool any_finding = false;
  for (std::size_t l = 1; l < kSupportDevices; ++l) any_finding = any_finding || is_positive(labels[l]);
  set(kNoFinding, !any_finding);
  return labels;
}

std::uint16_t signature(const LabelVector& labels, std::span<const std::size_t> high_bits) {
  // Target labels occupy the high-order bits so that every target-label
  // stratum forms a contiguous run once samples are sorted by signature.
  std::uint16_t sig = 0;
  for (std::size_t t : high_bits) sig = static_cast<std::uint16_t>((sig << 1) | (is_positive(labels[t]) ? 1 : 0));
  for (std::size_t l = 0; l < kNumLabels; ++l) {
    if (std::find(high_bits.begin(), high_bits.end(), l) != high_bits.end()) continue;
    sig = static_cast<std::uint16_t>((sig << 1) | (is_positive(labels[l]) ? 1 : 0));
  }
  return sig;
}

void fill_prevalence(PartitionPlan& plan, const Dataset& train) {
  std::map<std::int64_t, const Sample*> by_id;
  for (const auto& s : train.samples) by_id[s.id] = &s;
  const auto targets = train.target_indices();
  plan.achieved_prevalence.assign(plan.num_clients(), std::vector<double>(targets.size(), 0.0));
  for (std::size_t c = 0; c < plan.num_clients(); ++c) {
    const auto& ids = plan.assignments[c];
    if (ids.empty()) continue;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      std::size_t positives = 0;
      for (auto id : ids) positives += is_positive(by_id.at(id)->labels[targets[t]]) ? 1 : 0;
      plan.achieved_prevalence[c][t] = static_cast<double>(positives) / static_cast<double>(ids.size());
    }
  }
}

char label_code(LabelValue v) {
  switch (v) {
    case LabelValue::Positive:
      return 'P';
    case LabelValue::Negative:
      return 'N';
    case LabelValue::Uncertain:
      return 'U';
  }
  return '?';
}

LabelValue parse_label_code(std::string_view code) {
  if (code == "P") return LabelValue::Positive;
  if (code == "N") return LabelValue::Negative;
  if (code == "U") return LabelValue::Uncertain;
  throw IoError("bad label code '" + std::string(code) + "'");
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::string join(const std::vector<std::string>& items, char sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

template <typename Int>
Int parse_int(std::string_view text) {
  Int value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw IoError("cannot parse integer '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace

const std::vector<std::string>& default_label_names() {
  static const std::vector<std::string> names{
      "No_Finding", "Enlarged_Cardiomediastinum", "Cardiomegaly", "Lung_Opacity", "Lung_Lesion",
      "Edema",      "Consolidation",              "Pneumonia",    "Atelectasis",  "Pneumothorax",
      "Pleural_Effusion", "Pleural_Other",      "Fracture",     "Support_Devices"};
  return names;
}

const std::vector<std::string>& default_target_labels() {
  static const std::vector<std::string> targets{"Atelectasis", "Cardiomegaly", "Consolidation", "Edema",
                                                "Pleural_Effusion"};
  return targets;
}

std::vector<std::size_t> Dataset::target_indices() const {
  std::vector<std::size_t> indices;
  for (const auto& t : target_labels) {
    const auto it = std::find(label_names.begin(), label_names.end(), t);
    if (it == label_names.end()) throw ConfigError("target label '" + t + "' is not a dataset label");
    indices.push_back(static_cast<std::size_t>(it - label_names.begin()));
  }
  return indices;
}

std::vector<double> Dataset::prevalence() const {
  std::vector<double> prev(kNumLabels, 0.0);
  if (samples.empty()) return prev;
  for (const auto& s : samples) {
    for (std::size_t l = 0; l < kNumLabels; ++l) prev[l] += is_positive(s.labels[l]) ? 1.0 : 0.0;
  }
  for (auto& p : prev) p /= static_cast<double>(samples.size());
  return prev;
}

void Dataset::validate() const {
  if (label_names.size() != kNumLabels) throw ConfigError("datasets carry exactly 14 labels");
  if (target_labels.size() != 5) throw ConfigError("datasets designate exactly 5 target labels");
  (void)target_indices();
  std::set<std::int64_t> ids;
  for (const auto& s : samples) {
    if (s.features.size() != dim) throw DimensionError("sample " + std::to_string(s.id) + " has wrong feature count");
    if (!ids.insert(s.id).second) throw ConfigError("duplicate sample id " + std::to_string(s.id));
  }
}

void LabelPolicy::validate() const {
  if (!(0.0 <= smoothing_low && smoothing_low < smoothing_high && smoothing_high <= 1.0)) {
    throw ConfigError("label smoothing bounds must satisfy 0 <= low < high <= 1");
  }
}

Dataset gen_synthetic(const GenerationParams& params) {
  if (params.n_samples < 100) throw ConfigError("gen_synthetic needs at least 100 samples");
  if (params.dim < 8) throw ConfigError("gen_synthetic needs at least 8 feature dimensions");
  if (!(params.noise_scale >= 0.0)) throw ConfigError("noise_scale must be non-negative");
  if (!(params.signal_scale > 0.0)) throw ConfigError("signal_scale must be positive");

  Dataset ds;
  ds.dim = params.dim;
  ds.label_names = default_label_names();
  ds.target_labels = default_target_labels();
  ds.generation_seed = params.seed;
  const auto targets = ds.target_indices();

  Rng rng(params.seed);
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxGenerationAttempts) {
      throw ConfigError("could not draw label rates with every target prevalence in [0.1, 0.5]");
    }
    const LabelModel model = draw_label_model(rng, targets);
    ds.samples.clear();
    ds.samples.reserve(params.n_samples);
    for (std::size_t i = 0; i < params.n_samples; ++i) {
      ds.samples.push_back(Sample{static_cast<std::int64_t>(i), {}, draw_latent(model, rng)});
    }
    const auto prev = ds.prevalence();
    const bool ok = std::all_of(targets.begin(), targets.end(), [&](std::size_t t) {
      return prev[t] >= 0.1 && prev[t] <= 0.5;
    });
    if (ok) break;
  }

  // Features: a seeded linear mix of the latent labels plus Gaussian noise.
  Tensor mixing({params.dim, kNumLabels});
  for (auto& v : mixing.data()) v = params.signal_scale * rng.normal();
  for (auto& s : ds.samples) {
    s.features.assign(params.dim, 0.0);
    for (std::size_t j = 0; j < params.dim; ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < kNumLabels; ++l) acc += is_positive(s.labels[l]) ? mixing.at(j, l) : 0.0;
      s.features[j] = acc;
    }
    if (params.noise_scale > 0.0) {
      for (auto& f : s.features) f += params.noise_scale * rng.normal();
    }
  }

  // A fixed fraction of positive labels becomes Uncertain.
  std::vector<std::pair<std::size_t, std::size_t>> positives;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    for (std::size_t l = 0; l < kNumLabels; ++l) {
      if (ds.samples[i].labels[l] == LabelValue::Positive) positives.emplace_back(i, l);
    }
  }
  rng.shuffle(std::span(positives));
  const auto n_flip = static_cast<std::size_t>(std::llround(kUncertainFraction * static_cast<double>(positives.size())));
  for (std::size_t f = 0; f < n_flip; ++f) {
    ds.samples[positives[f].first].labels[positives[f].second] = LabelValue::Uncertain;
  }
  return ds;
}

Tensor apply_label_policy(std::span<const LabelValue> labels, const LabelPolicy& policy, Rng& rng) {
  policy.validate();
  Tensor out({labels.size()});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    switch (labels[i]) {
      case LabelValue::Positive:
        out[i] = 1.0;
        break;
      case LabelValue::Negative:
        out[i] = 0.0;
        break;
      case LabelValue::Uncertain:
        out[i] = rng.uniform(policy.smoothing_low, policy.smoothing_high);
        break;
    }
  }
  return out;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ds.size())));
  if (n_train == 0 || n_train >= ds.size()) throw ConfigError("train/validation split leaves an empty side");

  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span(order));

  Dataset train = ds;
  Dataset val = ds;
  train.samples.clear();
  val.samples.clear();
  for (std::size_t i = 0; i < order.size(); ++i) {
    Sample s = ds.samples[order[i]];
    if (i < n_train) {
      train.samples.push_back(std::move(s));
    } else {
      for (auto& l : s.labels) {
        if (l == LabelValue::Uncertain) l = LabelValue::Positive;
      }
      val.samples.push_back(std::move(s));
    }
  }
  return {std::move(train), std::move(val)};
}

std::size_t PartitionPlan::total_samples() const {
  std::size_t n = 0;
  for (const auto& a : assignments) n += a.size();
  return n;
}

PartitionPlan partition_uniform(const Dataset& train, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ConfigError("partition needs at least one client");
  if (k > 1 && train.size() < 10 * k) {
    throw ConfigError("uniform partition needs at least 10 samples per client");
  }
  const auto targets = train.target_indices();

  // Group by full label signature (targets in the high bits), shuffle inside
  // each group, then deal the concatenation round-robin.
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span(order));
  std::vector<std::uint16_t> sigs(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) sigs[i] = signature(train.samples[i].labels, targets);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sigs[a] < sigs[b]; });

  PartitionPlan plan;
  plan.scheme = PartitionScheme::Uniform;
  plan.assignments.resize(k);
  for (std::size_t i = 0; i < order.size(); ++i) plan.assignments[i % k].push_back(train.samples[order[i]].id);
  for (std::size_t c = 0; c < k; ++c) plan.client_names.push_back("client" + std::to_string(c));
  plan.majority_label.assign(k, std::nullopt);
  fill_prevalence(plan, train);
  return plan;
}

PartitionPlan partition_skewed(const Dataset& train, std::size_t k, double majority_target, std::uint64_t seed) {
  const auto targets = train.target_indices();
  if (k != targets.size()) {
    throw ConfigError("skewed partition needs one client per target label (" + std::to_string(targets.size()) +
                      "), got " + std::to_string(k));
  }
  if (!(majority_target > 0.0 && majority_target <= 1.0)) throw ConfigError("majority_target must lie in (0, 1]");
  const std::size_t n = train.size();
  if (n < 10 * k) throw ConfigError("skewed partition needs at least 10 samples per client");

  std::vector<std::size_t> planned_size(k, n / k);
  for (std::size_t c = 0; c < n % k; ++c) ++planned_size[c];

  std::vector<std::size_t> positive_count(k, 0);
  for (const auto& s : train.samples) {
    for (std::size_t t = 0; t < k; ++t) positive_count[t] += is_positive(s.labels[targets[t]]) ? 1 : 0;
  }
  std::vector<std::size_t> label_order(k);
  std::iota(label_order.begin(), label_order.end(), std::size_t{0});
  std::stable_sort(label_order.begin(), label_order.end(),
                   [&](std::size_t a, std::size_t b) { return positive_count[a] < positive_count[b]; });

  Rng rng(seed);
  std::vector<std::size_t> shuffled(n);
  std::iota(shuffled.begin(), shuffled.end(), std::size_t{0});
  rng.shuffle(std::span(shuffled));

  constexpr std::size_t kUnassigned = static_cast<std::size_t>(-1);
  std::vector<std::size_t> owner(n, kUnassigned);
  std::vector<std::size_t> size(k, 0);
  std::vector<bool> processed(k, false);
  auto positive = [&](std::size_t i, std::size_t t) { return is_positive(train.samples[i].labels[targets[t]]); };

  // Rarest label first; prefer candidates that are not needed by labels still
  // waiting their turn.
  for (std::size_t t : label_order) {
    const auto needed = static_cast<std::size_t>(std::ceil(majority_target * static_cast<double>(planned_size[t])));
    std::vector<std::size_t> candidates;
    for (std::size_t i : shuffled) {
      if (owner[i] == kUnassigned && positive(i, t)) candidates.push_back(i);
    }
    auto pending_overlap = [&](std::size_t i) {
      std::size_t count = 0;
      for (std::size_t u = 0; u < k; ++u) count += (!processed[u] && u != t && positive(i, u)) ? 1 : 0;
      return count;
    };
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) { return pending_overlap(a) < pending_overlap(b); });
    for (std::size_t i : candidates) {
      if (size[t] >= needed) break;
      owner[i] = t;
      ++size[t];
    }
    processed[t] = true;
  }

  // Fill up to the planned sizes. A sample positive for some client's
  // majority label goes to that client while it has room; anything else goes
  // to the client with the most room left.
  for (std::size_t i : shuffled) {
    if (owner[i] != kUnassigned) continue;
    std::size_t dest = kUnassigned;
    for (std::size_t t : label_order) {
      if (positive(i, t) && size[t] < planned_size[t]) {
        dest = t;
        break;
      }
    }
    if (dest == kUnassigned) {
      std::size_t best_room = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const std::size_t room = planned_size[c] - size[c];
        if (room > best_room) {
          best_room = room;
          dest = c;
        }
      }
    }
    owner[i] = dest;
    ++size[dest];
  }

  PartitionPlan plan;
  plan.scheme = PartitionScheme::Skewed;
  plan.majority_target = majority_target;
  plan.assignments.resize(k);
  for (std::size_t i = 0; i < n; ++i) plan.assignments[owner[i]].push_back(train.samples[i].id);
  for (std::size_t c = 0; c < k; ++c) {
    plan.client_names.push_back(train.target_labels[c]);
    plan.majority_label.emplace_back(c);
  }
  fill_prevalence(plan, train);
  return plan;
}

std::vector<ClientDataset> resolve_partition(const PartitionPlan& plan, const Dataset& train) {
  std::map<std::int64_t, const Sample*> by_id;
  for (const auto& s : train.samples) by_id[s.id] = &s;
  std::vector<ClientDataset> clients;
  for (std::size_t c = 0; c < plan.num_clients(); ++c) {
    ClientDataset client{c, plan.client_names.at(c), {}};
    client.samples.reserve(plan.assignments[c].size());
    for (auto id : plan.assignments[c]) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) throw ConfigError("partition references unknown sample id " + std::to_string(id));
      client.samples.push_back(*it->second);
    }
    clients.push_back(std::move(client));
  }
  return clients;
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw IoError("cannot format double");
  return std::string(buf, ptr);
}

double parse_double(std::string_view text) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw IoError("cannot parse number '" + std::string(text) + "'");
  }
  return value;
}

void write_dataset(std::ostream& out, const Dataset& ds) {
  out << "d=" << ds.dim << " labels=" << join(ds.label_names, ',') << " targets=" << join(ds.target_labels, ',')
      << " seed=" << ds.generation_seed << '\n';
  for (const auto& s : ds.samples) {
    out << s.id << ';';
    for (std::size_t j = 0; j < s.features.size(); ++j) {
      if (j) out << ',';
      out << format_double(s.features[j]);
    }
    out << ';';
    for (std::size_t l = 0; l < s.labels.size(); ++l) {
      if (l) out << ',';
      out << label_code(s.labels[l]);
    }
    out << '\n';
  }
}

Dataset read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("dataset file is empty");
  Dataset ds;
  std::set<std::string> seen;
  for (auto field : split(line, ' ')) {
    const auto eq = field.find('=');
    if (eq == std::string_view::npos) throw IoError("malformed header field '" + std::string(field) + "'");
    const auto key = field.substr(0, eq);
    const auto value = field.substr(eq + 1);
    seen.insert(std::string(key));
    if (key == "d") {
      ds.dim = parse_int<std::size_t>(value);
    } else if (key == "labels") {
      for (auto name : split(value, ',')) ds.label_names.emplace_back(name);
    } else if (key == "targets") {
      for (auto name : split(value, ',')) ds.target_labels.emplace_back(name);
    } else if (key == "seed") {
      ds.generation_seed = parse_int<std::uint64_t>(value);
    } else {
      throw IoError("unknown header field '" + std::string(key) + "'");
    }
  }
  for (const char* key : {"d", "labels", "targets", "seed"}) {
    if (!seen.count(key)) throw IoError(std::string("dataset header lacks '") + key + "'");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto parts = split(line, ';');
    if (parts.size() != 3) throw IoError("line " + std::to_string(line_no) + ": expected id;features;labels");
    Sample s;
    s.id = parse_int<std::int64_t>(parts[0]);
    for (auto f : split(parts[1], ',')) s.features.push_back(parse_double(f));
    const auto codes = split(parts[2], ',');
    if (codes.size() != kNumLabels) throw IoError("line " + std::to_string(line_no) + ": expected 14 labels");
    for (std::size_t l = 0; l < kNumLabels; ++l) s.labels[l] = parse_label_code(codes[l]);
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_dataset(out, ds);
  if (!out) throw IoError("failed writing '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return read_dataset(in);
}

}  // namespace fedsplit
