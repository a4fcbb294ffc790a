#include "coinnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "coinnet/error.hpp"

namespace coinnet::train {

namespace {

constexpr std::uint64_t kSplitStream = 0;
constexpr std::uint64_t kEpochStream = 1;

std::vector<model::TensorView> tensors(model::HeadWeights& w) {
  std::vector<model::TensorView> out;
  model::for_each_tensor(w, [&](model::TensorView t) { out.push_back(std::move(t)); });
  return out;
}

std::vector<model::ConstTensorView> tensors(const model::HeadWeights& w) {
  std::vector<model::ConstTensorView> out;
  model::for_each_tensor(w, [&](model::ConstTensorView t) { out.push_back(std::move(t)); });
  return out;
}

void require_same_layout(const std::vector<model::TensorView>& a, const std::vector<model::ConstTensorView>& b) {
  require(a.size() == b.size(), ErrorKind::ShapeMismatch, "gradient has a different tensor count than the weights");
  for (std::size_t i = 0; i < a.size(); ++i) {
    require(a[i].dims == b[i].dims && a[i].values.size() == b[i].values.size(), ErrorKind::ShapeMismatch,
            "gradient tensor " + std::to_string(i) + " does not match the weight shape");
  }
}

void add_scaled(model::HeadWeights& into, const model::HeadWeights& g, double scale) {
  auto dst = tensors(into);
  const auto src = tensors(g);
  require_same_layout(dst, src);
  for (std::size_t i = 0; i < dst.size(); ++i)
    for (std::size_t j = 0; j < dst[i].values.size(); ++j) dst[i].values[j] += scale * src[i].values[j];
}

void scale(model::HeadWeights& w, double factor) {
  for (auto& t : tensors(w))
    for (auto& v : t.values) v *= factor;
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  return order;
}

std::vector<double> flatten(const data::Sample& s) {
  std::vector<double> v(s.alpha.values);
  v.insert(v.end(), s.beta.values.begin(), s.beta.values.end());
  return v;
}

std::string number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  require(train_fraction > 0.0 && train_fraction < 1.0, ErrorKind::InvalidArgument,
          "train fraction must lie in (0, 1), got " + number(train_fraction));
  require(lr0 >= 0.0 && std::isfinite(lr0), ErrorKind::InvalidArgument, "learning rate must be finite and >= 0");
  require(lr_factor > 0.0 && lr_factor <= 1.0, ErrorKind::InvalidArgument, "lr factor must lie in (0, 1]");
  require(weight_decay >= 0.0, ErrorKind::InvalidArgument, "weight decay must be >= 0");
  require(batch_size >= 1, ErrorKind::InvalidArgument, "batch size must be positive");
}

void sgd_step(model::HeadWeights& weights, const model::HeadWeights& grads, double lr, double weight_decay) {
  auto w = tensors(weights);
  const auto g = tensors(grads);
  require_same_layout(w, g);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double decay = w[i].is_bias ? 0.0 : weight_decay;
    for (std::size_t j = 0; j < w[i].values.size(); ++j) {
      double& v = w[i].values[j];
      v -= lr * (g[i].values[j] + decay * v);
    }
  }
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  return epoch < config.lr_drop_epoch ? config.lr0 : config.lr0 * config.lr_factor;
}

Split stratified_split(std::span<const std::size_t> labels, double train_fraction, std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0, ErrorKind::InvalidArgument,
          "train fraction must lie in (0, 1)");
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  Split split;
  for (auto& [label, members] : by_class) {
    require(members.size() >= 2, ErrorKind::InvalidArgument,
            "class " + std::to_string(label) + " has " + std::to_string(members.size()) +
                " sample(s); stratified split needs at least 2");
    Rng rng(derive_seed(derive_seed(seed, kSplitStream), label));
    const auto order = permutation(members.size(), rng);
    // The small epsilon keeps exact products such as 0.3 * 10 from rounding up.
    auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(members.size()) - 1e-9));
    n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
    for (std::size_t i = 0; i < members.size(); ++i)
      (i < n_train ? split.train : split.test).push_back(members[order[i]]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

Split stratified_split(const data::Manifest& manifest, double train_fraction, std::uint64_t seed) {
  std::vector<std::size_t> labels;
  for (const auto& r : manifest.records) labels.push_back(r.label);
  return stratified_split(labels, train_fraction, seed);
}

FeatureMap rotate90(const FeatureMap& map) {
  FeatureMap out(map.width, map.height, map.channels);
  for (std::size_t h = 0; h < out.height; ++h) {
    for (std::size_t w = 0; w < out.width; ++w) {
      const auto src = map.pixel(map.height - 1 - w, h);
      std::copy(src.begin(), src.end(), out.pixel(h, w).begin());
    }
  }
  return out;
}

FeatureMap flip_horizontal(const FeatureMap& map) {
  FeatureMap out(map.height, map.width, map.channels);
  for (std::size_t h = 0; h < map.height; ++h) {
    for (std::size_t w = 0; w < map.width; ++w) {
      const auto src = map.pixel(h, map.width - 1 - w);
      std::copy(src.begin(), src.end(), out.pixel(h, w).begin());
    }
  }
  return out;
}

FeatureMap apply_transform(const FeatureMap& map, const GridTransform& t) {
  FeatureMap out = map;
  for (int i = 0; i < ((t.quarter_turns % 4) + 4) % 4; ++i) out = rotate90(out);
  if (t.flip) out = flip_horizontal(out);
  return out;
}

AugmentResult augment(const FeatureMap& alpha, const FeatureMap& beta, Rng& rng) {
  const auto choice = rng.uniform_index(8);
  AugmentResult r;
  r.applied.quarter_turns = static_cast<int>(choice / 2);
  r.applied.flip = (choice % 2) == 1;
  if (alpha.height != alpha.width && r.applied.quarter_turns != 0) {
    r.applied.quarter_turns = 0;
    r.rotation_skipped = true;
  }
  r.alpha = apply_transform(alpha, r.applied);
  r.beta = apply_transform(beta, r.applied);
  return r;
}

Top1 top1_from_predictions(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                           std::size_t classes) {
  require(predictions.size() == labels.size() && !labels.empty(), ErrorKind::InvalidArgument,
          "top-1 evaluation needs a nonempty sample set with one prediction per sample");
  std::vector<std::size_t> hits(classes, 0), totals(classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < classes, ErrorKind::InvalidArgument, "label out of range in evaluation");
    ++totals[labels[i]];
    if (predictions[i] == labels[i]) {
      ++hits[labels[i]];
      ++correct;
    }
  }
  Top1 r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  r.per_class.resize(classes);
  for (std::size_t k = 0; k < classes; ++k) {
    r.per_class[k] = totals[k] == 0 ? std::numeric_limits<double>::quiet_NaN()
                                    : static_cast<double>(hits[k]) / static_cast<double>(totals[k]);
  }
  r.predictions.assign(predictions.begin(), predictions.end());
  return r;
}

std::vector<std::size_t> predict_all(const model::ModelParams& params, const data::Dataset& samples) {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(model::predict(s.alpha, s.beta, params).label);
  return out;
}

Top1 evaluate_top1(const model::ModelParams& params, const data::Dataset& samples) {
  std::vector<std::size_t> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  return top1_from_predictions(predict_all(params, samples), labels, params.config.classes);
}

GroupAccuracy group_accuracy_from_predictions(std::span<const std::size_t> predictions,
                                              std::span<const std::int64_t> sample_groups,
                                              const std::map<std::size_t, std::int64_t>& class_to_group) {
  require(predictions.size() == sample_groups.size() && !predictions.empty(), ErrorKind::InvalidArgument,
          "group evaluation needs a nonempty sample set with one prediction per sample");
  GroupAccuracy r;
  std::map<std::int64_t, std::size_t> hits;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    require(sample_groups[i] >= 0, ErrorKind::InvalidArgument,
            "sample " + std::to_string(i) + " carries no group label");
    ++r.per_group_count[sample_groups[i]];
    hits.try_emplace(sample_groups[i], 0);
    const auto it = class_to_group.find(predictions[i]);
    if (it == class_to_group.end()) {
      ++r.unmapped_predictions;
      continue;
    }
    if (it->second == sample_groups[i]) {
      ++hits[sample_groups[i]];
      ++correct;
    }
  }
  r.overall = static_cast<double>(correct) / static_cast<double>(predictions.size());
  for (const auto& [g, n] : r.per_group_count) r.per_group[g] = static_cast<double>(hits[g]) / static_cast<double>(n);
  return r;
}

GroupAccuracy evaluate_group(const model::ModelParams& params, const data::Dataset& samples,
                             const std::map<std::size_t, std::int64_t>& class_to_group) {
  std::vector<std::int64_t> groups;
  for (const auto& s : samples) groups.push_back(s.group);
  return group_accuracy_from_predictions(predict_all(params, samples), groups, class_to_group);
}

std::map<std::size_t, std::int64_t> class_groups(const data::Dataset& samples) {
  std::map<std::size_t, std::int64_t> out;
  for (const auto& s : samples) {
    if (s.group < 0) continue;
    const auto [it, inserted] = out.emplace(s.label, s.group);
    require(inserted || it->second == s.group, ErrorKind::Format,
            "class " + std::to_string(s.label) + " appears in groups " + std::to_string(it->second) + " and " +
                std::to_string(s.group));
  }
  return out;
}

double mean_loss(const model::ModelParams& params, const data::Dataset& samples) {
  require(!samples.empty(), ErrorKind::InvalidArgument, "mean loss of an empty sample set");
  double total = 0.0;
  for (const auto& s : samples) {
    const auto r = model::forward(s.alpha, s.beta, params);
    total += layers::softmax_cross_entropy(r.logits, s.label).loss;
  }
  return total / static_cast<double>(samples.size());
}

TrainResult train_loop(const data::Dataset& train, const data::Dataset& test, const model::ModelConfig& model_config,
                       const TrainConfig& config, const EpochCallback& on_epoch) {
  return train_loop(model::init_params(model_config, config.seed), train, test, config, on_epoch);
}

TrainResult train_loop(const model::ModelParams& init, const data::Dataset& train, const data::Dataset& test,
                       const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  TrainResult result{init, {}};
  if (config.epochs == 0) return result;
  require(!train.empty(), ErrorKind::InvalidArgument, "training set is empty");
  model::ModelParams& params = result.params;
  const auto groups = class_groups(train);
  const bool evaluate_groups = !groups.empty() && !test.empty() &&
                               std::all_of(test.begin(), test.end(), [](const data::Sample& s) { return s.group >= 0; });

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(epoch, config);
    const std::uint64_t epoch_seed = derive_seed(derive_seed(config.seed, kEpochStream), epoch);
    Rng shuffle_rng(epoch_seed);
    const auto order = permutation(train.size(), shuffle_rng);

    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      model::HeadWeights batch_grad = model::HeadWeights::zeros(params.config);
      for (std::size_t pos = start; pos < end; ++pos) {
        const data::Sample& s = train[order[pos]];
        model::Gradient g;
        if (config.augment) {
          Rng aug_rng(derive_seed(epoch_seed, 1 + pos));
          const AugmentResult a = augment(s.alpha, s.beta, aug_rng);
          g = model::backward(a.alpha, a.beta, params, s.label);
        } else {
          g = model::backward(s.alpha, s.beta, params, s.label);
        }
        if (!std::isfinite(g.loss)) {
          fail(ErrorKind::Divergence, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                          std::to_string(batch_index) + " (sample '" + s.id + "')");
        }
        epoch_loss += g.loss;
        add_scaled(batch_grad, g.weights, 1.0);
      }
      scale(batch_grad, 1.0 / static_cast<double>(end - start));
      sgd_step(params.weights, batch_grad, lr, config.weight_decay);
    }

    Metrics m;
    m.epoch = epoch;
    m.train_loss = epoch_loss / static_cast<double>(train.size());
    if (!test.empty()) {
      const Top1 t = evaluate_top1(params, test);
      m.top1 = t.accuracy;
      m.per_class = t.per_class;
      if (evaluate_groups) {
        std::vector<std::int64_t> sample_groups;
        for (const auto& s : test) sample_groups.push_back(s.group);
        m.group_accuracy = group_accuracy_from_predictions(t.predictions, sample_groups, groups).overall;
      }
    } else {
      m.top1 = std::numeric_limits<double>::quiet_NaN();
    }
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

double nearest_centroid_accuracy(const data::Dataset& train, const data::Dataset& test, std::size_t classes) {
  require(!train.empty() && !test.empty(), ErrorKind::InvalidArgument, "nearest centroid needs train and test samples");
  const std::size_t dim = flatten(train.front()).size();
  std::vector<std::vector<double>> centroids(classes, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> counts(classes, 0);
  for (const auto& s : train) {
    const auto v = flatten(s);
    for (std::size_t i = 0; i < dim; ++i) centroids[s.label][i] += v[i];
    ++counts[s.label];
  }
  for (std::size_t k = 0; k < classes; ++k)
    if (counts[k] > 0)
      for (auto& c : centroids[k]) c /= static_cast<double>(counts[k]);

  std::size_t correct = 0;
  for (const auto& s : test) {
    const auto v = flatten(s);
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_k = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      if (counts[k] == 0) continue;
      double d = 0.0;
      for (std::size_t i = 0; i < dim; ++i) d += (v[i] - centroids[k][i]) * (v[i] - centroids[k][i]);
      if (d < best) {
        best = d;
        best_k = k;
      }
    }
    if (best_k == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

data::Dataset subset(const data::Dataset& all, std::span<const std::size_t> indices) {
  data::Dataset out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(all.at(i));
  return out;
}

std::string format_metrics_table(std::span<const Metrics> history) {
  std::string out = "epoch\tloss\ttop1\tgroup_acc\n";
  for (const auto& m : history) {
    out += std::to_string(m.epoch) + "\t" + number(m.train_loss) + "\t" + number(m.top1) + "\t" +
           (m.group_accuracy ? number(*m.group_accuracy) : std::string("-")) + "\n";
  }
  return out;
}

std::string format_metrics_json_line(const Metrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["loss"] = m.train_loss;
  j["top1"] = std::isnan(m.top1) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(m.top1);
  j["group_acc"] = m.group_accuracy ? nlohmann::ordered_json(*m.group_accuracy) : nlohmann::ordered_json(nullptr);
  auto per_class = nlohmann::ordered_json::array();
  for (double v : m.per_class) per_class.push_back(std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v));
  j["per_class"] = per_class;
  return j.dump();
}

}  // namespace coinnet::train
