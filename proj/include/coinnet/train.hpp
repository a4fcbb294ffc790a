#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coinnet/data.hpp"
#include "coinnet/model.hpp"
#include "coinnet/rng.hpp"

namespace coinnet::train {

struct TrainConfig {
  double lr0 = 1e-2;
  std::size_t lr_drop_epoch = 50;
  double lr_factor = 0.1;
  double weight_decay = 1e-4;
  std::size_t epochs = 100;
  std::size_t batch_size = 8;
  double train_fraction = 0.3;
  std::uint64_t seed = 0;
  bool augment = true;

  void validate() const;
};

struct Metrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double top1 = 0.0;
  std::vector<double> per_class;  // NaN for classes absent from the test set
  std::optional<double> group_accuracy;
};

// w <- w - lr * (g + weight_decay * w); biases skip the decay term.
void sgd_step(model::HeadWeights& weights, const model::HeadWeights& grads, double lr, double weight_decay);

// lr0 before lr_drop_epoch, lr0 * lr_factor from it on (0-based epochs).
double lr_at(std::size_t epoch, const TrainConfig& config);

struct Split {
  std::vector<std::size_t> train;  // indices into the input, ascending
  std::vector<std::size_t> test;
};
// Per class: ceil(fraction * n_c) samples train, the rest test.
Split stratified_split(std::span<const std::size_t> labels, double train_fraction, std::uint64_t seed);
Split stratified_split(const data::Manifest& manifest, double train_fraction, std::uint64_t seed);

// Dihedral transform of the grid: rotation by quarter turns then an optional
// horizontal flip. Channels are untouched.
struct GridTransform {
  int quarter_turns = 0;  // applications of rotate90, 0..3
  bool flip = false;
};

FeatureMap rotate90(const FeatureMap& map);  // [[a,b],[c,d]] -> [[c,a],[d,b]]
FeatureMap flip_horizontal(const FeatureMap& map);
FeatureMap apply_transform(const FeatureMap& map, const GridTransform& t);

struct AugmentResult {
  FeatureMap alpha;
  FeatureMap beta;
  GridTransform applied;
  bool rotation_skipped = false;  // non-square grid: rotation replaced by identity
};
// Draws one of the eight transforms uniformly and applies it to both maps.
AugmentResult augment(const FeatureMap& alpha, const FeatureMap& beta, Rng& rng);

// Fraction of samples whose predicted class equals the label, with the
// per-class breakdown.
struct Top1 {
  double accuracy = 0.0;
  std::vector<double> per_class;
  std::vector<std::size_t> predictions;
};
Top1 top1_from_predictions(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                           std::size_t classes);
std::vector<std::size_t> predict_all(const model::ModelParams& params, const data::Dataset& samples);
Top1 evaluate_top1(const model::ModelParams& params, const data::Dataset& samples);

struct GroupAccuracy {
  double overall = 0.0;
  std::map<std::int64_t, double> per_group;
  std::map<std::int64_t, std::size_t> per_group_count;
  std::size_t unmapped_predictions = 0;
};
// A sample is correct iff the group of its predicted class equals its group
// label. Predicted classes missing from class_to_group count as incorrect.
GroupAccuracy group_accuracy_from_predictions(std::span<const std::size_t> predictions,
                                              std::span<const std::int64_t> sample_groups,
                                              const std::map<std::size_t, std::int64_t>& class_to_group);
GroupAccuracy evaluate_group(const model::ModelParams& params, const data::Dataset& samples,
                             const std::map<std::size_t, std::int64_t>& class_to_group);

// class -> group as observed in a grouped dataset; conflicting rows are rejected.
std::map<std::size_t, std::int64_t> class_groups(const data::Dataset& samples);

// Mean over samples of the cross-entropy loss, accumulated in sample order.
double mean_loss(const model::ModelParams& params, const data::Dataset& samples);

struct TrainResult {
  model::ModelParams params;
  std::vector<Metrics> history;
};

using EpochCallback = std::function<void(const Metrics&)>;

// SGD over `train` with per-epoch evaluation on `test`.
TrainResult train_loop(const data::Dataset& train, const data::Dataset& test, const model::ModelConfig& model_config,
                       const TrainConfig& config, const EpochCallback& on_epoch = {});
TrainResult train_loop(const model::ModelParams& init, const data::Dataset& train, const data::Dataset& test,
                       const TrainConfig& config, const EpochCallback& on_epoch = {});

// Nearest-centroid classifier on the flattened (alpha, beta) maps; the
// reference floor for synthetic runs.
double nearest_centroid_accuracy(const data::Dataset& train, const data::Dataset& test, std::size_t classes);

data::Dataset subset(const data::Dataset& all, std::span<const std::size_t> indices);

// Plain-text metrics table: header line then one row per epoch,
// "epoch\tloss\ttop1\tgroup_acc" with group_acc "-" when absent.
std::string format_metrics_table(std::span<const Metrics> history);
std::string format_metrics_json_line(const Metrics& m);

}  // namespace coinnet::train
