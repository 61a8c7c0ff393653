#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "asfp/dataset.hpp"
#include "asfp/model.hpp"
#include "asfp/prune.hpp"
#include "asfp/random.hpp"

namespace asfp {

struct DatasetSpec {
  enum class Kind { cifar10, synthetic };
  Kind kind = Kind::synthetic;
  std::string path;  // cifar10 batch directory
  int classes = 10;  // synthetic parameters
  int n_per_class = 200;
  int image_size = 16;
  std::uint32_t seed = 1;
};

struct InitSpec {
  enum class Kind { scratch, checkpoint };
  Kind kind = Kind::scratch;
  std::string path;
};

struct TrainConfig {
  ArchSpec arch;
  DatasetSpec dataset;
  int epochs = 0;
  int batch_size = 32;
  // Piecewise-constant (epoch, lr); first entry at epoch 0, epochs strictly
  // increasing. Default: 0.1 with x0.1 drops at 50% and 75% of the run.
  std::vector<std::pair<int, double>> lr_schedule;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint32_t seed = 1;
  std::optional<PruneConfig> prune;  // absent = no pruning
  InitSpec init;
  int eval_every = 1;
  // Random horizontal flip + 4-pixel padded crop during training; off by
  // default so runs stay exactly reproducible against frozen expectations.
  bool augment = false;

  void validate() const;
  double lr_at(int epoch) const;
};

// Strict parser: all fields by exact name, unknown keys rejected.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);

struct MetricsRow {
  int epoch = 0;
  double train_loss = 0.0;
  double acc_before = 0.0;  // percent, NaN on epochs skipped by eval_every
  double acc_after = 0.0;
  double gap = 0.0;  // acc_after - acc_before
  double rate = 0.0;
  int pruned_count = 0;
  double wall_seconds = 0.0;
};

// Header: epoch,train_loss,acc_before,acc_after,gap,rate,pruned_count,wall_seconds
std::string metrics_csv(std::span<const MetricsRow> rows);

struct TrainResult {
  Model<float> model;    // final (masked, for soft modes)
  MaskState mask;        // final mask; empty when pruning is off or hard
  Model<float> compact;  // extracted model, verified against `model`
  std::vector<MetricsRow> metrics;
  std::vector<MaskState> mask_history;  // one entry per prune step
  double test_accuracy = 0.0;           // final compact-model accuracy, percent
};

// Full training loop: per epoch one SGD pass, evaluation, prune step at the
// configured interval, evaluation again; a final prune at epoch_max, then
// compact extraction verified against the masked model.
TrainResult train(const TrainConfig& config,
                  const std::function<void(const MetricsRow&)>& on_epoch = {});

// Accuracy (percent) of the model on a dataset, eval mode.
double evaluate(const Model<float>& model, const Dataset& data, int batch_size);

// One SGD pass over the shuffled training set (the reconstruction step of
// the soft-pruning loop); returns the epoch's mean loss. `velocity` holds
// the momentum buffers and must be model-shaped (see grad_skeleton).
double sgd_epoch(Model<float>& model, Model<float>& velocity, const Dataset& data,
                 const TrainConfig& config, int epoch, Rng& rng);

// Loads the configured dataset pair (train split, held-out test split).
std::pair<Dataset, Dataset> load_datasets(const DatasetSpec& spec);

}  // namespace asfp
