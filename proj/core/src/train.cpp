#include "asfp/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <regex>
#include <sstream>

#include "asfp/checkpoint.hpp"
#include "asfp/random.hpp"
#include "json.hpp"

namespace asfp {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw config_error("train: epochs must be >= 1");
  if (batch_size < 1) throw config_error("train: batch_size must be >= 1");
  if (eval_every < 1) throw config_error("train: eval_every must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0)
    throw config_error("train: momentum must be in [0,1)");
  if (weight_decay < 0.0) throw config_error("train: weight_decay must be >= 0");
  if (lr_schedule.empty() || lr_schedule.front().first != 0)
    throw config_error("train: lr_schedule must start at epoch 0");
  for (std::size_t i = 1; i < lr_schedule.size(); ++i) {
    if (lr_schedule[i].first <= lr_schedule[i - 1].first)
      throw config_error("train: lr_schedule epochs must be strictly increasing");
  }
  for (const auto& [e, lr] : lr_schedule) {
    (void)e;
    if (lr < 0.0) throw config_error("train: learning rates must be >= 0");
  }
  if (prune) {
    prune->validate();
    if (prune->epoch_max != epochs)
      throw config_error("train: prune.epoch_max (" + std::to_string(prune->epoch_max) +
                         ") must equal epochs (" + std::to_string(epochs) + ")");
  }
}

double TrainConfig::lr_at(int epoch) const {
  double lr = lr_schedule.front().second;
  for (const auto& [e, v] : lr_schedule) {
    if (e <= epoch) lr = v;
  }
  return lr;
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw format_error("config: unknown key \"" + it.key() + "\" in " + where);
  }
}

DatasetSpec parse_dataset(const json& j) {
  reject_unknown(j, {"kind", "path", "classes", "n_per_class", "image_size", "seed"},
                 "dataset");
  DatasetSpec d;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "cifar10") {
    d.kind = DatasetSpec::Kind::cifar10;
    d.path = j.at("path").get<std::string>();
  } else if (kind == "synthetic") {
    d.kind = DatasetSpec::Kind::synthetic;
    if (j.contains("classes")) d.classes = j.at("classes").get<int>();
    if (j.contains("n_per_class")) d.n_per_class = j.at("n_per_class").get<int>();
    if (j.contains("image_size")) d.image_size = j.at("image_size").get<int>();
    if (j.contains("seed")) d.seed = j.at("seed").get<std::uint32_t>();
  } else {
    throw format_error("config: unknown dataset kind \"" + kind + "\"");
  }
  return d;
}

PruneConfig parse_prune(const json& j, int epochs) {
  reject_unknown(
      j, {"mode", "p", "P_goal", "P_min", "D", "epoch_max", "interval", "layer_filter"},
      "prune");
  PruneConfig p;
  const std::string mode = j.at("mode").get<std::string>();
  if (mode == "hard") {
    p.mode = PruneMode::hard;
  } else if (mode == "soft") {
    p.mode = PruneMode::soft;
  } else if (mode == "asymptotic-soft") {
    p.mode = PruneMode::asymptotic_soft;
  } else {
    throw format_error("config: unknown prune mode \"" + mode + "\"");
  }
  p.goal_rate = j.at("P_goal").get<double>();
  if (j.contains("p")) p.norm_p = j.at("p").get<int>();
  if (j.contains("P_min")) p.min_rate = j.at("P_min").get<double>();
  if (j.contains("D")) p.decay = j.at("D").get<double>();
  p.epoch_max = j.contains("epoch_max") ? j.at("epoch_max").get<int>() : epochs;
  if (j.contains("interval")) p.interval = j.at("interval").get<int>();
  // SFP is the constant special case: the rate sits at the goal throughout.
  if (p.mode == PruneMode::soft) p.min_rate = p.goal_rate;
  if (j.contains("layer_filter")) {
    const std::string pattern = j.at("layer_filter").get<std::string>();
    std::regex re;
    try {
      re = std::regex(pattern);
    } catch (const std::regex_error& e) {
      throw format_error("config: bad layer_filter regex: " + std::string(e.what()));
    }
    p.layer_filter = [re](const std::string& id) { return std::regex_search(id, re); };
  }
  return p;
}

InitSpec parse_init(const json& j) {
  reject_unknown(j, {"kind", "path"}, "init");
  InitSpec init;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "scratch") {
    init.kind = InitSpec::Kind::scratch;
  } else if (kind == "checkpoint") {
    init.kind = InitSpec::Kind::checkpoint;
    init.path = j.at("path").get<std::string>();
  } else {
    throw format_error("config: unknown init kind \"" + kind + "\"");
  }
  return init;
}

std::string format_acc(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw format_error(std::string("config: invalid JSON: ") + e.what());
  }
  TrainConfig c;
  try {
    reject_unknown(j,
                   {"arch", "dataset", "epochs", "batch_size", "lr_schedule", "momentum",
                    "weight_decay", "seed", "prune", "init", "eval_every", "augment"},
                   "config");
    c.arch = parse_arch_json(j.at("arch").dump());
    c.dataset = parse_dataset(j.at("dataset"));
    c.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("lr_schedule")) {
      for (const auto& pair : j.at("lr_schedule")) {
        if (!pair.is_array() || pair.size() != 2)
          throw format_error("config: lr_schedule entries must be [epoch, lr]");
        c.lr_schedule.emplace_back(pair[0].get<int>(), pair[1].get<double>());
      }
    }
    if (j.contains("momentum")) c.momentum = j.at("momentum").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint32_t>();
    if (j.contains("prune")) c.prune = parse_prune(j.at("prune"), c.epochs);
    if (j.contains("init")) c.init = parse_init(j.at("init"));
    if (j.contains("eval_every")) c.eval_every = j.at("eval_every").get<int>();
    if (j.contains("augment")) c.augment = j.at("augment").get<bool>();
  } catch (const json::exception& e) {
    throw format_error(std::string("config: ") + e.what());
  }
  if (c.lr_schedule.empty()) {
    c.lr_schedule.emplace_back(0, 0.1);
    if (c.epochs >= 4) {
      c.lr_schedule.emplace_back(c.epochs / 2, 0.01);
      c.lr_schedule.emplace_back(3 * c.epochs / 4, 0.001);
    }
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw format_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out = "epoch,train_loss,acc_before,acc_after,gap,rate,pruned_count,wall_seconds\n";
  char buf[256];
  for (const MetricsRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%s,%s,%s,%.6f,%d,%.3f\n", r.epoch,
                  r.train_loss, format_acc(r.acc_before).c_str(),
                  format_acc(r.acc_after).c_str(), format_acc(r.gap).c_str(), r.rate,
                  r.pruned_count, r.wall_seconds);
    out += buf;
  }
  return out;
}

double evaluate(const Model<float>& model, const Dataset& data, int batch_size) {
  const int n = data.images.extent(0);
  const int c = data.images.extent(1);
  const int h = data.images.extent(2);
  const int w = data.images.extent(3);
  const std::int64_t sample = static_cast<std::int64_t>(c) * h * w;
  int correct = 0;
  for (int start = 0; start < n; start += batch_size) {
    const int count = std::min(batch_size, n - start);
    Tensor<float> batch({count, c, h, w});
    std::copy(data.images.data() + start * sample,
              data.images.data() + (start + count) * sample, batch.data());
    const Tensor<float> logits = forward_eval(model, batch);
    const int classes = logits.extent(1);
    for (int b = 0; b < count; ++b) {
      int best = 0;
      for (int k = 1; k < classes; ++k)
        if (logits(b, k) > logits(b, best)) best = k;
      if (best == data.labels[static_cast<std::size_t>(start + b)]) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

std::pair<Dataset, Dataset> load_datasets(const DatasetSpec& spec) {
  if (spec.kind == DatasetSpec::Kind::cifar10)
    return {load_cifar10(spec.path), load_cifar10_test(spec.path)};
  Dataset train = gen_synthetic(spec.classes, spec.n_per_class, spec.image_size, spec.seed);
  const int test_per_class = std::max(1, spec.n_per_class / 5);
  Dataset test =
      gen_synthetic(spec.classes, test_per_class, spec.image_size, spec.seed + 1000003u);
  return {std::move(train), std::move(test)};
}

namespace {

struct ParamRefs {
  std::vector<Tensor<float>*> tensors;
};

ParamRefs collect_params(Model<float>& m) {
  ParamRefs refs;
  for_each_param(m, std::function<void(const std::string&, Tensor<float>&)>(
                        [&](const std::string&, Tensor<float>& t) {
                          refs.tensors.push_back(&t);
                        }));
  return refs;
}

// Deterministic probe batch for the masked/compact equivalence check.
Tensor<float> probe_batch(const ArchSpec& arch, std::uint32_t seed) {
  Tensor<float> x({8, arch.input[0], arch.input[1], arch.input[2]});
  Rng rng(seed);
  rng.fill_normal(x, 0.0, 1.0);
  return x;
}

// Horizontal flip + crop from a 4-padded canvas, zero fill outside.
void augmented_copy(const float* src, float* dst, int channels, int h, int w, Rng& rng) {
  const int pad = 4;
  const int oy = rng.uniform_int(2 * pad + 1) - pad;
  const int ox = rng.uniform_int(2 * pad + 1) - pad;
  const bool flip = rng.uniform_int(2) == 1;
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int sy = y + oy;
        const int base = x + ox;
        const int sx = flip ? w - 1 - base : base;
        const bool inside = sy >= 0 && sy < h && sx >= 0 && sx < w;
        dst[(static_cast<std::int64_t>(c) * h + y) * w + x] =
            inside ? src[(static_cast<std::int64_t>(c) * h + sy) * w + sx] : 0.0f;
      }
    }
  }
}

}  // namespace

double sgd_epoch(Model<float>& model, Model<float>& velocity, const Dataset& data,
                 const TrainConfig& cfg, int epoch, Rng& rng) {
  const int n = data.images.extent(0);
  const int c = data.images.extent(1);
  const int h = data.images.extent(2);
  const int w = data.images.extent(3);
  const std::int64_t sample = static_cast<std::int64_t>(c) * h * w;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  const float lr = static_cast<float>(cfg.lr_at(epoch));
  const float momentum = static_cast<float>(cfg.momentum);
  const float decay = static_cast<float>(cfg.weight_decay);

  ParamRefs params = collect_params(model);
  ParamRefs vel = collect_params(velocity);

  model.training = true;
  double total_loss = 0.0;
  ForwardCache<float> cache;
  for (int start = 0; start < n; start += cfg.batch_size) {
    const int count = std::min(cfg.batch_size, n - start);
    Tensor<float> batch({count, c, h, w});
    std::vector<int> labels(static_cast<std::size_t>(count));
    for (int b = 0; b < count; ++b) {
      const int src = order[static_cast<std::size_t>(start + b)];
      if (cfg.augment) {
        augmented_copy(data.images.data() + src * sample, batch.data() + b * sample, c, h,
                       w, rng);
      } else {
        std::copy(data.images.data() + src * sample,
                  data.images.data() + (src + 1) * sample, batch.data() + b * sample);
      }
      labels[static_cast<std::size_t>(b)] = data.labels[static_cast<std::size_t>(src)];
    }
    const Tensor<float> logits = forward(model, batch, cache);
    SoftmaxLoss<float> loss = softmax_cross_entropy(logits, labels);
    if (!std::isfinite(loss.loss))
      throw numeric_error("train: diverged, non-finite loss at epoch " +
                          std::to_string(epoch));
    total_loss += loss.loss * count;
    Model<float> grads = backward(model, cache, loss.d_logits);
    ParamRefs g = collect_params(grads);
    for (std::size_t i = 0; i < params.tensors.size(); ++i)
      sgd_update(*params.tensors[i], *g.tensors[i], *vel.tensors[i], lr, momentum, decay);
    ++model.revision;
  }
  model.training = false;
  return total_loss / static_cast<double>(n);
}

TrainResult train(const TrainConfig& config,
                  const std::function<void(const MetricsRow&)>& on_epoch) {
  config.validate();
  auto [train_set, test_set] = load_datasets(config.dataset);
  if (train_set.classes != config.arch.classes)
    throw config_error("train: dataset has " + std::to_string(train_set.classes) +
                       " classes but the model expects " +
                       std::to_string(config.arch.classes));

  TrainResult result;
  Model<float> model = [&] {
    if (config.init.kind == InitSpec::Kind::checkpoint) {
      LoadedCheckpoint loaded = load_checkpoint(config.init.path);
      const std::string want = arch_to_json(config.arch);
      if (arch_to_json(loaded.model.arch) != want)
        throw config_error("train: checkpoint arch does not match config arch");
      return std::move(loaded.model);
    }
    return build_model<float>(config.arch, config.seed);
  }();

  const bool soft_pruning =
      config.prune && config.prune->mode != PruneMode::hard;
  PruneSchedule schedule;
  if (soft_pruning) schedule = schedule_for(*config.prune);
  if (config.prune && config.prune->mode == PruneMode::hard)
    model = hard_prune(model, *config.prune);

  Model<float> velocity = grad_skeleton(model);
  Rng shuffle_rng(config.seed ^ 0x51D5EEDu);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    MetricsRow row;
    row.epoch = epoch;
    row.train_loss = sgd_epoch(model, velocity, train_set, config, epoch, shuffle_rng);

    const bool do_eval = epoch % config.eval_every == 0 || epoch == config.epochs - 1;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    row.acc_before = do_eval ? evaluate(model, test_set, config.batch_size) : nan;

    if (soft_pruning && epoch % config.prune->interval == 0) {
      MaskState mask = prune_step(model, *config.prune, schedule, epoch);
      row.pruned_count = mask.total();
      result.mask_history.push_back(std::move(mask));
    }
    row.rate = soft_pruning ? rate_at(schedule, epoch) : 0.0;
    row.acc_after = do_eval ? evaluate(model, test_set, config.batch_size) : nan;
    row.gap = row.acc_after - row.acc_before;
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_epoch) on_epoch(row);
    result.metrics.push_back(row);
  }

  if (soft_pruning) {
    // Final selection at exactly the goal rate; no reconstruction follows.
    result.mask = prune_step(model, *config.prune, schedule, config.prune->epoch_max);
    result.mask_history.push_back(result.mask);
  }

  result.compact = extract_compact(model, result.mask);

  const Tensor<float> probe = probe_batch(config.arch, config.seed ^ 0xC0FFEEu);
  const Tensor<float> masked_logits = forward_eval(model, probe);
  const Tensor<float> compact_logits = forward_eval(result.compact, probe);
  double max_diff = 0.0;
  for (std::int64_t i = 0; i < masked_logits.numel(); ++i)
    max_diff = std::max(max_diff, std::abs(static_cast<double>(masked_logits[i]) -
                                           static_cast<double>(compact_logits[i])));
  if (max_diff > 1e-5)
    throw state_error("train: masked/compact equivalence check failed, max logit diff " +
                      std::to_string(max_diff));

  result.test_accuracy = evaluate(result.compact, test_set, config.batch_size);
  result.model = std::move(model);
  return result;
}

}  // namespace asfp
