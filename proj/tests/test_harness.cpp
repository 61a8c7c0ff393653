#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "asfp/checkpoint.hpp"
#include "asfp/dataset.hpp"
#include "asfp/train.hpp"
#include "doctest.h"

using namespace asfp;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const std::filesystem::path p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

void write_cifar_record(std::ofstream& out, unsigned char label, unsigned char fill) {
  out.put(static_cast<char>(label));
  for (int i = 0; i < 3072; ++i) out.put(static_cast<char>(fill));
}

// A small config that trains in a couple of seconds.
TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.arch = ArchSpec{ArchKind::resnet, 1, {6, 8, 10}, 4, {3, 8, 8}};
  cfg.dataset = DatasetSpec{DatasetSpec::Kind::synthetic, "", 4, 40, 8, 5};
  cfg.epochs = 4;
  cfg.batch_size = 16;
  cfg.lr_schedule = {{0, 0.1}};
  cfg.seed = 11;
  return cfg;
}

// The metrics CSV minus its wall-clock column; timing is the one
// legitimately nondeterministic field.
std::string strip_wall(const std::string& csv) {
  std::string out;
  std::stringstream ss(csv);
  std::string line;
  while (std::getline(ss, line)) {
    out += line.substr(0, line.rfind(','));
    out += '\n';
  }
  return out;
}

}  // namespace

TEST_CASE("cifar10 loader parses the canonical record layout") {
  const auto dir = temp_dir("asfp_cifar");
  {
    std::ofstream out(dir / "data_batch_1.bin", std::ios::binary);
    write_cifar_record(out, 3, 0);
    write_cifar_record(out, 9, 255);
  }
  const Dataset d = load_cifar10((dir).string());
  CHECK(d.images.shape() == std::vector<int>{2, 3, 32, 32});
  CHECK(d.labels == std::vector<int>{3, 9});
  // pixel 0 -> (0 - mean)/std, pixel 255 -> (1 - mean)/std per channel
  for (int c = 0; c < 3; ++c) {
    CHECK(d.images(0, c, 0, 0) ==
          doctest::Approx((0.0f - kCifarMean[c]) / kCifarStd[c]));
    CHECK(d.images(1, c, 17, 5) ==
          doctest::Approx((1.0f - kCifarMean[c]) / kCifarStd[c]));
  }
}

TEST_CASE("cifar10 loader concatenates all batch files in order") {
  const auto dir = temp_dir("asfp_cifar_multi");
  for (int i = 1; i <= 5; ++i) {
    std::ofstream out(dir / ("data_batch_" + std::to_string(i) + ".bin"),
                      std::ios::binary);
    write_cifar_record(out, static_cast<unsigned char>(i - 1), 1);
    write_cifar_record(out, static_cast<unsigned char>(i - 1), 2);
  }
  const Dataset d = load_cifar10(dir.string());
  CHECK(d.images.extent(0) == 10);
  CHECK(d.labels == std::vector<int>{0, 0, 1, 1, 2, 2, 3, 3, 4, 4});
}

TEST_CASE("cifar10 loader rejects malformed files") {
  const auto dir = temp_dir("asfp_cifar_bad");
  {
    std::ofstream out(dir / "data_batch_1.bin", std::ios::binary);
    write_cifar_record(out, 1, 7);
    out.put(0);  // trailing byte breaks the 3073 multiple
  }
  CHECK_THROWS_AS(load_cifar10(dir.string()), format_error);
  {
    std::ofstream out(dir / "data_batch_1.bin", std::ios::binary | std::ios::trunc);
    write_cifar_record(out, 10, 7);  // label byte out of range
  }
  CHECK_THROWS_AS(load_cifar10(dir.string()), format_error);
  CHECK_THROWS_AS(load_cifar10((dir / "missing").string()), format_error);
}

TEST_CASE("gen_synthetic is deterministic, balanced and learnable-sized") {
  const Dataset a = gen_synthetic(10, 200, 16, 9);
  const Dataset b = gen_synthetic(10, 200, 16, 9);
  const Dataset c = gen_synthetic(10, 200, 16, 10);
  CHECK(a.images == b.images);
  CHECK_FALSE(a.images == c.images);
  CHECK(a.images.shape() == std::vector<int>{2000, 3, 16, 16});
  std::vector<int> counts(10, 0);
  for (int l : a.labels) ++counts[static_cast<std::size_t>(l)];
  for (int n : counts) CHECK(n == 200);
  CHECK_THROWS_AS(gen_synthetic(1, 10, 16, 1), config_error);
}

TEST_CASE("checkpoint round trip is bitwise lossless") {
  const auto dir = temp_dir("asfp_ckpt");
  Model<float> m = build_resnet<float>(1, {6, 8, 10}, {3, 8, 8}, 4, 7);
  // give running stats non-default values
  m.training = true;
  ForwardCache<float> cache;
  Tensor<float> x({4, 3, 8, 8});
  Rng rng(3);
  rng.fill_normal(x, 0.0, 1.0);
  forward(m, x, cache);
  m.training = false;

  MaskState mask;
  mask.epoch = 2;
  mask.layers[m.blocks[0].first.conv.id] = {1};
  const std::string path = (dir / "model.ckpt").string();
  save_checkpoint(m, &mask, path);
  const LoadedCheckpoint loaded = load_checkpoint(path);

  bool all_equal = true;
  for_each_state(m, std::function<void(const std::string&, const Tensor<float>&)>(
                        [&](const std::string& name, const Tensor<float>& t) {
                          for_each_state(
                              loaded.model,
                              std::function<void(const std::string&, const Tensor<float>&)>(
                                  [&](const std::string& n2, const Tensor<float>& t2) {
                                    if (n2 == name && !(t == t2)) all_equal = false;
                                  }));
                        }));
  CHECK(all_equal);
  REQUIRE(loaded.mask.has_value());
  CHECK(loaded.mask->layers == mask.layers);
  CHECK(forward_eval(m, x) == forward_eval(loaded.model, x));
}

TEST_CASE("compact checkpoints restore reduced widths and merge sets") {
  const auto dir = temp_dir("asfp_ckpt_compact");
  Model<float> m = build_resnet<float>(1, {8, 12, 16}, {3, 16, 16}, 10, 7);
  PruneConfig cfg;
  cfg.mode = PruneMode::soft;
  cfg.goal_rate = 0.3;
  cfg.min_rate = 0.3;
  cfg.epoch_max = 1;
  const MaskState mask = prune_step(m, cfg, solve_schedule(0.3, 0.3, 0.125, 1), 1);
  const Model<float> compact = extract_compact(m, mask);
  const std::string path = (dir / "compact.ckpt").string();
  save_checkpoint(compact, nullptr, path);
  const LoadedCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.model.blocks[0].merge_keep == compact.blocks[0].merge_keep);
  CHECK(loaded.model.blocks[0].first.conv.out_channels ==
        compact.blocks[0].first.conv.out_channels);
  Tensor<float> x({2, 3, 16, 16});
  Rng rng(5);
  rng.fill_normal(x, 0.0, 1.0);
  CHECK(forward_eval(compact, x) == forward_eval(loaded.model, x));
}

TEST_CASE("checkpoint corruption is rejected without a partial model") {
  const auto dir = temp_dir("asfp_ckpt_bad");
  Model<float> m = build_resnet<float>(1, {6, 8, 10}, {3, 8, 8}, 4, 7);
  const std::string path = (dir / "model.ckpt").string();
  save_checkpoint(m, nullptr, path);

  SUBCASE("truncated blob") {
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 40);
    CHECK_THROWS_AS(load_checkpoint(path), format_error);
  }
  SUBCASE("corrupt manifest bytes") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(20);
    f.put('}');
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), format_error);
  }
  SUBCASE("wrong magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), format_error);
  }
}

TEST_CASE("train config parsing") {
  const std::string good = R"({
    "arch": {"arch":"resnet","n":1,"widths":[6,8,10],"classes":4,"input":[3,8,8]},
    "dataset": {"kind":"synthetic","classes":4,"n_per_class":40,"image_size":8,"seed":5},
    "epochs": 4,
    "batch_size": 16,
    "lr_schedule": [[0,0.1],[2,0.01]],
    "momentum": 0.9,
    "weight_decay": 0.0005,
    "seed": 11,
    "prune": {"mode":"asymptotic-soft","p":2,"P_goal":0.3,"P_min":0.0,"D":0.125,"epoch_max":4,"interval":1},
    "init": {"kind":"scratch"},
    "eval_every": 1
  })";
  const TrainConfig cfg = parse_train_config(good);
  CHECK(cfg.epochs == 4);
  CHECK(cfg.prune.has_value());
  CHECK(cfg.prune->goal_rate == 0.3);
  CHECK(cfg.lr_at(0) == 0.1);
  CHECK(cfg.lr_at(1) == 0.1);
  CHECK(cfg.lr_at(3) == 0.01);

  SUBCASE("unknown keys are rejected at every level") {
    CHECK_THROWS_AS(parse_train_config(R"({"epochs":1,"bogus":2})"), format_error);
    std::string bad = good;
    bad.insert(bad.rfind('}'), R"(,"extra":1)");
    CHECK_THROWS_AS(parse_train_config(bad), format_error);
  }
  SUBCASE("lr schedule must start at zero and increase") {
    std::string bad = good;
    bad.replace(bad.find("[[0,0.1],[2,0.01]]"), 18, "[[1,0.1],[2,0.01]]");
    CHECK_THROWS_AS(parse_train_config(bad), config_error);
  }
  SUBCASE("prune.epoch_max must equal epochs") {
    std::string bad = good;
    bad.replace(bad.find("\"epoch_max\":4"), 13, "\"epoch_max\":9");
    CHECK_THROWS_AS(parse_train_config(bad), config_error);
  }
  SUBCASE("soft mode pins the rate to the goal") {
    std::string soft = good;
    soft.replace(soft.find("asymptotic-soft"), 15, "soft");
    soft.replace(soft.find("\"P_min\":0.0"), 11, "\"P_min\":0.1");
    const TrainConfig c = parse_train_config(soft);
    CHECK(c.prune->min_rate == c.prune->goal_rate);
  }
  SUBCASE("defaults fill in") {
    const TrainConfig c = parse_train_config(R"({
      "arch": {"arch":"plain","widths":[4],"classes":4,"input":[3,8,8]},
      "dataset": {"kind":"synthetic","classes":4,"n_per_class":10,"image_size":8,"seed":1},
      "epochs": 8
    })");
    CHECK(c.batch_size == 32);
    CHECK(c.lr_schedule.size() == 3);
    CHECK(c.lr_at(0) == 0.1);
    CHECK(c.lr_at(4) == doctest::Approx(0.01));
    CHECK(c.lr_at(6) == doctest::Approx(0.001));
    CHECK_FALSE(c.prune.has_value());
  }
}

TEST_CASE("metrics CSV format") {
  std::vector<MetricsRow> rows(2);
  rows[0] = {0, 1.5, 50.0, 48.25, -1.75, 0.1, 3, 2.0};
  rows[1] = {1, 0.75, 60.5, 60.5, 0.0, 0.2, 0, 2.0};
  const std::string csv = metrics_csv(rows);
  CHECK(csv.rfind("epoch,train_loss,acc_before,acc_after,gap,rate,pruned_count,wall_seconds\n",
                  0) == 0);
  CHECK(csv.find("0,1.500000,50.0000,48.2500,-1.7500,0.100000,3,2.000\n") !=
        std::string::npos);
  CHECK(csv.find("1,0.750000,60.5000,60.5000,0.0000,0.200000,0,2.000\n") !=
        std::string::npos);
}

TEST_CASE("train with pruning disabled: empty mask, compact equals original") {
  TrainConfig cfg = tiny_config();
  const TrainResult r = train(cfg);
  CHECK(r.mask.empty());
  CHECK(r.mask_history.empty());
  CHECK(r.metrics.size() == 4);
  Tensor<float> x({4, 3, 8, 8});
  Rng rng(2);
  rng.fill_normal(x, 0.0, 1.0);
  CHECK(forward_eval(r.model, x) == forward_eval(r.compact, x));
  for (const MetricsRow& row : r.metrics) {
    CHECK(row.rate == 0.0);
    CHECK(row.pruned_count == 0);
    CHECK(row.gap == 0.0);  // nothing pruned, both evals see the same model
  }
}

TEST_CASE("train with ASFP: metrics shape, rate column, gap-zero rows") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 5;
  PruneConfig p;
  p.mode = PruneMode::asymptotic_soft;
  p.goal_rate = 0.3;
  p.min_rate = 0.0;
  p.epoch_max = 5;
  cfg.prune = p;
  const TrainResult r = train(cfg);
  CHECK(r.metrics.size() == 5);
  CHECK_FALSE(r.mask.empty());
  const PruneSchedule sched = solve_schedule(0.3, 0.0, 0.125, 5);
  for (const MetricsRow& row : r.metrics) {
    CHECK(row.rate == rate_at(sched, row.epoch));
    if (row.pruned_count == 0) CHECK(row.gap == 0.0);
  }
  // final mask was taken at exactly the goal rate
  CHECK(r.mask.epoch == 5);
  for (const auto& [id, idx] : r.mask.layers) {
    (void)id;
    CHECK_FALSE(idx.empty());
  }
}

TEST_CASE("SFP equals ASFP when the minimum rate is the goal rate") {
  TrainConfig soft_cfg = tiny_config();
  PruneConfig p;
  p.mode = PruneMode::soft;
  p.goal_rate = 0.3;
  p.epoch_max = soft_cfg.epochs;
  soft_cfg.prune = p;

  TrainConfig asfp_cfg = tiny_config();
  p.mode = PruneMode::asymptotic_soft;
  p.min_rate = 0.3;
  asfp_cfg.prune = p;

  const TrainResult a = train(soft_cfg);
  const TrainResult b = train(asfp_cfg);
  REQUIRE(a.mask_history.size() == b.mask_history.size());
  for (std::size_t i = 0; i < a.mask_history.size(); ++i)
    CHECK(mask_to_json(a.mask_history[i]) == mask_to_json(b.mask_history[i]));
  CHECK(strip_wall(metrics_csv(a.metrics)) == strip_wall(metrics_csv(b.metrics)));
}

TEST_CASE("train determinism: identical config and seed give identical metrics") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 3;
  const TrainResult a = train(cfg);
  const TrainResult b = train(cfg);
  CHECK(strip_wall(metrics_csv(a.metrics)) == strip_wall(metrics_csv(b.metrics)));
  Tensor<float> x({4, 3, 8, 8});
  Rng rng(2);
  rng.fill_normal(x, 0.0, 1.0);
  CHECK(forward_eval(a.model, x) == forward_eval(b.model, x));
}

TEST_CASE("train from a checkpoint resumes with the saved weights") {
  const auto dir = temp_dir("asfp_resume");
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  const TrainResult first = train(cfg);
  const std::string path = (dir / "warm.ckpt").string();
  save_checkpoint(first.model, nullptr, path);

  TrainConfig resume = tiny_config();
  resume.epochs = 1;
  resume.init = InitSpec{InitSpec::Kind::checkpoint, path};
  // the fine-tune protocol: one tenth of the original learning rate
  resume.lr_schedule = {{0, 0.01}};
  const TrainResult second = train(resume);
  CHECK(second.metrics.size() == 1);
  // warm start should beat a 1-epoch scratch run's loss
  TrainConfig scratch = tiny_config();
  scratch.epochs = 1;
  const TrainResult cold = train(scratch);
  CHECK(second.metrics[0].train_loss < cold.metrics[0].train_loss);

  TrainConfig wrong = tiny_config();
  wrong.arch.widths = {6, 8, 12};
  wrong.epochs = 1;
  wrong.init = InitSpec{InitSpec::Kind::checkpoint, path};
  CHECK_THROWS_AS(train(wrong), config_error);
}

TEST_CASE("shipped config files parse") {
  const std::filesystem::path configs = std::filesystem::path(ASFP_SOURCE_DIR) / "configs";
  int seen = 0;
  for (const auto& entry : std::filesystem::directory_iterator(configs)) {
    if (entry.path().extension() != ".json" ||
        entry.path().filename().string().find("arch") != std::string::npos)
      continue;
    ++seen;
    INFO(entry.path().string());
    CHECK_NOTHROW(load_train_config(entry.path().string()));
  }
  CHECK(seen >= 2);
  CHECK_NOTHROW(load_arch_file((configs / "resnet56_arch.json").string()));
}

TEST_CASE("augmentation is off by default, optional and deterministic") {
  const TrainConfig parsed = parse_train_config(R"({
    "arch": {"arch":"plain","widths":[4],"classes":4,"input":[3,8,8]},
    "dataset": {"kind":"synthetic","classes":4,"n_per_class":10,"image_size":8,"seed":1},
    "epochs": 1,
    "augment": true
  })");
  CHECK(parsed.augment);

  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  TrainConfig flipped = cfg;
  flipped.augment = true;
  const TrainResult plain_a = train(cfg);
  const TrainResult aug_a = train(flipped);
  const TrainResult aug_b = train(flipped);
  // different training stream, but still a pure function of config + seed
  CHECK(plain_a.metrics[0].train_loss != aug_a.metrics[0].train_loss);
  CHECK(strip_wall(metrics_csv(aug_a.metrics)) == strip_wall(metrics_csv(aug_b.metrics)));
}

TEST_CASE("hard mode trains the shrunken model") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  PruneConfig p;
  p.mode = PruneMode::hard;
  p.goal_rate = 0.3;
  p.epoch_max = 2;
  cfg.prune = p;
  const TrainResult r = train(cfg);
  CHECK(r.mask.empty());
  CHECK(r.model.blocks[0].first.conv.out_channels < 6 + 1);  // 6 -> floor(6*0.7)=4
  CHECK(r.model.blocks[0].first.conv.out_channels == 4);
  CHECK(param_count(r.compact) == param_count(r.model));
}
