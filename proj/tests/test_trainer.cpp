#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "crackseg/checkpoint.hpp"
#include "crackseg/evaluate.hpp"
#include "crackseg/rng.hpp"
#include "crackseg/trainer.hpp"
#include "doctest.h"
#include "support/synthetic.hpp"

using namespace crackseg;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg = ModelConfig::reduced_test();
  return cfg;
}

TrainConfig tiny_train(const fs::path& dir) {
  TrainConfig cfg;
  cfg.lr_max = 1e-3;
  cfg.batch_size = 2;
  cfg.epochs_stage1 = 1;
  cfg.epochs_stage2 = 1;
  cfg.sizes = {32};
  cfg.epochs_per_size = 1;
  cfg.single_size_epochs = 2;
  cfg.seed = 3;
  cfg.checkpoint_dir = (dir / "ckpt").string();
  cfg.log_path = (dir / "log.jsonl").string();
  return cfg;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);  // lr_max unset
  cfg.lr_max = 0.01;
  cfg.sizes = {128, 96};  // not increasing
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.sizes = {96, 100};  // not a multiple of 32
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.sizes = {96, 128};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.batch_size = 2;
  cfg.validate();
}

TEST_CASE("epoch log serializes every field as json") {
  EpochLog log;
  log.epoch = 7;
  log.stage = 2;
  log.size = 128;
  log.train_loss = 0.25;
  log.lr = 0.004;
  log.seconds = 1.5;
  const std::string j = log.to_json();
  CHECK(j.find("\"epoch\":7") != std::string::npos);
  CHECK(j.find("\"stage\":2") != std::string::npos);
  CHECK(j.find("\"size\":128") != std::string::npos);
  CHECK(j.find("\"train_loss\":0.25") != std::string::npos);
  CHECK(j.find("\"lr\":0.004") != std::string::npos);
  CHECK(j.find("\"seconds\":1.5") != std::string::npos);
  CHECK(j.front() == '{');
  CHECK(j.back() == '}');
}

TEST_CASE("two-stage training freezes early groups then releases them") {
  const fs::path dir = testsupport::make_temp_dir("train2s");
  const DatasetIndex data = testsupport::make_crack_dataset((dir / "ds").string(), 4, 48, 111);

  Model<float> model(tiny_model());
  model.he_init(21);

  // Snapshot the G1/G2 weights: stage 1 must not move them, bitwise.
  const TensorF g1_before = model.param("encoder.stem.conv.weight").value;
  const TensorF g2_before = model.param("encoder.stage3.block0.conv1.weight").value;
  const TensorF g1_bn_mean_before = model.buffer("encoder.stem.bn.running_mean");

  TrainConfig cfg = tiny_train(dir);
  StageSpec stage1;
  stage1.size = 32;
  stage1.epochs = 1;
  stage1.frozen = {true, true, false};
  stage1.stage_label = 1;
  stage1.stream_key = 99;
  const auto logs1 = train_stage(model, data, cfg, stage1);
  REQUIRE(logs1.size() == 1);
  CHECK(logs1[0].stage == 1);
  CHECK(logs1[0].size == 32);
  CHECK(logs1[0].train_loss > 0.0);
  CHECK(logs1[0].train_loss < 1.0 + 1e-6);

  const TensorF& g1_after = model.param("encoder.stem.conv.weight").value;
  const TensorF& g2_after = model.param("encoder.stage3.block0.conv1.weight").value;
  for (std::int64_t i = 0; i < g1_before.numel(); ++i) {
    REQUIRE(g1_after[i] == g1_before[i]);
  }
  for (std::int64_t i = 0; i < g2_before.numel(); ++i) {
    REQUIRE(g2_after[i] == g2_before[i]);
  }
  // Frozen BN also holds its running stats.
  const TensorF& g1_bn_mean_after = model.buffer("encoder.stem.bn.running_mean");
  for (std::int64_t i = 0; i < g1_bn_mean_before.numel(); ++i) {
    REQUIRE(g1_bn_mean_after[i] == g1_bn_mean_before[i]);
  }

  // Stage 2 unfreezes: now the early groups move.
  StageSpec stage2;
  stage2.size = 32;
  stage2.epochs = 1;
  stage2.frozen = {false, false, false};
  stage2.stage_label = 2;
  stage2.first_epoch = 1;
  stage2.stream_key = 100;
  const auto logs2 = train_stage(model, data, cfg, stage2);
  REQUIRE(logs2.size() == 1);
  CHECK(logs2[0].epoch == 1);
  CHECK(logs2[0].stage == 2);
  bool g1_moved = false;
  for (std::int64_t i = 0; i < g1_before.numel(); ++i) {
    g1_moved |= (model.param("encoder.stem.conv.weight").value[i] != g1_before[i]);
  }
  CHECK(g1_moved);

  fs::remove_all(dir);
}

TEST_CASE("train_model writes logs and checkpoints; ablations toggle one knob") {
  const fs::path dir = testsupport::make_temp_dir("trainfull");
  const DatasetIndex data = testsupport::make_crack_dataset((dir / "ds").string(), 4, 48, 113);

  SUBCASE("two-stage progressive run") {
    Model<float> model(tiny_model());
    model.he_init(23);
    TrainConfig cfg = tiny_train(dir);
    cfg.sizes = {32, 64};
    const auto logs = train_model(model, data, cfg);

    // 1 frozen epoch + 1 open epoch at 32, then 1 epoch at 64.
    REQUIRE(logs.size() == 3);
    CHECK(logs[0].stage == 1);
    CHECK(logs[0].size == 32);
    CHECK(logs[1].stage == 2);
    CHECK(logs[1].size == 32);
    CHECK(logs[2].stage == 2);
    CHECK(logs[2].size == 64);
    CHECK(logs[0].epoch == 0);
    CHECK(logs[1].epoch == 1);
    CHECK(logs[2].epoch == 2);

    // Checkpoints: one per stage plus the final weights.
    CHECK(fs::exists(dir / "ckpt" / "stage1_size32.ckpt"));
    CHECK(fs::exists(dir / "ckpt" / "stage2_size32.ckpt"));
    CHECK(fs::exists(dir / "ckpt" / "stage2_size64.ckpt"));
    CHECK(fs::exists(dir / "ckpt" / "final.ckpt"));

    // The JSONL log has one line per epoch, parseable field spot checks.
    std::ifstream in(cfg.log_path);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
      CHECK(line.find("\"epoch\":" + std::to_string(lines)) != std::string::npos);
      CHECK(line.find("\"train_loss\":") != std::string::npos);
      ++lines;
    }
    CHECK(lines == 3);

    // The final checkpoint equals the in-memory weights.
    Model<float> reload(tiny_model());
    reload.he_init(1);
    load_checkpoint(reload, (dir / "ckpt" / "final.ckpt").string());
    const TensorF& a = model.param("head.conv.weight").value;
    const TensorF& b = reload.param("head.conv.weight").value;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
      REQUIRE(a[i] == b[i]);
    }
  }

  SUBCASE("single-size run ignores the size ladder") {
    Model<float> model(tiny_model());
    model.he_init(25);
    TrainConfig cfg = tiny_train(dir);
    cfg.sizes = {32, 64};
    cfg.progressive = false;
    cfg.single_size_epochs = 2;
    const auto logs = train_model(model, data, cfg);
    REQUIRE(logs.size() == 2);
    CHECK(logs[0].size == 64);  // largest size only
    CHECK(logs[1].size == 64);
    CHECK(logs[0].stage == 2);  // never frozen
    CHECK(fs::exists(dir / "ckpt" / "final.ckpt"));
  }

  SUBCASE("learning rate logged at the cycle midpoint") {
    Model<float> model(tiny_model());
    model.he_init(27);
    TrainConfig cfg = tiny_train(dir);
    cfg.two_stage = false;
    cfg.epochs_stage2 = 4;
    const auto logs = train_model(model, data, cfg);
    REQUIRE(logs.size() == 4);
    // 4 samples, batch 2 -> 2 iterations per epoch, 8 total; midpoints at
    // iterations 1, 3, 5, 7 of one shared cycle.
    OneCycleConfig sched;
    sched.lr_max = cfg.lr_max;
    sched.total_iterations = 8;
    for (int e = 0; e < 4; ++e) {
      CHECK(logs[static_cast<std::size_t>(e)].lr ==
            doctest::Approx(lr_at(2 * e + 1, sched)).epsilon(1e-12));
    }
    // One cycle: early epochs climb, late epochs descend.
    CHECK(logs[1].lr > logs[0].lr);
    CHECK(logs[3].lr < logs[1].lr);
  }

  SUBCASE("non-finite loss aborts with stage context") {
    Model<float> model(tiny_model());
    model.he_init(29);
    model.param("head.conv.weight").value.fill(std::numeric_limits<float>::quiet_NaN());
    TrainConfig cfg = tiny_train(dir);
    cfg.two_stage = false;
    cfg.epochs_stage2 = 2;
    CHECK_THROWS_WITH_AS(train_model(model, data, cfg), doctest::Contains("non-finite"),
                         ContractError);
  }

  SUBCASE("empty dataset is rejected") {
    Model<float> model(tiny_model());
    model.he_init(31);
    TrainConfig cfg = tiny_train(dir);
    DatasetIndex empty;
    CHECK_THROWS_AS(train_model(model, empty, cfg), ContractError);
  }

  fs::remove_all(dir);
}

TEST_CASE("training is reproducible end to end") {
  const fs::path dir = testsupport::make_temp_dir("repro");
  const DatasetIndex data = testsupport::make_crack_dataset((dir / "ds").string(), 4, 48, 117);

  const auto run = [&](const fs::path& out) {
    Model<float> model(tiny_model());
    model.he_init(33);
    TrainConfig cfg = tiny_train(dir);
    cfg.checkpoint_dir = out.string();
    cfg.log_path.clear();
    train_model(model, data, cfg);
    return read_checkpoint((out / "final.ckpt").string());
  };

  const TensorMap a = run(dir / "a");
  const TensorMap b = run(dir / "b");
  REQUIRE(a.size() == b.size());
  for (const auto& [name, t] : a) {
    const TensorF& u = b.at(name);
    REQUIRE(u.shape() == t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      REQUIRE(u[i] == t[i]);
    }
  }

  fs::remove_all(dir);
}

TEST_CASE("evaluation pads arbitrary sizes and scores predictions") {
  const fs::path dir = testsupport::make_temp_dir("eval");
  const DatasetIndex data = testsupport::make_crack_dataset((dir / "ds").string(), 3, 48, 119);

  Model<float> model(tiny_model());
  model.he_init(35);

  SUBCASE("reflect padding reaches the next multiple") {
    TensorF img({3, 40, 70});
    Rng rng(121);
    for (std::int64_t i = 0; i < img.numel(); ++i) {
      img[i] = static_cast<float>(rng.uniform(0.0, 1.0));
    }
    const TensorF padded = pad_reflect_to_multiple(img, 32);
    REQUIRE(padded.shape() == std::vector<std::int64_t>({3, 64, 96}));
    // Original content in the top-left corner.
    for (std::int64_t y = 0; y < 40; ++y) {
      for (std::int64_t x = 0; x < 70; ++x) {
        REQUIRE(padded[(0 * 64 + y) * 96 + x] == img[(0 * 40 + y) * 70 + x]);
      }
    }
    // Reflected rows: row 40 mirrors row 38 (reflect without edge repeat).
    CHECK(padded[(0 * 64 + 40) * 96 + 10] == img[(0 * 40 + 38) * 70 + 10]);
    // Already-fitting input comes back untouched.
    const TensorF fit = pad_reflect_to_multiple(TensorF({3, 32, 64}), 32);
    CHECK(fit.shape() == std::vector<std::int64_t>({3, 32, 64}));
  }

  SUBCASE("predict_mask returns the input footprint") {
    TensorF img({3, 40, 70});
    const Mask pred = predict_mask(model, img, 0.5f);
    CHECK(pred.h == 40);
    CHECK(pred.w == 70);
  }

  SUBCASE("dataset evaluation produces a full report") {
    const MetricsReport rep = evaluate_dataset(model, data, EvalConfig{});
    REQUIRE(rep.per_image.size() == 3);
    for (const auto& row : rep.per_image) {
      CHECK_FALSE(row.image.empty());
      CHECK(row.counts.tp_pr + row.counts.fp >= 0);
    }
    CHECK(rep.mean_f1 >= 0.0);
    CHECK(rep.mean_f1 <= 1.0);

    DatasetIndex empty;
    CHECK_THROWS_AS(evaluate_dataset(model, empty, EvalConfig{}), ContractError);
  }

  fs::remove_all(dir);
}

TEST_CASE("ablations differ in exactly the toggled knob") {
  const fs::path dir = testsupport::make_temp_dir("ablate");
  // Four train images: batch 2 must tile the epoch exactly, because a
  // remainder batch of one sample has 1x1 spatial stats at the bottleneck.
  const DatasetIndex train_data =
      testsupport::make_crack_dataset((dir / "tr").string(), 4, 48, 123);
  const DatasetIndex test_data =
      testsupport::make_crack_dataset((dir / "te").string(), 2, 48, 125);

  TrainConfig cfg;
  cfg.lr_max = 1e-3;
  cfg.batch_size = 2;
  cfg.epochs_stage1 = 1;
  cfg.epochs_stage2 = 1;
  cfg.sizes = {32};
  cfg.epochs_per_size = 1;
  cfg.single_size_epochs = 1;
  cfg.seed = 9;

  SUBCASE("two-stage toggle") {
    const AblationResult r =
        run_ablation("one-stage-vs-two-stage", train_data, test_data, tiny_model(), cfg);
    CHECK(r.a.label == "two-stage");
    CHECK(r.b.label == "one-stage");
    // Arm a logs a frozen first epoch; arm b never freezes.
    REQUIRE_FALSE(r.a.logs.empty());
    REQUIRE_FALSE(r.b.logs.empty());
    CHECK(r.a.logs[0].stage == 1);
    CHECK(r.b.logs[0].stage == 2);
    CHECK(r.a.report.per_image.size() == 2);
    CHECK(r.b.report.per_image.size() == 2);
  }

  SUBCASE("scse toggle") {
    const AblationResult r = run_ablation("scse", train_data, test_data, tiny_model(), cfg);
    CHECK(r.a.label == "with-scse");
    CHECK(r.b.label == "without-scse");
  }

  SUBCASE("progressive toggle equalizes the epoch budget") {
    TrainConfig p = cfg;
    p.sizes = {32, 64};
    p.epochs_per_size = 1;
    const AblationResult r =
        run_ablation("progressive-sizes", train_data, test_data, tiny_model(), p);
    CHECK(r.a.label == "progressive");
    CHECK(r.b.label == "single-size");
    CHECK(r.a.logs.size() == r.b.logs.size());  // matched budgets
    CHECK(r.b.logs[0].size == 64);
  }

  SUBCASE("unknown ablation name") {
    CHECK_THROWS_AS(run_ablation("bogus", train_data, test_data, tiny_model(), cfg),
                    ConfigError);
  }

  fs::remove_all(dir);
}
