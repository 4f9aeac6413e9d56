#include "crackseg/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "crackseg/batcher.hpp"
#include "crackseg/errors.hpp"
#include "crackseg/loss.hpp"
#include "crackseg/schedule.hpp"
#include "crackseg/tape.hpp"

namespace crackseg {

namespace {

void append_number(std::ostringstream& os, double v) {
  os << std::setprecision(17) << v;
}

void save_stage_checkpoint(const Model<float>& model, const std::string& dir, int stage_label,
                           int size) {
  if (dir.empty()) {
    return;
  }
  std::filesystem::create_directories(dir);
  std::ostringstream name;
  name << dir << "/stage" << stage_label << "_size" << size << ".ckpt";
  save_checkpoint(model, name.str());
}

}  // namespace

void TrainConfig::validate() const {
  require<ConfigError>(lr_max > 0.0, "lr_max must be positive, got ", lr_max);
  require<ConfigError>(batch_size >= 1, "batch size must be >= 1, got ", batch_size);
  require<ConfigError>(epochs_stage1 > 0 && epochs_stage2 > 0 && epochs_per_size > 0 &&
                           single_size_epochs > 0,
                       "epoch counts must be positive");
  require<ConfigError>(!sizes.empty(), "size schedule must not be empty");
  int prev = 0;
  for (const int s : sizes) {
    require<ConfigError>(s > 0 && s % 32 == 0, "sizes must be positive multiples of 32, got ",
                         s);
    require<ConfigError>(s > prev, "size schedule must be strictly increasing");
    prev = s;
  }
}

std::string EpochLog::to_json() const {
  std::ostringstream os;
  os << "{\"epoch\":" << epoch << ",\"stage\":" << stage << ",\"size\":" << size
     << ",\"train_loss\":";
  append_number(os, train_loss);
  os << ",\"lr\":";
  append_number(os, lr);
  os << ",\"seconds\":";
  append_number(os, seconds);
  os << "}";
  return os.str();
}

std::vector<EpochLog> train_stage(Model<float>& model, const DatasetIndex& data,
                                  const TrainConfig& config, const StageSpec& spec,
                                  const LogSink& sink) {
  require<ContractError>(!data.empty(), "cannot train on an empty dataset");
  require<ContractError>(spec.epochs > 0, "stage needs a positive epoch count");

  model.set_group_trainable(LayerGroup::g1, !spec.frozen[0]);
  model.set_group_trainable(LayerGroup::g2, !spec.frozen[1]);
  model.set_group_trainable(LayerGroup::g3, !spec.frozen[2]);

  const std::int64_t batches_per_epoch =
      (data.size() + config.batch_size - 1) / config.batch_size;
  OneCycleConfig schedule;
  schedule.lr_max = config.lr_max;
  schedule.total_iterations = spec.epochs * batches_per_epoch;

  AdamW<float> optimizer(config.adamw);
  const auto& params = model.parameters();

  std::vector<EpochLog> logs;
  std::int64_t iteration = 0;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    BatchStreamConfig stream_config;
    stream_config.batch_size = config.batch_size;
    stream_config.size = spec.size;
    stream_config.mode = Mode::train;
    stream_config.spec = config.augment;
    stream_config.seed = spec.stream_key;
    stream_config.epoch = static_cast<std::uint64_t>(epoch);
    BatchStream stream(data, stream_config);

    double loss_sum = 0.0;
    std::int64_t batch_index = 0;
    Tensor<float> images, masks;
    while (stream.next(images, masks)) {
      Tape<float> tape;
      const Var<float> pred = model.forward(tape, images, Mode::train);
      const Var<float> loss = dice_loss(pred, masks);
      const double loss_value = static_cast<double>(tape.value(loss)[0]);
      require<ContractError>(std::isfinite(loss_value), "non-finite training loss (",
                             loss_value, ") at stage ", spec.stage_label, " epoch ",
                             spec.first_epoch + epoch, " batch ", batch_index);
      tape.backward(loss);
      optimizer.step(params, group_lrs(lr_at(iteration, schedule)));
      AdamW<float>::zero_grads(params);
      loss_sum += loss_value;
      ++iteration;
      ++batch_index;
    }

    const auto t1 = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = spec.first_epoch + epoch;
    log.stage = spec.stage_label;
    log.size = spec.size;
    log.train_loss = loss_sum / static_cast<double>(batch_index);
    log.lr = lr_at(epoch * batches_per_epoch + batches_per_epoch / 2, schedule);
    log.seconds = std::chrono::duration<double>(t1 - t0).count();
    logs.push_back(log);
    if (sink) {
      sink(log);
    }
  }
  return logs;
}

std::vector<EpochLog> train_model(Model<float>& model, const DatasetIndex& data,
                                  const TrainConfig& config) {
  config.validate();
  require<ContractError>(!data.empty(), "cannot train on an empty dataset");

  // Preflight: every scheduled resolution must flow through the network.
  for (const int size : config.sizes) {
    Tape<float> tape;
    Tensor<float> probe({1, 3, size, size});
    const Var<float> out = model.forward(tape, probe, Mode::eval);
    const auto& shape = tape.value(out).shape();
    require<ContractError>(shape == std::vector<std::int64_t>({1, 1, size, size}),
                           "preflight forward at size ", size, " produced ",
                           shape_to_string(shape));
  }

  std::ofstream log_file;
  if (!config.log_path.empty()) {
    log_file.open(config.log_path, std::ios::trunc);
    require<DataError>(log_file.good(), "cannot open epoch log '", config.log_path, "'");
  }
  const LogSink sink = [&](const EpochLog& log) {
    if (log_file.is_open()) {
      log_file << log.to_json() << "\n";
      log_file.flush();
    }
  };

  std::vector<EpochLog> logs;
  int epoch_counter = 0;
  std::uint64_t stage_ordinal = 0;
  const auto run = [&](int size, int epochs, std::array<bool, 3> frozen, int label) {
    StageSpec spec;
    spec.size = size;
    spec.epochs = epochs;
    spec.frozen = frozen;
    spec.stage_label = label;
    spec.first_epoch = epoch_counter;
    spec.stream_key = Rng::mix(config.seed, ++stage_ordinal);
    auto stage_logs = train_stage(model, data, config, spec, sink);
    logs.insert(logs.end(), stage_logs.begin(), stage_logs.end());
    epoch_counter += epochs;
    save_stage_checkpoint(model, config.checkpoint_dir, label, size);
  };

  if (config.progressive) {
    for (std::size_t i = 0; i < config.sizes.size(); ++i) {
      const int size = config.sizes[i];
      if (i == 0 && config.two_stage) {
        run(size, config.epochs_stage1, {true, false, false}, 1);
        run(size, config.epochs_stage2, {false, false, false}, 2);
      } else if (i == 0) {
        run(size, config.epochs_stage2, {false, false, false}, 2);
      } else {
        run(size, config.epochs_per_size, {false, false, false}, 2);
      }
    }
  } else {
    run(config.sizes.back(), config.single_size_epochs, {false, false, false}, 2);
  }

  if (!config.checkpoint_dir.empty()) {
    save_checkpoint(model, config.checkpoint_dir + "/final.ckpt");
  }
  return logs;
}

AblationResult run_ablation(const std::string& name, const DatasetIndex& train_data,
                            const DatasetIndex& test_data, const ModelConfig& model_config,
                            const TrainConfig& train_config) {
  struct ArmPlan {
    std::string label;
    ModelConfig model;
    TrainConfig train;
  };
  ArmPlan a{.label = "", .model = model_config, .train = train_config};
  ArmPlan b = a;

  if (name == "one-stage-vs-two-stage") {
    a.label = "two-stage";
    a.train.two_stage = true;
    b.label = "one-stage";
    b.train.two_stage = false;
  } else if (name == "scse") {
    a.label = "with-scse";
    a.model.use_scse = true;
    b.label = "without-scse";
    b.model.use_scse = false;
  } else if (name == "progressive-sizes") {
    // Both arms single-stage so the epoch budgets match exactly:
    // sizes.size() x epochs_per_size versus the same total at the last size.
    a.label = "progressive";
    a.train.two_stage = false;
    a.train.progressive = true;
    a.train.epochs_stage2 = train_config.epochs_per_size;
    b.label = "single-size";
    b.train.two_stage = false;
    b.train.progressive = false;
    b.train.single_size_epochs =
        train_config.epochs_per_size * static_cast<int>(train_config.sizes.size());
  } else {
    raise<ConfigError>("unknown ablation '", name,
                       "'; expected one-stage-vs-two-stage, scse, or progressive-sizes");
  }

  const auto run_arm = [&](const ArmPlan& plan) {
    TrainConfig arm_config = plan.train;
    if (!arm_config.checkpoint_dir.empty()) {
      arm_config.checkpoint_dir += "/" + plan.label;
    }
    if (!arm_config.log_path.empty()) {
      arm_config.log_path += "." + plan.label + ".jsonl";
    }
    Model<float> model(plan.model);
    model.he_init(arm_config.seed);
    AblationArm arm;
    arm.label = plan.label;
    arm.logs = train_model(model, train_data, arm_config);
    arm.report = evaluate_dataset(model, test_data, EvalConfig{});
    return arm;
  };

  AblationResult result;
  result.name = name;
  result.a = run_arm(a);
  result.b = run_arm(b);
  return result;
}

}  // namespace crackseg
