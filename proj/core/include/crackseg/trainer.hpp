#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "crackseg/augment.hpp"
#include "crackseg/dataset.hpp"
#include "crackseg/evaluate.hpp"
#include "crackseg/model.hpp"
#include "crackseg/optimizer.hpp"

namespace crackseg {

struct TrainConfig {
  double lr_max = 0.0;  // required; there is no sensible universal default
  int batch_size = 4;
  int epochs_stage1 = 15;
  int epochs_stage2 = 30;
  std::vector<int> sizes = {128, 256, 320};
  bool two_stage = true;
  bool progressive = true;
  int epochs_per_size = 30;        // later sizes in a progressive run
  int single_size_epochs = 90;     // whole run when progressive is off
  std::uint64_t seed = 0;
  std::string checkpoint_dir;      // empty: keep weights in memory only
  std::string log_path;            // empty: no JSONL epoch log
  AugmentSpec augment;
  AdamWHyper adamw;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;   // global, 0-based across the whole run
  int stage = 1;   // 1 = early-groups-frozen, 2 = everything trainable
  int size = 0;
  double train_loss = 0.0;
  double lr = 0.0;  // schedule value at the epoch's midpoint iteration
  double seconds = 0.0;

  std::string to_json() const;
};

/// One freeze/schedule phase: a fresh optimizer and a fresh one-cycle curve
/// spanning epochs x ceil(n/batch) iterations.
struct StageSpec {
  int size = 0;
  int epochs = 0;
  std::array<bool, 3> frozen{false, false, false};  // indexed by LayerGroup
  int stage_label = 2;
  int first_epoch = 0;          // global index of this stage's first epoch
  std::uint64_t stream_key = 0; // seeds the per-epoch batch streams
};

using LogSink = std::function<void(const EpochLog&)>;

/// Applies the freeze flags (and leaves them applied), then runs the stage.
/// Aborts with a diagnostic naming stage/epoch/batch on a non-finite loss.
std::vector<EpochLog> train_stage(Model<float>& model, const DatasetIndex& data,
                                  const TrainConfig& config, const StageSpec& spec,
                                  const LogSink& sink = {});

/// The full procedure: at the first size either two stages (early groups
/// frozen for epochs_stage1, then everything for epochs_stage2) or a single
/// unfrozen stage; each later size one unfrozen stage of epochs_per_size.
/// With progressive off, a single unfrozen stage of single_size_epochs at
/// the largest size. Writes stage<k>_size<S>.ckpt plus final.ckpt when
/// checkpoint_dir is set, and JSONL epoch lines when log_path is set.
std::vector<EpochLog> train_model(Model<float>& model, const DatasetIndex& data,
                                  const TrainConfig& config);

struct AblationArm {
  std::string label;
  MetricsReport report;
  std::vector<EpochLog> logs;
};

struct AblationResult {
  std::string name;
  AblationArm a;
  AblationArm b;
};

/// Trains both arms of a named ablation ("one-stage-vs-two-stage", "scse",
/// "progressive-sizes") with identical seeds and data, then evaluates each on
/// the test split. Arms differ in exactly the toggled setting.
AblationResult run_ablation(const std::string& name, const DatasetIndex& train_data,
                            const DatasetIndex& test_data, const ModelConfig& model_config,
                            const TrainConfig& train_config);

}  // namespace crackseg
