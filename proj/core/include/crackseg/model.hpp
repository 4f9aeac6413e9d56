#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crackseg/common.hpp"
#include "crackseg/tape.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

struct ModelConfig {
  bool use_scse = true;
  int input_channels = 3;
  std::optional<std::string> pretrained_encoder_path;
  int scse_reduction = 16;
  /// Width knob: stem and stage channels are {b, b, 2b, 4b, 8b}. The default
  /// 64 gives the full-size network; tests shrink it.
  int base_channels = 64;
  /// Residual blocks per encoder stage; {3, 4, 6, 3} is the full depth.
  std::array<int, 4> blocks_per_stage{3, 4, 6, 3};

  /// Small variant for float64 full-graph gradient checks and fast tests:
  /// one block per stage, 8 base channels, every layer kind still present.
  static ModelConfig reduced_test();
};

struct ForwardObs {
  std::vector<std::int64_t> bottleneck_shape;
};

/// Segmentation network: residual encoder (stem + four stages of basic
/// blocks), five-block decoder with optional squeeze-excitation gating and
/// 1x1-projected skips, sigmoid head. Channel plan halves per decoder block:
/// bottleneck 8b -> 4b -> 2b -> b -> b/2 -> b/4, where each block runs
/// ReLU -> BN -> (SCSE) -> 2x2 stride-2 transposed conv and concatenates the
/// projected skip; the final block has no skip.
///
/// Parameters are named hierarchically (encoder.stage2.block0.conv1.weight,
/// decoder.block3.up.bias, ...) and each belongs to exactly one layer group:
/// G1 = stem through the 2b-channel stage, G2 = remaining encoder stages,
/// G3 = decoder and head.
template <typename S>
class Model {
 public:
  explicit Model(ModelConfig config);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }

  /// Registration-ordered (parameter, group) pairs; the order also fixes the
  /// initialization draw order.
  const std::vector<std::pair<Parameter<S>*, LayerGroup>>& parameters() {
    return param_refs_;
  }

  bool has_param(const std::string& name) const { return by_name_.count(name) != 0; }
  Parameter<S>& param(const std::string& name);
  const Parameter<S>& param(const std::string& name) const;
  Tensor<S>& buffer(const std::string& name);
  const std::map<std::string, Tensor<S>>& buffers() const { return buffers_; }

  std::int64_t parameter_count() const;
  std::int64_t parameter_count(LayerGroup group) const;
  /// G1 + G2 (the full encoder); 21,284,672 for the default config.
  std::int64_t encoder_parameter_count() const;

  /// Conv weights ~ Normal(0, sqrt(2/fan_in)), biases 0, BN gamma 1 / beta 0,
  /// running stats reset to 0/1. Deterministic for a fixed seed. When the
  /// config carries a pretrained encoder path, encoder tensors are then
  /// overwritten from that checkpoint.
  void he_init(std::uint64_t seed);

  /// Flips the trainable flag of every parameter in the group. Frozen groups
  /// also stop updating their batch-norm running statistics.
  void set_group_trainable(LayerGroup group, bool trainable);
  bool group_trainable(LayerGroup group) const {
    return group_trainable_[static_cast<int>(group)];
  }

  /// Input must be N x input_channels x H x W with H and W divisible by 32.
  /// Train mode normalizes by batch statistics; running stats advance only
  /// when update_running_stats is set and the owning group is unfrozen.
  Var<S> forward(Tape<S>& tape, const Tensor<S>& input, Mode mode,
                 bool update_running_stats = true, ForwardObs* obs = nullptr);

  /// Every parameter and buffer, keyed by name.
  std::map<std::string, Tensor<S>> state_tensors() const;
  /// Strict restore: entries must cover the model's tensors exactly (shape
  /// included); the first mismatched name is reported. Entries under "optim."
  /// are ignored so optimizer-bearing checkpoints load cleanly.
  void load_state(const std::map<std::string, Tensor<S>>& tensors);
  /// Partial restore of "encoder.*" tensors only.
  void load_encoder(const std::map<std::string, Tensor<S>>& tensors);

 private:
  void validate_config() const;
  void build();
  Parameter<S>* add_param(std::string name, std::vector<std::int64_t> shape, LayerGroup group);
  void add_bn(const std::string& prefix, std::int64_t channels, LayerGroup group);

  ModelConfig config_;
  std::vector<std::unique_ptr<Parameter<S>>> params_;
  std::vector<std::pair<Parameter<S>*, LayerGroup>> param_refs_;
  std::map<std::string, std::size_t> by_name_;
  std::map<std::string, Tensor<S>> buffers_;
  std::array<bool, 3> group_trainable_{true, true, true};
};

/// Model-only checkpoint I/O in the CRKSEG01 format (float32 on disk; double
/// models are cast).
template <typename S>
void save_checkpoint(const Model<S>& model, const std::string& path);
template <typename S>
void load_checkpoint(Model<S>& model, const std::string& path);

}  // namespace crackseg
