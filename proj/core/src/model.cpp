#include "crackseg/model.hpp"

#include <algorithm>
#include <cmath>

#include "crackseg/checkpoint.hpp"
#include "crackseg/errors.hpp"
#include "crackseg/ops.hpp"
#include "crackseg/rng.hpp"

namespace crackseg {

ModelConfig ModelConfig::reduced_test() {
  ModelConfig c;
  c.base_channels = 8;
  c.blocks_per_stage = {1, 1, 1, 1};
  return c;
}

template <typename S>
Model<S>::Model(ModelConfig config) : config_(std::move(config)) {
  validate_config();
  build();
}

template <typename S>
void Model<S>::validate_config() const {
  require<ConfigError>(config_.input_channels >= 1, "model: input_channels must be positive");
  require<ConfigError>(config_.scse_reduction >= 1, "model: scse_reduction must be positive");
  require<ConfigError>(config_.base_channels >= 4 && config_.base_channels % 4 == 0,
                       "model: base_channels must be a positive multiple of 4, got ",
                       config_.base_channels);
  for (int blocks : config_.blocks_per_stage) {
    require<ConfigError>(blocks >= 1, "model: every stage needs at least one block");
  }
}

template <typename S>
Parameter<S>* Model<S>::add_param(std::string name, std::vector<std::int64_t> shape,
                                  LayerGroup group) {
  auto p = std::make_unique<Parameter<S>>();
  p->name = name;
  p->value = Tensor<S>::zeros(std::move(shape));
  p->trainable = true;
  Parameter<S>* raw = p.get();
  require<ContractError>(by_name_.emplace(std::move(name), params_.size()).second,
                         "model: duplicate parameter '", raw->name, "'");
  params_.push_back(std::move(p));
  param_refs_.emplace_back(raw, group);
  return raw;
}

template <typename S>
void Model<S>::add_bn(const std::string& prefix, std::int64_t channels, LayerGroup group) {
  add_param(prefix + ".gamma", {channels}, group);
  add_param(prefix + ".beta", {channels}, group);
  buffers_.emplace(prefix + ".running_mean", Tensor<S>::zeros({channels}));
  buffers_.emplace(prefix + ".running_var", Tensor<S>::ones({channels}));
}

template <typename S>
void Model<S>::build() {
  const std::int64_t b = config_.base_channels;
  const std::array<std::int64_t, 4> stage_ch{b, 2 * b, 4 * b, 8 * b};

  // Encoder stem: 7x7 stride-2 conv (bias-free, BN follows), then the
  // stages downsample via their first block.
  add_param("encoder.stem.conv.weight", {b, config_.input_channels, 7, 7}, LayerGroup::g1);
  add_bn("encoder.stem.bn", b, LayerGroup::g1);

  std::int64_t in_ch = b;
  for (int s = 0; s < 4; ++s) {
    const LayerGroup group = s < 2 ? LayerGroup::g1 : LayerGroup::g2;
    const std::int64_t out_ch = stage_ch[static_cast<std::size_t>(s)];
    for (int blk = 0; blk < config_.blocks_per_stage[static_cast<std::size_t>(s)]; ++blk) {
      const std::string prefix =
          "encoder.stage" + std::to_string(s + 1) + ".block" + std::to_string(blk);
      const std::int64_t block_in = blk == 0 ? in_ch : out_ch;
      add_param(prefix + ".conv1.weight", {out_ch, block_in, 3, 3}, group);
      add_bn(prefix + ".bn1", out_ch, group);
      add_param(prefix + ".conv2.weight", {out_ch, out_ch, 3, 3}, group);
      add_bn(prefix + ".bn2", out_ch, group);
      if (blk == 0 && s > 0) {
        add_param(prefix + ".down.conv.weight", {out_ch, block_in, 1, 1}, group);
        add_bn(prefix + ".down.bn", out_ch, group);
      }
    }
    in_ch = out_ch;
  }

  // Decoder: block k maps in -> in/2 (transposed conv to in/4, projected
  // skip supplies the other in/4; the last block has no skip).
  const std::array<std::int64_t, 5> dec_in{8 * b, 4 * b, 2 * b, b, b / 2};
  const std::array<std::int64_t, 5> up_out{2 * b, b, b / 2, b / 4, b / 4};
  const std::array<std::int64_t, 4> skip_ch{4 * b, 2 * b, b, b};
  for (int k = 0; k < 5; ++k) {
    const std::string prefix = "decoder.block" + std::to_string(k + 1);
    const std::int64_t cin = dec_in[static_cast<std::size_t>(k)];
    const std::int64_t cout = up_out[static_cast<std::size_t>(k)];
    add_bn(prefix + ".bn", cin, LayerGroup::g3);
    if (config_.use_scse) {
      const std::int64_t hidden =
          std::max<std::int64_t>(1, cin / config_.scse_reduction);
      add_param(prefix + ".scse.fc1.weight", {hidden, cin, 1, 1}, LayerGroup::g3);
      add_param(prefix + ".scse.fc1.bias", {hidden}, LayerGroup::g3);
      add_param(prefix + ".scse.fc2.weight", {cin, hidden, 1, 1}, LayerGroup::g3);
      add_param(prefix + ".scse.fc2.bias", {cin}, LayerGroup::g3);
      add_param(prefix + ".scse.spatial.weight", {1, cin, 1, 1}, LayerGroup::g3);
      add_param(prefix + ".scse.spatial.bias", {1}, LayerGroup::g3);
    }
    add_param(prefix + ".up.weight", {cin, cout, 2, 2}, LayerGroup::g3);
    add_param(prefix + ".up.bias", {cout}, LayerGroup::g3);
    if (k < 4) {
      add_param(prefix + ".skip.weight", {cout, skip_ch[static_cast<std::size_t>(k)], 1, 1},
                LayerGroup::g3);
      add_param(prefix + ".skip.bias", {cout}, LayerGroup::g3);
    }
  }

  add_param("head.conv.weight", {1, b / 4, 1, 1}, LayerGroup::g3);
  add_param("head.conv.bias", {1}, LayerGroup::g3);
}

template <typename S>
Parameter<S>& Model<S>::param(const std::string& name) {
  const auto it = by_name_.find(name);
  require<ContractError>(it != by_name_.end(), "model: no parameter named '", name, "'");
  return *params_[it->second];
}

template <typename S>
const Parameter<S>& Model<S>::param(const std::string& name) const {
  const auto it = by_name_.find(name);
  require<ContractError>(it != by_name_.end(), "model: no parameter named '", name, "'");
  return *params_[it->second];
}

template <typename S>
Tensor<S>& Model<S>::buffer(const std::string& name) {
  const auto it = buffers_.find(name);
  require<ContractError>(it != buffers_.end(), "model: no buffer named '", name, "'");
  return it->second;
}

template <typename S>
std::int64_t Model<S>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) {
    n += p->value.numel();
  }
  return n;
}

template <typename S>
std::int64_t Model<S>::parameter_count(LayerGroup group) const {
  std::int64_t n = 0;
  for (const auto& [p, g] : param_refs_) {
    if (g == group) {
      n += p->value.numel();
    }
  }
  return n;
}

template <typename S>
std::int64_t Model<S>::encoder_parameter_count() const {
  return parameter_count(LayerGroup::g1) + parameter_count(LayerGroup::g2);
}

template <typename S>
void Model<S>::he_init(std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& [p, group] : param_refs_) {
    (void)group;
    const std::string& name = p->name;
    Tensor<S>& v = p->value;
    if (name.ends_with(".gamma")) {
      v.fill(S(1));
    } else if (name.ends_with(".beta") || name.ends_with(".bias")) {
      v.fill(S(0));
    } else {
      // Transposed-conv weights are laid out IxOxKhxKw; everything else
      // (conv OxIxKhxKw, 1x1 convs) has fan_in = numel / dim0.
      const std::int64_t fan_in = name.ends_with(".up.weight")
                                      ? v.dim(0) * v.dim(2) * v.dim(3)
                                      : v.numel() / v.dim(0);
      const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (std::int64_t i = 0; i < v.numel(); ++i) {
        v[i] = static_cast<S>(rng.normal() * stddev);
      }
    }
    p->zero_grad();
  }
  for (auto& [name, buf] : buffers_) {
    buf.fill(name.ends_with(".running_var") ? S(1) : S(0));
  }
  if (config_.pretrained_encoder_path) {
    const TensorMap raw = read_checkpoint(*config_.pretrained_encoder_path);
    std::map<std::string, Tensor<S>> cast;
    for (const auto& [name, tensor] : raw) {
      cast.emplace(name, tensor.template cast<S>());
    }
    load_encoder(cast);
  }
}

template <typename S>
void Model<S>::set_group_trainable(LayerGroup group, bool trainable) {
  for (const auto& [p, g] : param_refs_) {
    if (g == group) {
      p->trainable = trainable;
    }
  }
  group_trainable_[static_cast<int>(group)] = trainable;
}

template <typename S>
Var<S> Model<S>::forward(Tape<S>& tape, const Tensor<S>& input, Mode mode,
                         bool update_running_stats, ForwardObs* obs) {
  require<DimensionError>(input.rank() == 4 && input.dim(1) == config_.input_channels,
                          "forward: input must be Nx", config_.input_channels,
                          "xHxW, got ", input.shape_str());
  require<DimensionError>(input.dim(2) % 32 == 0 && input.dim(3) % 32 == 0,
                          "forward: spatial size must be divisible by 32, got ",
                          input.shape_str());
  require<ContractError>(input.all_finite(), "forward: input contains non-finite values");
  const bool training = mode == Mode::train;

  auto conv = [&](Var<S> x, const std::string& prefix, int stride, int pad, bool bias) {
    Var<S> w = tape.parameter(param(prefix + ".weight"));
    std::optional<Var<S>> bv;
    if (bias) {
      bv = tape.parameter(param(prefix + ".bias"));
    }
    return conv2d(x, w, bv, stride, pad);
  };
  auto bn = [&](Var<S> x, const std::string& prefix, LayerGroup group) {
    Var<S> gamma = tape.parameter(param(prefix + ".gamma"));
    Var<S> beta = tape.parameter(param(prefix + ".beta"));
    const bool update =
        training && update_running_stats && group_trainable_[static_cast<int>(group)];
    return batch_norm(x, gamma, beta, buffer(prefix + ".running_mean"),
                      buffer(prefix + ".running_var"), training, S(0.1), S(1e-5), update);
  };
  auto basic_block = [&](Var<S> x, const std::string& prefix, bool downsample,
                         LayerGroup group) {
    Var<S> h = conv(x, prefix + ".conv1", downsample ? 2 : 1, 1, false);
    h = relu(bn(h, prefix + ".bn1", group));
    h = conv(h, prefix + ".conv2", 1, 1, false);
    h = bn(h, prefix + ".bn2", group);
    Var<S> shortcut = x;
    if (downsample) {
      shortcut = bn(conv(x, prefix + ".down.conv", 2, 0, false), prefix + ".down.bn", group);
    }
    return relu(add(h, shortcut));
  };
  auto scse = [&](Var<S> x, const std::string& prefix) {
    Var<S> pooled = global_avg_pool(x);
    Var<S> squeezed = relu(conv(pooled, prefix + ".fc1", 1, 0, true));
    Var<S> channel_gate = sigmoid(conv(squeezed, prefix + ".fc2", 1, 0, true));
    Var<S> spatial_gate = sigmoid(conv(x, prefix + ".spatial", 1, 0, true));
    return add(mul(x, channel_gate), mul(x, spatial_gate));
  };
  auto upsample = [&](Var<S> x, const std::string& prefix) {
    Var<S> w = tape.parameter(param(prefix + ".weight"));
    Var<S> b = tape.parameter(param(prefix + ".bias"));
    return conv_transpose2d(x, w, std::optional<Var<S>>(b));
  };
  auto decoder_block = [&](Var<S> x, int k, std::optional<Var<S>> skip) {
    const std::string prefix = "decoder.block" + std::to_string(k);
    Var<S> h = relu(x);
    h = bn(h, prefix + ".bn", LayerGroup::g3);
    if (config_.use_scse) {
      h = scse(h, prefix + ".scse");
    }
    h = upsample(h, prefix + ".up");
    if (skip) {
      Var<S> proj = conv(*skip, prefix + ".skip", 1, 0, true);
      h = concat_channels(h, proj);
    }
    return h;
  };

  Var<S> x = tape.leaf(input, false);
  x = conv(x, "encoder.stem.conv", 2, 3, false);
  x = relu(bn(x, "encoder.stem.bn", LayerGroup::g1));
  Var<S> skip_stem = x;
  x = max_pool2d(x, 3, 2, 1);

  std::array<Var<S>, 4> stage_out{x, x, x, x};
  for (int s = 0; s < 4; ++s) {
    const LayerGroup group = s < 2 ? LayerGroup::g1 : LayerGroup::g2;
    for (int blk = 0; blk < config_.blocks_per_stage[static_cast<std::size_t>(s)]; ++blk) {
      const std::string prefix =
          "encoder.stage" + std::to_string(s + 1) + ".block" + std::to_string(blk);
      x = basic_block(x, prefix, blk == 0 && s > 0, group);
    }
    stage_out[static_cast<std::size_t>(s)] = x;
  }
  if (obs != nullptr) {
    obs->bottleneck_shape = tape.value(x).shape();
  }

  x = decoder_block(x, 1, stage_out[2]);
  x = decoder_block(x, 2, stage_out[1]);
  x = decoder_block(x, 3, stage_out[0]);
  x = decoder_block(x, 4, skip_stem);
  x = decoder_block(x, 5, std::nullopt);
  return sigmoid(conv(x, "head.conv", 1, 0, true));
}

template <typename S>
std::map<std::string, Tensor<S>> Model<S>::state_tensors() const {
  std::map<std::string, Tensor<S>> out;
  for (const auto& p : params_) {
    out.emplace(p->name, p->value);
  }
  for (const auto& [name, buf] : buffers_) {
    out.emplace(name, buf);
  }
  return out;
}

template <typename S>
void Model<S>::load_state(const std::map<std::string, Tensor<S>>& tensors) {
  // Validate everything before mutating anything.
  std::map<std::string, Tensor<S>*> dest;
  for (const auto& p : params_) {
    dest.emplace(p->name, &p->value);
  }
  for (auto& [name, buf] : buffers_) {
    dest.emplace(name, &buf);
  }
  for (const auto& [name, target] : dest) {
    const auto it = tensors.find(name);
    require<CheckpointError>(it != tensors.end(), "checkpoint is missing tensor '", name, "'");
    require<CheckpointError>(it->second.same_shape(*target), "tensor '", name, "' has shape ",
                             it->second.shape_str(), ", expected ", target->shape_str());
  }
  for (const auto& [name, tensor] : tensors) {
    require<CheckpointError>(dest.count(name) != 0 || name.rfind("optim.", 0) == 0,
                             "checkpoint has unexpected tensor '", name, "'");
  }
  for (const auto& [name, target] : dest) {
    *target = tensors.at(name);
  }
}

template <typename S>
void Model<S>::load_encoder(const std::map<std::string, Tensor<S>>& tensors) {
  std::map<std::string, Tensor<S>*> dest;
  for (const auto& p : params_) {
    if (p->name.rfind("encoder.", 0) == 0) {
      dest.emplace(p->name, &p->value);
    }
  }
  for (auto& [name, buf] : buffers_) {
    if (name.rfind("encoder.", 0) == 0) {
      dest.emplace(name, &buf);
    }
  }
  for (const auto& [name, target] : dest) {
    const auto it = tensors.find(name);
    require<CheckpointError>(it != tensors.end(), "encoder checkpoint is missing tensor '", name,
                             "'");
    require<CheckpointError>(it->second.same_shape(*target), "tensor '", name, "' has shape ",
                             it->second.shape_str(), ", expected ", target->shape_str());
  }
  for (const auto& [name, target] : dest) {
    *target = tensors.at(name);
  }
}

template <typename S>
void save_checkpoint(const Model<S>& model, const std::string& path) {
  TensorMap out;
  for (const auto& [name, tensor] : model.state_tensors()) {
    out.emplace(name, tensor.template cast<float>());
  }
  write_checkpoint(path, out);
}

template <typename S>
void load_checkpoint(Model<S>& model, const std::string& path) {
  std::map<std::string, Tensor<S>> cast;
  for (const auto& [name, tensor] : read_checkpoint(path)) {
    cast.emplace(name, tensor.template cast<S>());
  }
  model.load_state(cast);
}

template class Model<float>;
template class Model<double>;
template void save_checkpoint<float>(const Model<float>&, const std::string&);
template void save_checkpoint<double>(const Model<double>&, const std::string&);
template void load_checkpoint<float>(Model<float>&, const std::string&);
template void load_checkpoint<double>(Model<double>&, const std::string&);

}  // namespace crackseg
