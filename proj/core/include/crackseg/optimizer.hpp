#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "crackseg/common.hpp"
#include "crackseg/schedule.hpp"
#include "crackseg/tape.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  /// false: decoupled decay applied as theta <- (1-lambda)*theta - lr*update,
  /// the form used throughout this project. true: reference behavior where
  /// the decay term is scaled by the learning rate.
  bool decay_scaled_by_lr = false;
};

/// AdamW with a global step counter and per-parameter first/second moment
/// estimates keyed by parameter name, so freezing and unfreezing groups never
/// misaligns state. Frozen parameters are skipped entirely: value and moments
/// stay untouched while t still advances once per step call.
template <typename S>
class AdamW {
 public:
  explicit AdamW(AdamWHyper hyper = AdamWHyper{});

  /// One update. Learning rate per parameter comes from its layer group.
  /// Trainable parameters must have populated gradients.
  void step(const std::vector<std::pair<Parameter<S>*, LayerGroup>>& params,
            const GroupLrs& lrs);

  /// Zeroes the grad buffer of every trainable parameter; non-trainable
  /// parameters are left untouched.
  static void zero_grads(const std::vector<std::pair<Parameter<S>*, LayerGroup>>& params);

  std::int64_t t() const { return t_; }
  const AdamWHyper& hyper() const { return hyper_; }

  /// Flat serialization: "optim.<param>.m", "optim.<param>.v" per tracked
  /// parameter plus a scalar "optim.t".
  std::map<std::string, Tensor<S>> export_state() const;

  /// Restores moments and step counter from export_state entries. Bias
  /// correction terms are rebuilt by repeated multiplication so a resumed run
  /// continues bitwise identically.
  void import_state(const std::map<std::string, Tensor<S>>& entries);

 private:
  struct Moments {
    Tensor<S> m;
    Tensor<S> v;
  };

  AdamWHyper hyper_;
  std::int64_t t_ = 0;
  double beta1_pow_ = 1.0;  // beta1^t, advanced multiplicatively
  double beta2_pow_ = 1.0;
  std::map<std::string, Moments> state_;
};

}  // namespace crackseg
