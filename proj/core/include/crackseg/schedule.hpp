#pragma once

#include <array>
#include <cstdint>

#include "crackseg/common.hpp"

namespace crackseg {

/// One-cycle learning-rate curve: linear warm-up from min_frac*lr_max to
/// lr_max at warm_frac of the run, then linear decay to final_frac*lr_max at
/// the last iteration. A single cycle per training run.
struct OneCycleConfig {
  double lr_max = 0.0;
  double min_frac = 0.05;
  double warm_frac = 0.4;
  double final_frac = 0.001;
  std::int64_t total_iterations = 0;
};

/// Learning rate at `iteration` in [0, total_iterations].
double lr_at(std::int64_t iteration, const OneCycleConfig& config);

/// Fixed per-group learning-rate ratios: early encoder 1/9, late encoder 1/3,
/// decoder 1.
struct GroupScale {
  double g1 = 1.0 / 9.0;
  double g2 = 1.0 / 3.0;
  double g3 = 1.0;
  double scale(LayerGroup g) const {
    switch (g) {
      case LayerGroup::g1: return g1;
      case LayerGroup::g2: return g2;
      default: return g3;
    }
  }
};

/// Per-group learning rates, indexable by LayerGroup.
struct GroupLrs {
  std::array<double, 3> lr{};
  double operator[](LayerGroup g) const { return lr[static_cast<int>(g)]; }
  double& operator[](LayerGroup g) { return lr[static_cast<int>(g)]; }
};

/// {G1: base*1/9, G2: base*1/3, G3: base}. Freezing is handled by the
/// trainable flag on parameters, never by zeroing rates here.
GroupLrs group_lrs(double base_lr, const GroupScale& scale = GroupScale{});

}  // namespace crackseg
