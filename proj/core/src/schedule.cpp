#include "crackseg/schedule.hpp"

#include <cmath>

#include "crackseg/errors.hpp"

namespace crackseg {

double lr_at(std::int64_t iteration, const OneCycleConfig& config) {
  require<ContractError>(config.total_iterations > 0, "lr_at: total_iterations must be positive");
  require<ContractError>(iteration >= 0 && iteration <= config.total_iterations,
                         "lr_at: iteration ", iteration, " outside [0, ",
                         config.total_iterations, "]");
  const double lr_min = config.min_frac * config.lr_max;
  const double lr_final = config.final_frac * config.lr_max;
  const std::int64_t warm =
      std::llround(config.warm_frac * static_cast<double>(config.total_iterations));
  if (iteration == 0 && warm > 0) {
    return lr_min;
  }
  if (iteration == warm) {
    return config.lr_max;
  }
  if (iteration == config.total_iterations) {
    return lr_final;
  }
  if (iteration < warm) {
    const double f = static_cast<double>(iteration) / static_cast<double>(warm);
    return lr_min + (config.lr_max - lr_min) * f;
  }
  const double f = static_cast<double>(iteration - warm) /
                   static_cast<double>(config.total_iterations - warm);
  return config.lr_max + (lr_final - config.lr_max) * f;
}

GroupLrs group_lrs(double base_lr, const GroupScale& scale) {
  require<ContractError>(base_lr >= 0.0, "group_lrs: base_lr must be non-negative");
  GroupLrs out;
  out[LayerGroup::g1] = base_lr * scale.g1;
  out[LayerGroup::g2] = base_lr * scale.g2;
  out[LayerGroup::g3] = base_lr * scale.g3;
  return out;
}

}  // namespace crackseg
