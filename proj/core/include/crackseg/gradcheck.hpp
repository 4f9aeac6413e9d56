#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "crackseg/ops.hpp"
#include "crackseg/tape.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

/// Builds a scalar loss on the tape from one leaf variable per input tensor.
using GradCheckFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Central-difference gradient check in float64. Runs the closure once with
/// backward to collect analytic gradients, then perturbs every input element
/// by +/- fd_step. Returns the max over elements of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
double grad_check(const GradCheckFn& fn, std::vector<Tensor<double>> inputs,
                  double fd_step = 1e-5);

struct OpCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  int instances = 0;
};

/// Gradient checks for every differentiable tape op, at least 20 randomized
/// instances per op kind. Deterministic for a fixed seed.
std::vector<OpCheckResult> builtin_op_checks(std::uint64_t seed = 107);

struct ModelCheckResult {
  double max_rel_error = 0.0;
  std::int64_t checked_elements = 0;
};

/// Full-graph check on the reduced test model in float64: forward + dice loss,
/// analytic parameter gradients vs central differences on a deterministic
/// sample of elements from every parameter tensor.
ModelCheckResult model_grad_check(int elements_per_param = 2, double fd_step = 1e-5,
                                  std::uint64_t seed = 211);

}  // namespace crackseg
