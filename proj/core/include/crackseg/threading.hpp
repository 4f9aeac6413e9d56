#pragma once

#include <cstdint>
#include <functional>

namespace crackseg {

/// Sets the worker count for parallel_for. Default is 1 (fully sequential),
/// which is also the mode under which bitwise reproducibility is promised.
void set_num_threads(int n);
int num_threads();

/// Runs body(begin, end) over disjoint chunks of [0, n). Each chunk writes
/// disjoint outputs, so results are identical for any thread count; callers
/// must not put order-dependent reductions inside.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace crackseg
