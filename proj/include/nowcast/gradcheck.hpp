#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "nowcast/tensor.hpp"

namespace nowcast {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = false;
};

// One scalar entry of a tensor to probe.
struct GradProbe {
  Tensor<double> tensor;
  std::size_t index;
};

// Relative error |a - n| / max(|a|, |n|, floor). Gradients below `floor`
// are compared on an absolute scale, where central-difference rounding
// noise (~1e-10 for O(10) losses at h=1e-4) would otherwise dominate.
inline constexpr double kGradientFloor = 1e-5;
double gradient_relative_error(double analytic, double numeric, double floor = kGradientFloor);

// Compares the reverse-mode gradient of the scalar function `f` at every
// entry of `x` against central differences with step `h`. `f` must build
// its result from `x` using differentiable operations; it is called once
// under a tape for the analytic gradient and 2*numel(x) times without one.
GradCheckReport finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                  Tensor<double> x, double tol, double h = 1e-4);

// Same as above, for an arbitrary scalar loss closure and a list of probed
// entries inside tensors the closure reads (e.g. model parameters).
GradCheckReport finite_diff_check(const std::function<Tensor<double>()>& loss,
                                  const std::vector<GradProbe>& probes, double tol, double h = 1e-4);

}  // namespace nowcast
