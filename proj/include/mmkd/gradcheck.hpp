#pragma once

#include <functional>
#include <string>

#include "mmkd/tensor.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences for every coordinate of `params`. The error for one coordinate
/// is |analytic - numeric| / (|analytic| + |numeric| + 1e-12); the report
/// carries the maximum. Only meaningful in the 64-bit build.
GradCheckReport finite_diff_check(const std::function<Tensor()>& f, const ParamList& params,
                                  double eps);

}  // namespace MMKD_ABI
}  // namespace mmkd
