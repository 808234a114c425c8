#include "mmkd/gradcheck.hpp"

#include <cmath>
#include <vector>

namespace mmkd {
inline namespace MMKD_ABI {

GradCheckReport finite_diff_check(const std::function<Tensor()>& f, const ParamList& params,
                                  double eps) {
  zero_grads(params);
  const GradientMap analytic = backward(f(), params);

  GradCheckReport report;
  NoGradGuard no_grad;
  for (const auto& [name, param] : params) {
    Tensor p = param;
    auto values = p.mutable_data();
    const auto grad = analytic.at(name).data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Real saved = values[i];
      values[i] = static_cast<Real>(saved + eps);
      const double up = f().item();
      values[i] = static_cast<Real>(saved - eps);
      const double down = f().item();
      values[i] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double a = grad[i];
      const double err = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      ++report.coordinates;
      if (err > report.max_relative_error || report.coordinates == 1) {
        report.max_relative_error = err;
        report.worst_parameter = name;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  zero_grads(params);
  return report;
}

}  // namespace MMKD_ABI
}  // namespace mmkd
