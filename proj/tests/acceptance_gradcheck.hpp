#pragma once

// Boundary between the single-precision acceptance driver and the 64-bit
// gradient checks. Only standard types cross it.

#include <string>
#include <vector>

namespace acceptance {

struct GradcheckLine {
  std::string name;
  double max_relative_error = 0.0;
  std::string worst;  // parameter[index] with analytic / numeric values
  std::size_t coordinates = 0;
};

struct GradcheckRun {
  std::vector<GradcheckLine> primitives;
  std::vector<GradcheckLine> end_to_end;  // student forward + EDAM-S-down
  std::vector<GradcheckLine> informational;  // reported, not part of the verdict
  double seconds = 0.0;                       // primitives plus end_to_end only
};

GradcheckRun run_gradchecks();

}  // namespace acceptance
