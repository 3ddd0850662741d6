#pragma once

// Finite-difference verification battery over every operator and the
// composed depth-1 U-Net loss, in 32-bit and 64-bit arithmetic.

#include <string>
#include <vector>

namespace cloudmask {

struct GradCheckCase {
  std::string name;
  int bits = 32;
  double eps = 0.0;
  double tolerance = 0.0;
  double worst = 0.0;  // max relative error over all seeds and scalars
  long long checked = 0;
  long long skipped = 0;  // probes straddling a kink, excluded from `worst`
  bool pass = false;
};

std::vector<GradCheckCase> run_gradcheck_battery(int seed_count = 10);

}  // namespace cloudmask
