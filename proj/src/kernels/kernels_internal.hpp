#pragma once

#include <cmath>

namespace iwc::kernels {

// Neumaier's variant of Kahan summation; robust when an addend exceeds the
// running sum in magnitude.
struct NeumaierSum {
  double sum = 0.0;
  double comp = 0.0;

  void add(double v) {
    const double t = sum + v;
    if (std::fabs(sum) >= std::fabs(v)) {
      comp += (sum - t) + v;
    } else {
      comp += (v - t) + sum;
    }
    sum = t;
  }

  double value() const { return sum + comp; }
};

}  // namespace iwc::kernels
