#pragma once

#include <string>

namespace aldmn {

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::string worst;         // "tensor[i]" of the largest deviation
  size_t coords_checked = 0;
  double seconds = 0.0;
  bool ok(double tol = 1e-4) const { return max_rel_err < tol; }
};

// Compares every analytic gradient of the classification loss, parameter
// tensors and embedded inputs alike, against central finite differences on a
// small fixed model (width 8, vocabulary 20, 3 classes, two pyramid layers,
// two memory passes, batch of 4). Relative error uses max(1, |reference|)
// as the denominator.
GradcheckReport run_gradcheck(double fd_step = 1e-5);

}  // namespace aldmn
