#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "medcode/nn.hpp"

namespace medcode::testsupport {

// Central-difference check of analytic gradients. `loss` must rebuild the
// graph from the current parameter values and return the scalar loss;
// `backward` must run one forward+backward pass leaving gradients in the
// params. Returns the worst relative error seen.
inline double max_gradient_error(const std::vector<nn::Param*>& params,
                                 const std::function<double()>& loss,
                                 const std::function<void()>& backward, double h = 1e-5) {
  for (nn::Param* p : params) p->zero_grad();
  backward();
  std::vector<nn::Mat> analytic;
  for (nn::Param* p : params) analytic.push_back(p->grad);

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    nn::Param* p = params[pi];
    for (size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.a[i];
      p->value.a[i] = saved + h;
      const double up = loss();
      p->value.a[i] = saved - h;
      const double down = loss();
      p->value.a[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double ga = analytic[pi].a[i];
      // The 1e-4 denominator floor absorbs central-difference roundoff
      // (about eps*|loss|/h, ~1e-9 here) on near-zero entries; real
      // gradient bugs of any consequence still register as large errors.
      const double rel =
          std::fabs(ga - numeric) / std::max({std::fabs(ga), std::fabs(numeric), 1e-4});
      worst = std::max(worst, rel);
    }
    p->zero_grad();
  }
  return worst;
}

}  // namespace medcode::testsupport
