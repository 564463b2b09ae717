#pragma once

// Central finite differences, used as the independent gradient oracle.

#include <cmath>
#include <functional>

#include "logos/tensor.hpp"

namespace logos::testing {

// Max over every element of `x` of |analytic - numeric| / max(1, |analytic|).
inline double max_fd_error(Array& x, const Array& analytic, const std::function<double()>& f, double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace logos::testing
