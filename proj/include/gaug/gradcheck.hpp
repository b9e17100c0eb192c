#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "gaug/tensor.hpp"

namespace gaug {

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Compares the tape gradient of scalar-valued `f` at `point` against central
/// differences with the given step. Returns
///   max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
inline double grad_check(const ScalarFn& f, const Tensor& point, double step) {
  if (!(step > 0)) throw ParameterError("grad_check: step must be > 0");
  Tape tape;
  const Tensor x = tape.watch(point);
  const Tensor y = f(x);
  const Tensor analytic = tape.backward(y).of(x);

  std::vector<double> probe = point.to_vector();
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = f(Tensor(point.shape(), probe)).item();
    probe[i] = saved - step;
    const double down = f(Tensor(point.shape(), probe)).item();
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace gaug
