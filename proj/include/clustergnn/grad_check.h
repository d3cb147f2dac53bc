#ifndef CLUSTERGNN_GRAD_CHECK_H_
#define CLUSTERGNN_GRAD_CHECK_H_

#include <functional>
#include <span>

namespace clustergnn {

using ScalarFunction = std::function<double(std::span<const double>)>;

// Compares an analytic gradient against central differences with step h.
// Returns max_i |fd_i - analytic_i| / max(|analytic_i|, 1e-8).
double grad_check(const ScalarFunction& f, std::span<const double> x,
                  std::span<const double> analytic, double h);

}  // namespace clustergnn

#endif  // CLUSTERGNN_GRAD_CHECK_H_
