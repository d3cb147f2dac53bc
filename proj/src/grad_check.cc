#include "clustergnn/grad_check.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "clustergnn/matrix.h"

namespace clustergnn {

double grad_check(const ScalarFunction& f, std::span<const double> x,
                  std::span<const double> analytic, double h) {
  if (!(h > 0.0)) throw NumericError("grad_check: step must be positive");
  if (analytic.size() != x.size()) {
    throw NumericError("grad_check: gradient length mismatch");
  }
  std::vector<double> probe(x.begin(), x.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("grad_check: non-finite evaluation at coordinate " +
                         std::to_string(i));
    }
    const double fd = (up - down) / (2.0 * h);
    const double err =
        std::abs(fd - analytic[i]) / std::max(std::abs(analytic[i]), 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace clustergnn
