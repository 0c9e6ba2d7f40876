#include "mrhd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mrhd/error.hpp"

namespace mrhd {

double gradient_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw DimensionError("gradient size mismatch");
  double diff = 0.0, scale = 1e-8;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::fabs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::fabs(analytic[i]), std::fabs(numeric[i])});
  }
  return diff / scale;
}

std::vector<double> numeric_gradient(const std::function<Tensor()>& loss, Tensor input,
                                     double step) {
  auto values = input.mutable_data();
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double up = loss().item();
    values[i] = saved - step;
    const double down = loss().item();
    values[i] = saved;
    out[i] = (up - down) / (2.0 * step);
  }
  return out;
}

double check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                       double step) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  loss().backward();
  // One scale for the whole check: parameters whose true gradient is
  // structurally zero (e.g. a key bias under softmax) are measured against
  // the loss's overall sensitivity instead of their own finite-difference noise.
  std::vector<double> analytic, numeric;
  for (auto& t : inputs) {
    const std::vector<double> a = t.grad();
    const std::vector<double> n = numeric_gradient(loss, t, step);
    analytic.insert(analytic.end(), a.begin(), a.end());
    numeric.insert(numeric.end(), n.begin(), n.end());
  }
  return gradient_relative_error(analytic, numeric);
}

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(),
                     [](const GradcheckEntry& e) { return e.passed(); });
}

}  // namespace mrhd
