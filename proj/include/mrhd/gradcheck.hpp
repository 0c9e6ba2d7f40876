#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mrhd/tensor.hpp"

namespace mrhd {

// Worst-case deviation between an analytic and a numeric gradient, scaled by
// the larger of the two gradients' max-norms (floored at 1e-8).
double gradient_relative_error(std::span<const double> analytic, std::span<const double> numeric);

// Central-difference estimate of d loss / d input for every entry of input.
// `loss` must rebuild its graph from the current values of its leaves.
std::vector<double> numeric_gradient(const std::function<Tensor()>& loss, Tensor input,
                                     double step = 1e-5);

// Runs backward once on loss() and compares the inputs' gradients with their
// central-difference estimates, all inputs scaled together.
double check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                       double step = 1e-5);

struct GradcheckEntry {
  std::string name;
  double worst = 0.0;
  double tolerance = 0.0;
  std::size_t trials = 0;
  std::size_t retries = 0;  // trials re-checked with a 10x finer step
  bool passed() const { return worst < tolerance; }
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool passed() const;
};

// Every differentiable kernel and model block over `trials` seeds, plus the
// end-to-end model loss over `end_to_end_trials` seeds.
GradcheckReport run_gradcheck_suite(std::uint64_t seed, std::size_t trials = 100,
                                    std::size_t end_to_end_trials = 5);

}  // namespace mrhd
