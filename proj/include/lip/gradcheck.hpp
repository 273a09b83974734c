#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lip/tape.hpp"

namespace lip {

// Central-difference comparison of reverse-mode gradients against a forward-
// only evaluation of the same graph. `build` must be deterministic.
using GraphBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

struct FdOptions {
  double step_scale = 1e-6;  // h = step_scale * max(1, |x|)
  double floor = 1e-3;       // denominator floor of the error ratio; 1e-3 makes
                             // a 1e-5 bound act as an absolute floor of 1e-8
                             // for small gradients
  std::size_t max_elements_per_input = SIZE_MAX;
  bool corrupt = false;      // test hook: perturb one analytic gradient
};

// Maximum elementwise relative error over all inputs' gradients.
double gradcheck_max_rel(const GraphBuilder& build, const std::vector<Tensor>& inputs,
                         const FdOptions& opts = {});

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

struct GradCheckOptions {
  std::uint64_t seed = 1;
  std::size_t size = 6;     // base spatial extent for primitive inputs
  double tol = 1e-5;        // primitives and losses
  double net_tol = 1e-4;    // sampled network parameters
  bool corrupt = false;     // deliberately break the first case
};

// Finite-difference suite over every primitive, the four losses, and a tiny
// two-level network.
std::vector<GradCheckCase> run_gradcheck(const GradCheckOptions& options);

bool all_pass(const std::vector<GradCheckCase>& cases);

}  // namespace lip
