#pragma once

#include <functional>
#include <string>
#include <vector>

#include "reg/tensor.hpp"

namespace reg {

struct GradCheckResult {
    std::string name;
    std::vector<float> max_rel_err_per_input;
    float max_rel_err = 0.0f;
    bool pass = true;
};

// Rebuilds the graph from the given leaves and returns a scalar loss.
using LossFn = std::function<Tensor(std::vector<Tensor>&)>;

// Central differences (f(x+h)-f(x-h))/2h against the analytic gradient,
// elementwise relative error |a-n|/(|a|+|n|+1e-8). Reports, never throws on
// mismatch.
GradCheckResult grad_check(const std::string& name, const LossFn& fn, std::vector<Tensor> inputs,
                           float tol = 1e-3f, float h = 1e-3f);

// The standard finite-difference suite over every differentiable op plus the
// composed registration objective; `reps` seeded cases per op.
std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed, float tol = 1e-3f, int reps = 5);

}  // namespace reg
