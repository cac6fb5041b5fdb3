#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pros/tensor.hpp"

namespace pros {

// Scalar-valued function of one or more tensor inputs, rebuilt on a fresh
// tape for every evaluation.
using TensorFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

struct GradCheckInput {
    Shape shape;
    std::vector<double> value;
};

// Max over all coordinates of |analytic - central difference| /
// max(1, |analytic|). The central-difference path never reads the analytic
// gradients, so it stays an independent oracle for the backward rules.
double grad_check(const TensorFn& f, const std::vector<GradCheckInput>& inputs, double eps);

double grad_check(const TensorFn& f, const GradCheckInput& input, double eps);

struct GradCheckCase {
    std::string op;
    double worst_rel_err;
};

// Finite-difference sweep over every differentiable primitive, 10 random
// points per op. scope: "primitives", "loss", or "all".
std::vector<GradCheckCase> gradcheck_suite(const std::string& scope, uint64_t seed);

constexpr double kGradCheckEps = 1e-5;
constexpr double kGradCheckTol = 1e-4;

}  // namespace pros
