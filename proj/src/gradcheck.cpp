#include "pros/gradcheck.hpp"

#include <cmath>

namespace pros {

namespace {

double eval_value(const TensorFn& f, const std::vector<GradCheckInput>& inputs) {
    Tape tape;
    std::vector<Tensor> leaves;
    leaves.reserve(inputs.size());
    for (const auto& in : inputs) leaves.push_back(tape.constant(in.shape, in.value));
    Tensor out = f(tape, leaves);
    if (out.size() != 1) throw ShapeError("grad_check: function must return a scalar");
    return out.item();
}

}  // namespace

double grad_check(const TensorFn& f, const std::vector<GradCheckInput>& inputs, double eps) {
    if (eps < 1e-7 || eps > 1e-3) throw NumericError("grad_check: eps out of [1e-7, 1e-3]");

    // analytic pass
    std::vector<std::vector<double>> analytic(inputs.size());
    {
        Tape tape;
        std::vector<Tensor> leaves;
        leaves.reserve(inputs.size());
        for (const auto& in : inputs) leaves.push_back(tape.variable(in.shape, in.value));
        Tensor out = f(tape, leaves);
        if (out.size() != 1) throw ShapeError("grad_check: function must return a scalar");
        tape.backward(out);
        for (size_t i = 0; i < inputs.size(); ++i) {
            if (leaves[i].has_grad()) {
                auto g = leaves[i].grad();
                analytic[i].assign(g.begin(), g.end());
            } else {
                analytic[i].assign(inputs[i].value.size(), 0.0);
            }
        }
    }

    double worst = 0.0;
    std::vector<GradCheckInput> probe = inputs;
    for (size_t i = 0; i < inputs.size(); ++i) {
        for (size_t j = 0; j < inputs[i].value.size(); ++j) {
            const double orig = probe[i].value[j];
            probe[i].value[j] = orig + eps;
            const double fp = eval_value(f, probe);
            probe[i].value[j] = orig - eps;
            const double fm = eval_value(f, probe);
            probe[i].value[j] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[i][j];
            const double rel = std::fabs(a - numeric) / std::max(1.0, std::fabs(a));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

double grad_check(const TensorFn& f, const GradCheckInput& input, double eps) {
    return grad_check(f, std::vector<GradCheckInput>{input}, eps);
}

}  // namespace pros
