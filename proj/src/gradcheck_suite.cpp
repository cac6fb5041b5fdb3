#include <cmath>

#include "pros/gradcheck.hpp"
#include "pros/rng.hpp"

namespace pros {

namespace {

GradCheckInput random_input(Shape shape, Rng& rng, double lo = -1.5, double hi = 1.5) {
    std::vector<double> v(static_cast<size_t>(numel(shape)));
    for (double& x : v) x = rng.uniform(lo, hi);
    return {std::move(shape), std::move(v)};
}

// Weighting drawn once per point and frozen, so repeated evaluations during
// the central-difference sweep see the same scalar function.
std::vector<double> draw_weights(int64_t n, Rng& rng) {
    std::vector<double> w(static_cast<size_t>(n));
    for (double& x : w) x = rng.uniform(-1.0, 1.0);
    return w;
}

Tensor weigh(Tape& tape, const Tensor& y, const std::vector<double>& w) {
    return dot(y, tape.constant(y.shape(), w));
}

struct OpCase {
    std::string name;
    std::function<double(Rng&)> run;  // one random point -> rel err
};

std::vector<OpCase> primitive_cases() {
    std::vector<OpCase> cases;

    cases.push_back({"add", [](Rng& rng) {
                         auto a = random_input({3, 4}, rng);
                         auto b = random_input({4}, rng);
                         auto w = draw_weights(12, rng);
                         return grad_check(
                             [&](Tape& t, const std::vector<Tensor>& in) {
                                 return weigh(t, add(in[0], in[1]), w);
                             },
                             {a, b}, kGradCheckEps);
                     }});
    cases.push_back({"sub", [](Rng& rng) {
                         auto a = random_input({3, 4}, rng);
                         auto b = random_input({4}, rng);
                         auto w = draw_weights(12, rng);
                         return grad_check(
                             [&](Tape& t, const std::vector<Tensor>& in) {
                                 return weigh(t, sub(in[0], in[1]), w);
                             },
                             {a, b}, kGradCheckEps);
                     }});
    cases.push_back({"mul", [](Rng& rng) {
                         auto a = random_input({2, 5}, rng);
                         auto b = random_input({2, 5}, rng);
                         auto w = draw_weights(10, rng);
                         return grad_check(
                             [&](Tape& t, const std::vector<Tensor>& in) {
                                 return weigh(t, mul(in[0], in[1]), w);
                             },
                             {a, b}, kGradCheckEps);
                     }});
    cases.push_back({"scale", [](Rng& rng) {
                         auto a = random_input({7}, rng);
                         const double s = rng.uniform(-2.0, 2.0);
                         auto w = draw_weights(7, rng);
                         return grad_check(
                             [&](Tape& t, const std::vector<Tensor>& in) {
                                 return weigh(t, scale(in[0], s), w);
                             },
                             {a}, kGradCheckEps);
                     }});
    cases.push_back({"matmul", [](Rng& rng) {
                         auto a = random_input({3, 4}, rng);
                         auto b = random_input({4, 5}, rng);
                         auto w = draw_weights(15, rng);
                         return grad_check(
                             [&](Tape& t, const std::vector<Tensor>& in) {
                                 return weigh(t, matmul(in[0], in[1]), w);
                             },
                             {a, b}, kGradCheckEps);
                     }});
    cases.push_back({"transpose", [](Rng& rng) {
                         auto a = random_input({3, 4}, rng);
                         auto w = draw_weights(12, rng);
                         return grad_check(
                             [&](Tape& t, const std::vector<Tensor>& in) {
                                 return weigh(t, transpose(in[0]), w);
                             },
                             {a}, kGradCheckEps);
                     }});
    cases.push_back({"gelu", [](Rng& rng) {
                         auto a = random_input({9}, rng, -3.0, 3.0);
                         auto w = draw_weights(9, rng);
                         return grad_check(
                             [&](Tape& t, const std::vector<Tensor>& in) {
                                 return weigh(t, gelu(in[0]), w);
                             },
                             {a}, kGradCheckEps);
                     }});
    cases.push_back({"log", [](Rng& rng) {
                         auto a = random_input({6}, rng, 0.05, 2.0);
                         auto w = draw_weights(6, rng);
                         return grad_check(
                             [&](Tape& t, const std::vector<Tensor>& in) {
                                 return weigh(t, log_clamped(in[0]), w);
                             },
                             {a}, kGradCheckEps);
                     }});
    cases.push_back({"softmax", [](Rng& rng) {
                         auto a = random_input({2, 6}, rng, -2.0, 2.0);
                         const double tau = rng.uniform(0.1, 1.0);
                         auto w = draw_weights(12, rng);
                         return grad_check(
                             [&](Tape& t, const std::vector<Tensor>& in) {
                                 return weigh(t, softmax(in[0], tau), w);
                             },
                             {a}, kGradCheckEps);
                     }});
    cases.push_back({"l2_normalize", [](Rng& rng) {
                         auto a = random_input({8}, rng, 0.5, 2.0);
                         auto w = draw_weights(8, rng);
                         return grad_check(
                             [&](Tape& t, const std::vector<Tensor>& in) {
                                 return weigh(t, l2_normalize(in[0]), w);
                             },
                             {a}, kGradCheckEps);
                     }});
    cases.push_back({"l2_normalize_rows", [](Rng& rng) {
                         auto a = random_input({4, 5}, rng, 0.5, 2.0);
                         auto w = draw_weights(20, rng);
                         return grad_check(
                             [&](Tape& t, const std::vector<Tensor>& in) {
                                 return weigh(t, l2_normalize_rows(in[0]), w);
                             },
                             {a}, kGradCheckEps);
                     }});
    cases.push_back({"layer_norm", [](Rng& rng) {
                         auto x = random_input({3, 6}, rng);
                         auto g = random_input({6}, rng, 0.5, 1.5);
                         auto b = random_input({6}, rng, -0.5, 0.5);
                         auto w = draw_weights(18, rng);
                         return grad_check(
                             [&](Tape& t, const std::vector<Tensor>& in) {
                                 return weigh(t, layer_norm(in[0], in[1], in[2]), w);
                             },
                             {x, g, b}, kGradCheckEps);
                     }});
    cases.push_back({"mean_axis", [](Rng& rng) {
                         auto a = random_input({4, 3}, rng);
                         const int axis = rng.uniform_int(2);
                         auto w = draw_weights(axis == 0 ? 3 : 4, rng);
                         return grad_check(
                             [&](Tape& t, const std::vector<Tensor>& in) {
                                 return weigh(t, mean_axis(in[0], axis), w);
                             },
                             {a}, kGradCheckEps);
                     }});
    cases.push_back({"sum_all", [](Rng& rng) {
                         auto a = random_input({3, 3}, rng);
                         return grad_check(
                             [](Tape&, const std::vector<Tensor>& in) {
                                 return sum_all(mul(in[0], in[0]));
                             },
                             {a}, kGradCheckEps);
                     }});
    cases.push_back({"take_rows", [](Rng& rng) {
                         auto a = random_input({5, 3}, rng);
                         std::vector<int> idx = {rng.uniform_int(5), rng.uniform_int(5),
                                                 rng.uniform_int(5)};
                         auto w = draw_weights(9, rng);
                         return grad_check(
                             [&](Tape& t, const std::vector<Tensor>& in) {
                                 return weigh(t, take_rows(in[0], idx), w);
                             },
                             {a}, kGradCheckEps);
                     }});
    cases.push_back({"concat_rows", [](Rng& rng) {
                         auto a = random_input({2, 4}, rng);
                         auto b = random_input({3, 4}, rng);
                         auto w = draw_weights(20, rng);
                         return grad_check(
                             [&](Tape& t, const std::vector<Tensor>& in) {
                                 return weigh(t, concat_rows(in[0], in[1]), w);
                             },
                             {a, b}, kGradCheckEps);
                     }});
    cases.push_back({"slice_cols", [](Rng& rng) {
                         auto a = random_input({3, 6}, rng);
                         auto w = draw_weights(12, rng);
                         return grad_check(
                             [&](Tape& t, const std::vector<Tensor>& in) {
                                 return weigh(t, slice_cols(in[0], 1, 4), w);
                             },
                             {a}, kGradCheckEps);
                     }});
    cases.push_back({"concat_cols", [](Rng& rng) {
                         auto a = random_input({3, 2}, rng);
                         auto b = random_input({3, 3}, rng);
                         auto c = random_input({3, 1}, rng);
                         auto w = draw_weights(18, rng);
                         return grad_check(
                             [&](Tape& t, const std::vector<Tensor>& in) {
                                 return weigh(t, concat_cols({in[0], in[1], in[2]}), w);
                             },
                             {a, b, c}, kGradCheckEps);
                     }});
    cases.push_back({"patchify", [](Rng& rng) {
                         auto a = random_input({2, 4, 4}, rng);
                         auto w = draw_weights(32, rng);
                         return grad_check(
                             [&](Tape& t, const std::vector<Tensor>& in) {
                                 return weigh(t, patchify(in[0], 2), w);
                             },
                             {a}, kGradCheckEps);
                     }});
    return cases;
}

}  // namespace

// implemented in model_gradcheck.cpp once the encoder and loss exist
std::vector<GradCheckCase> loss_gradcheck_cases(uint64_t seed);

std::vector<GradCheckCase> gradcheck_suite(const std::string& scope, uint64_t seed) {
    if (scope != "primitives" && scope != "loss" && scope != "all")
        throw ConfigError("gradcheck scope must be primitives|loss|all");
    std::vector<GradCheckCase> results;
    if (scope == "primitives" || scope == "all") {
        for (const OpCase& oc : primitive_cases()) {
            double worst = 0.0;
            for (int rep = 0; rep < 10; ++rep) {
                Rng rng(derive_seed(seed, {std::hash<std::string>{}(oc.name),
                                           static_cast<uint64_t>(rep)}));
                worst = std::max(worst, oc.run(rng));
            }
            results.push_back({oc.name, worst});
        }
    }
    if (scope == "loss" || scope == "all") {
        for (auto& c : loss_gradcheck_cases(seed)) results.push_back(std::move(c));
    }
    return results;
}

}  // namespace pros
