#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pros/gradcheck.hpp"
#include "pros/rng.hpp"
#include "pros/tensor.hpp"

using namespace pros;

namespace {

double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

}  // namespace

TEST_CASE("softmax uniform input is uniform") {
    Tape tape;
    Tensor s = softmax(tape.constant({4}, {0, 0, 0, 0}), 1.0);
    for (int i = 0; i < 4; ++i) CHECK(s.value_at(i) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax hand oracle [ln 2, 0]") {
    // exp(ln 2) = 2, exp(0) = 1, sum = 3
    Tape tape;
    Tensor s = softmax(tape.constant({2}, {std::log(2.0), 0.0}), 1.0);
    CHECK(s.value_at(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(s.value_at(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax sharp temperature regime") {
    Tape tape;
    Tensor s = softmax(tape.constant({2}, {1.0, 0.0}), 0.025);
    CHECK(s.value_at(0) >= 1.0 - 1e-15);
}

TEST_CASE("softmax stable for large magnitudes") {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        Tape tape;
        std::vector<double> v(8);
        for (double& x : v) x = rng.uniform(-1e4, 1e4);
        Tensor s = softmax(tape.constant({8}, v), 1.0);
        double sum = 0.0;
        int argmax_v = 0, argmax_s = 0;
        for (int i = 0; i < 8; ++i) {
            sum += s.value_at(i);
            if (v[i] > v[argmax_v]) argmax_v = i;
            if (s.value_at(i) > s.value_at(argmax_s)) argmax_s = i;
        }
        CHECK(std::fabs(sum - 1.0) < 1e-9);
        CHECK(argmax_v == argmax_s);
    }
}

TEST_CASE("softmax entropy increases with temperature") {
    Rng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> v(6);
        for (double& x : v) x = rng.uniform(-2.0, 2.0);
        const double t1 = rng.uniform(0.05, 0.5);
        const double t2 = t1 * rng.uniform(1.5, 4.0);
        Tape tape;
        Tensor a = softmax(tape.constant({6}, v), t1);
        Tensor b = softmax(tape.constant({6}, v), t2);
        CHECK(entropy(a.values()) < entropy(b.values()));
    }
}

TEST_CASE("softmax input validation") {
    Tape tape;
    Tensor v = tape.constant({3}, {1.0, 2.0, 3.0});
    CHECK_THROWS_AS(softmax(v, 0.0), NumericError);
    CHECK_THROWS_AS(softmax(v, -1.0), NumericError);
    Tensor bad = tape.constant({2}, {std::nan(""), 0.0});
    CHECK_THROWS_AS(softmax(bad, 1.0), NumericError);
}

TEST_CASE("l2_normalize 3-4-5 triangle") {
    Tape tape;
    Tensor y = l2_normalize(tape.constant({2}, {3.0, 4.0}));
    CHECK(y.value_at(0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(y.value_at(1) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("l2_normalize keeps unit vectors and direction") {
    Rng rng(3);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<double> v(5);
        double sq = 0.0;
        for (double& x : v) {
            x = rng.uniform(-2.0, 2.0);
            sq += x * x;
        }
        const double norm = std::sqrt(sq);
        Tape tape;
        Tensor y = l2_normalize(tape.constant({5}, v));
        double out_sq = 0.0;
        for (int i = 0; i < 5; ++i) {
            CHECK(y.value_at(i) == doctest::Approx(v[static_cast<size_t>(i)] / norm).epsilon(1e-9));
            out_sq += y.value_at(i) * y.value_at(i);
        }
        CHECK(std::fabs(out_sq - 1.0) < 1e-9);

        Tensor twice = l2_normalize(y);
        for (int i = 0; i < 5; ++i)
            CHECK(twice.value_at(i) == doctest::Approx(y.value_at(i)).epsilon(1e-12));
    }
}

TEST_CASE("l2_normalize rejects degenerate vectors") {
    Tape tape;
    CHECK_THROWS_AS(l2_normalize(tape.constant({3}, {0.0, 0.0, 0.0})), NumericError);
    CHECK_THROWS_AS(l2_normalize(tape.constant({2}, {1e-13, 0.0})), NumericError);
}

TEST_CASE("grad_check quadratic") {
    // f(x) = x^2 at x = 3: analytic 6
    auto f = [](Tape&, const std::vector<Tensor>& in) { return mul(in[0], in[0]); };
    double err = grad_check(f, GradCheckInput{{1}, {3.0}}, 1e-5);
    CHECK(err < 1e-8);
}

TEST_CASE("grad_check weighted softmax") {
    Rng rng(17);
    std::vector<double> x(6), w(6);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    for (double& v : w) v = rng.uniform(-1.0, 1.0);
    auto f = [&w](Tape& t, const std::vector<Tensor>& in) {
        return dot(softmax(in[0], 0.1), t.constant({6}, w));
    };
    double err = grad_check(f, GradCheckInput{{6}, x}, 1e-5);
    CHECK(err < 1e-5);
}

TEST_CASE("gradcheck suite covers every primitive") {
    for (const auto& c : gradcheck_suite("primitives", 42)) {
        INFO("op: ", c.op);
        CHECK(c.worst_rel_err < kGradCheckTol);
    }
}

TEST_CASE("stop_gradient deposits zero upstream") {
    Tape tape;
    Tensor x = tape.variable({3}, {1.0, 2.0, 3.0});
    Tensor through = sum_all(mul(x, x));
    Tensor blocked = sum_all(stop_gradient(scale(x, 5.0)));
    Tensor loss = add(through, blocked);
    tape.backward(loss);
    REQUIRE(x.has_grad());
    auto g = x.grad();
    CHECK(g[0] == doctest::Approx(2.0));
    CHECK(g[1] == doctest::Approx(4.0));
    CHECK(g[2] == doctest::Approx(6.0));
}

TEST_CASE("grad absent for requires_grad=false tensors") {
    Tape tape;
    Tensor x = tape.variable({2}, {1.0, 2.0});
    Tensor c = tape.constant({2}, {3.0, 4.0});
    Tensor loss = dot(x, c);
    tape.backward(loss);
    CHECK(x.has_grad());
    CHECK_FALSE(c.has_grad());
    CHECK_THROWS_AS(c.grad(), NumericError);
}

TEST_CASE("second backward on a tape is an error") {
    Tape tape;
    Tensor x = tape.variable({1}, {2.0});
    Tensor loss = mul(x, x);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
}

TEST_CASE("gradients accumulate across fan-out") {
    Tape tape;
    Tensor x = tape.variable({1}, {3.0});
    Tensor loss = add(mul(x, x), scale(x, 4.0));  // x^2 + 4x -> 2x + 4 = 10
    tape.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(10.0));
}

TEST_CASE("trailing broadcast add") {
    Tape tape;
    Tensor a = tape.constant({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = tape.constant({3}, {10, 20, 30});
    Tensor y = add(a, b);
    CHECK(y.value_at(0) == 11);
    CHECK(y.value_at(5) == 36);
    Tensor bad = tape.constant({2}, {1, 2});
    CHECK_THROWS_AS(add(a, bad), ShapeError);
}

TEST_CASE("matmul hand value") {
    Tape tape;
    Tensor a = tape.constant({2, 2}, {1, 2, 3, 4});
    Tensor b = tape.constant({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    CHECK(c.value_at(0) == 19);
    CHECK(c.value_at(1) == 22);
    CHECK(c.value_at(2) == 43);
    CHECK(c.value_at(3) == 50);
    CHECK_THROWS_AS(matmul(a, tape.constant({3, 2}, {0, 0, 0, 0, 0, 0})), ShapeError);
}

TEST_CASE("mean_axis both axes") {
    Tape tape;
    Tensor a = tape.constant({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor m0 = mean_axis(a, 0);
    CHECK(m0.shape() == Shape{3});
    CHECK(m0.value_at(0) == doctest::Approx(2.5));
    Tensor m1 = mean_axis(a, 1);
    CHECK(m1.shape() == Shape{2});
    CHECK(m1.value_at(1) == doctest::Approx(5.0));
}

TEST_CASE("take_rows and concat") {
    Tape tape;
    Tensor a = tape.constant({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor picked = take_rows(a, {2, 0});
    CHECK(picked.value_at(0) == 5);
    CHECK(picked.value_at(3) == 2);
    CHECK_THROWS_AS(take_rows(a, {3}), ShapeError);

    Tensor b = tape.constant({1, 2}, {7, 8});
    Tensor cat = concat_rows(a, b);
    CHECK(cat.shape() == Shape{4, 2});
    CHECK(cat.value_at(7) == 8);

    Tensor cols = concat_cols({a, a});
    CHECK(cols.shape() == Shape{3, 4});
    CHECK(cols.value_at(2) == 1);

    Tensor sl = slice_cols(cols, 2, 2);
    for (int i = 0; i < 6; ++i) CHECK(sl.value_at(i) == a.value_at(i));
}

TEST_CASE("patchify shape and roundtrip") {
    Rng rng(9);
    std::vector<double> img(3 * 8 * 8);
    for (double& v : img) v = rng.uniform(0.0, 1.0);
    Tape tape;
    Tensor t = patchify(tape.constant({3, 8, 8}, img), 4);
    CHECK(t.shape() == Shape{4, 48});
    auto back = unpatchify(t.values(), 3, 8, 8, 4);
    for (size_t i = 0; i < img.size(); ++i) CHECK(back[i] == img[i]);
    CHECK_THROWS_AS(patchify(tape.constant({3, 8, 8}, img), 3), ShapeError);
}

TEST_CASE("fault injection corrupts a single op gradient") {
    detail::set_backward_fault("gelu");
    Rng rng(1);
    std::vector<double> x(5), w(5);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    for (double& v : w) v = rng.uniform(-1.0, 1.0);
    auto f = [&w](Tape& t, const std::vector<Tensor>& in) {
        return dot(gelu(in[0]), t.constant({5}, w));
    };
    double err = grad_check(f, GradCheckInput{{5}, x}, 1e-5);
    detail::set_backward_fault("");
    CHECK(err > kGradCheckTol);
    // clean again once disarmed
    CHECK(grad_check(f, GradCheckInput{{5}, x}, 1e-5) < kGradCheckTol);
}
