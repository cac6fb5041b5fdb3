#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "pros/gradcheck.hpp"
#include "pros/proto_loss.hpp"
#include "pros/rng.hpp"

using namespace pros;

namespace {

std::vector<double> random_unit(int d, Rng& rng) {
    std::vector<double> v(static_cast<size_t>(d));
    for (double& x : v) x = rng.normal();
    return oracles::unit(v);
}

}  // namespace

TEST_CASE("prototype init bounds, reference dims, determinism") {
    PrototypeBank bank = init_prototypes(1024, 256, 3);
    CHECK(bank.K == 1024);
    CHECK(bank.d == 256);
    CHECK(bank.p.size() == 1024u * 256u);
    const double bound = 1.0 / std::sqrt(256.0);
    for (double v : bank.p) {
        CHECK(v >= -bound);
        CHECK(v <= bound);
    }
    PrototypeBank again = init_prototypes(1024, 256, 3);
    CHECK(bank.p == again.p);
    PrototypeBank other = init_prototypes(1024, 256, 4);
    CHECK(bank.p != other.p);

    CHECK_THROWS_AS(init_prototypes(0, 8, 1), ConfigError);
}

TEST_CASE("predict on orthonormal prototypes") {
    PrototypeBank bank;
    bank.K = 2;
    bank.d = 2;
    bank.p = {1, 0, 0, 1};
    Distribution s = predict(bank, std::vector<double>{1.0, 0.0}, 1.0);
    // cosines (1, 0): softmax = [e/(e+1), 1/(e+1)]
    const double e = std::exp(1.0);
    CHECK(s.probs[0] == doctest::Approx(e / (e + 1)).epsilon(1e-12));
    CHECK(s.probs[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-12));

    // equidistant feature -> uniform
    Distribution u = predict(bank, oracles::unit({1.0, 1.0}), 1.0);
    CHECK(u.probs[0] == doctest::Approx(0.5).epsilon(1e-12));

    // scaling a prototype row leaves the distribution unchanged
    PrototypeBank scaled = bank;
    for (int j = 0; j < 2; ++j) scaled.p[static_cast<size_t>(j)] *= 5.0;
    Distribution s2 = predict(scaled, std::vector<double>{1.0, 0.0}, 1.0);
    CHECK(s2.probs[0] == doctest::Approx(s.probs[0]).epsilon(1e-12));

    CHECK_THROWS_AS(predict(bank, std::vector<double>{2.0, 0.0}, 1.0), NumericError);
}

TEST_CASE("teacher_sharpen sinkhorn iters=0 equals softmax") {
    Rng rng(5);
    const int R = 3, K = 5;
    std::vector<double> rows(static_cast<size_t>(R) * K);
    for (double& v : rows) v = rng.uniform(-1.0, 1.0);
    TeacherOp op;
    op.mode = TeacherOpMode::kSinkhorn;
    op.sinkhorn_iters = 0;
    auto out = teacher_sharpen(rows, R, K, op, 0.5);
    for (int r = 0; r < R; ++r) {
        std::vector<double> logit(rows.begin() + static_cast<int64_t>(r) * K,
                                  rows.begin() + static_cast<int64_t>(r + 1) * K);
        auto expected = oracles::naive_softmax(logit, 0.5);
        for (int k = 0; k < K; ++k)
            CHECK(out[static_cast<size_t>(r)].probs[static_cast<size_t>(k)] ==
                  doctest::Approx(expected[static_cast<size_t>(k)]).epsilon(1e-12));
    }
}

TEST_CASE("teacher_sharpen 2x2 sinkhorn against converged oracle") {
    std::vector<double> rows = {1, 0, 0, 1};
    TeacherOp op;
    op.sinkhorn_iters = 10;
    auto out = teacher_sharpen(rows, 2, 2, op, 1.0);

    oracles::Mat q = {{std::exp(1.0), 1.0}, {1.0, std::exp(1.0)}};
    auto converged = oracles::sinkhorn_oracle(q);
    const double a = converged[0][0];
    CHECK(a > 0.5);
    CHECK(out[0].probs[0] == doctest::Approx(a).epsilon(1e-9));
    CHECK(out[0].probs[1] == doctest::Approx(1 - a).epsilon(1e-9));
    CHECK(out[1].probs[0] == doctest::Approx(1 - a).epsilon(1e-9));

    // doubly stochastic within 1e-6
    for (int k = 0; k < 2; ++k) {
        const double col = out[0].probs[static_cast<size_t>(k)] + out[1].probs[static_cast<size_t>(k)];
        CHECK(std::fabs(col - 1.0) < 1e-6);
    }
    for (const auto& dist : out) {
        double sum = 0.0;
        for (double p : dist.probs) sum += p;
        CHECK(std::fabs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("sinkhorn row and column sums on random positive matrices") {
    Rng rng(7);
    const int R = 6, K = 4;
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<double> rows(static_cast<size_t>(R) * K);
        for (double& v : rows) v = rng.uniform(0.0, 2.0);
        TeacherOp op;
        op.sinkhorn_iters = 3;
        auto out = teacher_sharpen(rows, R, K, op, 1.0);
        std::vector<double> col_sums(K, 0.0);
        for (const auto& dist : out) {
            double sum = 0.0;
            for (int k = 0; k < K; ++k) {
                CHECK(dist.probs[static_cast<size_t>(k)] > 0.0);
                sum += dist.probs[static_cast<size_t>(k)];
                col_sums[static_cast<size_t>(k)] += dist.probs[static_cast<size_t>(k)];
            }
            CHECK(std::fabs(sum - 1.0) < 1e-6);
        }
        const double target = static_cast<double>(R) / K;
        for (double c : col_sums) CHECK(std::fabs(c - target) <= 0.1 * target);
    }
}

TEST_CASE("centering with zero center equals softmax, then tracks the EMA") {
    Rng rng(9);
    const int R = 4, K = 3;
    std::vector<double> rows(static_cast<size_t>(R) * K);
    for (double& v : rows) v = rng.uniform(-1.0, 1.0);
    TeacherOp op;
    op.mode = TeacherOpMode::kCentering;
    op.center_momentum = 0.9;
    auto out = teacher_sharpen(rows, R, K, op, 0.25);
    for (int r = 0; r < R; ++r) {
        std::vector<double> logit(rows.begin() + static_cast<int64_t>(r) * K,
                                  rows.begin() + static_cast<int64_t>(r + 1) * K);
        auto expected = oracles::naive_softmax(logit, 0.25);
        for (int k = 0; k < K; ++k)
            CHECK(out[static_cast<size_t>(r)].probs[static_cast<size_t>(k)] ==
                  doctest::Approx(expected[static_cast<size_t>(k)]).epsilon(1e-12));
    }
    // center updated toward the batch mean with momentum 0.9
    for (int k = 0; k < K; ++k) {
        double mean = 0.0;
        for (int r = 0; r < R; ++r) mean += rows[static_cast<size_t>(r) * K + k];
        mean /= R;
        CHECK(op.center[static_cast<size_t>(k)] == doctest::Approx(0.1 * mean).epsilon(1e-12));
    }
}

TEST_CASE("cross_entropy_pairs hand values") {
    Distribution onehot0{{1.0, 0.0, 0.0, 0.0}};
    CHECK(cross_entropy_pairs({onehot0}, {onehot0}) == doctest::Approx(0.0).epsilon(1e-12));

    Distribution uni{{0.25, 0.25, 0.25, 0.25}};
    CHECK(cross_entropy_pairs({uni}, {uni}) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // identical distributions everywhere: mean CE equals the teacher entropy
    Distribution p{{0.7, 0.2, 0.1}};
    CHECK(cross_entropy_pairs({p, p}, {p, p, p}) ==
          doctest::Approx(oracles::naive_entropy(p.probs)).epsilon(1e-12));
}

TEST_CASE("cross_entropy_pairs averages over exactly M*N pairs") {
    Rng rng(13);
    const int K = 4;
    auto random_dist = [&] {
        std::vector<double> v(K);
        for (double& x : v) x = rng.uniform(0.1, 1.0);
        double sum = 0.0;
        for (double x : v) sum += x;
        for (double& x : v) x /= sum;
        return Distribution{v};
    };
    std::vector<Distribution> teacher = {random_dist(), random_dist()};
    std::vector<Distribution> student = {random_dist(), random_dist(), random_dist()};
    double expected = 0.0;
    for (const auto& t : teacher)
        for (const auto& s : student) expected += oracles::naive_cross_entropy(t.probs, s.probs);
    expected /= 6.0;
    CHECK(cross_entropy_pairs(teacher, student) == doctest::Approx(expected).epsilon(1e-12));

    // removing one pair moves the mean per the 6-term formula
    Tape tape;
    std::vector<Tensor> s_tensors;
    for (const auto& s : student) s_tensors.push_back(tape.constant({K}, s.probs));
    std::vector<bool> exclude(6, false);
    exclude[0] = true;
    const double without = (expected * 6.0 -
                            oracles::naive_cross_entropy(teacher[0].probs, student[0].probs)) /
                           5.0;
    Tensor ce = cross_entropy_pairs_graph(tape, teacher, s_tensors, exclude, nullptr);
    CHECK(ce.item() == doctest::Approx(without).epsilon(1e-12));
}

TEST_CASE("entropy regularizer extremes") {
    Distribution uni{{0.25, 0.25, 0.25, 0.25}};
    CHECK(entropy_reg({uni, uni}) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Distribution onehot{{0.0, 1.0}};
    CHECK(entropy_reg({onehot, onehot, onehot}) == doctest::Approx(0.0).epsilon(1e-9));

    Distribution a{{1.0, 0.0}}, b{{0.0, 1.0}};
    CHECK(entropy_reg({a, b}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

namespace {

struct LossFixture {
    int B, M, N, K, d;
    std::vector<double> bank;
    std::vector<std::vector<std::vector<double>>> teacher;  // B x M x d
    std::vector<std::vector<std::vector<double>>> student;  // B x N x d

    LossFixture(int B_, int M_, int N_, int K_, int d_, uint64_t seed)
        : B(B_), M(M_), N(N_), K(K_), d(d_) {
        Rng rng(seed);
        bank.resize(static_cast<size_t>(K) * d);
        for (double& v : bank) v = rng.uniform(-1.0, 1.0);
        teacher.resize(static_cast<size_t>(B));
        student.resize(static_cast<size_t>(B));
        for (int i = 0; i < B; ++i) {
            for (int m = 0; m < M; ++m) teacher[static_cast<size_t>(i)].push_back(random_unit(d, rng));
            for (int n = 0; n < N; ++n) student[static_cast<size_t>(i)].push_back(random_unit(d, rng));
        }
    }

    // library route; sinkhorn_iters=0 makes the teacher a plain softmax
    LossBreakdown run(Tape& tape, const LossConfig& cfg) const {
        Tensor bank_t = tape.variable({K, d}, bank);
        std::vector<StudentViews> views(static_cast<size_t>(B));
        for (int i = 0; i < B; ++i) {
            for (int n = 0; n < N; ++n) {
                Tensor f = tape.variable({d}, student[static_cast<size_t>(i)][static_cast<size_t>(n)]);
                views[static_cast<size_t>(i)].feats.push_back(l2_normalize(f));
                views[static_cast<size_t>(i)].global_index.push_back(-1);
            }
        }
        TeacherOp op;
        op.mode = TeacherOpMode::kSinkhorn;
        op.sinkhorn_iters = 0;
        return pros::total_loss(tape, bank_t, teacher, views, cfg, op);
    }

    oracles::Mat bank_mat() const {
        oracles::Mat m(static_cast<size_t>(K));
        for (int k = 0; k < K; ++k)
            m[static_cast<size_t>(k)].assign(bank.begin() + static_cast<int64_t>(k) * d,
                                             bank.begin() + static_cast<int64_t>(k + 1) * d);
        return m;
    }
};

}  // namespace

TEST_CASE("total_loss matches the brute-force objective") {
    Rng seeds(100);
    for (int rep = 0; rep < 10; ++rep) {
        LossFixture fx(2, 2, 3, 5, 4, seeds.next_u64());
        LossConfig cfg;
        cfg.lambda_reg = 0.7;
        Tape tape;
        LossBreakdown lb = fx.run(tape, cfg);
        const double expected = oracles::brute_force_total_loss(
            fx.bank_mat(), {fx.teacher.begin(), fx.teacher.end()},
            {fx.student.begin(), fx.student.end()}, cfg.tau_g, cfg.tau_l, cfg.lambda_reg);
        CHECK(lb.total == doctest::Approx(expected).epsilon(1e-12));
        CHECK(lb.total == doctest::Approx(lb.ce_term - cfg.lambda_reg * lb.entropy_term)
                              .epsilon(1e-12));
        CHECK(static_cast<int>(lb.pair_ce.size()) == fx.M * fx.N);
        CHECK(static_cast<int>(lb.teacher_argmax.size()) == fx.B * fx.M);
    }
}

TEST_CASE("lambda 0 reduces the loss to the cross-entropy term") {
    LossFixture fx(2, 1, 2, 4, 4, 55);
    LossConfig cfg;
    cfg.lambda_reg = 0.0;
    Tape tape;
    LossBreakdown lb = fx.run(tape, cfg);
    CHECK(lb.total == doctest::Approx(lb.ce_term).epsilon(1e-12));
}

TEST_CASE("literal Eq-4 mode is the constant N/K with zero gradient") {
    LossFixture fx(2, 1, 3, 4, 4, 56);
    LossConfig cfg;
    cfg.entropy_mode = EntropyMode::kLiteralEq4;
    Tape tape;
    LossBreakdown lb = fx.run(tape, cfg);
    CHECK(lb.entropy_term == doctest::Approx(static_cast<double>(fx.N) / fx.K).epsilon(1e-12));

    // the regularizer contributes nothing to the bank gradient
    LossFixture fx2(2, 1, 3, 4, 4, 56);
    LossConfig mean_cfg;
    Tape t_lit, t_ce;
    LossBreakdown lit = fx2.run(t_lit, cfg);
    t_lit.backward(lit.total_tensor);
    LossConfig ce_only;
    ce_only.lambda_reg = 0.0;
    LossBreakdown ce = fx2.run(t_ce, ce_only);
    t_ce.backward(ce.total_tensor);
    // compare bank gradients: literal-mode total and pure-CE total agree
    // (student features differ per tape, so compare through loss values)
    CHECK(lit.ce_term == doctest::Approx(ce.ce_term).epsilon(1e-12));
    CHECK(lit.total == doctest::Approx(ce.total - cfg.lambda_reg * lit.entropy_term).epsilon(1e-12));
}

TEST_CASE("distributions are normalized and strictly positive") {
    LossFixture fx(2, 2, 2, 6, 5, 77);
    LossConfig cfg;
    Tape tape;
    Tensor bank_t = tape.constant({fx.K, fx.d}, fx.bank);
    for (int i = 0; i < fx.B; ++i)
        for (int n = 0; n < fx.N; ++n) {
            Tensor f = tape.constant({fx.d}, fx.student[static_cast<size_t>(i)][static_cast<size_t>(n)]);
            Tensor probs = predict_graph(tape, bank_t, f, cfg.tau_l);
            double sum = 0.0;
            for (int k = 0; k < fx.K; ++k) {
                CHECK(probs.value_at(k) > 0.0);
                sum += probs.value_at(k);
            }
            CHECK(std::fabs(sum - 1.0) < 1e-8);
        }
}

TEST_CASE("batch permutation invariance") {
    LossFixture fx(3, 2, 2, 5, 4, 88);
    LossConfig cfg;
    Tape t1;
    LossBreakdown lb1 = fx.run(t1, cfg);

    LossFixture permuted = fx;
    std::swap(permuted.teacher[0], permuted.teacher[2]);
    std::swap(permuted.student[0], permuted.student[2]);
    Tape t2;
    LossBreakdown lb2 = permuted.run(t2, cfg);
    CHECK(std::fabs(lb1.total - lb2.total) < 1e-10);
}

TEST_CASE("prototype scale invariance") {
    LossFixture fx(2, 1, 2, 4, 4, 99);
    LossConfig cfg;
    Tape t1;
    LossBreakdown lb1 = fx.run(t1, cfg);
    LossFixture scaled = fx;
    for (double& v : scaled.bank) v *= 3.0;
    Tape t2;
    LossBreakdown lb2 = scaled.run(t2, cfg);
    CHECK(lb1.total == doctest::Approx(lb2.total).epsilon(1e-12));
}

TEST_CASE("temperature asymmetry is enforced") {
    LossConfig cfg;
    cfg.tau_g = 0.2;
    cfg.tau_l = 0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.tau_g = 0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);  // equal is rejected too
}

TEST_CASE("grad_check of total_loss on a toy instance") {
    // B=1, M=1, N=2, K=4: gradients w.r.t. prototypes and raw student
    // features. Targets are computed once and frozen: the teacher side is
    // detached, so the checked function holds it fixed while perturbing.
    LossFixture fx(1, 1, 2, 4, 4, 123);
    LossConfig cfg;
    TeacherOp op;
    op.sinkhorn_iters = 0;
    std::vector<Distribution> targets =
        teacher_targets(fx.bank, fx.K, fx.d, fx.teacher, cfg, op);

    std::vector<GradCheckInput> inputs;
    inputs.push_back({{fx.K, fx.d}, fx.bank});
    for (int n = 0; n < fx.N; ++n)
        inputs.push_back({{fx.d}, fx.student[0][static_cast<size_t>(n)]});

    auto f = [&](Tape& tape, const std::vector<Tensor>& leaves) {
        std::vector<StudentViews> views(1);
        for (int n = 0; n < fx.N; ++n) {
            views[0].feats.push_back(l2_normalize(leaves[static_cast<size_t>(1 + n)]));
            views[0].global_index.push_back(-1);
        }
        return total_loss_with_targets(tape, leaves[0], targets, 1, views, cfg).total_tensor;
    };
    CHECK(grad_check(f, inputs, 1e-5) < 1e-4);
}
