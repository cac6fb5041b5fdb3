#include "pros/proto_loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pros/rng.hpp"

namespace pros {

PrototypeBank init_prototypes(int K, int d, uint64_t seed) {
    if (K < 1 || d < 1) throw ConfigError("init_prototypes: K and d must be >= 1");
    PrototypeBank bank;
    bank.K = K;
    bank.d = d;
    bank.p.resize(static_cast<size_t>(K) * d);
    Rng rng(derive_seed(seed, {0x70726f746fULL}));
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& v : bank.p) v = rng.uniform(-bound, bound);
    return bank;
}

double entropy(std::span<const double> probs) {
    double h = 0.0;
    for (double p : probs)
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

void LossConfig::validate() const {
    if (tau_g <= 0.0 || tau_l <= 0.0) throw ConfigError("loss config: temperatures must be positive");
    if (tau_g >= tau_l)
        throw ConfigError("loss config: tau_g (" + std::to_string(tau_g) +
                          ") must be smaller than tau_l (" + std::to_string(tau_l) + ")");
    if (lambda_reg < 0.0) throw ConfigError("loss config: lambda_reg must be >= 0");
}

std::vector<Distribution> teacher_sharpen(std::span<const double> logit_rows, int rows, int K,
                                          TeacherOp& op, double tau_g) {
    if (rows < 1 || K < 1) throw ShapeError("teacher_sharpen: empty batch");
    if (static_cast<int64_t>(logit_rows.size()) != static_cast<int64_t>(rows) * K)
        throw ShapeError("teacher_sharpen: row buffer size mismatch");
    if (tau_g <= 0.0) throw NumericError("teacher_sharpen: non-positive temperature");
    if (op.sinkhorn_iters < 0) throw ConfigError("teacher_sharpen: sinkhorn_iters must be >= 0");

    std::vector<Distribution> out(static_cast<size_t>(rows));

    if (op.mode == TeacherOpMode::kCentering) {
        if (op.center.empty()) op.center.assign(static_cast<size_t>(K), 0.0);
        if (static_cast<int>(op.center.size()) != K)
            throw ShapeError("teacher_sharpen: center size mismatch");
        for (int r = 0; r < rows; ++r) {
            const double* x = logit_rows.data() + static_cast<int64_t>(r) * K;
            double mx = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < K; ++k) mx = std::max(mx, (x[k] - op.center[static_cast<size_t>(k)]) / tau_g);
            auto& p = out[static_cast<size_t>(r)].probs;
            p.resize(static_cast<size_t>(K));
            double sum = 0.0;
            for (int k = 0; k < K; ++k) {
                p[static_cast<size_t>(k)] =
                    std::exp((x[k] - op.center[static_cast<size_t>(k)]) / tau_g - mx);
                sum += p[static_cast<size_t>(k)];
            }
            for (double& v : p) v /= sum;
        }
        // EMA of the batch-mean raw logits
        for (int k = 0; k < K; ++k) {
            double mean = 0.0;
            for (int r = 0; r < rows; ++r) mean += logit_rows[static_cast<int64_t>(r) * K + k];
            mean /= rows;
            op.center[static_cast<size_t>(k)] =
                op.center_momentum * op.center[static_cast<size_t>(k)] +
                (1.0 - op.center_momentum) * mean;
        }
        return out;
    }

    // sinkhorn: exponentiate, then alternate row/column normalization, final
    // row normalization. Per-row max subtraction only rescales rows, which
    // the first row normalization removes.
    std::vector<double> q(static_cast<size_t>(rows) * K);
    for (int r = 0; r < rows; ++r) {
        const double* x = logit_rows.data() + static_cast<int64_t>(r) * K;
        double mx = x[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, x[k]);
        for (int k = 0; k < K; ++k)
            q[static_cast<size_t>(r) * K + k] = std::exp((x[k] - mx) / tau_g);
    }
    auto normalize_rows = [&] {
        for (int r = 0; r < rows; ++r) {
            double sum = 0.0;
            for (int k = 0; k < K; ++k) sum += q[static_cast<size_t>(r) * K + k];
            for (int k = 0; k < K; ++k) q[static_cast<size_t>(r) * K + k] /= sum;
        }
    };
    const double col_target = static_cast<double>(rows) / K;
    for (int it = 0; it < op.sinkhorn_iters; ++it) {
        normalize_rows();
        for (int k = 0; k < K; ++k) {
            double sum = 0.0;
            for (int r = 0; r < rows; ++r) sum += q[static_cast<size_t>(r) * K + k];
            const double f = col_target / sum;
            for (int r = 0; r < rows; ++r) q[static_cast<size_t>(r) * K + k] *= f;
        }
    }
    normalize_rows();
    for (int r = 0; r < rows; ++r)
        out[static_cast<size_t>(r)].probs.assign(q.begin() + static_cast<int64_t>(r) * K,
                                                 q.begin() + static_cast<int64_t>(r + 1) * K);
    return out;
}

Tensor predict_graph(Tape&, const Tensor& bank, const Tensor& feature, double tau) {
    if (bank.ndim() != 2) throw ShapeError("predict: bank must be [K,d]");
    if (feature.ndim() != 1 || feature.dim(0) != bank.dim(1))
        throw ShapeError("predict: feature dim mismatch");
    double sq = 0.0;
    for (double v : feature.values()) sq += v * v;
    if (std::fabs(std::sqrt(sq) - 1.0) > 1e-6)
        throw NumericError("predict: feature must be unit-norm");
    const int K = bank.dim(0);
    const int d = bank.dim(1);
    Tensor cos = reshape(matmul(l2_normalize_rows(bank), reshape(feature, {d, 1})), {K});
    return softmax(cos, tau);
}

Distribution predict(const PrototypeBank& bank, std::span<const double> feature, double tau) {
    Tape tape;
    Tensor b = tape.constant({bank.K, bank.d}, bank.p);
    Tensor f = tape.constant({bank.d}, std::vector<double>(feature.begin(), feature.end()));
    Tensor probs = predict_graph(tape, b, f, tau);
    Distribution out;
    out.probs.assign(probs.values().begin(), probs.values().end());
    return out;
}

Tensor cross_entropy_pairs_graph(Tape& tape, const std::vector<Distribution>& teacher,
                                 const std::vector<Tensor>& student,
                                 const std::vector<bool>& exclude,
                                 std::vector<double>* pair_ce_out) {
    const int m = static_cast<int>(teacher.size());
    const int n = static_cast<int>(student.size());
    if (m < 1 || n < 1) throw ShapeError("cross_entropy_pairs: need at least one view per side");
    if (!exclude.empty() && static_cast<int>(exclude.size()) != m * n)
        throw ShapeError("cross_entropy_pairs: exclusion mask size mismatch");
    if (pair_ce_out)
        pair_ce_out->assign(static_cast<size_t>(m) * n, std::numeric_limits<double>::quiet_NaN());

    Tensor acc;
    int pairs = 0;
    for (int i = 0; i < m; ++i) {
        const auto& t = teacher[static_cast<size_t>(i)].probs;
        for (int j = 0; j < n; ++j) {
            if (!exclude.empty() && exclude[static_cast<size_t>(i) * n + j]) continue;
            const Tensor& s = student[static_cast<size_t>(j)];
            if (static_cast<int>(t.size()) != s.dim(0))
                throw ShapeError("cross_entropy_pairs: K mismatch");
            Tensor ce = scale(dot(tape.constant({s.dim(0)}, t), log_clamped(s)), -1.0);
            if (pair_ce_out) (*pair_ce_out)[static_cast<size_t>(i) * n + j] = ce.item();
            acc = pairs == 0 ? ce : add(acc, ce);
            ++pairs;
        }
    }
    if (pairs == 0) throw ShapeError("cross_entropy_pairs: every pair excluded");
    return scale(acc, 1.0 / pairs);
}

double cross_entropy_pairs(const std::vector<Distribution>& teacher,
                           const std::vector<Distribution>& student) {
    Tape tape;
    std::vector<Tensor> s;
    s.reserve(student.size());
    for (const Distribution& d : student)
        s.push_back(tape.constant({static_cast<int>(d.probs.size())}, d.probs));
    return cross_entropy_pairs_graph(tape, teacher, s, {}, nullptr).item();
}

Tensor entropy_reg_graph(Tape& tape, const std::vector<Tensor>& students, EntropyMode mode,
                         int batch) {
    if (students.empty()) throw ShapeError("entropy_reg: no student distributions");
    const int K = students[0].dim(0);
    Tensor sum = students[0];
    for (size_t i = 1; i < students.size(); ++i) sum = add(sum, students[i]);
    if (mode == EntropyMode::kLiteralEq4) {
        // raw probabilities averaged over B*K; constant N/K by construction
        return scale(sum_all(sum), 1.0 / (static_cast<double>(batch) * K));
    }
    Tensor mean = scale(sum, 1.0 / static_cast<double>(students.size()));
    return scale(dot(mean, log_clamped(mean)), -1.0);
}

double entropy_reg(const std::vector<Distribution>& students) {
    Tape tape;
    std::vector<Tensor> s;
    s.reserve(students.size());
    for (const Distribution& d : students)
        s.push_back(tape.constant({static_cast<int>(d.probs.size())}, d.probs));
    return entropy_reg_graph(tape, s, EntropyMode::kMeanEntropy, 1).item();
}

std::vector<Distribution> teacher_targets(
    std::span<const double> bank_values, int K, int d,
    const std::vector<std::vector<std::vector<double>>>& teacher_feats, const LossConfig& cfg,
    TeacherOp& op) {
    const int B = static_cast<int>(teacher_feats.size());
    if (B < 1) throw ShapeError("teacher_targets: empty batch");
    const int M = static_cast<int>(teacher_feats[0].size());
    if (static_cast<int64_t>(bank_values.size()) != static_cast<int64_t>(K) * d)
        throw ShapeError("teacher_targets: bank size mismatch");

    std::vector<double> bank_rows(bank_values.begin(), bank_values.end());
    for (int k = 0; k < K; ++k) {
        double sq = 0.0;
        for (int j = 0; j < d; ++j) sq += bank_rows[static_cast<size_t>(k) * d + j] *
                                          bank_rows[static_cast<size_t>(k) * d + j];
        const double nrm = std::sqrt(sq);
        if (nrm <= kNormEps) throw NumericError("teacher_targets: degenerate prototype row");
        for (int j = 0; j < d; ++j) bank_rows[static_cast<size_t>(k) * d + j] /= nrm;
    }
    std::vector<double> logits(static_cast<size_t>(B) * M * K);
    for (int i = 0; i < B; ++i) {
        if (static_cast<int>(teacher_feats[static_cast<size_t>(i)].size()) != M)
            throw ShapeError("teacher_targets: ragged teacher views");
        for (int m = 0; m < M; ++m) {
            const auto& f = teacher_feats[static_cast<size_t>(i)][static_cast<size_t>(m)];
            if (static_cast<int>(f.size()) != d)
                throw ShapeError("teacher_targets: teacher feature dim");
            for (int k = 0; k < K; ++k) {
                double s = 0.0;
                for (int j = 0; j < d; ++j)
                    s += bank_rows[static_cast<size_t>(k) * d + j] * f[static_cast<size_t>(j)];
                logits[(static_cast<size_t>(i) * M + m) * K + k] = s;
            }
        }
    }
    return teacher_sharpen(logits, B * M, K, op, cfg.tau_g);
}

LossBreakdown total_loss_with_targets(Tape& tape, const Tensor& bank,
                                      const std::vector<Distribution>& targets, int m_views,
                                      const std::vector<StudentViews>& students,
                                      const LossConfig& cfg) {
    cfg.validate();
    const int B = static_cast<int>(students.size());
    const int M = m_views;
    if (B < 1 || M < 1 || static_cast<int>(targets.size()) != B * M)
        throw ShapeError("total_loss: target count mismatch");
    const int N = static_cast<int>(students[0].feats.size());

    LossBreakdown lb;
    lb.m = M;
    lb.n = N;
    const std::vector<Distribution>& sharpened = targets;
    lb.teacher_argmax.reserve(static_cast<size_t>(B) * M);
    for (const Distribution& t : sharpened)
        lb.teacher_argmax.push_back(static_cast<int>(
            std::max_element(t.probs.begin(), t.probs.end()) - t.probs.begin()));

    // student route, on the tape
    std::vector<double> pair_acc(static_cast<size_t>(M) * N, 0.0);
    std::vector<int> pair_counts(static_cast<size_t>(M) * N, 0);
    std::vector<Tensor> all_student_probs;
    all_student_probs.reserve(static_cast<size_t>(B) * N);
    Tensor ce_acc;
    for (int i = 0; i < B; ++i) {
        const StudentViews& sv = students[static_cast<size_t>(i)];
        if (static_cast<int>(sv.feats.size()) != N || sv.global_index.size() != sv.feats.size())
            throw ShapeError("total_loss: ragged student views");
        std::vector<Tensor> probs;
        probs.reserve(sv.feats.size());
        for (const Tensor& f : sv.feats) probs.push_back(predict_graph(tape, bank, f, cfg.tau_l));
        all_student_probs.insert(all_student_probs.end(), probs.begin(), probs.end());

        std::vector<Distribution> teacher_i(sharpened.begin() + static_cast<int64_t>(i) * M,
                                            sharpened.begin() + static_cast<int64_t>(i + 1) * M);
        std::vector<bool> exclude(static_cast<size_t>(M) * N, false);
        for (int n = 0; n < N; ++n)
            if (sv.global_index[static_cast<size_t>(n)] >= 0 &&
                sv.global_index[static_cast<size_t>(n)] < M)
                exclude[static_cast<size_t>(sv.global_index[static_cast<size_t>(n)]) * N + n] =
                    true;
        std::vector<double> pair_i;
        Tensor ce_i = cross_entropy_pairs_graph(tape, teacher_i, probs, exclude, &pair_i);
        for (size_t p = 0; p < pair_i.size(); ++p)
            if (!std::isnan(pair_i[p])) {
                pair_acc[p] += pair_i[p];
                pair_counts[p] += 1;
            }
        ce_acc = i == 0 ? ce_i : add(ce_acc, ce_i);
    }
    Tensor ce_term = scale(ce_acc, 1.0 / B);
    Tensor reg_term = entropy_reg_graph(tape, all_student_probs, cfg.entropy_mode, B);
    Tensor total = sub(ce_term, scale(reg_term, cfg.lambda_reg));

    lb.pair_ce.resize(pair_acc.size());
    for (size_t p = 0; p < pair_acc.size(); ++p)
        lb.pair_ce[p] = pair_counts[p] > 0 ? pair_acc[p] / pair_counts[p]
                                           : std::numeric_limits<double>::quiet_NaN();
    lb.ce_term = ce_term.item();
    lb.entropy_term = reg_term.item();
    lb.total = total.item();
    lb.total_tensor = total;
    if (!std::isfinite(lb.total)) throw NumericError("total_loss: non-finite loss value");
    return lb;
}

LossBreakdown total_loss(Tape& tape, const Tensor& bank,
                         const std::vector<std::vector<std::vector<double>>>& teacher_feats,
                         const std::vector<StudentViews>& students, const LossConfig& cfg,
                         TeacherOp& op) {
    cfg.validate();
    if (teacher_feats.size() != students.size())
        throw ShapeError("total_loss: batch size mismatch");
    const int M = static_cast<int>(teacher_feats.at(0).size());
    std::vector<Distribution> targets =
        teacher_targets(bank.values(), bank.dim(0), bank.dim(1), teacher_feats, cfg, op);
    return total_loss_with_targets(tape, bank, targets, M, students, cfg);
}

}  // namespace pros
