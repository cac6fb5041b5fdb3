#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pros/tensor.hpp"

namespace pros {

// Learnable K x d prototype matrix. Rows are re-unit-normalized inside the
// graph before every similarity computation, so gradients flow through the
// normalization and the stored scale is immaterial.
struct PrototypeBank {
    int K = 0;
    int d = 0;
    std::vector<double> p;  // [K, d]
};

PrototypeBank init_prototypes(int K, int d, uint64_t seed);

// length-K probability vector
struct Distribution {
    std::vector<double> probs;
};

double entropy(std::span<const double> probs);

enum class TeacherOpMode { kSinkhorn, kCentering };

// Anti-collapse operation applied to teacher logits. Centering keeps an EMA
// of the batch-mean logits; sinkhorn alternates row/column normalization.
struct TeacherOp {
    TeacherOpMode mode = TeacherOpMode::kSinkhorn;
    int sinkhorn_iters = 3;
    double center_momentum = 0.9;
    std::vector<double> center;  // lazily sized to K, centering mode only
};

// Sharpen R x K raw cosine logit rows into target Distributions. Outputs are
// detached by construction (plain values). Centering mode updates op.center.
std::vector<Distribution> teacher_sharpen(std::span<const double> logit_rows, int rows, int K,
                                          TeacherOp& op, double tau_g);

// ---- graph builders (single implementation of the objective) -------------

// softmax over cosine similarities between normalized bank rows and a
// unit-norm feature
Tensor predict_graph(Tape& tape, const Tensor& bank, const Tensor& feature, double tau);

// plain-value route through the same graph code
Distribution predict(const PrototypeBank& bank, std::span<const double> feature, double tau);

// mean pairwise cross-entropy over M teacher x N student distributions;
// pair (m, n) is skipped when exclude[m*N+n] is set (same-view pairs in
// all-views student mode). pair_ce_out, when given, receives the M x N pair
// values with excluded entries as NaN.
Tensor cross_entropy_pairs_graph(Tape& tape, const std::vector<Distribution>& teacher,
                                 const std::vector<Tensor>& student,
                                 const std::vector<bool>& exclude,
                                 std::vector<double>* pair_ce_out);

double cross_entropy_pairs(const std::vector<Distribution>& teacher,
                           const std::vector<Distribution>& student);

enum class EntropyMode { kMeanEntropy, kLiteralEq4 };

// Regularizer over every student distribution in the batch. kMeanEntropy is
// the Shannon entropy of the mean distribution; kLiteralEq4 averages the raw
// probabilities over B*K, which is constant with zero gradient and is kept
// only for comparison.
Tensor entropy_reg_graph(Tape& tape, const std::vector<Tensor>& students, EntropyMode mode,
                         int batch);

double entropy_reg(const std::vector<Distribution>& students);

struct LossConfig {
    double tau_g = 0.025;
    double tau_l = 0.1;
    double lambda_reg = 1.0;
    EntropyMode entropy_mode = EntropyMode::kMeanEntropy;
    void validate() const;  // rejects tau_g >= tau_l
};

struct LossBreakdown {
    double total = 0.0;
    double ce_term = 0.0;
    double entropy_term = 0.0;
    int m = 0, n = 0;
    std::vector<double> pair_ce;      // m x n, batch mean, NaN where excluded
    std::vector<int> teacher_argmax;  // B*M assignment diagnostics
    Tensor total_tensor;              // scalar on the tape, backward target
};

// One sample's student views on the tape. global_index is -1 for local
// views, or m when the view is the m-th global crop (those pairs are
// excluded against teacher view m).
struct StudentViews {
    std::vector<Tensor> feats;  // unit-norm [d]
    std::vector<int> global_index;
};

// Teacher targets for one batch: cosine logits of the (row-normalized) bank
// against B x M unit teacher features, sharpened by op. Detached by
// construction; perturbing the bank afterwards does not move the targets.
std::vector<Distribution> teacher_targets(
    std::span<const double> bank_values, int K, int d,
    const std::vector<std::vector<std::vector<double>>>& teacher_feats, const LossConfig& cfg,
    TeacherOp& op);

// Differentiable objective given frozen targets (B*M Distributions).
// Gradient flows only into the bank and the student features.
LossBreakdown total_loss_with_targets(Tape& tape, const Tensor& bank,
                                      const std::vector<Distribution>& targets, int m_views,
                                      const std::vector<StudentViews>& students,
                                      const LossConfig& cfg);

// Full training objective for one batch: teacher features (B x M x d raw
// unit vectors, already detached) against student view features.
LossBreakdown total_loss(Tape& tape, const Tensor& bank,
                         const std::vector<std::vector<std::vector<double>>>& teacher_feats,
                         const std::vector<StudentViews>& students, const LossConfig& cfg,
                         TeacherOp& op);

}  // namespace pros
