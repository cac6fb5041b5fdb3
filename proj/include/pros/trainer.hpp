#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pros/augment.hpp"
#include "pros/proto_loss.hpp"
#include "pros/vit.hpp"

namespace pros {

enum class StudentViewMode { kLocalsOnly, kAll };
enum class FilterEmbedderKind { kTeacher, kRandomProjection };

struct TrainConfig {
    // corpus
    int corpus_n = 256;
    int corpus_classes = 4;
    int corpus_side = 32;
    uint64_t corpus_seed = 1;
    // views
    int batch = 16;
    int globals_per_image = 2;
    int locals_per_image = 6;
    int local_side = 16;
    AugmentPolicy augment;
    // encoder (image_side mirrors corpus_side)
    int patch_side = 4;
    int depth = 3;
    int width = 64;
    int heads = 4;
    double mlp_ratio = 4.0;
    int proj_hidden = 64;
    int embed_dim = 32;
    double init_std = 0.02;
    // loss
    int prototypes = 64;
    double tau_g = 0.025;
    double tau_l = 0.1;
    double lambda_reg = 1.0;
    EntropyMode entropy_mode = EntropyMode::kMeanEntropy;
    TeacherOpMode teacher_op = TeacherOpMode::kSinkhorn;
    int sinkhorn_iters = 3;
    double center_momentum = 0.9;
    // retrieval gate
    double filter_theta = -0.5;
    int filter_retries = 3;
    FilterEmbedderKind filter_embedder = FilterEmbedderKind::kTeacher;
    // optimization
    int epochs = 5;
    int warmup_epochs = 2;
    double lr_init = 0.0002;
    double lr_peak = 0.001;
    double lr_final = 1e-6;
    double weight_decay = 0.04;
    double ema_momentum = 0.996;
    double clip_norm = 0.0;  // 0 disables global-norm clipping
    StudentViewMode student_views = StudentViewMode::kLocalsOnly;
    uint64_t run_seed = 1;

    EncoderConfig encoder_config() const;
    LossConfig loss_config() const;
    void validate() const;

    // canonical key=value text; parse(to_text()) is the identity
    std::string to_text() const;
    static TrainConfig from_text(const std::string& text);
    static TrainConfig from_file(const std::string& path);
};

struct OptimizerState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;
    std::vector<std::vector<double>> m;  // parallel to the parameter list
    std::vector<std::vector<double>> v;
};

// Decoupled weight decay applied multiplicatively before the bias-corrected
// moment update. Throws on non-finite gradients.
void adamw_step(const std::vector<ParamRef>& params,
                const std::vector<std::vector<double>>& grads, OptimizerState& state, double lr,
                double weight_decay, double clip_norm = 0.0);

// Linear warmup lr_init -> lr_peak, then half-cosine to lr_final at the last
// step of the schedule; clamps to lr_final beyond it.
double lr_at(int64_t step, const TrainConfig& cfg, int64_t steps_per_epoch);

void ema_update(ModelParams& teacher, const ModelParams& student, double momentum);

struct Checkpoint {
    uint32_t version = 1;
    TrainConfig config;
    ModelParams student;
    ModelParams teacher;
    PrototypeBank bank;
    OptimizerState opt;
    TeacherOp op_state;
    int64_t step = 0;   // optimizer steps completed
    int epoch = 0;      // epochs completed
    double first_epoch_mean_loss = 0.0;
    double last_epoch_mean_loss = 0.0;
};

Checkpoint init_checkpoint(const TrainConfig& cfg);

// Round all f64 training state through the f32 storage grid. Called at every
// checkpoint boundary so a resumed run and an uninterrupted run continue
// from identical state.
void quantize_state(Checkpoint& ck);

// Binary format: magic PROSCKPT, u32 version, length-prefixed config text,
// u32 section count, then per-section records (name, shape, f32
// little-endian data, crc32). Load validates magic, version, shapes against
// the embedded config, and every checksum.
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct StepMetrics {
    int64_t step = 0;
    int epoch = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_ce = 0.0;
    double loss_entropy = 0.0;
    int filter_replaced_count = 0;
    double prototype_usage_entropy = 0.0;
    std::string to_json() const;
};

using MetricsSink = std::function<void(const StepMetrics&)>;
// invoked after each completed epoch, state already quantized
using EpochHook = std::function<void(const Checkpoint&)>;

// verification probe, called after each optimizer step and EMA update
struct StepSnapshot {
    int64_t step = 0;
    bool teacher_grad_absent = true;  // no teacher leaf received any gradient
    const ModelParams* student = nullptr;  // post-update
    const ModelParams* teacher = nullptr;  // post-EMA
};
using StepHook = std::function<void(const StepSnapshot&)>;

struct PretrainResult {
    Checkpoint checkpoint;
    bool aborted = false;
    std::string abort_reason;
};

// Full pre-training loop: multicrop -> retrieval gate -> teacher targets ->
// student forward -> backward -> optimizer step -> EMA teacher update.
// resume continues from a loaded checkpoint (same config).
PretrainResult pretrain(const TrainConfig& cfg, const std::vector<ToyImage>& corpus,
                        const MetricsSink& sink, const EpochHook& epoch_hook = {},
                        const Checkpoint* resume = nullptr, const StepHook& step_hook = {});

// trainer-side parameter list: student parameters followed by the bank
std::vector<ParamRef> trainable_refs(ModelParams& student, PrototypeBank& bank);

}  // namespace pros
