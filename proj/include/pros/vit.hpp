#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pros/image.hpp"
#include "pros/tensor.hpp"

namespace pros {

struct EncoderConfig {
    int image_side = 32;  // native (global) input resolution
    int patch_side = 4;
    int channels = 3;
    int depth = 3;
    int width = 64;
    int heads = 4;
    double mlp_ratio = 4.0;
    int proj_hidden = 64;  // projector hidden width
    int embed_dim = 32;    // projector output dim d
    double init_std = 0.02;  // trunc-normal scale for projection weights

    int grid() const { return image_side / patch_side; }
    int tokens() const { return grid() * grid(); }
    int mlp_dim() const { return static_cast<int>(width * mlp_ratio); }
    int head_dim() const { return width / heads; }
    void validate() const;
};

struct BlockParams {
    std::vector<double> ln1_g, ln1_b;
    std::vector<double> qkv_w, qkv_b;    // [width, 3*width], [3*width]
    std::vector<double> attn_w, attn_b;  // [width, width], [width]
    std::vector<double> ln2_g, ln2_b;
    std::vector<double> fc1_w, fc1_b;  // [width, mlp]
    std::vector<double> fc2_w, fc2_b;  // [mlp, width]
};

struct EncoderParams {
    std::vector<double> patch_w, patch_b;  // [C*p*p, width], [width]
    std::vector<double> cls;               // [width]
    std::vector<double> pos;               // [tokens+1, width]
    std::vector<BlockParams> blocks;
    std::vector<double> ln_f_g, ln_f_b;
};

struct ProjectorParams {
    std::vector<double> w1, b1;  // [width, hidden]
    std::vector<double> w2, b2;  // [hidden, hidden]
    std::vector<double> w3, b3;  // [hidden, d]
};

// One encoder + projector parameter tree (a teacher or a student).
struct ModelParams {
    EncoderConfig cfg;
    EncoderParams enc;
    ProjectorParams proj;
};

// Stable name/shape/data view of every parameter, in a fixed order shared by
// the optimizer, EMA update, and checkpoint serialization.
struct ParamRef {
    std::string name;
    Shape shape;
    std::vector<double>* data;
};
std::vector<ParamRef> param_refs(ModelParams& m);

ModelParams init_model(const EncoderConfig& cfg, uint64_t seed);

// Overwrite every parameter with moderate-magnitude random values (layer-norm
// gains near 1). Gradient checks need points like these: at the tiny init
// scale the pre-normalization projector output is near zero and the
// finite-difference oracle loses accuracy to curvature.
void randomize_params(ModelParams& m, uint64_t seed);

// Tape-enrolled parameter handles; trainable controls requires_grad.
struct TapedBlock {
    Tensor ln1_g, ln1_b, qkv_w, qkv_b, attn_w, attn_b, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
};

struct TapedModel {
    EncoderConfig cfg;
    Tensor patch_w, patch_b, cls, pos;
    std::vector<TapedBlock> blocks;
    Tensor ln_f_g, ln_f_b;
    Tensor p1_w, p1_b, p2_w, p2_b, p3_w, p3_b;
    std::vector<Tensor> leaves;  // same order as param_refs
};

TapedModel enroll(Tape& tape, const ModelParams& m, bool trainable);
// wire pre-built leaf tensors (in param_refs order) into a TapedModel
TapedModel assemble(const EncoderConfig& cfg, const std::vector<Tensor>& leaves);

// Raw attention probabilities captured during a forward pass:
// layers[l] holds heads x (T+1) x (T+1) row-major.
struct AttentionCapture {
    int tokens = 0;
    int heads = 0;
    std::vector<std::vector<double>> layers;
};

// cls-token feature after the final layer norm. Accepts any square input
// whose side is divisible by the patch; the positional table is resampled
// bilinearly when the grid differs from the native one.
Tensor encode(Tape& tape, const TapedModel& m, const Tensor& image,
              AttentionCapture* capture = nullptr);
Tensor project(Tape& tape, const TapedModel& m, const Tensor& feature);
// unit-norm d-dim embedding, encode followed by project
Tensor embed_image(Tape& tape, const TapedModel& m, const Image& img);

// Batched views at one resolution through a single set of large ops;
// bitwise-identical to per-image encode. Returns [V, width] cls features.
Tensor encode_batch(Tape& tape, const TapedModel& m, const std::vector<Image>& views);
// [V, width] -> unit-norm rows [V, embed_dim]
Tensor project_batch(Tape& tape, const TapedModel& m, const Tensor& features);
Tensor embed_batch(Tape& tape, const TapedModel& m, const std::vector<Image>& views);

// Per-head cls-to-patch attention of the given layer (1-based), reshaped to
// the patch grid. Rows exclude the cls self-attention column.
struct AttentionGrid {
    int heads = 0;
    int grid = 0;
    std::vector<double> data;  // heads x grid x grid
    double at(int h, int y, int x) const {
        return data[(static_cast<size_t>(h) * grid + y) * grid + x];
    }
};
AttentionGrid attention_map(const ModelParams& m, const Image& img, int layer);

// Bilinear resampling matrix [1+dst^2, 1+src^2] for the positional table;
// row 0 copies the cls entry. Exposed for oracle tests.
std::vector<double> pos_interp_matrix(int grid_src, int grid_dst);

Tensor image_tensor(Tape& tape, const Image& img);

}  // namespace pros
