#include "pros/vit.hpp"

#include <cmath>

#include "pros/rng.hpp"

namespace pros {

void EncoderConfig::validate() const {
    if (image_side <= 0 || patch_side <= 0 || channels <= 0 || depth <= 0 || width <= 0 ||
        heads <= 0 || embed_dim <= 0 || proj_hidden <= 0)
        throw ConfigError("encoder config: all dimensions must be positive");
    if (image_side % patch_side != 0)
        throw ConfigError("encoder config: image_side " + std::to_string(image_side) +
                          " not divisible by patch_side " + std::to_string(patch_side));
    if (width % heads != 0)
        throw ConfigError("encoder config: width " + std::to_string(width) +
                          " not divisible by heads " + std::to_string(heads));
    if (mlp_ratio <= 0.0) throw ConfigError("encoder config: mlp_ratio must be positive");
    if (init_std <= 0.0) throw ConfigError("encoder config: init_std must be positive");
}

namespace {

std::vector<double> trunc_normal_vec(size_t n, Rng& rng, double std) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.trunc_normal(std);
    return v;
}

std::vector<double> normal_vec(size_t n, Rng& rng, double std) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal(0.0, std);
    return v;
}

}  // namespace

ModelParams init_model(const EncoderConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelParams m;
    m.cfg = cfg;
    Rng rng(derive_seed(seed, {0x6d6f64656cULL}));
    const double kInitStd = cfg.init_std;

    const size_t w = static_cast<size_t>(cfg.width);
    const size_t tok_len = static_cast<size_t>(cfg.channels) * cfg.patch_side * cfg.patch_side;
    const size_t mlp = static_cast<size_t>(cfg.mlp_dim());

    m.enc.patch_w = trunc_normal_vec(tok_len * w, rng, kInitStd);
    m.enc.patch_b.assign(w, 0.0);
    m.enc.cls = normal_vec(w, rng, kInitStd);
    m.enc.pos = normal_vec(static_cast<size_t>(cfg.tokens() + 1) * w, rng, kInitStd);
    m.enc.blocks.resize(static_cast<size_t>(cfg.depth));
    for (BlockParams& b : m.enc.blocks) {
        b.ln1_g.assign(w, 1.0);
        b.ln1_b.assign(w, 0.0);
        b.qkv_w = trunc_normal_vec(w * 3 * w, rng, kInitStd);
        b.qkv_b.assign(3 * w, 0.0);
        b.attn_w = trunc_normal_vec(w * w, rng, kInitStd);
        b.attn_b.assign(w, 0.0);
        b.ln2_g.assign(w, 1.0);
        b.ln2_b.assign(w, 0.0);
        b.fc1_w = trunc_normal_vec(w * mlp, rng, kInitStd);
        b.fc1_b.assign(mlp, 0.0);
        b.fc2_w = trunc_normal_vec(mlp * w, rng, kInitStd);
        b.fc2_b.assign(w, 0.0);
    }
    m.enc.ln_f_g.assign(w, 1.0);
    m.enc.ln_f_b.assign(w, 0.0);

    const size_t h = static_cast<size_t>(cfg.proj_hidden);
    const size_t d = static_cast<size_t>(cfg.embed_dim);
    m.proj.w1 = trunc_normal_vec(w * h, rng, kInitStd);
    m.proj.b1.assign(h, 0.0);
    m.proj.w2 = trunc_normal_vec(h * h, rng, kInitStd);
    m.proj.b2.assign(h, 0.0);
    m.proj.w3 = trunc_normal_vec(h * d, rng, kInitStd);
    m.proj.b3.assign(d, 0.0);
    return m;
}

void randomize_params(ModelParams& m, uint64_t seed) {
    Rng rng(derive_seed(seed, {0x72616e64ULL}));
    for (const ParamRef& r : param_refs(m)) {
        const bool ln_gain = r.name.ends_with("_g");
        for (double& v : *r.data)
            v = ln_gain ? rng.uniform(0.75, 1.25) : rng.uniform(-0.25, 0.25);
    }
}

std::vector<ParamRef> param_refs(ModelParams& m) {
    const EncoderConfig& c = m.cfg;
    const int w = c.width;
    const int tok_len = c.channels * c.patch_side * c.patch_side;
    const int mlp = c.mlp_dim();
    std::vector<ParamRef> refs;
    refs.push_back({"enc.patch_w", {tok_len, w}, &m.enc.patch_w});
    refs.push_back({"enc.patch_b", {w}, &m.enc.patch_b});
    refs.push_back({"enc.cls", {w}, &m.enc.cls});
    refs.push_back({"enc.pos", {c.tokens() + 1, w}, &m.enc.pos});
    for (int l = 0; l < c.depth; ++l) {
        BlockParams& b = m.enc.blocks[static_cast<size_t>(l)];
        const std::string p = "enc.b" + std::to_string(l) + ".";
        refs.push_back({p + "ln1_g", {w}, &b.ln1_g});
        refs.push_back({p + "ln1_b", {w}, &b.ln1_b});
        refs.push_back({p + "qkv_w", {w, 3 * w}, &b.qkv_w});
        refs.push_back({p + "qkv_b", {3 * w}, &b.qkv_b});
        refs.push_back({p + "attn_w", {w, w}, &b.attn_w});
        refs.push_back({p + "attn_b", {w}, &b.attn_b});
        refs.push_back({p + "ln2_g", {w}, &b.ln2_g});
        refs.push_back({p + "ln2_b", {w}, &b.ln2_b});
        refs.push_back({p + "fc1_w", {w, mlp}, &b.fc1_w});
        refs.push_back({p + "fc1_b", {mlp}, &b.fc1_b});
        refs.push_back({p + "fc2_w", {mlp, w}, &b.fc2_w});
        refs.push_back({p + "fc2_b", {w}, &b.fc2_b});
    }
    refs.push_back({"enc.ln_f_g", {w}, &m.enc.ln_f_g});
    refs.push_back({"enc.ln_f_b", {w}, &m.enc.ln_f_b});
    refs.push_back({"proj.w1", {w, c.proj_hidden}, &m.proj.w1});
    refs.push_back({"proj.b1", {c.proj_hidden}, &m.proj.b1});
    refs.push_back({"proj.w2", {c.proj_hidden, c.proj_hidden}, &m.proj.w2});
    refs.push_back({"proj.b2", {c.proj_hidden}, &m.proj.b2});
    refs.push_back({"proj.w3", {c.proj_hidden, c.embed_dim}, &m.proj.w3});
    refs.push_back({"proj.b3", {c.embed_dim}, &m.proj.b3});
    return refs;
}

TapedModel assemble(const EncoderConfig& cfg, const std::vector<Tensor>& leaves) {
    TapedModel t;
    t.cfg = cfg;
    std::vector<Tensor*> slots;
    slots.insert(slots.end(), {&t.patch_w, &t.patch_b, &t.cls, &t.pos});
    t.blocks.resize(static_cast<size_t>(cfg.depth));
    for (TapedBlock& b : t.blocks)
        slots.insert(slots.end(), {&b.ln1_g, &b.ln1_b, &b.qkv_w, &b.qkv_b, &b.attn_w, &b.attn_b,
                                   &b.ln2_g, &b.ln2_b, &b.fc1_w, &b.fc1_b, &b.fc2_w, &b.fc2_b});
    slots.insert(slots.end(),
                 {&t.ln_f_g, &t.ln_f_b, &t.p1_w, &t.p1_b, &t.p2_w, &t.p2_b, &t.p3_w, &t.p3_b});
    if (slots.size() != leaves.size()) throw ShapeError("assemble: leaf count mismatch");
    for (size_t i = 0; i < leaves.size(); ++i) *slots[i] = leaves[i];
    t.leaves = leaves;
    return t;
}

TapedModel enroll(Tape& tape, const ModelParams& m, bool trainable) {
    auto refs = param_refs(const_cast<ModelParams&>(m));
    std::vector<Tensor> leaves;
    leaves.reserve(refs.size());
    for (const ParamRef& r : refs) leaves.push_back(tape.leaf(r.shape, *r.data, trainable));
    return assemble(m.cfg, leaves);
}

std::vector<double> pos_interp_matrix(int grid_src, int grid_dst) {
    if (grid_src < 1 || grid_dst < 1) throw ShapeError("pos_interp_matrix: grids must be >= 1");
    const int rows = 1 + grid_dst * grid_dst;
    const int cols = 1 + grid_src * grid_src;
    std::vector<double> w(static_cast<size_t>(rows) * cols, 0.0);
    w[0] = 1.0;  // cls entry copied
    for (int y = 0; y < grid_dst; ++y) {
        for (int x = 0; x < grid_dst; ++x) {
            const double fy = grid_dst > 1
                                  ? static_cast<double>(y) * (grid_src - 1) / (grid_dst - 1)
                                  : (grid_src - 1) * 0.5;
            const double fx = grid_dst > 1
                                  ? static_cast<double>(x) * (grid_src - 1) / (grid_dst - 1)
                                  : (grid_src - 1) * 0.5;
            const int y0 = static_cast<int>(std::floor(fy));
            const int x0 = static_cast<int>(std::floor(fx));
            const int y1 = std::min(y0 + 1, grid_src - 1);
            const int x1 = std::min(x0 + 1, grid_src - 1);
            const double wy = fy - y0;
            const double wx = fx - x0;
            const int row = 1 + y * grid_dst + x;
            auto put = [&](int sy, int sx, double weight) {
                if (weight != 0.0)
                    w[static_cast<size_t>(row) * cols + 1 + sy * grid_src + sx] += weight;
            };
            put(y0, x0, (1.0 - wy) * (1.0 - wx));
            put(y0, x1, (1.0 - wy) * wx);
            put(y1, x0, wy * (1.0 - wx));
            put(y1, x1, wy * wx);
        }
    }
    return w;
}

Tensor image_tensor(Tape& tape, const Image& img) {
    return tape.constant({img.channels, img.height, img.width}, img.pix);
}

Tensor encode(Tape& tape, const TapedModel& m, const Tensor& image, AttentionCapture* capture) {
    const EncoderConfig& cfg = m.cfg;
    if (image.ndim() != 3 || image.dim(0) != cfg.channels)
        throw ShapeError("encode: expected [" + std::to_string(cfg.channels) + ",H,W] image");
    if (image.dim(1) != image.dim(2)) throw ShapeError("encode: expected square image");
    const int side = image.dim(1);
    if (side % cfg.patch_side != 0)
        throw ShapeError("encode: side " + std::to_string(side) + " not divisible by patch " +
                         std::to_string(cfg.patch_side));

    const int w = cfg.width;
    const int grid_in = side / cfg.patch_side;
    const int tokens = grid_in * grid_in;

    Tensor x = add(matmul(patchify(image, cfg.patch_side), m.patch_w), m.patch_b);
    x = concat_rows(reshape(m.cls, {1, w}), x);

    Tensor pos_used = m.pos;
    if (grid_in != cfg.grid()) {
        Tensor interp = tape.constant({tokens + 1, cfg.tokens() + 1},
                                      pos_interp_matrix(cfg.grid(), grid_in));
        pos_used = matmul(interp, m.pos);
    }
    x = add(x, pos_used);

    if (capture) {
        capture->tokens = tokens;
        capture->heads = cfg.heads;
        capture->layers.assign(static_cast<size_t>(cfg.depth), {});
    }

    const int hd = cfg.head_dim();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int l = 0; l < cfg.depth; ++l) {
        const TapedBlock& b = m.blocks[static_cast<size_t>(l)];
        Tensor h = layer_norm(x, b.ln1_g, b.ln1_b);
        Tensor qkv = add(matmul(h, b.qkv_w), b.qkv_b);
        Tensor q = slice_cols(qkv, 0, w);
        Tensor k = slice_cols(qkv, w, w);
        Tensor v = slice_cols(qkv, 2 * w, w);
        std::vector<Tensor> ctx;
        ctx.reserve(static_cast<size_t>(cfg.heads));
        for (int i = 0; i < cfg.heads; ++i) {
            Tensor qi = slice_cols(q, i * hd, hd);
            Tensor ki = slice_cols(k, i * hd, hd);
            Tensor vi = slice_cols(v, i * hd, hd);
            Tensor att = softmax(scale(matmul(qi, transpose(ki)), att_scale), 1.0);
            if (capture) {
                auto& layer = capture->layers[static_cast<size_t>(l)];
                layer.insert(layer.end(), att.values().begin(), att.values().end());
            }
            ctx.push_back(matmul(att, vi));
        }
        x = add(x, add(matmul(concat_cols(ctx), b.attn_w), b.attn_b));
        Tensor h2 = layer_norm(x, b.ln2_g, b.ln2_b);
        Tensor mlp = add(matmul(gelu(add(matmul(h2, b.fc1_w), b.fc1_b)), b.fc2_w), b.fc2_b);
        x = add(x, mlp);
    }
    x = layer_norm(x, m.ln_f_g, m.ln_f_b);
    return reshape(take_rows(x, {0}), {w});
}

Tensor project(Tape&, const TapedModel& m, const Tensor& feature) {
    if (feature.ndim() != 1 || feature.dim(0) != m.cfg.width)
        throw ShapeError("project: expected [width] feature");
    Tensor x = reshape(feature, {1, m.cfg.width});
    x = gelu(add(matmul(x, m.p1_w), m.p1_b));
    x = gelu(add(matmul(x, m.p2_w), m.p2_b));
    x = add(matmul(x, m.p3_w), m.p3_b);
    return l2_normalize(reshape(x, {m.cfg.embed_dim}));
}

Tensor embed_image(Tape& tape, const TapedModel& m, const Image& img) {
    return project(tape, m, encode(tape, m, image_tensor(tape, img)));
}

Tensor encode_batch(Tape& tape, const TapedModel& m, const std::vector<Image>& views) {
    if (views.empty()) throw ShapeError("encode_batch: no views");
    const EncoderConfig& cfg = m.cfg;
    const int side = views[0].height;
    for (const Image& v : views)
        if (v.channels != cfg.channels || v.height != side || v.width != side)
            throw ShapeError("encode_batch: views must share one square resolution");
    if (side % cfg.patch_side != 0)
        throw ShapeError("encode_batch: side not divisible by patch side");

    const int V = static_cast<int>(views.size());
    const int w = cfg.width;
    const int grid_in = side / cfg.patch_side;
    const int tokens = grid_in * grid_in;
    const int t1 = tokens + 1;
    const int tok_len = cfg.channels * cfg.patch_side * cfg.patch_side;

    // images carry no gradient: patchify all views into one constant
    std::vector<double> tok_data(static_cast<size_t>(V) * tokens * tok_len);
    {
        Tape scratch;
        for (int v = 0; v < V; ++v) {
            Tensor p = patchify(image_tensor(scratch, views[static_cast<size_t>(v)]),
                                cfg.patch_side);
            std::copy(p.values().begin(), p.values().end(),
                      tok_data.begin() + static_cast<int64_t>(v) * tokens * tok_len);
        }
    }
    Tensor tokens_all = tape.constant({V * tokens, tok_len}, std::move(tok_data));
    Tensor patched = add(matmul(tokens_all, m.patch_w), m.patch_b);  // [V*T, w]

    // interleave the cls row ahead of every view's tokens
    std::vector<int> gather(static_cast<size_t>(V) * t1);
    for (int v = 0; v < V; ++v) {
        gather[static_cast<size_t>(v) * t1] = 0;
        for (int t = 0; t < tokens; ++t)
            gather[static_cast<size_t>(v) * t1 + 1 + t] = 1 + v * tokens + t;
    }
    Tensor x = take_rows(concat_rows(reshape(m.cls, {1, w}), patched), gather);  // [V*t1, w]

    Tensor pos_used = m.pos;
    if (grid_in != cfg.grid()) {
        Tensor interp =
            tape.constant({t1, cfg.tokens() + 1}, pos_interp_matrix(cfg.grid(), grid_in));
        pos_used = matmul(interp, m.pos);
    }
    // broadcast the positional table over views
    x = reshape(add(reshape(x, {V, t1 * w}), reshape(pos_used, {t1 * w})), {V * t1, w});

    const int hd = cfg.head_dim();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int l = 0; l < cfg.depth; ++l) {
        const TapedBlock& b = m.blocks[static_cast<size_t>(l)];
        Tensor h = layer_norm(x, b.ln1_g, b.ln1_b);
        Tensor qkv = add(matmul(h, b.qkv_w), b.qkv_b);  // [V*t1, 3w]
        std::vector<Tensor> ctx_rows;
        ctx_rows.reserve(static_cast<size_t>(V));
        for (int vi = 0; vi < V; ++vi) {
            std::vector<Tensor> ctx;
            ctx.reserve(static_cast<size_t>(cfg.heads));
            for (int i = 0; i < cfg.heads; ++i) {
                Tensor qi = slice_block(qkv, vi * t1, t1, i * hd, hd);
                Tensor ki = slice_block(qkv, vi * t1, t1, w + i * hd, hd);
                Tensor vi_t = slice_block(qkv, vi * t1, t1, 2 * w + i * hd, hd);
                Tensor att = softmax(scale(matmul(qi, transpose(ki)), att_scale), 1.0);
                ctx.push_back(matmul(att, vi_t));
            }
            ctx_rows.push_back(concat_cols(ctx));
        }
        x = add(x, add(matmul(concat_rows(ctx_rows), b.attn_w), b.attn_b));
        Tensor h2 = layer_norm(x, b.ln2_g, b.ln2_b);
        Tensor mlp = add(matmul(gelu(add(matmul(h2, b.fc1_w), b.fc1_b)), b.fc2_w), b.fc2_b);
        x = add(x, mlp);
    }
    x = layer_norm(x, m.ln_f_g, m.ln_f_b);
    std::vector<int> cls_rows(static_cast<size_t>(V));
    for (int v = 0; v < V; ++v) cls_rows[static_cast<size_t>(v)] = v * t1;
    return take_rows(x, cls_rows);  // [V, w]
}

Tensor project_batch(Tape&, const TapedModel& m, const Tensor& features) {
    if (features.ndim() != 2 || features.dim(1) != m.cfg.width)
        throw ShapeError("project_batch: expected [V, width] features");
    Tensor x = gelu(add(matmul(features, m.p1_w), m.p1_b));
    x = gelu(add(matmul(x, m.p2_w), m.p2_b));
    x = add(matmul(x, m.p3_w), m.p3_b);
    return l2_normalize_rows(x);
}

Tensor embed_batch(Tape& tape, const TapedModel& m, const std::vector<Image>& views) {
    return project_batch(tape, m, encode_batch(tape, m, views));
}

AttentionGrid attention_map(const ModelParams& m, const Image& img, int layer) {
    if (layer < 1 || layer > m.cfg.depth)
        throw ShapeError("attention_map: layer " + std::to_string(layer) + " out of [1," +
                         std::to_string(m.cfg.depth) + "]");
    Tape tape;
    TapedModel taped = enroll(tape, m, false);
    AttentionCapture cap;
    encode(tape, taped, image_tensor(tape, img), &cap);

    const int tokens = cap.tokens;
    const int grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(tokens))));
    const auto& probs = cap.layers[static_cast<size_t>(layer - 1)];  // heads x (T+1) x (T+1)
    const int stride = (tokens + 1) * (tokens + 1);
    AttentionGrid out;
    out.heads = cap.heads;
    out.grid = grid;
    out.data.resize(static_cast<size_t>(cap.heads) * tokens);
    for (int h = 0; h < cap.heads; ++h) {
        // cls query row, cls->cls column excluded
        const double* row = probs.data() + static_cast<size_t>(h) * stride;
        for (int t = 0; t < tokens; ++t)
            out.data[static_cast<size_t>(h) * tokens + t] = row[1 + t];
    }
    return out;
}

}  // namespace pros
