#include "pros/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>

#include "pros/retrieval.hpp"
#include "pros/rng.hpp"

namespace pros {

namespace {

constexpr uint64_t kStudentInitTag = 0x73747564;
constexpr uint64_t kProtoInitTag = 0x62616e6b;
constexpr uint64_t kShuffleTag = 0x73687566;
constexpr uint64_t kViewTag = 0x76696577;
constexpr uint64_t kEmbedTag = 0x656d6264;

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void quantize_vec(std::vector<double>& v) {
    for (double& x : v) x = quantize_f32(x);
}

}  // namespace

std::vector<ParamRef> trainable_refs(ModelParams& student, PrototypeBank& bank) {
    std::vector<ParamRef> refs = param_refs(student);
    refs.push_back({"bank.p", {bank.K, bank.d}, &bank.p});
    return refs;
}

void adamw_step(const std::vector<ParamRef>& params,
                const std::vector<std::vector<double>>& grads, OptimizerState& state, double lr,
                double weight_decay, double clip_norm) {
    if (params.size() != grads.size()) throw ShapeError("adamw: grad list arity mismatch");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].data->size(), 0.0);
            state.v[i].assign(params[i].data->size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adamw: state arity mismatch");

    for (size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() != params[i].data->size())
            throw ShapeError("adamw: grad size mismatch for " + params[i].name);
        for (double g : grads[i])
            if (!std::isfinite(g))
                throw NumericError("adamw: non-finite gradient in " + params[i].name);
    }

    double scale = 1.0;
    if (clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& g : grads)
            for (double x : g) sq += x * x;
        const double norm = std::sqrt(sq);
        if (norm > clip_norm) scale = clip_norm / norm;
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        std::vector<double>& p = *params[i].data;
        std::vector<double>& m = state.m[i];
        std::vector<double>& v = state.v[i];
        const std::vector<double>& g = grads[i];
        for (size_t j = 0; j < p.size(); ++j) {
            const double gj = g[j] * scale;
            p[j] *= 1.0 - lr * weight_decay;  // decoupled decay before the moment step
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

double lr_at(int64_t step, const TrainConfig& cfg, int64_t steps_per_epoch) {
    if (step < 0) throw ConfigError("lr_at: negative step");
    if (steps_per_epoch < 1) throw ConfigError("lr_at: steps_per_epoch must be >= 1");
    const int64_t warmup = static_cast<int64_t>(cfg.warmup_epochs) * steps_per_epoch;
    const int64_t last = static_cast<int64_t>(cfg.epochs) * steps_per_epoch - 1;
    if (warmup > 0 && step <= warmup)
        return cfg.lr_init + (cfg.lr_peak - cfg.lr_init) * static_cast<double>(step) /
                                 static_cast<double>(warmup);
    if (step >= last || last <= warmup) return cfg.lr_final;
    const double t = static_cast<double>(step - warmup) / static_cast<double>(last - warmup);
    return cfg.lr_final + 0.5 * (cfg.lr_peak - cfg.lr_final) * (1.0 + std::cos(M_PI * t));
}

void ema_update(ModelParams& teacher, const ModelParams& student, double momentum) {
    if (momentum < 0.0 || momentum > 1.0) throw ConfigError("ema_update: momentum out of [0,1]");
    auto t_refs = param_refs(teacher);
    auto s_refs = param_refs(const_cast<ModelParams&>(student));
    if (t_refs.size() != s_refs.size()) throw ShapeError("ema_update: parameter tree mismatch");
    for (size_t i = 0; i < t_refs.size(); ++i) {
        if (t_refs[i].name != s_refs[i].name || t_refs[i].data->size() != s_refs[i].data->size())
            throw ShapeError("ema_update: parameter tree mismatch at " + t_refs[i].name);
        std::vector<double>& t = *t_refs[i].data;
        const std::vector<double>& s = *s_refs[i].data;
        for (size_t j = 0; j < t.size(); ++j) t[j] = momentum * t[j] + (1.0 - momentum) * s[j];
    }
}

Checkpoint init_checkpoint(const TrainConfig& cfg) {
    cfg.validate();
    Checkpoint ck;
    ck.config = cfg;
    ck.student = init_model(cfg.encoder_config(), derive_seed(cfg.run_seed, {kStudentInitTag}));
    ck.teacher = ck.student;  // EMA target starts at the student init
    ck.bank = init_prototypes(cfg.prototypes, cfg.embed_dim,
                              derive_seed(cfg.run_seed, {kProtoInitTag}));
    ck.op_state.mode = cfg.teacher_op;
    ck.op_state.sinkhorn_iters = cfg.sinkhorn_iters;
    ck.op_state.center_momentum = cfg.center_momentum;
    auto refs = trainable_refs(ck.student, ck.bank);
    ck.opt.m.resize(refs.size());
    ck.opt.v.resize(refs.size());
    for (size_t i = 0; i < refs.size(); ++i) {
        ck.opt.m[i].assign(refs[i].data->size(), 0.0);
        ck.opt.v[i].assign(refs[i].data->size(), 0.0);
    }
    return ck;
}

void quantize_state(Checkpoint& ck) {
    for (const ParamRef& r : param_refs(ck.student)) quantize_vec(*r.data);
    for (const ParamRef& r : param_refs(ck.teacher)) quantize_vec(*r.data);
    quantize_vec(ck.bank.p);
    for (auto& m : ck.opt.m) quantize_vec(m);
    for (auto& v : ck.opt.v) quantize_vec(v);
    quantize_vec(ck.op_state.center);
    ck.first_epoch_mean_loss = quantize_f32(ck.first_epoch_mean_loss);
    ck.last_epoch_mean_loss = quantize_f32(ck.last_epoch_mean_loss);
}

std::string StepMetrics::to_json() const {
    char buf[320];
    std::snprintf(buf, sizeof(buf),
                  "{\"step\":%lld,\"epoch\":%d,\"lr\":%.17g,\"loss_total\":%.17g,"
                  "\"loss_ce\":%.17g,\"loss_entropy\":%.17g,\"filter_replaced_count\":%d,"
                  "\"prototype_usage_entropy\":%.17g}",
                  static_cast<long long>(step), epoch, lr, loss_total, loss_ce, loss_entropy,
                  filter_replaced_count, prototype_usage_entropy);
    return buf;
}

namespace {

double usage_entropy(const std::vector<int>& argmax, int K) {
    std::vector<double> counts(static_cast<size_t>(K), 0.0);
    for (int a : argmax) counts[static_cast<size_t>(a)] += 1.0;
    for (double& c : counts) c /= static_cast<double>(argmax.size());
    return entropy(counts);
}

}  // namespace

PretrainResult pretrain(const TrainConfig& cfg, const std::vector<ToyImage>& corpus,
                        const MetricsSink& sink, const EpochHook& epoch_hook,
                        const Checkpoint* resume, const StepHook& step_hook) {
    cfg.validate();
    if (corpus.empty()) throw ConfigError("pretrain: empty corpus");
    for (const ToyImage& img : corpus)
        if (img.pixels.height != cfg.corpus_side || img.pixels.width != cfg.corpus_side)
            throw ShapeError("pretrain: corpus image side does not match corpus_side");
    const int64_t steps_per_epoch = static_cast<int64_t>(corpus.size()) / cfg.batch;
    if (steps_per_epoch < 1) throw ConfigError("pretrain: corpus smaller than one batch");

    Checkpoint ck;
    if (resume) {
        if (resume->config.to_text() != cfg.to_text())
            throw ConfigError("pretrain: resume checkpoint config differs from the given config");
        ck = *resume;
        if (ck.epoch > cfg.epochs) throw ConfigError("pretrain: checkpoint beyond schedule");
    } else {
        ck = init_checkpoint(cfg);
    }

    TeacherEmbedder teacher_embedder(&ck.teacher);
    std::optional<RandomProjectionEmbedder> random_embedder;
    const Embedder* embedder = &teacher_embedder;
    if (cfg.filter_embedder == FilterEmbedderKind::kRandomProjection) {
        random_embedder.emplace(32, derive_seed(cfg.run_seed, {kEmbedTag}));
        embedder = &*random_embedder;
    }

    const int B = cfg.batch;
    const int M = cfg.globals_per_image;
    const int N = cfg.locals_per_image;
    const LossConfig loss_cfg = cfg.loss_config();

    PretrainResult result;
    Checkpoint last_good = ck;

    for (int e = ck.epoch; e < cfg.epochs; ++e) {
        std::vector<int> order(corpus.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        Rng shuffle_rng(derive_seed(cfg.run_seed, {kShuffleTag, static_cast<uint64_t>(e)}));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.uniform_int(
                                        static_cast<int>(i)))]);
        const uint64_t view_seed = derive_seed(cfg.run_seed, {kViewTag, static_cast<uint64_t>(e)});

        double epoch_loss = 0.0;
        for (int64_t b = 0; b < steps_per_epoch; ++b) {
            std::vector<const ToyImage*> batch(static_cast<size_t>(B));
            for (int i = 0; i < B; ++i)
                batch[static_cast<size_t>(i)] =
                    &corpus[static_cast<size_t>(order[static_cast<size_t>(b * B + i)])];

            try {
                std::vector<ViewSet> views(static_cast<size_t>(B));
                std::vector<Image> all_globals;
                all_globals.reserve(static_cast<size_t>(B) * M);
                for (int i = 0; i < B; ++i) {
                    views[static_cast<size_t>(i)] =
                        multicrop(*batch[static_cast<size_t>(i)], M, N, cfg.corpus_side,
                                  cfg.local_side, cfg.augment, view_seed);
                    for (const Image& g : views[static_cast<size_t>(i)].globals)
                        all_globals.push_back(g);
                }

                // one detached teacher pass over every global view; the gate
                // reuses these embeddings when the teacher is the embedder
                std::vector<std::vector<std::vector<double>>> teacher_feats(
                    static_cast<size_t>(B));
                {
                    Tape no_grad;
                    TapedModel teacher_ng = enroll(no_grad, ck.teacher, false);
                    Tensor g_embs = embed_batch(no_grad, teacher_ng, all_globals);
                    const int d = g_embs.dim(1);
                    for (int i = 0; i < B; ++i)
                        for (int m = 0; m < M; ++m) {
                            const int64_t row = static_cast<int64_t>(i) * M + m;
                            teacher_feats[static_cast<size_t>(i)].emplace_back(
                                g_embs.values().begin() + row * d,
                                g_embs.values().begin() + (row + 1) * d);
                        }
                }

                int replaced = 0;
                for (int i = 0; i < B; ++i) {
                    const ToyImage& img = *batch[static_cast<size_t>(i)];
                    ViewSet& vs = views[static_cast<size_t>(i)];
                    FilterConfig fc;
                    fc.theta = cfg.filter_theta;
                    fc.max_retries = cfg.filter_retries;
                    fc.embedder = embedder;
                    RecropFn recrop = [&](int local_index, int attempt) {
                        return recrop_local(img, cfg.local_side, cfg.augment, view_seed,
                                            M + local_index, attempt);
                    };
                    auto [curated, report] =
                        cfg.filter_embedder == FilterEmbedderKind::kTeacher
                            ? filter_locals(vs.globals, teacher_feats[static_cast<size_t>(i)],
                                            vs.locals, fc, recrop)
                            : filter_locals(vs.globals, vs.locals, fc, recrop);
                    vs.locals = std::move(curated);
                    replaced += report.replaced_count();
                }

                Tape tape;
                TapedModel student_t = enroll(tape, ck.student, true);
                TapedModel teacher_t = enroll(tape, ck.teacher, false);
                Tensor bank_t = tape.leaf({ck.bank.K, ck.bank.d}, ck.bank.p, true);

                std::vector<Image> all_locals;
                all_locals.reserve(static_cast<size_t>(B) * N);
                for (const ViewSet& vs : views)
                    for (const Image& l : vs.locals) all_locals.push_back(l);
                Tensor local_embs = embed_batch(tape, student_t, all_locals);  // [B*N, d]
                Tensor global_embs_s;  // student globals, all-views mode only
                if (cfg.student_views == StudentViewMode::kAll)
                    global_embs_s = embed_batch(tape, student_t, all_globals);

                const int d = ck.bank.d;
                std::vector<StudentViews> students(static_cast<size_t>(B));
                for (int i = 0; i < B; ++i) {
                    StudentViews& sv = students[static_cast<size_t>(i)];
                    if (cfg.student_views == StudentViewMode::kAll) {
                        for (int m = 0; m < M; ++m) {
                            sv.feats.push_back(
                                reshape(take_rows(global_embs_s, {i * M + m}), {d}));
                            sv.global_index.push_back(m);
                        }
                    }
                    for (int n = 0; n < N; ++n) {
                        sv.feats.push_back(reshape(take_rows(local_embs, {i * N + n}), {d}));
                        sv.global_index.push_back(-1);
                    }
                }

                LossBreakdown lb =
                    total_loss(tape, bank_t, teacher_feats, students, loss_cfg, ck.op_state);
                tape.backward(lb.total_tensor);

                auto refs = trainable_refs(ck.student, ck.bank);
                std::vector<std::vector<double>> grads(refs.size());
                for (size_t i = 0; i < student_t.leaves.size(); ++i) {
                    const Tensor& leaf = student_t.leaves[i];
                    if (leaf.has_grad())
                        grads[i].assign(leaf.grad().begin(), leaf.grad().end());
                    else
                        grads[i].assign(refs[i].data->size(), 0.0);
                }
                grads.back() = bank_t.has_grad()
                                   ? std::vector<double>(bank_t.grad().begin(), bank_t.grad().end())
                                   : std::vector<double>(ck.bank.p.size(), 0.0);

                const double lr = lr_at(ck.step, cfg, steps_per_epoch);
                adamw_step(refs, grads, ck.opt, lr, cfg.weight_decay, cfg.clip_norm);
                ema_update(ck.teacher, ck.student, cfg.ema_momentum);

                if (step_hook) {
                    StepSnapshot snap;
                    snap.step = ck.step;
                    for (const Tensor& leaf : teacher_t.leaves)
                        if (leaf.has_grad()) snap.teacher_grad_absent = false;
                    snap.student = &ck.student;
                    snap.teacher = &ck.teacher;
                    step_hook(snap);
                }

                if (sink) {
                    StepMetrics sm;
                    sm.step = ck.step;
                    sm.epoch = e;
                    sm.lr = lr;
                    sm.loss_total = lb.total;
                    sm.loss_ce = lb.ce_term;
                    sm.loss_entropy = lb.entropy_term;
                    sm.filter_replaced_count = replaced;
                    sm.prototype_usage_entropy = usage_entropy(lb.teacher_argmax, ck.bank.K);
                    sink(sm);
                }
                epoch_loss += lb.total;
                ck.step += 1;
            } catch (const NumericError& err) {
                result.checkpoint = last_good;
                result.aborted = true;
                result.abort_reason = err.what();
                return result;
            }
        }
        ck.epoch = e + 1;
        const double mean_loss = epoch_loss / static_cast<double>(steps_per_epoch);
        if (e == 0) ck.first_epoch_mean_loss = mean_loss;
        ck.last_epoch_mean_loss = mean_loss;
        quantize_state(ck);
        last_good = ck;
        if (epoch_hook) epoch_hook(ck);
    }
    result.checkpoint = std::move(ck);
    return result;
}

}  // namespace pros
