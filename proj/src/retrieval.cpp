#include "pros/retrieval.hpp"

#include <cmath>
#include <cstdio>

#include "pros/augment.hpp"
#include "pros/rng.hpp"
#include "pros/tensor.hpp"

namespace pros {

std::vector<std::vector<double>> Embedder::embed_many(const std::vector<Image>& images) const {
    std::vector<std::vector<double>> out;
    out.reserve(images.size());
    for (const Image& img : images) out.push_back(embed(img));
    return out;
}

std::vector<double> TeacherEmbedder::embed(const Image& image) const {
    Tape tape;
    TapedModel taped = enroll(tape, *teacher_, false);
    Tensor z = embed_image(tape, taped, image);
    return {z.values().begin(), z.values().end()};
}

std::vector<std::vector<double>> TeacherEmbedder::embed_many(
    const std::vector<Image>& images) const {
    if (images.empty()) return {};
    Tape tape;
    TapedModel taped = enroll(tape, *teacher_, false);
    Tensor z = embed_batch(tape, taped, images);
    std::vector<std::vector<double>> out(images.size());
    const int d = z.dim(1);
    for (size_t i = 0; i < images.size(); ++i)
        out[i].assign(z.values().begin() + static_cast<int64_t>(i) * d,
                      z.values().begin() + static_cast<int64_t>(i + 1) * d);
    return out;
}

RandomProjectionEmbedder::RandomProjectionEmbedder(int out_dim, uint64_t seed, int down_side)
    : out_dim_(out_dim), down_side_(down_side) {
    if (out_dim < 1 || down_side < 1)
        throw ConfigError("random projection embedder: bad dimensions");
    Rng rng(derive_seed(seed, {0x656d626564ULL}));
    proj_.resize(static_cast<size_t>(out_dim) * 3 * down_side * down_side);
    for (double& v : proj_) v = rng.normal();
}

std::vector<double> RandomProjectionEmbedder::embed(const Image& image) const {
    Image down = resize_bilinear(image, down_side_, down_side_);
    const size_t in = down.pix.size();
    std::vector<double> out(static_cast<size_t>(out_dim_), 0.0);
    for (int i = 0; i < out_dim_; ++i)
        for (size_t j = 0; j < in; ++j)
            out[static_cast<size_t>(i)] += proj_[static_cast<size_t>(i) * in + j] * down.pix[j];
    double sq = 0.0;
    for (double v : out) sq += v * v;
    const double nrm = std::sqrt(sq);
    if (nrm <= kNormEps) throw NumericError("embed: degenerate embedding norm");
    for (double& v : out) v /= nrm;
    return out;
}

void FilterConfig::validate() const {
    if (theta < -1.0 || theta > 1.0) throw ConfigError("filter: theta must lie in [-1,1]");
    if (max_retries < 0) throw ConfigError("filter: max_retries must be >= 0");
    if (embedder == nullptr) throw ConfigError("filter: embedder not set");
}

int FilterReport::replaced_count() const {
    int n = 0;
    for (const FilterDecision& d : decisions)
        if (d.retries > 0 || d.fallback) ++n;
    return n;
}

std::string FilterReport::to_jsonl() const {
    std::string out;
    char buf[160];
    for (const FilterDecision& d : decisions) {
        std::snprintf(buf, sizeof(buf),
                      "{\"local\":%d,\"similarity\":%.17g,\"kept\":%s,\"retries\":%d,"
                      "\"fallback\":%s}\n",
                      d.local_index, d.similarity, d.kept ? "true" : "false", d.retries,
                      d.fallback ? "true" : "false");
        out += buf;
    }
    return out;
}

namespace {

double max_cosine(const std::vector<std::vector<double>>& global_embs,
                  const std::vector<double>& emb) {
    double best = -1.0;
    for (const auto& g : global_embs) {
        double s = 0.0;
        for (size_t j = 0; j < g.size(); ++j) s += g[j] * emb[j];
        best = std::max(best, s);
    }
    return best;
}

}  // namespace

std::pair<std::vector<Image>, FilterReport> filter_locals(
    const std::vector<Image>& globals, const std::vector<std::vector<double>>& global_embs,
    const std::vector<Image>& locals, const FilterConfig& cfg, const RecropFn& recrop) {
    cfg.validate();
    if (globals.empty()) throw ShapeError("filter_locals: need at least one global view");
    if (global_embs.size() != globals.size())
        throw ShapeError("filter_locals: precomputed embedding count mismatch");

    std::vector<Image> curated;
    curated.reserve(locals.size());
    FilterReport report;
    report.decisions.reserve(locals.size());

    // first pass over all locals in one batch; retries embed individually
    std::vector<std::vector<double>> first_embs =
        locals.empty() ? std::vector<std::vector<double>>{} : cfg.embedder->embed_many(locals);

    for (size_t i = 0; i < locals.size(); ++i) {
        FilterDecision dec;
        dec.local_index = static_cast<int>(i);
        Image view = locals[i];
        double sim = max_cosine(global_embs, first_embs[i]);
        int attempt = 0;
        while (sim < cfg.theta && attempt < cfg.max_retries) {
            ++attempt;
            view = recrop(static_cast<int>(i), attempt);
            sim = max_cosine(global_embs, cfg.embedder->embed(view));
        }
        dec.retries = attempt;
        if (sim >= cfg.theta) {
            dec.kept = true;
            dec.similarity = sim;
        } else {
            // deterministic fallback: center crop of the first global at the
            // local resolution
            view = center_crop(globals[0], globals[0].height / 2, locals[i].height);
            dec.fallback = true;
            dec.similarity = max_cosine(global_embs, cfg.embedder->embed(view));
        }
        curated.push_back(std::move(view));
        report.decisions.push_back(dec);
    }
    return {std::move(curated), std::move(report)};
}

std::pair<std::vector<Image>, FilterReport> filter_locals(const std::vector<Image>& globals,
                                                          const std::vector<Image>& locals,
                                                          const FilterConfig& cfg,
                                                          const RecropFn& recrop) {
    cfg.validate();
    if (globals.empty()) throw ShapeError("filter_locals: need at least one global view");
    return filter_locals(globals, cfg.embedder->embed_many(globals), locals, cfg, recrop);
}

}  // namespace pros
