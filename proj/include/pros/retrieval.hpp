#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pros/image.hpp"
#include "pros/vit.hpp"

namespace pros {

// Frozen unit-vector image embedder used by the retrieval gate. Never
// receives gradient: implementations compute plain values only.
class Embedder {
   public:
    virtual ~Embedder() = default;
    virtual std::vector<double> embed(const Image& image) const = 0;
    // same-resolution batch; default loops over embed()
    virtual std::vector<std::vector<double>> embed_many(const std::vector<Image>& images) const;
};

// Current teacher encode+project. The caller keeps the parameters alive; new
// parameter values are picked up on the next call.
class TeacherEmbedder : public Embedder {
   public:
    explicit TeacherEmbedder(const ModelParams* teacher) : teacher_(teacher) {}
    std::vector<double> embed(const Image& image) const override;
    std::vector<std::vector<double>> embed_many(const std::vector<Image>& images) const override;

   private:
    const ModelParams* teacher_;
};

// Fixed random projection of a bilinearly downsampled image; the ablation
// alternative to the teacher embedder.
class RandomProjectionEmbedder : public Embedder {
   public:
    RandomProjectionEmbedder(int out_dim, uint64_t seed, int down_side = 8);
    std::vector<double> embed(const Image& image) const override;

   private:
    int out_dim_;
    int down_side_;
    std::vector<double> proj_;  // [out_dim, 3*down*down]
};

struct FilterConfig {
    double theta = -0.5;         // cosine similarity lower bound
    int max_retries = 3;
    const Embedder* embedder = nullptr;
    void validate() const;
};

struct FilterDecision {
    int local_index = 0;
    double similarity = 0.0;  // max over globals, for the curated view
    bool kept = false;        // passed the threshold (fallbacks are not kept)
    int retries = 0;
    bool fallback = false;
};

struct FilterReport {
    std::vector<FilterDecision> decisions;
    int replaced_count() const;  // locals whose original view was replaced
    std::string to_jsonl() const;
};

// Fresh candidate view for the given local slot; attempt starts at 1.
using RecropFn = std::function<Image(int local_index, int attempt)>;

// Replaces locals whose max-over-globals cosine falls below theta, retrying
// with recropped views up to max_retries, then falling back to a center crop
// of the first global. Output size always equals input size.
std::pair<std::vector<Image>, FilterReport> filter_locals(const std::vector<Image>& globals,
                                                          const std::vector<Image>& locals,
                                                          const FilterConfig& cfg,
                                                          const RecropFn& recrop);

// same gate with the global embeddings already computed (the trainer shares
// them with the teacher branch)
std::pair<std::vector<Image>, FilterReport> filter_locals(
    const std::vector<Image>& globals, const std::vector<std::vector<double>>& global_embs,
    const std::vector<Image>& locals, const FilterConfig& cfg, const RecropFn& recrop);

}  // namespace pros
