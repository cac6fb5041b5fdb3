#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pros/image.hpp"

namespace pros {

// Synthetic pattern image: class-conditioned blob position plus per-image
// brightness offset and pixel noise. Regenerable bit-exactly from
// (class_id, source_seed, side).
struct ToyImage {
    Image pixels;  // [3, side, side], values in [0,1] snapped to f32 grid
    int class_id = 0;
    uint64_t source_seed = 0;
};

struct AugmentPolicy {
    double flip_prob = 0.5;
    double brightness_lo = 0.7, brightness_hi = 1.3;  // multiplicative factor
    double contrast_lo = 0.7, contrast_hi = 1.3;
    double grayscale_prob = 0.2;
    double blur_prob = 0.2;  // 3x3 box filter
    double global_scale_lo = 0.4, global_scale_hi = 1.0;  // crop area fraction
    double local_scale_lo = 0.05, local_scale_hi = 0.4;
    void validate() const;
};

struct CropRecord {
    int x0 = 0, y0 = 0, side_px = 0;
    bool flipped = false, grayscaled = false, blurred = false;
    double brightness = 1.0, contrast = 1.0;
};

struct ViewSet {
    std::vector<Image> globals;
    std::vector<Image> locals;
    std::vector<CropRecord> records;  // globals first, then locals
};

ToyImage synth_image(int class_id, uint64_t source_seed, int side);
std::vector<ToyImage> synth_corpus(int n, int classes, int side, uint64_t seed);

// M global + N local views; per-view randomness is derived by hashing
// (source_seed, view index) into the given seed, so generation order and
// parallelism cannot change results.
ViewSet multicrop(const ToyImage& img, int m_globals, int n_locals, int global_side,
                  int local_side, const AugmentPolicy& policy, uint64_t seed);

Image augment(const Image& view, const AugmentPolicy& policy, uint64_t seed,
              CropRecord* rec = nullptr);

// fresh local view for a filter retry; attempt shifts the derived stream
Image recrop_local(const ToyImage& img, int local_side, const AugmentPolicy& policy,
                   uint64_t seed, int view_index, int attempt);

Image resize_bilinear(const Image& src, int out_h, int out_w);
Image center_crop(const Image& src, int crop_side, int out_side);

struct CorpusFile {
    std::vector<ToyImage> images;
    int classes = 0;
    int side = 0;
    uint64_t seed = 0;
};

// flat binary corpus: magic PROSIMG1, little-endian u64 header
// (n, classes, side, seed), then f32 pixel blocks
void save_corpus(const CorpusFile& corpus, const std::string& path);
CorpusFile load_corpus(const std::string& path);
CorpusFile make_corpus(int n, int classes, int side, uint64_t seed);

}  // namespace pros
