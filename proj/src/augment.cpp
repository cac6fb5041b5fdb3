#include "pros/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "pros/rng.hpp"

namespace pros {

void AugmentPolicy::validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(flip_prob) || !prob(grayscale_prob) || !prob(blur_prob))
        throw ConfigError("augment policy: probabilities must lie in [0,1]");
    if (brightness_lo <= 0.0 || brightness_lo > brightness_hi)
        throw ConfigError("augment policy: bad brightness range");
    if (contrast_lo <= 0.0 || contrast_lo > contrast_hi)
        throw ConfigError("augment policy: bad contrast range");
    auto scale_ok = [](double lo, double hi) {
        return lo > 0.0 && lo <= hi && hi <= 1.0;
    };
    if (!scale_ok(global_scale_lo, global_scale_hi) || !scale_ok(local_scale_lo, local_scale_hi))
        throw ConfigError("augment policy: scale ranges must lie within (0,1]");
}

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// storage is f32; snapping at generation keeps export/import lossless
double snap_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

ToyImage synth_image(int class_id, uint64_t source_seed, int side) {
    if (side <= 0 || class_id < 0) throw ConfigError("synth_image: bad arguments");
    ToyImage out;
    out.class_id = class_id;
    out.source_seed = source_seed;
    out.pixels = Image(3, side, side);

    Rng rng(derive_seed(source_seed, {static_cast<uint64_t>(class_id)}));
    const double offset = rng.uniform(-0.2, 0.2);  // shared brightness nuisance
    const double amp = rng.uniform(0.5, 0.7);
    const double jx = rng.uniform(-side / 16.0, side / 16.0);
    const double jy = rng.uniform(-side / 16.0, side / 16.0);

    const double sigma = side / 5.0;

    // Blob center keyed on class_id alone (the regeneration key): the first
    // four ids sit at the quadrant centers, higher ids spread by the golden
    // angle so any class count stays collision-free.
    constexpr double golden = 2.39996322972865332;
    const double a = class_id < 4 ? M_PI / 4.0 + class_id * M_PI / 2.0 : class_id * golden;
    const double r = side * std::sqrt(2.0) / 4.0;
    const double cx = side / 2.0 + r * std::cos(a) + jx;
    const double cy = side / 2.0 + r * std::sin(a) + jy;

    // class-keyed tint so the blob also separates in channel space
    const double tint[3] = {0.75 + 0.25 * std::cos(a), 0.75 + 0.25 * std::cos(a + 2.0),
                            0.75 + 0.25 * std::cos(a + 4.0)};

    // Per-image low-frequency field and channel cast: the desk-scale
    // stand-in for natural image diversity. Without them every image maps to
    // nearly one direction under a randomly initialised encoder (uniform
    // shifts die in layer norm; high-frequency detail dies in attention
    // averaging), and none of the distillation mechanics are observable.
    const double fx = rng.uniform(0.3, 1.0);
    const double fy = rng.uniform(0.3, 1.0);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    const double field_amp = rng.uniform(0.08, 0.16);
    const double cast[3] = {rng.uniform(0.7, 1.3), rng.uniform(0.7, 1.3),
                            rng.uniform(0.7, 1.3)};

    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) {
                const double dx = x - cx;
                const double dy = y - cy;
                const double blob =
                    amp * tint[c] * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                const double field =
                    field_amp * std::cos(2.0 * M_PI * (fx * x + fy * y) / side + phase);
                const double noise = rng.uniform(-0.05, 0.05);
                out.pixels.at(c, y, x) = snap_f32(
                    clamp01(cast[c] * (0.35 + offset + blob + field) + noise));
            }
    return out;
}

std::vector<ToyImage> synth_corpus(int n, int classes, int side, uint64_t seed) {
    if (n <= 0 || classes <= 0 || side <= 0) throw ConfigError("synth_corpus: n, classes, side must be positive");
    std::vector<ToyImage> corpus;
    corpus.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int cls = i % classes;
        corpus.push_back(synth_image(cls, derive_seed(seed, {static_cast<uint64_t>(i)}), side));
    }
    return corpus;
}

Image resize_bilinear(const Image& src, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw ShapeError("resize: non-positive output size");
    Image dst(src.channels, out_h, out_w);
    const double sy = static_cast<double>(src.height) / out_h;
    const double sx = static_cast<double>(src.width) / out_w;
    for (int c = 0; c < src.channels; ++c)
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x) {
                const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
                const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
                const int y0 = std::min(static_cast<int>(fy), src.height - 1);
                const int x0 = std::min(static_cast<int>(fx), src.width - 1);
                const int y1 = std::min(y0 + 1, src.height - 1);
                const int x1 = std::min(x0 + 1, src.width - 1);
                const double wy = fy - y0;
                const double wx = fx - x0;
                dst.at(c, y, x) = (1 - wy) * (1 - wx) * src.at(c, y0, x0) +
                                  (1 - wy) * wx * src.at(c, y0, x1) +
                                  wy * (1 - wx) * src.at(c, y1, x0) + wy * wx * src.at(c, y1, x1);
            }
    return dst;
}

Image center_crop(const Image& src, int crop_side, int out_side) {
    if (crop_side < 1 || crop_side > std::min(src.height, src.width))
        throw ShapeError("center_crop: bad crop side");
    const int y0 = (src.height - crop_side) / 2;
    const int x0 = (src.width - crop_side) / 2;
    Image crop(src.channels, crop_side, crop_side);
    for (int c = 0; c < src.channels; ++c)
        for (int y = 0; y < crop_side; ++y)
            for (int x = 0; x < crop_side; ++x) crop.at(c, y, x) = src.at(c, y0 + y, x0 + x);
    return resize_bilinear(crop, out_side, out_side);
}

Image augment(const Image& view, const AugmentPolicy& policy, uint64_t seed, CropRecord* rec) {
    policy.validate();
    Rng rng(seed);
    // draws happen in a fixed order whether or not each transform fires
    const bool flip = rng.bernoulli(policy.flip_prob);
    const double brightness = rng.uniform(policy.brightness_lo, policy.brightness_hi);
    const double contrast = rng.uniform(policy.contrast_lo, policy.contrast_hi);
    const bool gray = rng.bernoulli(policy.grayscale_prob);
    const bool blur = rng.bernoulli(policy.blur_prob);

    Image out = view;
    if (flip) {
        for (int c = 0; c < out.channels; ++c)
            for (int y = 0; y < out.height; ++y)
                for (int x = 0; x < out.width / 2; ++x)
                    std::swap(out.at(c, y, x), out.at(c, y, out.width - 1 - x));
    }
    for (double& v : out.pix) v *= brightness;
    if (contrast != 1.0) {
        double mean = 0.0;
        for (double v : out.pix) mean += v;
        mean /= static_cast<double>(out.pix.size());
        for (double& v : out.pix) v = (v - mean) * contrast + mean;
    }
    if (gray && out.channels == 3) {
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x) {
                const double luma = 0.299 * out.at(0, y, x) + 0.587 * out.at(1, y, x) +
                                    0.114 * out.at(2, y, x);
                out.at(0, y, x) = out.at(1, y, x) = out.at(2, y, x) = luma;
            }
    }
    if (blur) {
        Image src = out;
        for (int c = 0; c < out.channels; ++c)
            for (int y = 0; y < out.height; ++y)
                for (int x = 0; x < out.width; ++x) {
                    double sum = 0.0;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int yy = std::clamp(y + dy, 0, out.height - 1);
                            const int xx = std::clamp(x + dx, 0, out.width - 1);
                            sum += src.at(c, yy, xx);
                        }
                    out.at(c, y, x) = sum / 9.0;
                }
    }
    for (double& v : out.pix) v = clamp01(v);
    if (rec) {
        rec->flipped = flip;
        rec->grayscaled = gray;
        rec->blurred = blur;
        rec->brightness = brightness;
        rec->contrast = contrast;
    }
    return out;
}

namespace {

Image crop_view(const ToyImage& img, double scale_lo, double scale_hi, int out_side, Rng& rng,
                CropRecord* rec) {
    const int src_side = img.pixels.height;
    const double area = rng.uniform(scale_lo, scale_hi);
    const double exact = src_side * std::sqrt(area);
    if (exact < 1.0) throw ConfigError("multicrop: crop scale produces a sub-1-pixel region");
    const int side_px = std::min(src_side, std::max(1, static_cast<int>(std::lround(exact))));
    const int max0 = src_side - side_px;
    const int x0 = max0 > 0 ? rng.uniform_int(max0 + 1) : 0;
    const int y0 = max0 > 0 ? rng.uniform_int(max0 + 1) : 0;
    Image crop(img.pixels.channels, side_px, side_px);
    for (int c = 0; c < crop.channels; ++c)
        for (int y = 0; y < side_px; ++y)
            for (int x = 0; x < side_px; ++x)
                crop.at(c, y, x) = img.pixels.at(c, y0 + y, x0 + x);
    if (rec) {
        rec->x0 = x0;
        rec->y0 = y0;
        rec->side_px = side_px;
    }
    return resize_bilinear(crop, out_side, out_side);
}

Image make_view(const ToyImage& img, bool global_view, int out_side, const AugmentPolicy& policy,
                uint64_t seed, int view_index, int attempt, CropRecord* rec) {
    Rng rng(derive_seed(seed, {img.source_seed, static_cast<uint64_t>(view_index),
                               static_cast<uint64_t>(attempt)}));
    const double lo = global_view ? policy.global_scale_lo : policy.local_scale_lo;
    const double hi = global_view ? policy.global_scale_hi : policy.local_scale_hi;
    Image cropped = crop_view(img, lo, hi, out_side, rng, rec);
    return augment(cropped, policy, rng.next_u64(), rec);
}

}  // namespace

ViewSet multicrop(const ToyImage& img, int m_globals, int n_locals, int global_side,
                  int local_side, const AugmentPolicy& policy, uint64_t seed) {
    if (m_globals < 1 || n_locals < 1) throw ConfigError("multicrop: M and N must be >= 1");
    policy.validate();
    ViewSet vs;
    vs.records.resize(static_cast<size_t>(m_globals + n_locals));
    for (int m = 0; m < m_globals; ++m)
        vs.globals.push_back(make_view(img, true, global_side, policy, seed, m, 0,
                                       &vs.records[static_cast<size_t>(m)]));
    for (int n = 0; n < n_locals; ++n)
        vs.locals.push_back(make_view(img, false, local_side, policy, seed, m_globals + n, 0,
                                      &vs.records[static_cast<size_t>(m_globals + n)]));
    return vs;
}

Image recrop_local(const ToyImage& img, int local_side, const AugmentPolicy& policy,
                   uint64_t seed, int view_index, int attempt) {
    return make_view(img, false, local_side, policy, seed, view_index, attempt, nullptr);
}

// ---- corpus file ------------------------------------------------------------

namespace {

constexpr char kCorpusMagic[8] = {'P', 'R', 'O', 'S', 'I', 'M', 'G', '1'};

void write_u64(std::ofstream& f, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    f.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64(std::ifstream& f) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    if (!f) throw IoError("corpus file: truncated header");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_corpus(const CorpusFile& corpus, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("corpus file: cannot open " + path + " for writing");
    f.write(kCorpusMagic, 8);
    write_u64(f, static_cast<uint64_t>(corpus.images.size()));
    write_u64(f, static_cast<uint64_t>(corpus.classes));
    write_u64(f, static_cast<uint64_t>(corpus.side));
    write_u64(f, corpus.seed);
    std::vector<float> block;
    for (const ToyImage& img : corpus.images) {
        block.assign(img.pixels.pix.begin(), img.pixels.pix.end());
        f.write(reinterpret_cast<const char*>(block.data()),
                static_cast<std::streamsize>(block.size() * sizeof(float)));
    }
    if (!f) throw IoError("corpus file: write failed for " + path);
}

CorpusFile load_corpus(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("corpus file: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCorpusMagic, 8) != 0)
        throw IoError("corpus file: bad magic in " + path);
    CorpusFile out;
    const uint64_t n = read_u64(f);
    out.classes = static_cast<int>(read_u64(f));
    out.side = static_cast<int>(read_u64(f));
    out.seed = read_u64(f);
    if (out.classes <= 0 || out.side <= 0) throw IoError("corpus file: bad header values");
    const size_t px = static_cast<size_t>(3) * out.side * out.side;
    std::vector<float> block(px);
    out.images.reserve(n);
    for (uint64_t i = 0; i < n; ++i) {
        f.read(reinterpret_cast<char*>(block.data()),
               static_cast<std::streamsize>(px * sizeof(float)));
        if (!f) throw IoError("corpus file: truncated pixel block " + std::to_string(i));
        ToyImage img;
        img.class_id = static_cast<int>(i % static_cast<uint64_t>(out.classes));
        img.source_seed = derive_seed(out.seed, {i});
        img.pixels = Image(3, out.side, out.side);
        for (size_t j = 0; j < px; ++j) img.pixels.pix[j] = static_cast<double>(block[j]);
        out.images.push_back(std::move(img));
    }
    return out;
}

CorpusFile make_corpus(int n, int classes, int side, uint64_t seed) {
    CorpusFile out;
    out.images = synth_corpus(n, classes, side, seed);
    out.classes = classes;
    out.side = side;
    out.seed = seed;
    return out;
}

}  // namespace pros
