#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "pros/augment.hpp"
#include "pros/rng.hpp"

using namespace pros;

namespace {

// quadrant-mean features: 3 channels x 4 quadrants
std::vector<double> quadrant_features(const Image& img) {
    std::vector<double> f(12, 0.0);
    const int hh = img.height / 2, hw = img.width / 2;
    std::vector<int> counts(4, 0);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                const int q = (y >= hh ? 2 : 0) + (x >= hw ? 1 : 0);
                f[static_cast<size_t>(c * 4 + q)] += img.at(c, y, x);
                if (c == 0) counts[static_cast<size_t>(q)]++;
            }
    for (int c = 0; c < 3; ++c)
        for (int q = 0; q < 4; ++q) f[static_cast<size_t>(c * 4 + q)] /= counts[static_cast<size_t>(q)];
    return f;
}

// least-squares one-vs-all classifier on raw features (independent oracle)
double least_squares_accuracy(const std::vector<std::vector<double>>& feats,
                              const std::vector<int>& labels, int classes) {
    const int n = static_cast<int>(feats.size());
    const int d = static_cast<int>(feats[0].size()) + 1;  // + intercept
    auto x_at = [&](int i, int j) { return j < d - 1 ? feats[static_cast<size_t>(i)][static_cast<size_t>(j)] : 1.0; };

    // normal equations A = X^T X (+ ridge), B = X^T Y
    std::vector<double> a(static_cast<size_t>(d) * d, 0.0);
    std::vector<double> b(static_cast<size_t>(d) * classes, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            for (int k = 0; k < d; ++k) a[static_cast<size_t>(j) * d + k] += x_at(i, j) * x_at(i, k);
            b[static_cast<size_t>(j) * classes + labels[static_cast<size_t>(i)]] += x_at(i, j);
        }
    }
    for (int j = 0; j < d; ++j) a[static_cast<size_t>(j) * d + j] += 1e-8;

    // gaussian elimination on [A | B]
    std::vector<double> m(static_cast<size_t>(d) * (d + classes));
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) m[static_cast<size_t>(i) * (d + classes) + j] = a[static_cast<size_t>(i) * d + j];
        for (int j = 0; j < classes; ++j)
            m[static_cast<size_t>(i) * (d + classes) + d + j] = b[static_cast<size_t>(i) * classes + j];
    }
    const int w = d + classes;
    for (int col = 0; col < d; ++col) {
        int piv = col;
        for (int r2 = col + 1; r2 < d; ++r2)
            if (std::fabs(m[static_cast<size_t>(r2) * w + col]) > std::fabs(m[static_cast<size_t>(piv) * w + col])) piv = r2;
        for (int j = 0; j < w; ++j) std::swap(m[static_cast<size_t>(col) * w + j], m[static_cast<size_t>(piv) * w + j]);
        const double pv = m[static_cast<size_t>(col) * w + col];
        REQUIRE(std::fabs(pv) > 1e-14);
        for (int j = 0; j < w; ++j) m[static_cast<size_t>(col) * w + j] /= pv;
        for (int r2 = 0; r2 < d; ++r2) {
            if (r2 == col) continue;
            const double f = m[static_cast<size_t>(r2) * w + col];
            if (f == 0.0) continue;
            for (int j = 0; j < w; ++j) m[static_cast<size_t>(r2) * w + j] -= f * m[static_cast<size_t>(col) * w + j];
        }
    }

    int correct = 0;
    for (int i = 0; i < n; ++i) {
        int best = 0;
        double best_score = -1e300;
        for (int k = 0; k < classes; ++k) {
            double score = 0.0;
            for (int j = 0; j < d; ++j) score += x_at(i, j) * m[static_cast<size_t>(j) * w + d + k];
            if (score > best_score) {
                best_score = score;
                best = k;
            }
        }
        if (best == labels[static_cast<size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / n;
}

bool images_equal(const Image& a, const Image& b) {
    return a.channels == b.channels && a.height == b.height && a.width == b.width &&
           a.pix == b.pix;
}

}  // namespace

TEST_CASE("corpus counts, round-robin labels, determinism") {
    auto corpus = synth_corpus(100, 4, 16, 7);
    REQUIRE(corpus.size() == 100);
    std::vector<int> per_class(4, 0);
    for (size_t i = 0; i < corpus.size(); ++i) {
        CHECK(corpus[i].class_id == static_cast<int>(i % 4));
        per_class[static_cast<size_t>(corpus[i].class_id)]++;
    }
    for (int c = 0; c < 4; ++c) CHECK(per_class[static_cast<size_t>(c)] == 25);

    auto corpus2 = synth_corpus(100, 4, 16, 7);
    for (size_t i = 0; i < corpus.size(); ++i)
        CHECK(images_equal(corpus[i].pixels, corpus2[i].pixels));

    // regeneration from (class_id, source_seed) is bit-exact
    ToyImage re = synth_image(corpus[13].class_id, corpus[13].source_seed, 16);
    CHECK(images_equal(re.pixels, corpus[13].pixels));

    auto corpus3 = synth_corpus(100, 4, 16, 8);
    CHECK_FALSE(images_equal(corpus[0].pixels, corpus3[0].pixels));
}

TEST_CASE("pixels bounded and finite") {
    for (const ToyImage& img : synth_corpus(32, 7, 24, 3))
        for (double v : img.pixels.pix) {
            CHECK(std::isfinite(v));
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
}

TEST_CASE("4-class corpus separable under quadrant means") {
    auto corpus = synth_corpus(200, 4, 32, 11);
    std::vector<std::vector<double>> feats;
    std::vector<int> labels;
    for (const ToyImage& img : corpus) {
        feats.push_back(quadrant_features(img.pixels));
        labels.push_back(img.class_id);
    }
    CHECK(least_squares_accuracy(feats, labels, 4) >= 0.95);
}

TEST_CASE("multicrop counts, sizes, determinism") {
    ToyImage img = synth_image(2, 99, 32);
    AugmentPolicy policy;
    ViewSet vs = multicrop(img, 2, 6, 32, 16, policy, 5);
    CHECK(vs.globals.size() == 2);
    CHECK(vs.locals.size() == 6);
    CHECK(vs.records.size() == 8);
    for (const Image& g : vs.globals) {
        CHECK(g.height == 32);
        CHECK(g.width == 32);
    }
    for (const Image& l : vs.locals) {
        CHECK(l.height == 16);
        CHECK(l.width == 16);
    }

    ViewSet vs2 = multicrop(img, 2, 6, 32, 16, policy, 5);
    for (size_t i = 0; i < vs.globals.size(); ++i)
        CHECK(images_equal(vs.globals[i], vs2.globals[i]));
    for (size_t i = 0; i < vs.locals.size(); ++i) CHECK(images_equal(vs.locals[i], vs2.locals[i]));

    ViewSet vs3 = multicrop(img, 2, 6, 32, 16, policy, 6);
    CHECK_FALSE(images_equal(vs.locals[0], vs3.locals[0]));

    CHECK_THROWS_AS(multicrop(img, 0, 6, 32, 16, policy, 5), ConfigError);
}

TEST_CASE("reference resolutions pass through") {
    ToyImage img = synth_image(0, 1, 256);
    AugmentPolicy policy;
    ViewSet vs = multicrop(img, 1, 1, 224, 96, policy, 1);
    CHECK(vs.globals[0].height == 224);
    CHECK(vs.locals[0].height == 96);
}

TEST_CASE("crop rectangles stay inside the source image") {
    AugmentPolicy policy;
    for (uint64_t s = 0; s < 30; ++s) {
        ToyImage img = synth_image(static_cast<int>(s % 4), s, 32);
        ViewSet vs = multicrop(img, 2, 6, 32, 16, policy, s);
        for (const CropRecord& r : vs.records) {
            CHECK(r.side_px >= 1);
            CHECK(r.x0 >= 0);
            CHECK(r.y0 >= 0);
            CHECK(r.x0 + r.side_px <= 32);
            CHECK(r.y0 + r.side_px <= 32);
        }
        for (const Image& v : vs.globals)
            for (double p : v.pix) {
                CHECK(std::isfinite(p));
                CHECK(p >= 0.0);
                CHECK(p <= 1.0);
            }
        for (const Image& v : vs.locals)
            for (double p : v.pix) {
                CHECK(std::isfinite(p));
                CHECK(p >= 0.0);
                CHECK(p <= 1.0);
            }
    }
}

TEST_CASE("augment identity when disabled") {
    AugmentPolicy policy;
    policy.flip_prob = 0.0;
    policy.brightness_lo = policy.brightness_hi = 1.0;
    policy.contrast_lo = policy.contrast_hi = 1.0;
    policy.grayscale_prob = 0.0;
    policy.blur_prob = 0.0;
    ToyImage img = synth_image(1, 4, 16);
    Image out = augment(img.pixels, policy, 123);
    CHECK(images_equal(out, img.pixels));
}

TEST_CASE("grayscale equalizes channels") {
    AugmentPolicy policy;
    policy.flip_prob = 0.0;
    policy.brightness_lo = policy.brightness_hi = 1.0;
    policy.contrast_lo = policy.contrast_hi = 1.0;
    policy.grayscale_prob = 1.0;
    policy.blur_prob = 0.0;
    Image src(3, 4, 4);
    Rng rng(2);
    for (double& v : src.pix) v = rng.uniform(0.0, 1.0);
    Image out = augment(src, policy, 3);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            CHECK(out.at(0, y, x) == out.at(1, y, x));
            CHECK(out.at(1, y, x) == out.at(2, y, x));
        }
}

TEST_CASE("brightness factor 0.5 halves a constant image") {
    AugmentPolicy policy;
    policy.flip_prob = 0.0;
    policy.brightness_lo = policy.brightness_hi = 0.5;
    policy.contrast_lo = policy.contrast_hi = 1.0;
    policy.grayscale_prob = 0.0;
    policy.blur_prob = 0.0;
    Image src(3, 4, 4);
    for (double& v : src.pix) v = 0.8;
    Image out = augment(src, policy, 9);
    for (double v : out.pix) CHECK(v == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("policy validation") {
    AugmentPolicy p;
    p.flip_prob = 1.5;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = AugmentPolicy{};
    p.local_scale_lo = 0.0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = AugmentPolicy{};
    p.global_scale_hi = 1.2;
    CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("corpus export/import roundtrip") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "pros_corpus_test.bin").string();
    CorpusFile corpus = make_corpus(12, 3, 16, 77);
    save_corpus(corpus, path);
    CorpusFile loaded = load_corpus(path);
    CHECK(loaded.classes == 3);
    CHECK(loaded.side == 16);
    CHECK(loaded.seed == 77);
    REQUIRE(loaded.images.size() == 12);
    for (size_t i = 0; i < loaded.images.size(); ++i) {
        CHECK(loaded.images[i].class_id == corpus.images[i].class_id);
        CHECK(loaded.images[i].source_seed == corpus.images[i].source_seed);
        CHECK(images_equal(loaded.images[i].pixels, corpus.images[i].pixels));
    }

    // truncated file fails loudly
    std::FILE* fh = std::fopen(path.c_str(), "rb+");
    REQUIRE(fh != nullptr);
    std::fclose(fh);
    fs::resize_file(path, 64);
    CHECK_THROWS_AS(load_corpus(path), IoError);
    fs::remove(path);
}
