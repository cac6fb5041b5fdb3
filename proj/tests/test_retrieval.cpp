#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pros/augment.hpp"
#include "pros/retrieval.hpp"
#include "pros/rng.hpp"

using namespace pros;

namespace {

// deterministic test embedder: direction set by mean brightness, so bright
// and dark views land near-opposite on the unit circle
class BrightnessEmbedder : public Embedder {
   public:
    std::vector<double> embed(const Image& image) const override {
        double mean = 0.0;
        for (double v : image.pix) mean += v;
        mean /= static_cast<double>(image.pix.size());
        std::vector<double> e = {mean - 0.5, 0.1};
        const double n = std::sqrt(e[0] * e[0] + e[1] * e[1]);
        for (double& v : e) v /= n;
        return e;
    }
};

Image constant_image(int side, double value) {
    Image img(3, side, side);
    for (double& v : img.pix) v = value;
    return img;
}

RecropFn no_recrop() {
    return [](int, int) -> Image { throw std::logic_error("recrop not expected"); };
}

}  // namespace

TEST_CASE("embedders produce deterministic unit vectors") {
    RandomProjectionEmbedder rp(16, 42);
    Image img = synth_image(1, 9, 32).pixels;
    auto e1 = rp.embed(img);
    auto e2 = rp.embed(img);
    CHECK(e1 == e2);
    double sq = 0.0;
    for (double v : e1) sq += v * v;
    CHECK(std::fabs(std::sqrt(sq) - 1.0) < 1e-9);

    // identical images have cosine 1
    double cos = 0.0;
    for (size_t i = 0; i < e1.size(); ++i) cos += e1[i] * e2[i];
    CHECK(cos == doctest::Approx(1.0).epsilon(1e-9));

    ModelParams teacher = init_model(EncoderConfig{}, 5);
    TeacherEmbedder te(&teacher);
    auto t1 = te.embed(img);
    auto t2 = te.embed(img);
    CHECK(t1 == t2);
    sq = 0.0;
    for (double v : t1) sq += v * v;
    CHECK(std::fabs(std::sqrt(sq) - 1.0) < 1e-9);
}

TEST_CASE("degenerate embedding norm is an error") {
    RandomProjectionEmbedder rp(8, 3);
    CHECK_THROWS_AS(rp.embed(constant_image(16, 0.0)), NumericError);
}

TEST_CASE("identical views all pass with zero retries") {
    BrightnessEmbedder emb;
    FilterConfig cfg;
    cfg.embedder = &emb;
    std::vector<Image> globals = {constant_image(32, 0.9)};
    std::vector<Image> locals(4, constant_image(16, 0.9));
    auto [curated, report] = filter_locals(globals, locals, cfg, no_recrop());
    CHECK(curated.size() == 4);
    CHECK(report.replaced_count() == 0);
    for (const FilterDecision& d : report.decisions) {
        CHECK(d.kept);
        CHECK(d.retries == 0);
        CHECK_FALSE(d.fallback);
        CHECK(d.similarity == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("low-similarity local is replaced at theta -0.5") {
    BrightnessEmbedder emb;
    // bright globals vs one dark local: cosine about -0.88
    std::vector<Image> globals = {constant_image(32, 0.9)};
    std::vector<Image> locals = {constant_image(16, 0.9), constant_image(16, 0.1)};
    {
        const double sim = [&] {
            auto g = emb.embed(globals[0]);
            auto l = emb.embed(locals[1]);
            return g[0] * l[0] + g[1] * l[1];
        }();
        REQUIRE(sim < -0.5);
    }
    FilterConfig cfg;
    cfg.theta = -0.5;
    cfg.embedder = &emb;
    cfg.max_retries = 2;
    int recrop_calls = 0;
    RecropFn dark_recrop = [&](int, int) {
        ++recrop_calls;
        return constant_image(16, 0.1);  // retries keep failing
    };
    auto [curated, report] = filter_locals(globals, locals, cfg, dark_recrop);
    CHECK(curated.size() == 2);
    CHECK(recrop_calls == 2);
    CHECK(report.decisions[0].kept);
    CHECK_FALSE(report.decisions[1].kept);
    CHECK(report.decisions[1].fallback);
    CHECK(report.decisions[1].retries == 2);
    // fallback is the center crop of the first global: bright, high cosine
    CHECK(report.decisions[1].similarity >= cfg.theta);

    // a recrop that recovers is kept without fallback
    RecropFn bright_recrop = [&](int, int) { return constant_image(16, 0.85); };
    auto [curated2, report2] = filter_locals(globals, locals, cfg, bright_recrop);
    CHECK(report2.decisions[1].kept);
    CHECK(report2.decisions[1].retries == 1);
    CHECK_FALSE(report2.decisions[1].fallback);
    CHECK(report2.replaced_count() == 1);
}

TEST_CASE("theta -1 never fires the gate") {
    BrightnessEmbedder emb;
    FilterConfig cfg;
    cfg.theta = -1.0;
    cfg.embedder = &emb;
    std::vector<Image> globals = {constant_image(32, 0.9)};
    std::vector<Image> locals = {constant_image(16, 0.05), constant_image(16, 0.95)};
    auto [curated, report] = filter_locals(globals, locals, cfg, no_recrop());
    CHECK(report.replaced_count() == 0);
    for (const FilterDecision& d : report.decisions) CHECK(d.kept);
}

TEST_CASE("kept count is monotone non-increasing in theta") {
    BrightnessEmbedder emb;
    std::vector<Image> globals = {constant_image(32, 0.9)};
    std::vector<Image> locals;
    for (int i = 0; i < 9; ++i) locals.push_back(constant_image(16, 0.1 + 0.1 * i));
    RecropFn fail_recrop = [&](int i, int) { return locals[static_cast<size_t>(i)]; };

    int prev_kept = static_cast<int>(locals.size()) + 1;
    for (double theta : {-1.0, -0.5, 0.0, 0.5, 0.99}) {
        FilterConfig cfg;
        cfg.theta = theta;
        cfg.embedder = &emb;
        auto [curated, report] = filter_locals(globals, locals, cfg, fail_recrop);
        CHECK(curated.size() == locals.size());
        int kept = 0;
        for (const FilterDecision& d : report.decisions)
            if (d.kept) ++kept;
        CHECK(kept <= prev_kept);
        prev_kept = kept;
    }
}

TEST_CASE("report serializes as one JSON line per local") {
    BrightnessEmbedder emb;
    FilterConfig cfg;
    cfg.embedder = &emb;
    std::vector<Image> globals = {constant_image(32, 0.9)};
    std::vector<Image> locals = {constant_image(16, 0.9), constant_image(16, 0.8)};
    auto [curated, report] = filter_locals(globals, locals, cfg, no_recrop());
    const std::string jsonl = report.to_jsonl();
    CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 2);
    CHECK(jsonl.find("\"local\":0") != std::string::npos);
    CHECK(jsonl.find("\"kept\":true") != std::string::npos);
}

TEST_CASE("validation and empty-globals errors") {
    BrightnessEmbedder emb;
    FilterConfig cfg;
    cfg.embedder = &emb;
    cfg.theta = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.theta = -0.5;
    CHECK_THROWS_AS(
        filter_locals({}, {constant_image(16, 0.5)}, cfg, no_recrop()), ShapeError);
}
