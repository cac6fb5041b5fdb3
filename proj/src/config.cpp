#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "pros/trainer.hpp"

namespace pros {

EncoderConfig TrainConfig::encoder_config() const {
    EncoderConfig c;
    c.image_side = corpus_side;
    c.patch_side = patch_side;
    c.channels = 3;
    c.depth = depth;
    c.width = width;
    c.heads = heads;
    c.mlp_ratio = mlp_ratio;
    c.proj_hidden = proj_hidden;
    c.embed_dim = embed_dim;
    c.init_std = init_std;
    return c;
}

LossConfig TrainConfig::loss_config() const {
    LossConfig c;
    c.tau_g = tau_g;
    c.tau_l = tau_l;
    c.lambda_reg = lambda_reg;
    c.entropy_mode = entropy_mode;
    return c;
}

void TrainConfig::validate() const {
    if (corpus_n < 1 || corpus_classes < 1) throw ConfigError("config: corpus_n and corpus_classes must be >= 1");
    if (batch < 1 || batch > corpus_n) throw ConfigError("config: batch must lie in [1, corpus_n]");
    if (globals_per_image < 1 || locals_per_image < 1)
        throw ConfigError("config: globals_per_image and locals_per_image must be >= 1");
    encoder_config().validate();
    augment.validate();
    if (local_side < patch_side || local_side % patch_side != 0)
        throw ConfigError("config: local_side must be a positive multiple of patch_side");
    if (local_side > corpus_side) throw ConfigError("config: local_side larger than corpus_side");
    if (prototypes < 1) throw ConfigError("config: prototypes must be >= 1");
    loss_config().validate();  // rejects tau_g >= tau_l
    if (sinkhorn_iters < 0) throw ConfigError("config: sinkhorn_iters must be >= 0");
    if (center_momentum < 0.0 || center_momentum > 1.0)
        throw ConfigError("config: center_momentum must lie in [0,1]");
    if (filter_theta < -1.0 || filter_theta > 1.0)
        throw ConfigError("config: filter_theta must lie in [-1,1]");
    if (filter_retries < 0) throw ConfigError("config: filter_retries must be >= 0");
    if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs > epochs)
        throw ConfigError("config: warmup_epochs must lie in [0, epochs]");
    if (lr_init <= 0.0 || lr_peak <= 0.0 || lr_final <= 0.0)
        throw ConfigError("config: learning rates must be positive");
    if (weight_decay < 0.0) throw ConfigError("config: weight_decay must be >= 0");
    if (ema_momentum < 0.0 || ema_momentum > 1.0)
        throw ConfigError("config: ema_momentum must lie in [0,1]");
    if (clip_norm < 0.0) throw ConfigError("config: clip_norm must be >= 0");
}

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

const char* entropy_mode_name(EntropyMode m) {
    return m == EntropyMode::kMeanEntropy ? "mean_entropy" : "literal_eq4";
}
const char* teacher_op_name(TeacherOpMode m) {
    return m == TeacherOpMode::kSinkhorn ? "sinkhorn" : "centering";
}
const char* embedder_name(FilterEmbedderKind k) {
    return k == FilterEmbedderKind::kTeacher ? "teacher" : "random_projection";
}
const char* student_views_name(StudentViewMode m) {
    return m == StudentViewMode::kLocalsOnly ? "locals_only" : "all";
}

}  // namespace

std::string TrainConfig::to_text() const {
    std::ostringstream os;
    auto put = [&os](const char* key, const std::string& value) {
        os << key << "=" << value << "\n";
    };
    put("corpus_n", std::to_string(corpus_n));
    put("corpus_classes", std::to_string(corpus_classes));
    put("corpus_side", std::to_string(corpus_side));
    put("corpus_seed", std::to_string(corpus_seed));
    put("batch", std::to_string(batch));
    put("globals_per_image", std::to_string(globals_per_image));
    put("locals_per_image", std::to_string(locals_per_image));
    put("local_side", std::to_string(local_side));
    put("flip_prob", fmt_double(augment.flip_prob));
    put("brightness_lo", fmt_double(augment.brightness_lo));
    put("brightness_hi", fmt_double(augment.brightness_hi));
    put("contrast_lo", fmt_double(augment.contrast_lo));
    put("contrast_hi", fmt_double(augment.contrast_hi));
    put("grayscale_prob", fmt_double(augment.grayscale_prob));
    put("blur_prob", fmt_double(augment.blur_prob));
    put("global_scale_lo", fmt_double(augment.global_scale_lo));
    put("global_scale_hi", fmt_double(augment.global_scale_hi));
    put("local_scale_lo", fmt_double(augment.local_scale_lo));
    put("local_scale_hi", fmt_double(augment.local_scale_hi));
    put("patch_side", std::to_string(patch_side));
    put("depth", std::to_string(depth));
    put("width", std::to_string(width));
    put("heads", std::to_string(heads));
    put("mlp_ratio", fmt_double(mlp_ratio));
    put("proj_hidden", std::to_string(proj_hidden));
    put("embed_dim", std::to_string(embed_dim));
    put("init_std", fmt_double(init_std));
    put("prototypes", std::to_string(prototypes));
    put("tau_g", fmt_double(tau_g));
    put("tau_l", fmt_double(tau_l));
    put("lambda_reg", fmt_double(lambda_reg));
    put("entropy_mode", entropy_mode_name(entropy_mode));
    put("teacher_op", teacher_op_name(teacher_op));
    put("sinkhorn_iters", std::to_string(sinkhorn_iters));
    put("center_momentum", fmt_double(center_momentum));
    put("filter_theta", fmt_double(filter_theta));
    put("filter_retries", std::to_string(filter_retries));
    put("filter_embedder", embedder_name(filter_embedder));
    put("epochs", std::to_string(epochs));
    put("warmup_epochs", std::to_string(warmup_epochs));
    put("lr_init", fmt_double(lr_init));
    put("lr_peak", fmt_double(lr_peak));
    put("lr_final", fmt_double(lr_final));
    put("weight_decay", fmt_double(weight_decay));
    put("ema_momentum", fmt_double(ema_momentum));
    put("clip_norm", fmt_double(clip_norm));
    put("student_views", student_views_name(student_views));
    put("run_seed", std::to_string(run_seed));
    return os.str();
}

namespace {

struct Parser {
    TrainConfig cfg;

    int to_int(const std::string& key, const std::string& v) {
        try {
            size_t pos = 0;
            const int out = std::stoi(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ConfigError("config: bad integer for key '" + key + "': " + v);
        }
    }

    uint64_t to_u64(const std::string& key, const std::string& v) {
        try {
            size_t pos = 0;
            const uint64_t out = std::stoull(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ConfigError("config: bad integer for key '" + key + "': " + v);
        }
    }

    double to_f64(const std::string& key, const std::string& v) {
        try {
            size_t pos = 0;
            const double out = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ConfigError("config: bad number for key '" + key + "': " + v);
        }
    }

    void set(const std::string& key, const std::string& v) {
        AugmentPolicy& a = cfg.augment;
        if (key == "corpus_n") cfg.corpus_n = to_int(key, v);
        else if (key == "corpus_classes") cfg.corpus_classes = to_int(key, v);
        else if (key == "corpus_side") cfg.corpus_side = to_int(key, v);
        else if (key == "corpus_seed") cfg.corpus_seed = to_u64(key, v);
        else if (key == "batch") cfg.batch = to_int(key, v);
        else if (key == "globals_per_image") cfg.globals_per_image = to_int(key, v);
        else if (key == "locals_per_image") cfg.locals_per_image = to_int(key, v);
        else if (key == "local_side") cfg.local_side = to_int(key, v);
        else if (key == "flip_prob") a.flip_prob = to_f64(key, v);
        else if (key == "brightness_lo") a.brightness_lo = to_f64(key, v);
        else if (key == "brightness_hi") a.brightness_hi = to_f64(key, v);
        else if (key == "contrast_lo") a.contrast_lo = to_f64(key, v);
        else if (key == "contrast_hi") a.contrast_hi = to_f64(key, v);
        else if (key == "grayscale_prob") a.grayscale_prob = to_f64(key, v);
        else if (key == "blur_prob") a.blur_prob = to_f64(key, v);
        else if (key == "global_scale_lo") a.global_scale_lo = to_f64(key, v);
        else if (key == "global_scale_hi") a.global_scale_hi = to_f64(key, v);
        else if (key == "local_scale_lo") a.local_scale_lo = to_f64(key, v);
        else if (key == "local_scale_hi") a.local_scale_hi = to_f64(key, v);
        else if (key == "patch_side") cfg.patch_side = to_int(key, v);
        else if (key == "depth") cfg.depth = to_int(key, v);
        else if (key == "width") cfg.width = to_int(key, v);
        else if (key == "heads") cfg.heads = to_int(key, v);
        else if (key == "mlp_ratio") cfg.mlp_ratio = to_f64(key, v);
        else if (key == "proj_hidden") cfg.proj_hidden = to_int(key, v);
        else if (key == "embed_dim") cfg.embed_dim = to_int(key, v);
        else if (key == "init_std") cfg.init_std = to_f64(key, v);
        else if (key == "prototypes") cfg.prototypes = to_int(key, v);
        else if (key == "tau_g") cfg.tau_g = to_f64(key, v);
        else if (key == "tau_l") cfg.tau_l = to_f64(key, v);
        else if (key == "lambda_reg") cfg.lambda_reg = to_f64(key, v);
        else if (key == "entropy_mode") {
            if (v == "mean_entropy") cfg.entropy_mode = EntropyMode::kMeanEntropy;
            else if (v == "literal_eq4") cfg.entropy_mode = EntropyMode::kLiteralEq4;
            else throw ConfigError("config: entropy_mode must be mean_entropy|literal_eq4");
        } else if (key == "teacher_op") {
            if (v == "sinkhorn") cfg.teacher_op = TeacherOpMode::kSinkhorn;
            else if (v == "centering") cfg.teacher_op = TeacherOpMode::kCentering;
            else throw ConfigError("config: teacher_op must be sinkhorn|centering");
        } else if (key == "sinkhorn_iters") cfg.sinkhorn_iters = to_int(key, v);
        else if (key == "center_momentum") cfg.center_momentum = to_f64(key, v);
        else if (key == "filter_theta") cfg.filter_theta = to_f64(key, v);
        else if (key == "filter_retries") cfg.filter_retries = to_int(key, v);
        else if (key == "filter_embedder") {
            if (v == "teacher") cfg.filter_embedder = FilterEmbedderKind::kTeacher;
            else if (v == "random_projection") cfg.filter_embedder = FilterEmbedderKind::kRandomProjection;
            else throw ConfigError("config: filter_embedder must be teacher|random_projection");
        } else if (key == "epochs") cfg.epochs = to_int(key, v);
        else if (key == "warmup_epochs") cfg.warmup_epochs = to_int(key, v);
        else if (key == "lr_init") cfg.lr_init = to_f64(key, v);
        else if (key == "lr_peak") cfg.lr_peak = to_f64(key, v);
        else if (key == "lr_final") cfg.lr_final = to_f64(key, v);
        else if (key == "weight_decay") cfg.weight_decay = to_f64(key, v);
        else if (key == "ema_momentum") cfg.ema_momentum = to_f64(key, v);
        else if (key == "clip_norm") cfg.clip_norm = to_f64(key, v);
        else if (key == "student_views") {
            if (v == "locals_only") cfg.student_views = StudentViewMode::kLocalsOnly;
            else if (v == "all") cfg.student_views = StudentViewMode::kAll;
            else throw ConfigError("config: student_views must be locals_only|all");
        } else if (key == "run_seed") cfg.run_seed = to_u64(key, v);
        else throw ConfigError("config: unknown key '" + key + "'");
    }
};

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig TrainConfig::from_text(const std::string& text) {
    Parser p;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value");
        p.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return p.cfg;
}

TrainConfig TrainConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("config: cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return from_text(os.str());
}

}  // namespace pros
