#include "pros/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "pros/records.hpp"
#include "pros/rng.hpp"

namespace pros {

FeatureTable extract_features(const Checkpoint& ck, const std::vector<ToyImage>& corpus) {
    if (corpus.empty()) throw ShapeError("extract_features: empty corpus");
    const EncoderConfig enc = ck.config.encoder_config();
    for (const ToyImage& img : corpus)
        if (img.pixels.height != enc.image_side || img.pixels.width != enc.image_side)
            throw ShapeError("extract_features: corpus side " +
                             std::to_string(img.pixels.height) + " does not match encoder side " +
                             std::to_string(enc.image_side));
    FeatureTable table;
    table.width = enc.width;
    table.rows.reserve(corpus.size());
    table.labels.reserve(corpus.size());
    for (const ToyImage& img : corpus) {
        Tape tape;
        TapedModel teacher = enroll(tape, ck.teacher, false);
        Tensor f = encode(tape, teacher, image_tensor(tape, img.pixels));
        table.rows.emplace_back(f.values().begin(), f.values().end());
        table.labels.push_back(img.class_id);
    }
    return table;
}

std::vector<std::vector<double>> extract_projected(const Checkpoint& ck,
                                                   const std::vector<ToyImage>& corpus) {
    std::vector<std::vector<double>> out;
    out.reserve(corpus.size());
    for (const ToyImage& img : corpus) {
        Tape tape;
        TapedModel teacher = enroll(tape, ck.teacher, false);
        Tensor z = embed_image(tape, teacher, img.pixels);
        out.emplace_back(z.values().begin(), z.values().end());
    }
    return out;
}

std::string ProbeResult::to_json() const {
    std::string per_class = "[";
    char buf[64];
    for (size_t i = 0; i < per_class_accuracy.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%s%.17g", i ? "," : "", per_class_accuracy[i]);
        per_class += buf;
    }
    per_class += "]";
    std::string out = "{\"accuracy\":";
    std::snprintf(buf, sizeof(buf), "%.17g", accuracy);
    out += buf;
    out += ",\"per_class_accuracy\":" + per_class + ",\"split\":\"" + split + "\",\"kind\":\"" +
           kind + "\"}";
    return out;
}

SplitIndices stratified_split(const std::vector<int>& labels, double train_fraction,
                              uint64_t seed) {
    if (train_fraction <= 0.0 || train_fraction >= 1.0)
        throw ConfigError("stratified_split: train_fraction must lie in (0,1)");
    std::map<int, std::vector<int>> by_class;
    for (size_t i = 0; i < labels.size(); ++i)
        by_class[labels[i]].push_back(static_cast<int>(i));
    SplitIndices split;
    for (auto& [cls, idx] : by_class) {
        Rng rng(derive_seed(seed, {0x73706c6974ULL, static_cast<uint64_t>(cls)}));
        for (size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[static_cast<size_t>(rng.uniform_int(static_cast<int>(i)))]);
        size_t n_train = static_cast<size_t>(
            std::lround(train_fraction * static_cast<double>(idx.size())));
        n_train = std::min(std::max<size_t>(n_train, 1), idx.size() - (idx.size() > 1 ? 1 : 0));
        for (size_t i = 0; i < idx.size(); ++i)
            (i < n_train ? split.train : split.test).push_back(idx[i]);
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::sqrt(na) * std::sqrt(nb);
    if (denom <= kNormEps) throw NumericError("knn: degenerate feature norm");
    return dot / denom;
}

ProbeResult summarize(const FeatureTable& table, const std::vector<int>& test,
                      const std::vector<int>& predictions, const std::string& kind,
                      uint64_t split_seed) {
    std::map<int, std::pair<int, int>> per_class;  // class -> (correct, count)
    int correct = 0;
    for (size_t i = 0; i < test.size(); ++i) {
        const int truth = table.labels[static_cast<size_t>(test[i])];
        per_class[truth].second += 1;
        if (predictions[i] == truth) {
            per_class[truth].first += 1;
            ++correct;
        }
    }
    ProbeResult res;
    res.accuracy = test.empty() ? 0.0 : static_cast<double>(correct) / test.size();
    for (const auto& [cls, cc] : per_class)
        res.per_class_accuracy.push_back(static_cast<double>(cc.first) / cc.second);
    res.kind = kind;
    res.split = "stratified 80/20 seed " + std::to_string(split_seed);
    return res;
}

}  // namespace

double knn_classify(const FeatureTable& table, const std::vector<int>& train,
                    const std::vector<int>& test, int k, std::vector<int>* predictions) {
    if (k < 1 || k > static_cast<int>(train.size()))
        throw ConfigError("knn: k must lie in [1, train size]");
    if (predictions) predictions->clear();
    int correct = 0;
    std::vector<std::pair<double, int>> dist;  // (cosine distance, train position)
    for (int ti : test) {
        dist.clear();
        for (int tr : train)
            dist.push_back({1.0 - cosine(table.rows[static_cast<size_t>(ti)],
                                         table.rows[static_cast<size_t>(tr)]),
                            tr});
        std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
        std::map<int, int> votes;
        for (int i = 0; i < k; ++i) votes[table.labels[static_cast<size_t>(dist[static_cast<size_t>(i)].second)]] += 1;
        int best_class = -1, best_votes = -1;
        for (const auto& [cls, v] : votes)
            if (v > best_votes) {  // map order: ties resolve to the smallest id
                best_votes = v;
                best_class = cls;
            }
        if (predictions) predictions->push_back(best_class);
        if (best_class == table.labels[static_cast<size_t>(ti)]) ++correct;
    }
    return test.empty() ? 0.0 : static_cast<double>(correct) / test.size();
}

ProbeResult knn_probe(const FeatureTable& table, int k, uint64_t split_seed) {
    SplitIndices split = stratified_split(table.labels, 0.8, split_seed);
    std::map<int, int> train_classes;
    for (int i : split.train) train_classes[table.labels[static_cast<size_t>(i)]] += 1;
    for (int label : table.labels)
        if (train_classes.find(label) == train_classes.end())
            throw ConfigError("knn_probe: class " + std::to_string(label) +
                              " absent from the train split");
    std::vector<int> predictions;
    knn_classify(table, split.train, split.test, k, &predictions);
    return summarize(table, split.test, predictions, "knn(k=" + std::to_string(k) + ")",
                     split_seed);
}

ProbeResult linear_probe(const FeatureTable& table, int epochs, double lr, uint64_t split_seed) {
    if (epochs < 0 || lr <= 0.0) throw ConfigError("linear_probe: bad epochs or lr");
    SplitIndices split = stratified_split(table.labels, 0.8, split_seed);
    const int classes = 1 + *std::max_element(table.labels.begin(), table.labels.end());
    const int d = table.width;
    const int n_train = static_cast<int>(split.train.size());

    std::vector<double> x_train(static_cast<size_t>(n_train) * d);
    std::vector<double> y_train(static_cast<size_t>(n_train) * classes, 0.0);
    for (int i = 0; i < n_train; ++i) {
        const auto& row = table.rows[static_cast<size_t>(split.train[static_cast<size_t>(i)])];
        std::copy(row.begin(), row.end(), x_train.begin() + static_cast<int64_t>(i) * d);
        y_train[static_cast<size_t>(i) * classes +
                table.labels[static_cast<size_t>(split.train[static_cast<size_t>(i)])]] = 1.0;
    }

    std::vector<double> w(static_cast<size_t>(d) * classes, 0.0);
    std::vector<double> b(static_cast<size_t>(classes), 0.0);
    for (int e = 0; e < epochs; ++e) {
        Tape tape;
        Tensor wt = tape.variable({d, classes}, w);
        Tensor bt = tape.variable({classes}, b);
        Tensor logits = add(matmul(tape.constant({n_train, d}, x_train), wt), bt);
        Tensor probs = softmax(logits, 1.0);
        Tensor ce = scale(
            dot(tape.constant({n_train, classes}, y_train), log_clamped(probs)),
            -1.0 / n_train);
        if (!std::isfinite(ce.item())) throw NumericError("linear_probe: non-finite loss");
        tape.backward(ce);
        auto wg = wt.grad();
        auto bg = bt.grad();
        for (size_t j = 0; j < w.size(); ++j) w[j] -= lr * wg[j];
        for (size_t j = 0; j < b.size(); ++j) b[j] -= lr * bg[j];
    }

    std::vector<int> predictions;
    predictions.reserve(split.test.size());
    for (int ti : split.test) {
        const auto& row = table.rows[static_cast<size_t>(ti)];
        int best = 0;
        double best_score = -1e300;
        for (int c = 0; c < classes; ++c) {
            double s = b[static_cast<size_t>(c)];
            for (int j = 0; j < d; ++j) s += row[static_cast<size_t>(j)] * w[static_cast<size_t>(j) * classes + c];
            if (s > best_score) {
                best_score = s;
                best = c;
            }
        }
        predictions.push_back(best);
    }
    ProbeResult res = summarize(table, split.test, predictions, "linear", split_seed);
    res.kind += "(epochs=" + std::to_string(epochs) + ")";
    return res;
}

PrototypeAssignments prototype_nn(const PrototypeBank& bank,
                                  const std::vector<std::vector<double>>& projected,
                                  double tau) {
    if (projected.empty()) throw ShapeError("prototype_nn: empty feature table");
    PrototypeAssignments out;
    out.nearest_image.assign(static_cast<size_t>(bank.K), -1);
    out.nearest_similarity.assign(static_cast<size_t>(bank.K), -2.0);
    out.usage_counts.assign(static_cast<size_t>(bank.K), 0);

    // normalized prototype rows
    std::vector<std::vector<double>> rows(static_cast<size_t>(bank.K));
    for (int k = 0; k < bank.K; ++k) {
        rows[static_cast<size_t>(k)].assign(bank.p.begin() + static_cast<int64_t>(k) * bank.d,
                                            bank.p.begin() + static_cast<int64_t>(k + 1) * bank.d);
        double sq = 0.0;
        for (double v : rows[static_cast<size_t>(k)]) sq += v * v;
        const double nrm = std::sqrt(sq);
        if (nrm <= kNormEps) throw NumericError("prototype_nn: degenerate prototype row");
        for (double& v : rows[static_cast<size_t>(k)]) v /= nrm;
    }

    for (size_t i = 0; i < projected.size(); ++i) {
        if (static_cast<int>(projected[i].size()) != bank.d)
            throw ShapeError("prototype_nn: projected feature dim mismatch");
        int best_k = 0;
        double best_sim = -2.0;
        for (int k = 0; k < bank.K; ++k) {
            double s = 0.0;
            for (int j = 0; j < bank.d; ++j)
                s += rows[static_cast<size_t>(k)][static_cast<size_t>(j)] * projected[i][static_cast<size_t>(j)];
            if (s > best_sim) {
                best_sim = s;
                best_k = k;
            }
            if (s > out.nearest_similarity[static_cast<size_t>(k)]) {
                out.nearest_similarity[static_cast<size_t>(k)] = s;
                out.nearest_image[static_cast<size_t>(k)] = static_cast<int>(i);
            }
        }
        // argmax of predict() over prototypes; tau does not move the argmax
        (void)tau;
        out.usage_counts[static_cast<size_t>(best_k)] += 1;
    }

    std::vector<double> freq(static_cast<size_t>(bank.K), 0.0);
    for (int k = 0; k < bank.K; ++k)
        freq[static_cast<size_t>(k)] =
            static_cast<double>(out.usage_counts[static_cast<size_t>(k)]) / projected.size();
    out.usage_entropy = entropy(freq);
    return out;
}

std::string PrototypeAssignments::to_json() const {
    std::string out = "{\"assignments\":[";
    char buf[128];
    for (size_t k = 0; k < nearest_image.size(); ++k) {
        std::snprintf(buf, sizeof(buf),
                      "%s{\"prototype\":%zu,\"nearest_image\":%d,\"similarity\":%.17g,"
                      "\"usage\":%d}",
                      k ? "," : "", k, nearest_image[k], nearest_similarity[k], usage_counts[k]);
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "],\"usage_entropy\":%.17g}", usage_entropy);
    out += buf;
    return out;
}

void save_feature_table(const FeatureTable& table, const std::string& path) {
    RecordFile file;
    file.config_text = "feature_table source=" + table.source + "\n";
    RecordSection feats;
    feats.name = "features";
    feats.shape = {static_cast<int>(table.rows.size()), table.width};
    for (const auto& row : table.rows) feats.data.insert(feats.data.end(), row.begin(), row.end());
    RecordSection labels;
    labels.name = "labels";
    labels.shape = {static_cast<int>(table.labels.size())};
    labels.data.assign(table.labels.begin(), table.labels.end());
    file.sections = {std::move(feats), std::move(labels)};
    write_record_file(path, file);
}

FeatureTable load_feature_table(const std::string& path) {
    RecordFile file = read_record_file(path);
    if (file.sections.size() != 2 || file.sections[0].name != "features" ||
        file.sections[1].name != "labels")
        throw IoError("feature table: unexpected sections in " + path);
    const RecordSection& feats = file.sections[0];
    const RecordSection& labels = file.sections[1];
    if (feats.shape.size() != 2 || labels.shape.size() != 1 ||
        feats.shape[0] != labels.shape[0])
        throw IoError("feature table: inconsistent shapes in " + path);
    FeatureTable table;
    table.width = feats.shape[1];
    table.rows.resize(static_cast<size_t>(feats.shape[0]));
    for (int i = 0; i < feats.shape[0]; ++i)
        table.rows[static_cast<size_t>(i)].assign(
            feats.data.begin() + static_cast<int64_t>(i) * table.width,
            feats.data.begin() + static_cast<int64_t>(i + 1) * table.width);
    table.labels.reserve(labels.data.size());
    for (double v : labels.data) table.labels.push_back(static_cast<int>(v));
    return table;
}

}  // namespace pros
