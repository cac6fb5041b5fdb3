#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pros/augment.hpp"
#include "pros/trainer.hpp"

namespace pros {

// Frozen-teacher cls features (pre-projector), one row per corpus image.
struct FeatureTable {
    int width = 0;
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::string source;
};

FeatureTable extract_features(const Checkpoint& ck, const std::vector<ToyImage>& corpus);

// unit-norm projected teacher embeddings (the prototype space)
std::vector<std::vector<double>> extract_projected(const Checkpoint& ck,
                                                   const std::vector<ToyImage>& corpus);

struct ProbeResult {
    double accuracy = 0.0;
    std::vector<double> per_class_accuracy;
    std::string split;
    std::string kind;
    std::string to_json() const;
};

struct SplitIndices {
    std::vector<int> train, test;
};

// 80/20 per class, shuffled by seed; class ratios preserved within one sample
SplitIndices stratified_split(const std::vector<int>& labels, double train_fraction,
                              uint64_t seed);

// cosine-distance kNN with majority vote; class-count ties resolve to the
// smallest class id
double knn_classify(const FeatureTable& table, const std::vector<int>& train,
                    const std::vector<int>& test, int k, std::vector<int>* predictions = nullptr);

ProbeResult knn_probe(const FeatureTable& table, int k, uint64_t split_seed);

// single affine layer + softmax cross-entropy, full-batch gradient descent on
// frozen features
ProbeResult linear_probe(const FeatureTable& table, int epochs, double lr, uint64_t split_seed);

struct PrototypeAssignments {
    std::vector<int> nearest_image;         // per prototype
    std::vector<double> nearest_similarity;
    std::vector<int> usage_counts;  // predict() argmax histogram over the corpus
    double usage_entropy = 0.0;
    std::string to_json() const;
};

PrototypeAssignments prototype_nn(const PrototypeBank& bank,
                                  const std::vector<std::vector<double>>& projected,
                                  double tau);

// same binary record container as checkpoints
void save_feature_table(const FeatureTable& table, const std::string& path);
FeatureTable load_feature_table(const std::string& path);

}  // namespace pros
