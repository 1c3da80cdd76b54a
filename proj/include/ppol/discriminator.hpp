#pragma once

// Human-vs-simulator classifier over standardized fingerprints: a bootstrap
// forest of Gini-split decision trees with balanced class weights.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ppol/fingerprint.hpp"

namespace ppol {

struct Standardizer {
    FeatureVector mean{};
    FeatureVector scale{};

    FeatureVector transform(const FeatureVector& x) const;
};

/// Per-column mean and population standard deviation; columns that are
/// constant on the input get scale 1. Requires at least two rows.
Standardizer fit_standardizer(std::span<const FeatureVector> rows);

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double p_human = 0.0;  // weighted human fraction of the training samples reaching this node
    double impurity = 0.0;
    double weight = 0.0;

    bool is_leaf() const { return feature < 0; }
    bool operator==(const TreeNode&) const = default;
};

struct DecisionTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    /// Human-class probability for an already standardized input.
    double predict(const FeatureVector& standardized) const;
    std::size_t depth() const;
    bool operator==(const DecisionTree&) const = default;
};

enum class ClassWeighting { balanced, uniform };

struct ForestConfig {
    std::size_t n_estimators = 200;
    std::size_t max_depth = 12;
    ClassWeighting class_weight = ClassWeighting::balanced;
    /// Non-constant features examined per split; 0 means ceil(sqrt(19)) = 5.
    std::size_t max_features = 0;
    bool bootstrap = true;
    std::uint64_t seed = 42;
    std::size_t min_samples_split = 2;
    /// Worker threads for tree construction; 0 uses the hardware concurrency.
    /// Results do not depend on this value.
    std::size_t threads = 0;

    std::size_t features_per_split() const;
    void validate() const;
};

struct DiscriminatorTags {
    std::string domain;
    std::string simulator_model;
};

struct Discriminator {
    ForestConfig config;
    Standardizer standardizer;
    std::vector<DecisionTree> trees;
    /// Weights applied to {simulator, human} samples.
    std::array<double, 2> class_weights{1.0, 1.0};
    DiscriminatorTags tags;

    /// Mean over trees of the human-class leaf probability, after standardizing.
    double predict_human_prob(const FeatureVector& fingerprint) const;
};

/// Label 1 is human, 0 is simulator. The standardizer is fit on both classes together.
Discriminator train_discriminator(std::span<const FeatureVector> human, std::span<const FeatureVector> simulator,
                                  const ForestConfig& config = {}, DiscriminatorTags tags = {});

/// Builds one tree on standardized rows; exposed for tests and tooling.
DecisionTree build_tree(std::span<const FeatureVector> standardized, std::span<const int> labels,
                        std::span<const double> sample_weights, const ForestConfig& config, std::uint64_t tree_seed);

/// Mean impurity decrease per feature, normalized to sum to 1.
FeatureVector feature_importances(const Discriminator& disc);

struct ClassifierMetrics {
    double roc_auc = 0.0;
    double accuracy = 0.0;
    double f1 = 0.0;
};

/// Rank-statistic AUC with midranks for ties. Throws when only one class is present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);
/// Accuracy and F1 (human as the positive class) at the 0.5 threshold.
ClassifierMetrics evaluate_discriminator(const Discriminator& disc, std::span<const FeatureVector> rows,
                                         std::span<const int> labels);

/// Scoring refuses a discriminator trained for another domain/simulator unless overridden.
/// Empty expected fields are not checked.
void check_tags(const Discriminator& disc, const DiscriminatorTags& expected, bool allow_mismatch);

inline constexpr int kDiscriminatorFormatVersion = 1;

std::string serialize_discriminator(const Discriminator& disc);
Discriminator deserialize_discriminator(std::string_view text);
void save_discriminator(const Discriminator& disc, const std::filesystem::path& path);
Discriminator load_discriminator(const std::filesystem::path& path);

}  // namespace ppol
