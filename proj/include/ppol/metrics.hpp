#pragma once

// Scoring math: human-likeness, Chamfer coverage against the human reference
// cloud, the combined fitness and its weight schedule, per-dimension Dice
// alignment, and the PCA projection used for fingerprint scatter plots.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ppol/discriminator.hpp"
#include "ppol/fingerprint.hpp"

namespace ppol {

enum class CoverageSpace { raw, standardized };

struct HumanReference {
    std::vector<FeatureVector> train;  // H_train point cloud
    FeatureVector mu_h{};              // elementwise mean over the calibration corpus
    double d_ref = 0.0;                // mean pairwise distance within H_train
    FeatureVector lower{};             // per-feature min over the calibration corpus
    FeatureVector upper{};             // per-feature max over the calibration corpus
    CoverageSpace space = CoverageSpace::raw;
    std::optional<Standardizer> standardizer;  // set when space == standardized
};

/// `train` supplies the coverage cloud and d_ref; `calibration` supplies mu_H and
/// the Dice normalization bounds. In standardized space both the cloud and any
/// scored points are mapped through a standardizer fit on `train`.
HumanReference build_reference(std::span<const FeatureVector> train, std::span<const FeatureVector> calibration,
                               CoverageSpace space = CoverageSpace::raw);

double human_likeness(std::span<const double> probabilities);

double euclidean(const FeatureVector& a, const FeatureVector& b);
/// Mean over `from` of the distance to its nearest point in `to`.
double one_sided_chamfer(std::span<const FeatureVector> from, std::span<const FeatureVector> to);
/// Symmetric two-sided Chamfer error.
double chamfer_error(std::span<const FeatureVector> generated, std::span<const FeatureVector> human);
/// Mean distance over unordered distinct pairs. Throws for < 2 points or zero spread.
double reference_scale(std::span<const FeatureVector> human);
/// max(0, 1 - min(1, err / (2 d_ref))).
double coverage_score(std::span<const FeatureVector> generated, std::span<const FeatureVector> human, double d_ref);
double coverage_score(std::span<const FeatureVector> generated, const HumanReference& reference);

struct LambdaWeights {
    double human = 1.0;
    double coverage = 0.0;
};

/// Coverage weight grows linearly with the persona-count ratio and reaches 0.5
/// at the terminal count.
LambdaWeights lambda_schedule(std::size_t n_current, std::size_t n_terminal);
double combined_score(double hl, double coverage, LambdaWeights weights);

/// 2 * sum(min(x, y)) / (sum(x) + sum(y)); 1 when both sums are zero.
double dice_coefficient(std::span<const double> x, std::span<const double> y);

struct DiceScores {
    std::array<double, 4> dims{};  // D1..D4
    double usi = 0.0;
};

/// Min-max normalizes both vectors with the reference bounds, then scores each dimension.
DiceScores dice_alignment(const FeatureVector& mean_generated, const FeatureVector& mu_h, const FeatureVector& lower,
                          const FeatureVector& upper);
DiceScores dice_alignment(const FeatureVector& mean_generated, const HumanReference& reference);

FeatureVector mean_vector(std::span<const FeatureVector> rows);

struct FitnessReport {
    std::vector<double> episode_probabilities;
    double hl_mean = 0.0;
    std::vector<std::string> task_ids;
    std::vector<double> task_coverage;
    double cov_mean = 0.0;
    LambdaWeights lambda;
    double score = 0.0;
    DiceScores dice;
};

/// Fills every derived field from per-episode probabilities and per-task coverage.
FitnessReport assemble_report(std::vector<double> episode_probabilities, std::vector<std::string> task_ids,
                              std::vector<double> task_coverage, LambdaWeights weights,
                              const FeatureVector& mean_generated, const HumanReference& reference);

nlohmann::json report_to_json(const FitnessReport& report);
FitnessReport report_from_json(const nlohmann::json& doc);

struct PcaResult {
    FeatureVector mean{};
    FeatureVector scale{};
    Eigen::MatrixXd components;  // 19 x k, columns ordered by decreasing eigenvalue
    Eigen::MatrixXd coords;      // n x k
    std::vector<double> explained_variance;  // fraction of total variance per component
};

/// Standardizes columns, eigendecomposes the covariance and projects onto the top k
/// eigenvectors. Each component is signed so its largest-magnitude loading is positive.
PcaResult pca_project(std::span<const FeatureVector> rows, std::size_t k);

}  // namespace ppol
