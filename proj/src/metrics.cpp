#include "ppol/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "ppol/common.hpp"

namespace ppol {

using nlohmann::json;

HumanReference build_reference(std::span<const FeatureVector> train, std::span<const FeatureVector> calibration,
                               CoverageSpace space) {
    if (calibration.empty())
        fail(ErrorCode::invalid_input, "human reference needs a nonempty calibration corpus");
    HumanReference ref;
    ref.space = space;
    ref.mu_h = mean_vector(calibration);
    ref.lower = calibration.front();
    ref.upper = calibration.front();
    for (const auto& row : calibration) {
        for (std::size_t j = 0; j < kFeatureCount; ++j) {
            ref.lower[j] = std::min(ref.lower[j], row[j]);
            ref.upper[j] = std::max(ref.upper[j], row[j]);
        }
    }
    if (space == CoverageSpace::standardized) {
        ref.standardizer = fit_standardizer(train);
        for (const auto& row : train)
            ref.train.push_back(ref.standardizer->transform(row));
    } else {
        ref.train.assign(train.begin(), train.end());
    }
    ref.d_ref = reference_scale(ref.train);
    return ref;
}

double human_likeness(std::span<const double> probabilities) {
    if (probabilities.empty())
        fail(ErrorCode::invalid_input, "human_likeness of an empty episode batch");
    double sum = 0.0;
    for (double p : probabilities) {
        if (!(p >= 0.0 && p <= 1.0))
            fail(ErrorCode::invalid_input, "probability outside [0,1]: " + format_double(p));
        sum += p;
    }
    return sum / static_cast<double>(probabilities.size());
}

double euclidean(const FeatureVector& a, const FeatureVector& b) {
    double ss = 0.0;
    for (std::size_t j = 0; j < kFeatureCount; ++j)
        ss += (a[j] - b[j]) * (a[j] - b[j]);
    return std::sqrt(ss);
}

double one_sided_chamfer(std::span<const FeatureVector> from, std::span<const FeatureVector> to) {
    if (from.empty() || to.empty())
        fail(ErrorCode::invalid_input, "chamfer error of an empty point set");
    double total = 0.0;
    for (const auto& p : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : to)
            best = std::min(best, euclidean(p, q));
        total += best;
    }
    return total / static_cast<double>(from.size());
}

double chamfer_error(std::span<const FeatureVector> generated, std::span<const FeatureVector> human) {
    return one_sided_chamfer(human, generated) + one_sided_chamfer(generated, human);
}

double reference_scale(std::span<const FeatureVector> human) {
    if (human.size() < 2)
        fail(ErrorCode::invalid_input, "reference scale needs at least 2 points");
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < human.size(); ++i) {
        for (std::size_t j = i + 1; j < human.size(); ++j) {
            total += euclidean(human[i], human[j]);
            ++pairs;
        }
    }
    const double d_ref = total / static_cast<double>(pairs);
    if (!(d_ref > 0.0))
        fail(ErrorCode::invalid_input, "reference points are all identical; coverage is undefined (d_ref = 0)");
    return d_ref;
}

double coverage_score(std::span<const FeatureVector> generated, std::span<const FeatureVector> human, double d_ref) {
    if (!(d_ref > 0.0))
        fail(ErrorCode::invalid_input, "coverage_score requires d_ref > 0");
    const double err = chamfer_error(generated, human);
    return std::max(0.0, 1.0 - std::min(1.0, err / (2.0 * d_ref)));
}

double coverage_score(std::span<const FeatureVector> generated, const HumanReference& reference) {
    if (reference.space == CoverageSpace::raw)
        return coverage_score(generated, reference.train, reference.d_ref);
    std::vector<FeatureVector> mapped;
    mapped.reserve(generated.size());
    for (const auto& row : generated)
        mapped.push_back(reference.standardizer->transform(row));
    return coverage_score(mapped, reference.train, reference.d_ref);
}

LambdaWeights lambda_schedule(std::size_t n_current, std::size_t n_terminal) {
    if (n_current < 1 || n_terminal < 1)
        fail(ErrorCode::invalid_input, "persona counts must be >= 1");
    if (n_current > n_terminal)
        fail(ErrorCode::invalid_input, "current persona count " + std::to_string(n_current) +
                                           " exceeds terminal count " + std::to_string(n_terminal));
    LambdaWeights w;
    w.coverage = 0.5 * static_cast<double>(n_current) / static_cast<double>(n_terminal);
    w.human = 1.0 - w.coverage;
    return w;
}

double combined_score(double hl, double coverage, LambdaWeights weights) {
    if (std::abs(weights.human + weights.coverage - 1.0) > 1e-9 || weights.human < 0.0 || weights.coverage < 0.0)
        fail(ErrorCode::invalid_input, "fitness weights must be nonnegative and sum to 1");
    if (!(hl >= 0.0 && hl <= 1.0) || !(coverage >= 0.0 && coverage <= 1.0))
        fail(ErrorCode::invalid_input, "human-likeness and coverage must lie in [0,1]");
    return weights.human * hl + weights.coverage * coverage;
}

double dice_coefficient(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        fail(ErrorCode::invalid_input, "dice_coefficient: length mismatch");
    double overlap = 0.0;
    double sx = 0.0;
    double sy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        overlap += std::min(x[i], y[i]);
        sx += x[i];
        sy += y[i];
    }
    if (sx + sy == 0.0)
        return 1.0;
    return 2.0 * overlap / (sx + sy);
}

namespace {

double normalize(double value, double lo, double hi) {
    if (!std::isfinite(value))
        fail(ErrorCode::invalid_input, "dice_alignment: non-finite feature value");
    if (hi > lo)
        return std::clamp((value - lo) / (hi - lo), 0.0, 1.0);
    return std::clamp(value, 0.0, 1.0);
}

}  // namespace

DiceScores dice_alignment(const FeatureVector& mean_generated, const FeatureVector& mu_h, const FeatureVector& lower,
                          const FeatureVector& upper) {
    DiceScores out;
    for (std::size_t d = 0; d < kDimensions.size(); ++d) {
        const auto range = dimension_range(kDimensions[d]);
        std::vector<double> x;
        std::vector<double> y;
        for (std::size_t j = range.offset; j < range.offset + range.length; ++j) {
            x.push_back(normalize(mean_generated[j], lower[j], upper[j]));
            y.push_back(normalize(mu_h[j], lower[j], upper[j]));
        }
        out.dims[d] = dice_coefficient(x, y);
    }
    out.usi = (out.dims[0] + out.dims[1] + out.dims[2] + out.dims[3]) / 4.0;
    return out;
}

DiceScores dice_alignment(const FeatureVector& mean_generated, const HumanReference& reference) {
    return dice_alignment(mean_generated, reference.mu_h, reference.lower, reference.upper);
}

FeatureVector mean_vector(std::span<const FeatureVector> rows) {
    if (rows.empty())
        fail(ErrorCode::invalid_input, "mean of an empty set of fingerprints");
    FeatureVector mean{};
    for (const auto& row : rows)
        for (std::size_t j = 0; j < kFeatureCount; ++j)
            mean[j] += row[j];
    for (double& v : mean)
        v /= static_cast<double>(rows.size());
    return mean;
}

FitnessReport assemble_report(std::vector<double> episode_probabilities, std::vector<std::string> task_ids,
                              std::vector<double> task_coverage, LambdaWeights weights,
                              const FeatureVector& mean_generated, const HumanReference& reference) {
    if (task_coverage.empty() || task_ids.size() != task_coverage.size())
        fail(ErrorCode::invalid_input, "assemble_report: per-task coverage missing or misaligned");
    FitnessReport report;
    report.hl_mean = human_likeness(episode_probabilities);
    report.episode_probabilities = std::move(episode_probabilities);
    report.cov_mean = std::accumulate(task_coverage.begin(), task_coverage.end(), 0.0) /
                      static_cast<double>(task_coverage.size());
    report.task_ids = std::move(task_ids);
    report.task_coverage = std::move(task_coverage);
    report.lambda = weights;
    report.score = combined_score(report.hl_mean, report.cov_mean, weights);
    report.dice = dice_alignment(mean_generated, reference);
    return report;
}

json report_to_json(const FitnessReport& report) {
    return json{
        {"episode_probabilities", report.episode_probabilities},
        {"hl_mean", report.hl_mean},
        {"task_ids", report.task_ids},
        {"task_coverage", report.task_coverage},
        {"cov_mean", report.cov_mean},
        {"lambda_h", report.lambda.human},
        {"lambda_b", report.lambda.coverage},
        {"score", report.score},
        {"dice", {{"D1", report.dice.dims[0]}, {"D2", report.dice.dims[1]}, {"D3", report.dice.dims[2]},
                  {"D4", report.dice.dims[3]}, {"USI", report.dice.usi}}},
    };
}

FitnessReport report_from_json(const json& doc) {
    FitnessReport r;
    r.episode_probabilities = doc.at("episode_probabilities").get<std::vector<double>>();
    r.hl_mean = doc.at("hl_mean").get<double>();
    r.task_ids = doc.at("task_ids").get<std::vector<std::string>>();
    r.task_coverage = doc.at("task_coverage").get<std::vector<double>>();
    r.cov_mean = doc.at("cov_mean").get<double>();
    r.lambda.human = doc.at("lambda_h").get<double>();
    r.lambda.coverage = doc.at("lambda_b").get<double>();
    r.score = doc.at("score").get<double>();
    const auto& dice = doc.at("dice");
    r.dice.dims = {dice.at("D1").get<double>(), dice.at("D2").get<double>(), dice.at("D3").get<double>(),
                   dice.at("D4").get<double>()};
    r.dice.usi = dice.at("USI").get<double>();
    return r;
}

PcaResult pca_project(std::span<const FeatureVector> rows, std::size_t k) {
    if (rows.size() < 2)
        fail(ErrorCode::invalid_input, "pca_project needs at least 2 points");
    if (k < 1 || k > kFeatureCount)
        fail(ErrorCode::invalid_input, "pca_project: k must lie in [1, 19]");

    const Standardizer standardizer = fit_standardizer(rows);
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto d = static_cast<Eigen::Index>(kFeatureCount);
    Eigen::MatrixXd z(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto s = standardizer.transform(rows[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < d; ++j)
            z(i, j) = s[static_cast<std::size_t>(j)];
    }
    const Eigen::MatrixXd cov = (z.transpose() * z) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success)
        fail(ErrorCode::dependency, "covariance eigendecomposition did not converge");

    // Eigen returns ascending eigenvalues.
    const Eigen::VectorXd values = solver.eigenvalues();
    const Eigen::MatrixXd vectors = solver.eigenvectors();
    double total = 0.0;
    for (Eigen::Index j = 0; j < d; ++j)
        total += std::max(0.0, values(j));

    PcaResult out;
    out.mean = standardizer.mean;
    out.scale = standardizer.scale;
    out.components.resize(d, static_cast<Eigen::Index>(k));
    for (std::size_t c = 0; c < k; ++c) {
        const Eigen::Index src = d - 1 - static_cast<Eigen::Index>(c);
        Eigen::VectorXd v = vectors.col(src);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0)
            v = -v;
        out.components.col(static_cast<Eigen::Index>(c)) = v;
        out.explained_variance.push_back(total > 0.0 ? std::max(0.0, values(src)) / total : 0.0);
    }
    out.coords = z * out.components;
    return out;
}

}  // namespace ppol
