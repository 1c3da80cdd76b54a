#include "ppol/discriminator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "ppol/common.hpp"

namespace ppol {

using nlohmann::json;

FeatureVector Standardizer::transform(const FeatureVector& x) const {
    FeatureVector out{};
    for (std::size_t j = 0; j < kFeatureCount; ++j)
        out[j] = (x[j] - mean[j]) / scale[j];
    return out;
}

Standardizer fit_standardizer(std::span<const FeatureVector> rows) {
    if (rows.size() < 2)
        fail(ErrorCode::invalid_input, "fit_standardizer needs at least 2 rows, got " + std::to_string(rows.size()));
    Standardizer s;
    const double n = static_cast<double>(rows.size());
    for (std::size_t j = 0; j < kFeatureCount; ++j) {
        double sum = 0.0;
        for (const auto& row : rows)
            sum += row[j];
        const double mean = sum / n;
        double ss = 0.0;
        for (const auto& row : rows)
            ss += (row[j] - mean) * (row[j] - mean);
        const double sd = std::sqrt(ss / n);
        s.mean[j] = mean;
        s.scale[j] = sd > 0.0 ? sd : 1.0;
    }
    return s;
}

double DecisionTree::predict(const FeatureVector& x) const {
    if (nodes.empty())
        fail(ErrorCode::invalid_input, "empty decision tree");
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
        const auto& node = nodes[i];
        i = static_cast<std::size_t>(x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right);
    }
    return nodes[i].p_human;
}

std::size_t DecisionTree::depth() const {
    if (nodes.empty())
        return 0;
    std::size_t deepest = 0;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
    while (!stack.empty()) {
        auto [i, d] = stack.back();
        stack.pop_back();
        deepest = std::max(deepest, d);
        if (!nodes[i].is_leaf()) {
            stack.emplace_back(static_cast<std::size_t>(nodes[i].left), d + 1);
            stack.emplace_back(static_cast<std::size_t>(nodes[i].right), d + 1);
        }
    }
    return deepest;
}

std::size_t ForestConfig::features_per_split() const {
    if (max_features > 0)
        return std::min(max_features, kFeatureCount);
    return static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(kFeatureCount))));
}

void ForestConfig::validate() const {
    if (n_estimators < 1)
        fail(ErrorCode::config, "n_estimators must be >= 1");
    if (max_depth < 1)
        fail(ErrorCode::config, "max_depth must be >= 1");
    if (min_samples_split < 2)
        fail(ErrorCode::config, "min_samples_split must be >= 2");
}

namespace {

double gini(double w_human, double w_total) {
    if (w_total <= 0.0)
        return 0.0;
    const double p = w_human / w_total;
    return 1.0 - p * p - (1.0 - p) * (1.0 - p);
}

struct Split {
    int feature = -1;
    double threshold = 0.0;
    double improvement = -1.0;
};

class TreeBuilder {
public:
    TreeBuilder(std::span<const FeatureVector> x, std::span<const int> y, std::span<const double> w,
                const ForestConfig& config, std::uint64_t seed)
        : x_(x), y_(y), w_(w), config_(config), rng_(seed) {}

    DecisionTree build(std::vector<std::size_t> samples) {
        grow(samples, 0);
        return std::move(tree_);
    }

private:
    int grow(std::vector<std::size_t>& samples, std::size_t depth) {
        double w_total = 0.0;
        double w_human = 0.0;
        for (auto i : samples) {
            w_total += w_[i];
            w_human += y_[i] == 1 ? w_[i] : 0.0;
        }
        const int index = static_cast<int>(tree_.nodes.size());
        TreeNode node;
        node.weight = w_total;
        node.p_human = w_total > 0.0 ? w_human / w_total : 0.5;
        node.impurity = gini(w_human, w_total);
        tree_.nodes.push_back(node);

        const bool pure = node.impurity <= 1e-12;
        if (pure || depth >= config_.max_depth || samples.size() < config_.min_samples_split)
            return index;

        const Split split = best_split(samples, w_total, w_human);
        if (split.feature < 0)
            return index;

        std::vector<std::size_t> left;
        std::vector<std::size_t> right;
        for (auto i : samples)
            (x_[i][static_cast<std::size_t>(split.feature)] <= split.threshold ? left : right).push_back(i);
        samples.clear();
        samples.shrink_to_fit();

        tree_.nodes[static_cast<std::size_t>(index)].feature = split.feature;
        tree_.nodes[static_cast<std::size_t>(index)].threshold = split.threshold;
        const int l = grow(left, depth + 1);
        tree_.nodes[static_cast<std::size_t>(index)].left = l;
        const int r = grow(right, depth + 1);
        tree_.nodes[static_cast<std::size_t>(index)].right = r;
        return index;
    }

    Split best_split(const std::vector<std::size_t>& samples, double w_total, double w_human) {
        std::array<std::size_t, kFeatureCount> order{};
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t k = kFeatureCount - 1; k > 0; --k)
            std::swap(order[k], order[rng_.below(k + 1)]);

        const double parent = w_total * gini(w_human, w_total);
        const std::size_t budget = config_.features_per_split();
        std::size_t visited = 0;
        Split best;
        std::vector<std::pair<double, std::size_t>> column(samples.size());

        for (std::size_t f : order) {
            if (visited >= budget)
                break;
            for (std::size_t k = 0; k < samples.size(); ++k)
                column[k] = {x_[samples[k]][f], samples[k]};
            std::sort(column.begin(), column.end());
            if (column.front().first == column.back().first)
                continue;  // constant in this node; does not count against the budget
            ++visited;

            double wl = 0.0;
            double wl_human = 0.0;
            for (std::size_t k = 0; k + 1 < column.size(); ++k) {
                const auto i = column[k].second;
                wl += w_[i];
                wl_human += y_[i] == 1 ? w_[i] : 0.0;
                if (column[k].first == column[k + 1].first)
                    continue;
                const double wr = w_total - wl;
                const double wr_human = w_human - wl_human;
                const double improvement = parent - wl * gini(wl_human, wl) - wr * gini(wr_human, wr);
                double threshold = 0.5 * (column[k].first + column[k + 1].first);
                if (threshold >= column[k + 1].first)
                    threshold = column[k].first;
                if (better(improvement, static_cast<int>(f), threshold, best, parent))
                    best = Split{static_cast<int>(f), threshold, improvement};
            }
        }
        return best;
    }

    // Larger improvement wins; equal improvements break toward the lower feature
    // index and then the lower threshold.
    static bool better(double improvement, int feature, double threshold, const Split& best, double scale) {
        if (best.feature < 0)
            return true;
        const double tol = 1e-12 * std::max(1.0, std::abs(scale));
        if (improvement > best.improvement + tol)
            return true;
        if (improvement < best.improvement - tol)
            return false;
        if (feature != best.feature)
            return feature < best.feature;
        return threshold < best.threshold;
    }

    std::span<const FeatureVector> x_;
    std::span<const int> y_;
    std::span<const double> w_;
    const ForestConfig& config_;
    Rng rng_;
    DecisionTree tree_;
};

}  // namespace

DecisionTree build_tree(std::span<const FeatureVector> standardized, std::span<const int> labels,
                        std::span<const double> sample_weights, const ForestConfig& config, std::uint64_t tree_seed) {
    std::vector<std::size_t> samples;
    for (std::size_t i = 0; i < standardized.size(); ++i)
        if (sample_weights[i] > 0.0)
            samples.push_back(i);
    if (samples.empty())
        fail(ErrorCode::invalid_input, "build_tree: no samples with positive weight");
    return TreeBuilder(standardized, labels, sample_weights, config, tree_seed).build(std::move(samples));
}

double Discriminator::predict_human_prob(const FeatureVector& fingerprint) const {
    if (trees.empty())
        fail(ErrorCode::invalid_input, "discriminator has no trees");
    const auto x = standardizer.transform(fingerprint);
    double sum = 0.0;
    for (const auto& tree : trees)
        sum += tree.predict(x);
    return std::clamp(sum / static_cast<double>(trees.size()), 0.0, 1.0);
}

Discriminator train_discriminator(std::span<const FeatureVector> human, std::span<const FeatureVector> simulator,
                                  const ForestConfig& config, DiscriminatorTags tags) {
    config.validate();
    if (human.empty() || simulator.empty())
        fail(ErrorCode::invalid_input, std::string("train_discriminator: ") + (human.empty() ? "human" : "simulator") +
                                           " class is empty");

    std::vector<FeatureVector> rows;
    std::vector<int> labels;
    rows.reserve(human.size() + simulator.size());
    for (const auto& row : human) {
        rows.push_back(row);
        labels.push_back(1);
    }
    for (const auto& row : simulator) {
        rows.push_back(row);
        labels.push_back(0);
    }

    Discriminator disc;
    disc.config = config;
    disc.tags = std::move(tags);
    disc.standardizer = fit_standardizer(rows);
    for (auto& row : rows)
        row = disc.standardizer.transform(row);

    const double n = static_cast<double>(rows.size());
    if (config.class_weight == ClassWeighting::balanced) {
        disc.class_weights[0] = n / (2.0 * static_cast<double>(simulator.size()));
        disc.class_weights[1] = n / (2.0 * static_cast<double>(human.size()));
    }

    // Bootstrap draws are made up front from seed + tree index so that the
    // forest does not depend on how trees are scheduled across threads.
    const std::size_t n_trees = config.n_estimators;
    std::vector<std::vector<double>> weights(n_trees, std::vector<double>(rows.size(), 0.0));
    for (std::size_t t = 0; t < n_trees; ++t) {
        Rng rng(config.seed + t);
        if (config.bootstrap) {
            for (std::size_t k = 0; k < rows.size(); ++k)
                weights[t][rng.below(rows.size())] += 1.0;
        } else {
            std::fill(weights[t].begin(), weights[t].end(), 1.0);
        }
        for (std::size_t i = 0; i < rows.size(); ++i)
            weights[t][i] *= disc.class_weights[static_cast<std::size_t>(labels[i])];
    }

    disc.trees.resize(n_trees);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t t = next++; t < n_trees; t = next++) {
            // The tree's own stream is offset so it never replays the bootstrap draws.
            const std::uint64_t tree_seed = fnv1a64(std::to_string(config.seed + t), 0x9e3779b97f4a7c15ULL);
            disc.trees[t] = build_tree(rows, labels, weights[t], config, tree_seed);
        }
    };
    std::size_t n_threads = config.threads > 0 ? config.threads : std::max(1u, std::thread::hardware_concurrency());
    n_threads = std::min(n_threads, n_trees);
    std::vector<std::thread> pool;
    for (std::size_t i = 1; i < n_threads; ++i)
        pool.emplace_back(worker);
    worker();
    for (auto& th : pool)
        th.join();
    return disc;
}

FeatureVector feature_importances(const Discriminator& disc) {
    FeatureVector total{};
    std::size_t contributing = 0;
    for (const auto& tree : disc.trees) {
        FeatureVector local{};
        double sum = 0.0;
        for (const auto& node : tree.nodes) {
            if (node.is_leaf())
                continue;
            const auto& l = tree.nodes[static_cast<std::size_t>(node.left)];
            const auto& r = tree.nodes[static_cast<std::size_t>(node.right)];
            const double decrease = node.weight * node.impurity - l.weight * l.impurity - r.weight * r.impurity;
            local[static_cast<std::size_t>(node.feature)] += decrease;
            sum += decrease;
        }
        if (sum <= 0.0)
            continue;
        for (std::size_t j = 0; j < kFeatureCount; ++j)
            total[j] += local[j] / sum;
        ++contributing;
    }
    double sum = 0.0;
    for (double v : total)
        sum += v;
    if (contributing == 0 || sum <= 0.0) {
        total.fill(1.0 / static_cast<double>(kFeatureCount));
        return total;
    }
    for (double& v : total)
        v /= sum;
    return total;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        fail(ErrorCode::invalid_input, "roc_auc: scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    std::vector<double> rank(scores.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]])
            ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k)
            rank[order[k]] = mid;
        i = j + 1;
    }
    double positives = 0.0;
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) {
            positives += 1.0;
            rank_sum += rank[i];
        }
    }
    const double negatives = static_cast<double>(labels.size()) - positives;
    if (positives == 0.0 || negatives == 0.0)
        fail(ErrorCode::invalid_input, "roc_auc is undefined when only one class is present");
    return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

ClassifierMetrics evaluate_discriminator(const Discriminator& disc, std::span<const FeatureVector> rows,
                                         std::span<const int> labels) {
    if (rows.size() != labels.size())
        fail(ErrorCode::invalid_input, "evaluate_discriminator: rows and labels differ in length");
    std::vector<double> scores;
    scores.reserve(rows.size());
    for (const auto& row : rows)
        scores.push_back(disc.predict_human_prob(row));

    ClassifierMetrics m;
    m.roc_auc = roc_auc(scores, labels);
    double tp = 0, fp = 0, fn = 0, correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const int predicted = scores[i] >= 0.5 ? 1 : 0;
        correct += predicted == labels[i] ? 1 : 0;
        tp += (predicted == 1 && labels[i] == 1) ? 1 : 0;
        fp += (predicted == 1 && labels[i] == 0) ? 1 : 0;
        fn += (predicted == 0 && labels[i] == 1) ? 1 : 0;
    }
    m.accuracy = correct / static_cast<double>(scores.size());
    m.f1 = (2 * tp + fp + fn) > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
    return m;
}

void check_tags(const Discriminator& disc, const DiscriminatorTags& expected, bool allow_mismatch) {
    if (allow_mismatch)
        return;
    auto mismatch = [](const std::string& have, const std::string& want) {
        return !want.empty() && !have.empty() && have != want;
    };
    if (mismatch(disc.tags.domain, expected.domain))
        fail(ErrorCode::dependency, "discriminator domain '" + disc.tags.domain + "' does not match '" +
                                        expected.domain + "' (pass the override flag to score anyway)");
    if (mismatch(disc.tags.simulator_model, expected.simulator_model))
        fail(ErrorCode::dependency, "discriminator simulator model '" + disc.tags.simulator_model +
                                        "' does not match '" + expected.simulator_model +
                                        "' (pass the override flag to score anyway)");
}

namespace {

json vector_json(const FeatureVector& v) { return json(std::vector<double>(v.begin(), v.end())); }

FeatureVector vector_from(const json& j, const char* what) {
    if (!j.is_array() || j.size() != kFeatureCount)
        fail(ErrorCode::format, std::string("discriminator file: '") + what + "' must hold 19 numbers");
    FeatureVector v{};
    for (std::size_t i = 0; i < kFeatureCount; ++i)
        v[i] = j[i].get<double>();
    return v;
}

}  // namespace

std::string serialize_discriminator(const Discriminator& disc) {
    json doc;
    doc["format"] = "ppol-discriminator";
    doc["version"] = kDiscriminatorFormatVersion;
    doc["config"] = {
        {"n_estimators", disc.config.n_estimators},
        {"max_depth", disc.config.max_depth},
        {"class_weight", disc.config.class_weight == ClassWeighting::balanced ? "balanced" : "uniform"},
        {"max_features", disc.config.features_per_split()},
        {"bootstrap", disc.config.bootstrap},
        {"seed", disc.config.seed},
        {"min_samples_split", disc.config.min_samples_split},
    };
    doc["class_weights"] = {disc.class_weights[0], disc.class_weights[1]};
    doc["tags"] = {{"domain", disc.tags.domain}, {"simulator_model", disc.tags.simulator_model}};
    doc["feature_names"] = std::vector<std::string>(kFeatureNames.begin(), kFeatureNames.end());
    doc["standardizer"] = {{"mean", vector_json(disc.standardizer.mean)}, {"scale", vector_json(disc.standardizer.scale)}};
    json trees = json::array();
    for (const auto& tree : disc.trees) {
        std::vector<int> feature, left, right;
        std::vector<double> threshold, p_human, impurity, weight;
        for (const auto& n : tree.nodes) {
            feature.push_back(n.feature);
            left.push_back(n.left);
            right.push_back(n.right);
            threshold.push_back(n.threshold);
            p_human.push_back(n.p_human);
            impurity.push_back(n.impurity);
            weight.push_back(n.weight);
        }
        trees.push_back({{"feature", feature},
                         {"threshold", threshold},
                         {"left", left},
                         {"right", right},
                         {"p_human", p_human},
                         {"impurity", impurity},
                         {"weight", weight}});
    }
    doc["trees"] = std::move(trees);
    return doc.dump() + "\n";
}

Discriminator deserialize_discriminator(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::format, std::string("discriminator file is corrupted: ") + e.what());
    }
    try {
        if (doc.value("format", "") != "ppol-discriminator")
            fail(ErrorCode::format, "not a discriminator file");
        const int version = doc.at("version").get<int>();
        if (version != kDiscriminatorFormatVersion)
            fail(ErrorCode::format, "discriminator format version " + std::to_string(version) +
                                        " is not supported (expected " +
                                        std::to_string(kDiscriminatorFormatVersion) + ")");
        Discriminator disc;
        const auto& cfg = doc.at("config");
        disc.config.n_estimators = cfg.at("n_estimators").get<std::size_t>();
        disc.config.max_depth = cfg.at("max_depth").get<std::size_t>();
        disc.config.class_weight =
            cfg.at("class_weight").get<std::string>() == "balanced" ? ClassWeighting::balanced : ClassWeighting::uniform;
        disc.config.max_features = cfg.at("max_features").get<std::size_t>();
        disc.config.bootstrap = cfg.at("bootstrap").get<bool>();
        disc.config.seed = cfg.at("seed").get<std::uint64_t>();
        disc.config.min_samples_split = cfg.at("min_samples_split").get<std::size_t>();
        disc.class_weights = {doc.at("class_weights").at(0).get<double>(), doc.at("class_weights").at(1).get<double>()};
        disc.tags.domain = doc.at("tags").value("domain", "");
        disc.tags.simulator_model = doc.at("tags").value("simulator_model", "");
        disc.standardizer.mean = vector_from(doc.at("standardizer").at("mean"), "mean");
        disc.standardizer.scale = vector_from(doc.at("standardizer").at("scale"), "scale");
        for (const auto& t : doc.at("trees")) {
            const auto feature = t.at("feature").get<std::vector<int>>();
            const auto threshold = t.at("threshold").get<std::vector<double>>();
            const auto left = t.at("left").get<std::vector<int>>();
            const auto right = t.at("right").get<std::vector<int>>();
            const auto p_human = t.at("p_human").get<std::vector<double>>();
            const auto impurity = t.at("impurity").get<std::vector<double>>();
            const auto weight = t.at("weight").get<std::vector<double>>();
            const std::size_t n = feature.size();
            if (threshold.size() != n || left.size() != n || right.size() != n || p_human.size() != n ||
                impurity.size() != n || weight.size() != n || n == 0)
                fail(ErrorCode::format, "discriminator file: inconsistent tree arrays");
            DecisionTree tree;
            for (std::size_t i = 0; i < n; ++i) {
                TreeNode node{feature[i], threshold[i], left[i], right[i], p_human[i], impurity[i], weight[i]};
                if (!node.is_leaf()) {
                    const bool bad_index = node.feature >= static_cast<int>(kFeatureCount) || node.left <= 0 ||
                                           node.right <= 0 || node.left >= static_cast<int>(n) ||
                                           node.right >= static_cast<int>(n);
                    if (bad_index)
                        fail(ErrorCode::format, "discriminator file: tree node out of range");
                }
                tree.nodes.push_back(node);
            }
            disc.trees.push_back(std::move(tree));
        }
        if (disc.trees.size() != disc.config.n_estimators)
            fail(ErrorCode::format, "discriminator file: tree count does not match n_estimators");
        return disc;
    } catch (const json::exception& e) {
        fail(ErrorCode::format, std::string("discriminator file is corrupted: ") + e.what());
    }
}

void save_discriminator(const Discriminator& disc, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_discriminator(disc));
}

Discriminator load_discriminator(const std::filesystem::path& path) {
    return deserialize_discriminator(read_file(path));
}

}  // namespace ppol
