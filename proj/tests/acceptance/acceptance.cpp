// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures/llm_scripts.hpp"
#include "fixtures/mock_stack.hpp"
#include "oracles/oracles.hpp"
#include "ppol/common.hpp"
#include "ppol/discriminator.hpp"
#include "ppol/evolve.hpp"
#include "ppol/fingerprint.hpp"
#include "ppol/genome.hpp"
#include "ppol/metrics.hpp"
#include "unit/helpers.hpp"

using namespace ppol;

namespace {

struct Outcome {
    bool ok = true;
    std::string detail;

    void require(bool cond, const std::string& what) {
        if (!cond && ok) {
            ok = false;
            detail = what;
        }
    }
};

std::vector<std::vector<std::string>> read_tsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::vector<std::vector<std::string>> rows;
    for (std::string line; std::getline(in, line);) {
        if (line.empty() || line[0] == '#')
            continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, '\t');)
            cells.push_back(c);
        rows.push_back(cells);
    }
    return rows;
}

std::vector<FeatureVector> cloud(Rng& rng, std::size_t n, double shift = 0.0) {
    std::vector<FeatureVector> rows(n);
    for (auto& r : rows)
        for (auto& v : r)
            v = rng.normal() + shift;
    return rows;
}

oracle::Matrix to_matrix(const std::vector<FeatureVector>& rows) {
    oracle::Matrix m;
    for (const auto& r : rows)
        m.emplace_back(r.begin(), r.end());
    return m;
}

// 1 ------------------------------------------------------------------------
Outcome table_identity() {
    Outcome o;
    const auto rows = read_tsv(testutil::test_data("reported_scores.tsv"));
    std::size_t n = 0;
    for (const auto& r : rows) {
        if (r.size() != 6) {
            o.require(false, "malformed table row");
            continue;
        }
        const double got = combined_score(std::stod(r[3]), std::stod(r[4]), lambda_schedule(10, 10));
        o.require(std::abs(got - std::stod(r[5])) <= 0.001 + 1e-12, r[0] + "/" + r[1] + "/" + r[2] + " off");
        ++n;
    }
    o.require(n == 45, "expected 45 rows, read " + std::to_string(n));
    if (o.ok)
        o.detail = std::to_string(n) + " rows within 0.001";
    return o;
}

// 2 ------------------------------------------------------------------------
Outcome chamfer_oracle() {
    Outcome o;
    Rng rng(2024);
    double worst = 0;
    for (int t = 0; t < 200; ++t) {
        const auto f = cloud(rng, 2 + rng.below(14));
        const auto h = cloud(rng, 2 + rng.below(14), rng.uniform());
        const double got = chamfer_error(f, h);
        const double want = oracle::chamfer(to_matrix(f), to_matrix(h));
        worst = std::max(worst, std::abs(got - want));
        const double d_ref = 0.1 + rng.uniform() * 10.0;
        const double cov = coverage_score(f, h, d_ref);
        const double closed = std::max(0.0, 1.0 - std::min(1.0, want / (2 * d_ref)));
        o.require(std::abs(cov - closed) <= 1e-9, "coverage closed form mismatch");
    }
    o.require(worst <= 1e-9, "chamfer deviates by " + format_double(worst));
    // clamp boundaries: identical clouds give 1, err >= 2 d_ref gives 0
    const auto h = cloud(rng, 5);
    o.require(coverage_score(h, h, 1.0) == 1.0, "identity coverage is not 1");
    o.require(coverage_score(cloud(rng, 4, 50.0), h, 1.0) == 0.0, "far cloud coverage is not 0");
    auto shifted = h;
    for (auto& r : shifted)
        r[0] += 1.0;
    const double e2 = chamfer_error(shifted, h);
    o.require(coverage_score(shifted, h, e2 / 2) == 0.0, "err = 2 d_ref is not 0");
    if (o.ok)
        o.detail = "200 pairs, max |diff| " + format_double(worst);
    return o;
}

// 3 ------------------------------------------------------------------------
Outcome fingerprint_oracle() {
    Outcome o;
    const auto lex = load_lexicons(testutil::test_data("lexicon_literal.json"));
    const auto corpus = load_corpus(testutil::test_data("fixture_corpus.jsonl"), Split::train);
    const auto expected = read_tsv(testutil::test_data("fixture_fingerprints.expected.tsv"));
    o.require(expected.size() == 21, "expected table has wrong size");
    std::map<std::string, std::vector<double>> want;
    for (std::size_t r = 1; r < expected.size(); ++r) {
        std::vector<double> v;
        for (std::size_t c = 1; c < expected[r].size(); ++c)
            v.push_back(std::stod(expected[r][c]));
        want[expected[r][0]] = v;
    }
    o.require(corpus.episodes.size() == 20, "fixture corpus is not 20 episodes");
    double worst = 0;
    for (const auto& e : corpus.episodes) {
        const auto f = extract_fingerprint(e, lex).values;
        auto it = want.find(e.episode_id);
        if (it == want.end() || it->second.size() != kFeatureCount) {
            o.require(false, "no oracle row for " + e.episode_id);
            continue;
        }
        for (std::size_t j = 0; j < kFeatureCount; ++j)
            worst = std::max(worst, std::abs(f[j] - it->second[j]) / std::max(1.0, std::abs(it->second[j])));
    }
    o.require(worst <= 1e-12, "fingerprint deviates by " + format_double(worst));

    static const std::vector<std::string> vocab{
        "please", "thanks", "maybe",  "definitely", "no",   "why",    "order", "W12345", "#W99881", "refund",
        "sorry",  "i",      "think",  "ok",         "what", "again",  "wrong", "you",    "the",     "exchange",
        "hi",     "sure",   "really", "?",          "!",    "cancel", "not",   "never",  "agent",   "dear"};
    const auto& lexicons = testutil::default_lexicon();
    Rng rng(99);
    std::size_t checked = 0;
    for (int t = 0; t < 1000; ++t) {
        Episode e;
        e.episode_id = "r" + std::to_string(t);
        e.task_id = "t";
        const std::size_t turns = 1 + rng.below(8);
        for (std::size_t k = 0; k < turns; ++k) {
            std::string text;
            const std::size_t words = rng.below(25);
            for (std::size_t w = 0; w < words; ++w)
                text += (w ? " " : "") + vocab[rng.below(vocab.size())];
            e.add_turn(Role::user, text);
            if (rng.uniform() < 0.7)
                e.add_turn(Role::agent, "Could you clarify? I am sorry, something went wrong.");
        }
        const auto f = extract_fingerprint(e, lexicons).values;
        for (std::size_t j = 0; j < kFeatureCount; ++j)
            if (is_rate_feature(j)) {
                o.require(f[j] >= 0.0 && f[j] <= 1.0, std::string(kFeatureNames[j]) + " out of [0,1]");
                ++checked;
            }
    }
    if (o.ok)
        o.detail = "20 fixture episodes match, max rel diff " + format_double(worst) + "; " +
                   std::to_string(checked) + " rate values in [0,1]";
    return o;
}

// 4 ------------------------------------------------------------------------
Outcome discriminator_sanity() {
    Outcome o;
    Rng rng(7);
    const auto human = cloud(rng, 50, 0.8), sim = cloud(rng, 50);
    const auto test_h = cloud(rng, 50, 0.8), test_s = cloud(rng, 50);
    ForestConfig cfg;  // 200 trees, depth 12, balanced, seed 42
    const auto disc = train_discriminator(human, sim, cfg);
    std::vector<FeatureVector> rows = test_h;
    rows.insert(rows.end(), test_s.begin(), test_s.end());
    std::vector<int> labels(50, 1);
    labels.resize(100, 0);
    const auto m = evaluate_discriminator(disc, rows, labels);
    o.require(m.roc_auc >= 0.95, "held-out AUC " + format_double(m.roc_auc));

    const auto a = cloud(rng, 50), b = cloud(rng, 50);
    const auto same = train_discriminator(a, b, cfg);
    double dev = 0;
    const auto probe = cloud(rng, 200);
    for (const auto& p : probe)
        dev += std::abs(same.predict_human_prob(p) - 0.5);
    dev /= static_cast<double>(probe.size());
    o.require(dev <= 0.15, "identical classes: mean |p - 0.5| = " + format_double(dev));

    const auto again = train_discriminator(human, sim, cfg);
    o.require(serialize_discriminator(again) == serialize_discriminator(disc), "training is not reproducible");
    if (o.ok)
        o.detail = "AUC " + format_double(m.roc_auc) + ", identical-class mean |p-0.5| " + format_double(dev);
    return o;
}

// 5 ------------------------------------------------------------------------
Outcome archive_invariants() {
    Outcome o;
    MapElitesArchive archive(10);
    oracle::ReplayArchive replay{10, {}};
    std::map<std::pair<std::size_t, std::size_t>, double> seen;
    double best = -1;
    Rng rng(5);
    const auto genome = initial_genome();
    std::vector<GeneratorGenome> variants;
    for (int k = 0; k < 16; ++k) {
        auto g = genome;
        g.population_template += "\nv" + std::to_string(k);
        variants.push_back(g);
    }
    for (int t = 0; t < 10000; ++t) {
        const double x = rng.uniform() * 1.1 - 0.05, y = rng.uniform() * 1.1 - 0.05;
        const double fit = std::round(rng.uniform() * 1000) / 1000;  // ties happen
        const int id = static_cast<int>(rng.below(variants.size()));
        archive.insert(variants[static_cast<std::size_t>(id)], {x, y}, fit);
        const auto c = clamp_coords(x, y);
        replay.insert(c.x, c.y, fit, id);
        o.require(archive.size() <= 100, "more than 100 cells");
        const auto key = std::make_pair(bin_index(c.x, 10), bin_index(c.y, 10));
        const auto* cell = archive.find(key.first, key.second);
        o.require(cell != nullptr, "offered bin is empty");
        if (cell) {
            auto it = seen.find(key);
            o.require(it == seen.end() || cell->fitness >= it->second, "cell fitness decreased");
            seen[key] = cell->fitness;
        }
        const double now = archive.best()->fitness;
        o.require(now >= best, "global best decreased");
        best = now;
    }
    o.require(archive.size() == replay.cells.size(), "occupancy differs from replay");
    for (const auto& [key, value] : replay.cells) {
        const auto* cell = archive.find(key.first, key.second);
        o.require(cell && cell->fitness == value.first &&
                      cell->genome == variants[static_cast<std::size_t>(value.second)],
                  "cell differs from replay");
    }
    if (o.ok)
        o.detail = "10000 inserts, " + std::to_string(archive.size()) + " cells, replay equal";
    return o;
}

// 6 ------------------------------------------------------------------------
Outcome evolution_smoke() {
    Outcome o;
    fixtures::MockStack stack(PPOL_SHARE_DATA);
    const auto ctx = stack.context();
    EvolutionConfig cfg = evolution_config_from_json(
        nlohmann::json::parse(read_file(testutil::share_data("demo/config.json"))).at("evolve"));
    o.require(cfg.iterations == 5, "demo config is not a 5-iteration run");
    std::vector<TaskSpec> pool, validation;
    for (const auto& t : stack.tasks)
        (std::find(cfg.validation_task_ids.begin(), cfg.validation_task_ids.end(), t.task_id) !=
                 cfg.validation_task_ids.end()
             ? validation
             : pool)
            .push_back(t);

    testutil::TempDir full("acc-full"), resumed("acc-resume");
    const auto a = run_evolution(cfg, pool, validation, initial_genome(), ctx, {full.path()});
    o.require(a.state.history.size() == 5, "history has " + std::to_string(a.state.history.size()) + " rows");
    o.require(list_checkpoints(full.path()).size() == 5, "expected 5 checkpoints");
    std::string history_text = read_file(full / "history.jsonl");
    o.require(std::count(history_text.begin(), history_text.end(), '\n') == 6, "history.jsonl row count");

    const std::vector<std::size_t> counts{5, 5, 8, 8, 10};
    const std::vector<double> lambdas{0.25, 0.25, 0.4, 0.4, 0.5};
    for (std::size_t i = 0; i < a.state.history.size() && i < 5; ++i) {
        const auto& row = a.state.history[i];
        o.require(row.n_personas == counts[i], "persona count at iteration " + std::to_string(i + 1));
        o.require(std::abs(row.lambda.coverage - lambdas[i]) < 1e-12, "lambda at iteration " + std::to_string(i + 1));
        o.require(!row.failed, "iteration " + std::to_string(i + 1) + " failed: " + row.error);
    }

    const auto from3 = load_checkpoint(checkpoint_dir(full.path(), 3));
    const auto b = run_evolution(cfg, pool, validation, initial_genome(), ctx, {resumed.path()}, from3);
    o.require(b.state.history.size() == 5, "resumed run has wrong length");
    for (std::size_t i = 3; i < 5 && i < b.state.history.size() && i < a.state.history.size(); ++i)
        o.require(history_row_to_json(a.state.history[i]).dump() == history_row_to_json(b.state.history[i]).dump(),
                  "row " + std::to_string(i + 1) + " differs after resume");
    o.require(state_to_json(a.state, cfg).dump() == state_to_json(b.state, cfg).dump(), "final state differs");
    if (o.ok)
        o.detail = "5 rows, 5 checkpoints, resume from 3 identical; best " + format_double(a.best_score);
    return o;
}

// 7 ------------------------------------------------------------------------
Outcome dice_properties() {
    Outcome o;
    Rng rng(17);
    FeatureVector lo{}, hi{}, mu{};
    for (std::size_t j = 0; j < kFeatureCount; ++j) {
        lo[j] = -1.0;
        hi[j] = 2.0;
        mu[j] = rng.uniform() * 3.0 - 1.0;
    }
    const auto same = dice_alignment(mu, mu, lo, hi);
    for (double d : same.dims)
        o.require(d == 1.0, "identity dimension is not 1");
    o.require(same.usi == 1.0, "identity USI is not 1");
    double worst = 0;
    for (int t = 0; t < 500; ++t) {
        std::vector<double> x(1 + rng.below(10)), y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = rng.uniform();
            y[i] = rng.uniform();
        }
        const double got = dice_coefficient(x, y);
        worst = std::max(worst, std::abs(got - oracle::dice(x, y)));
        o.require(got == dice_coefficient(y, x), "dice is not symmetric");
        FeatureVector a{}, b{};
        for (auto& v : a)
            v = rng.uniform() * 3.0 - 1.0;
        for (auto& v : b)
            v = rng.uniform() * 3.0 - 1.0;
        o.require(dice_alignment(a, b, lo, hi).usi == dice_alignment(b, a, lo, hi).usi, "USI is not symmetric");
    }
    o.require(worst <= 1e-12, "dice deviates by " + format_double(worst));
    if (o.ok)
        o.detail = "identity, symmetry, 500 pairs max |diff| " + format_double(worst);
    return o;
}

// 8 ------------------------------------------------------------------------
Outcome generation_contract() {
    Outcome o;
    const auto genome = initial_genome();
    const TaskContext task{"task_03", "You ordered a lamp in order #W55120 and it arrived with a cracked base."};
    std::mutex mu;
    std::vector<std::string> prompts;
    std::size_t expansions = 0;
    auto client = std::make_shared<FunctionClient>([&](const CompletionRequest& r) {
        std::string all;
        for (const auto& m : r.messages)
            all += m.content + "\n";
        std::lock_guard lock(mu);
        prompts.push_back(all);
        if (all.find("axis_placement") != std::string::npos)
            return fixtures::population_in_prose(genome, 10);
        return fixtures::expansion_text(expansions++);
    });
    Gateway gw(client);
    const auto result = generate_personas(genome, task, 10, gw);
    o.require(gw.log().count(RequestTag::generator) == 11, "expected 11 generator calls");
    o.require(result.personas.size() == 10, "expected 10 personas");
    std::size_t population_calls = 0;
    for (const auto& p : prompts) {
        population_calls += p.find("axis_placement") != std::string::npos;
        o.require(p.find(task.text) != std::string::npos, "a prompt lacks the task context");
    }
    o.require(population_calls == 1, "expected one population call");
    for (const auto& p : result.personas) {
        o.require(p.axis_placement.size() == genome.axes.size(), "placement does not cover the axes");
        for (const auto& a : genome.axis_names())
            o.require(p.axis_placement.count(a) == 1, "placement misses " + a);
    }
    if (o.ok)
        o.detail = "1 population + 10 expansion calls";
    return o;
}

// 9 ------------------------------------------------------------------------
Outcome pca_check() {
    Outcome o;
    Rng rng(9);
    FeatureVector dir;
    for (auto& v : dir)
        v = rng.normal();
    std::vector<FeatureVector> line(30);
    for (auto& p : line) {
        const double t = rng.normal();
        for (std::size_t j = 0; j < kFeatureCount; ++j)
            p[j] = 2.0 + t * dir[j];
    }
    const auto rank1 = pca_project(line, 2);
    o.require(rank1.explained_variance[0] >= 0.999, "rank-1 explained variance " +
                                                        format_double(rank1.explained_variance[0]));
    double worst = 0;
    for (int t = 0; t < 20; ++t) {
        const auto rows = cloud(rng, 10);
        const auto got = pca_project(rows, 2);
        const auto want = oracle::pca(to_matrix(rows), 2);
        for (std::size_t c = 0; c < 2; ++c) {
            double dot = 0;
            for (std::size_t i = 0; i < 10; ++i)
                dot += got.coords(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) * want.coords[i][c];
            const double sign = dot < 0 ? -1.0 : 1.0;
            for (std::size_t i = 0; i < 10; ++i)
                worst = std::max(worst, std::abs(got.coords(static_cast<Eigen::Index>(i),
                                                            static_cast<Eigen::Index>(c)) -
                                                 sign * want.coords[i][c]));
        }
    }
    o.require(worst <= 1e-6, "projection deviates by " + format_double(worst));
    if (o.ok)
        o.detail = "rank-1 EV " + format_double(rank1.explained_variance[0]) + ", 20 matrices max |diff| " +
                   format_double(worst);
    return o;
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        double budget_seconds;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "score identity over reported tables", 1, table_identity},
        {2, "chamfer and coverage oracle", 5, chamfer_oracle},
        {3, "fingerprint oracle", 10, fingerprint_oracle},
        {4, "discriminator sanity", 30, discriminator_sanity},
        {5, "MAP-Elites invariants", 5, archive_invariants},
        {6, "deterministic evolution smoke run", 60, evolution_smoke},
        {7, "Dice/USI properties", 5, dice_properties},
        {8, "generation contract", 5, generation_contract},
        {9, "PCA check", 5, pca_check},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.ok = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (o.ok && secs > c.budget_seconds) {
            o.ok = false;
            o.detail += " (over the " + format_double(c.budget_seconds) + " s budget)";
        }
        char timing[32];
        std::snprintf(timing, sizeof timing, "%.2f s", secs);
        std::cout << (o.ok ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.name << " [" << timing
                  << "] " << o.detail << std::endl;
        failures += !o.ok;
    }
    return failures == 0 ? 0 : 1;
}
