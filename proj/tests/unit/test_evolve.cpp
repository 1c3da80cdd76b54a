#include <doctest.h>

#include <cmath>
#include <limits>

#include "fixtures/mock_stack.hpp"
#include "oracles/oracles.hpp"
#include "ppol/common.hpp"
#include "ppol/evolve.hpp"
#include "ppol/genome.hpp"
#include "unit/helpers.hpp"

using namespace ppol;

namespace {

GeneratorGenome tagged(int k) {
    auto g = initial_genome();
    g.population_template += "\nVariant " + std::to_string(k) + ".";
    return g;
}

ScoredEpisode scored(const std::string& id, double p, const std::string& policy) {
    ScoredEpisode s;
    s.episode = testutil::make_episode(id, {"hello there", "my order W12345"}, Source::persona_sim);
    s.episode.task_id = "task_a";
    s.policy = policy;
    s.p_human = p;
    s.fingerprint.fill(0.25);
    return s;
}

FitnessReport small_report() {
    FitnessReport r;
    r.hl_mean = 0.5;
    r.cov_mean = 0.4;
    r.lambda = {0.5, 0.5};
    r.score = 0.45;
    r.task_ids = {"task_a"};
    return r;
}

}  // namespace

TEST_CASE("sliding minibatch window") {
    auto [a, s1] = sample_minibatch(10, {0}, 5, 5);
    CHECK(a == std::vector<std::size_t>{0, 1, 2, 3, 4});
    CHECK(s1.cursor == 5);
    auto [b, s2] = sample_minibatch(10, {8}, 5, 5);
    CHECK(b == std::vector<std::size_t>{8, 9, 0, 1, 2});
    CHECK(s2.cursor == 3);
    auto [c, s3] = sample_minibatch(4, {2}, 4, 0);
    CHECK(c.size() == 4);
    CHECK(s3.cursor == 2);
    CHECK_THROWS_AS(sample_minibatch(4, {0}, 5, 5), Error);
    CHECK_THROWS_AS(sample_minibatch(0, {0}, 1, 1), Error);
}

TEST_CASE("behavior coordinates and binning") {
    FitnessReport r;
    r.hl_mean = 0.7;
    r.cov_mean = 0.4;
    CHECK(behavior_coords(r).x == 0.7);
    CHECK(behavior_coords(r).y == 0.4);
    CHECK(clamp_coords(1.0000001, -0.2).x == 1.0);
    CHECK(clamp_coords(1.0000001, -0.2).y == 0.0);
    CHECK(bin_index(0.0, 10) == 0);
    CHECK(bin_index(0.1, 10) == 1);
    CHECK(bin_index(0.0999999, 10) == 0);
    CHECK(bin_index(0.95, 10) == 9);
    CHECK(bin_index(1.0, 10) == 9);
}

TEST_CASE("archive insert keeps the strictly better elite") {
    MapElitesArchive a(10);
    CHECK(a.insert(tagged(0), {0.55, 0.55}, 0.4).inserted);
    CHECK(a.size() == 1);
    auto r = a.insert(tagged(1), {0.51, 0.59}, 0.3);
    CHECK_FALSE(r.inserted);
    CHECK(r.incumbent == std::optional<double>(0.4));
    CHECK_FALSE(a.insert(tagged(2), {0.52, 0.52}, 0.4).inserted);  // tie keeps incumbent
    CHECK(a.insert(tagged(3), {0.52, 0.52}, 0.41).inserted);
    CHECK(a.find(5, 5)->genome == tagged(3));
    CHECK_FALSE(a.insert(tagged(4), {0.1, 0.1}, std::numeric_limits<double>::quiet_NaN()).inserted);
    CHECK(a.size() == 1);
}

TEST_CASE("archive insert matches a brute-force replay") {
    struct Offer {
        double x, y, f;
    };
    const std::vector<Offer> offers{{0.05, 0.05, 0.2}, {0.07, 0.01, 0.3},  {0.95, 0.95, 0.9}, {1.0, 0.99, 0.8},
                                    {0.5, 0.5, 0.5},   {0.59, 0.51, 0.5},  {0.55, 0.55, 0.6}, {0.0, 1.0, 0.1},
                                    {0.3, 0.7, 0.45},  {0.31, 0.71, 0.44}};
    MapElitesArchive a(10);
    oracle::ReplayArchive replay{10, {}};
    for (std::size_t k = 0; k < offers.size(); ++k) {
        a.insert(tagged(static_cast<int>(k)), {offers[k].x, offers[k].y}, offers[k].f);
        replay.insert(offers[k].x, offers[k].y, offers[k].f, static_cast<int>(k));
    }
    REQUIRE(a.size() == replay.cells.size());
    for (const auto& [key, value] : replay.cells) {
        const auto* cell = a.find(key.first, key.second);
        REQUIRE(cell != nullptr);
        CHECK(cell->fitness == value.first);
        CHECK(cell->genome == tagged(value.second));
    }
}

TEST_CASE("archive capacity evicts the weakest elite") {
    MapElitesArchive a(10, 2);
    a.insert(tagged(0), {0.05, 0.05}, 0.2);
    a.insert(tagged(1), {0.95, 0.95}, 0.6);
    auto r = a.insert(tagged(2), {0.5, 0.5}, 0.1);
    CHECK_FALSE(r.inserted);
    r = a.insert(tagged(3), {0.5, 0.5}, 0.3);
    CHECK(r.inserted);
    REQUIRE(r.evicted.has_value());
    CHECK(*r.evicted == std::make_pair<std::size_t, std::size_t>(0, 0));
    CHECK(a.size() == 2);
}

TEST_CASE("archive json round trip") {
    MapElitesArchive a(10, 50);
    a.insert(tagged(0), {0.15, 0.25}, 0.2, "reflect", 3);
    a.insert(tagged(1), {0.85, 0.65}, 0.7);
    const auto b = MapElitesArchive::from_json(a.to_json());
    CHECK(b.to_json() == a.to_json());
    CHECK(b.find(1, 2)->reflection == "reflect");
}

TEST_CASE("parent selection") {
    MapElitesArchive one(10);
    one.insert(tagged(0), {0.5, 0.5}, 0.1);
    Rng rng(1);
    for (int i = 0; i < 20; ++i)
        CHECK(select_parent(one, 0.2, rng).genome == tagged(0));

    MapElitesArchive five(10);
    for (int k = 0; k < 5; ++k)
        five.insert(tagged(k), {0.1 + 0.2 * k, 0.5}, 0.1 * (k + 1));
    for (int i = 0; i < 1000; ++i)
        CHECK(select_parent(five, 1.0, rng).genome == tagged(4));

    // mixture: P(top) = 0.2 + 0.8/5, others 0.8/5 each
    const int draws = 10000;
    std::map<int, int> counts;
    for (int i = 0; i < draws; ++i) {
        const auto& g = select_parent(five, 0.2, rng).genome;
        for (int k = 0; k < 5; ++k)
            if (g == tagged(k))
                ++counts[k];
    }
    double chi2 = 0;
    for (int k = 0; k < 5; ++k) {
        const double p = k == 4 ? 0.2 + 0.8 / 5 : 0.8 / 5;
        const double expected = p * draws;
        const double sigma = std::sqrt(draws * p * (1 - p));
        CHECK(std::abs(counts[k] - expected) < 3 * sigma);
        chi2 += (counts[k] - expected) * (counts[k] - expected) / expected;
    }
    CHECK(chi2 < 18.47);  // 4 dof, p = 0.001

    MapElitesArchive empty(10);
    CHECK_THROWS_AS(select_parent(empty, 0.2, rng), Error);
}

TEST_CASE("ring migration") {
    std::vector<MapElitesArchive> two(2, MapElitesArchive(10));
    two[0].insert(tagged(0), {0.15, 0.15}, 0.5);
    two[0].insert(tagged(1), {0.85, 0.85}, 0.6);
    migrate(two, 0.2);
    CHECK(two[1].size() == 1);  // ceil(0.2 * 2) = 1 offer, the best
    CHECK(two[1].find(8, 8)->genome == tagged(1));
    CHECK(two[0].size() == 2);

    std::vector<MapElitesArchive> same(2, MapElitesArchive(10));
    same[0].insert(tagged(0), {0.15, 0.15}, 0.5);
    migrate(same, 0.0);
    CHECK(same[1].empty());

    // five islands, each with known elites; hand replay
    std::vector<MapElitesArchive> ring(5, MapElitesArchive(10));
    for (int k = 0; k < 5; ++k)
        for (int c = 0; c < 3; ++c)
            ring[static_cast<std::size_t>(k)].insert(tagged(10 * k + c), {0.05 + 0.1 * c, 0.05 + 0.1 * k},
                                                     0.1 * c + 0.01 * k);
    // island 1 already holds a stronger elite in island 0's best bin
    ring[1].insert(tagged(99), {0.25, 0.05}, 0.9);
    migrate(ring, 0.2);  // ceil(0.2 * 3) = 1 offer each: the c = 2 elite
    CHECK(ring[1].find(2, 0)->genome == tagged(99));
    CHECK(ring[2].find(2, 0)->genome == tagged(99));  // island 1's best is now the 0.9 elite
    for (int k = 2; k < 5; ++k) {
        const auto dest = static_cast<std::size_t>((k + 1) % 5);
        const auto* cell = ring[dest].find(2, static_cast<std::size_t>(k));
        REQUIRE(cell != nullptr);
        CHECK(cell->genome == tagged(10 * k + 2));
    }
    CHECK(ring[0].size() == 4);
    CHECK(ring[1].size() == 4);
    CHECK(ring[2].size() == 4);
    CHECK_THROWS_AS(migrate(two, 1.5), Error);
}

TEST_CASE("reflection exemplars and template") {
    const std::vector<ScoredEpisode> eps{scored("e0", 0.9, "talk fast"), scored("e1", 0.1, "talk slow"),
                                         scored("e2", 0.5, "")};
    const TaskSpec task{"task_a", "retail", "You want a refund for order W12345.", "agent", "retail_basic", ""};
    const auto r = build_reflection(small_report(), 5, eps, {task}, 1);
    CHECK(r.best == std::vector<std::size_t>{0});
    CHECK(r.worst == std::vector<std::size_t>{1});
    CHECK_FALSE(r.insufficient);
    CHECK(r.prompt.find("You must NEVER mention indices") != std::string::npos);
    CHECK(r.prompt.find("talk fast") != std::string::npos);
    CHECK(r.prompt.find("talk slow") != std::string::npos);
    CHECK(r.prompt.find("refund for order W12345") != std::string::npos);
    CHECK(r.prompt.find("{metrics_block}") == std::string::npos);
    CHECK(r.metrics_block.find("0.4500") != std::string::npos);

    const auto all = build_reflection(small_report(), 5, eps, {task}, 2);
    CHECK(all.insufficient);
    CHECK(all.best.size() + all.worst.size() == 3);
    CHECK_THROWS_AS(build_reflection(small_report(), 5, {eps[0]}, {task}, 1), Error);
}

TEST_CASE("mutation proposals") {
    const auto parent = initial_genome();
    Gateway same(scripted_client({{RequestTag::mutation, {serialize_genome(parent)}}}));
    const auto identity = propose_mutation(parent, "keep going", same);
    CHECK_FALSE(identity.noop);
    CHECK(identity.genome.content_equal(parent));
    CHECK(identity.genome.generation == 1);
    CHECK(identity.genome.parent_id == parent.id());

    auto bursty = parent;
    bursty.axes.push_back({"bursty", "Sends several short messages in a row.", "Splits thoughts across lines.",
                           "Writes one complete message."});
    Gateway edit(scripted_client({{RequestTag::mutation, {"garbage", "Revised:\n" + serialize_genome(bursty)}}}));
    const auto child = propose_mutation(parent, "", edit);
    CHECK_FALSE(child.noop);
    CHECK(child.attempts == 2);
    CHECK(child.genome.axes.size() == 5);
    CHECK(child.genome.axis_names().back() == "bursty");
    CHECK(mutation_prompt(parent, "", 2, "no document").find("Attempt 2") != std::string::npos);

    Gateway junk(scripted_client({{RequestTag::mutation, {"no", "still no", "never"}}}));
    const auto fallback = propose_mutation(parent, "", junk);
    CHECK(fallback.noop);
    CHECK(fallback.attempts == 3);
    CHECK(fallback.genome == parent);
    CHECK(mutation_prompt(parent, "R", 1, "").find("R") != std::string::npos);
}

TEST_CASE("evolution config") {
    auto cfg = evolution_config_from_json(nlohmann::json::parse(R"({"iterations": 6, "epoch_length": 2})"));
    std::vector<std::size_t> counts;
    std::vector<double> lambdas;
    for (std::size_t it = 1; it <= 6; ++it) {
        counts.push_back(cfg.personas_at(it));
        lambdas.push_back(lambda_schedule(counts.back(), 10).coverage);
    }
    CHECK(counts == std::vector<std::size_t>{5, 5, 8, 8, 10, 10});
    const std::vector<double> want{0.25, 0.25, 0.4, 0.4, 0.5, 0.5};
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(lambdas[i] == doctest::Approx(want[i]).epsilon(1e-15));

    cfg = evolution_config_from_json(nlohmann::json::parse(R"({"iterations": 5})"));
    counts.clear();
    for (std::size_t it = 1; it <= 5; ++it)
        counts.push_back(cfg.personas_at(it));
    CHECK(counts == std::vector<std::size_t>{5, 5, 8, 8, 10});

    CHECK(evolution_config_from_json(evolution_config_to_json(cfg)).iterations == 5);
    try {
        evolution_config_from_json(nlohmann::json::parse(R"({"iteratons": 5})"));
        FAIL("expected throw");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::config);
        CHECK(std::string(e.what()).find("iteratons") != std::string::npos);
    }
    CHECK_THROWS_AS(evolution_config_from_json(nlohmann::json::parse(R"({"curriculum": [8, 5]})")), Error);
    CHECK_THROWS_AS(evolution_config_from_json(nlohmann::json::parse(R"({"migration_rate": 0})")), Error);
}

TEST_CASE("checkpoint selection") {
    const std::vector<std::vector<double>> scores{{0.4, 0.4, 0.4}, {0.6, 0.6, 0.3}};
    const std::vector<std::size_t> counts{5, 8, 10};
    auto scorer = [&](const std::vector<std::vector<double>>& table) {
        return [&table, &counts](std::size_t c, std::size_t n) -> std::optional<double> {
            for (std::size_t k = 0; k < counts.size(); ++k)
                if (counts[k] == n)
                    return table[c][k];
            return std::nullopt;
        };
    };
    auto sel = select_checkpoint(2, counts, scorer(scores));
    CHECK(sel.index == 1);
    CHECK(sel.mean_scores[1] == doctest::Approx(0.5));

    const std::vector<std::vector<double>> tie{{0.5, 0.5, 0.5}, {0.6, 0.6, 0.3}};
    CHECK(select_checkpoint(2, counts, scorer(tie)).index == 0);
    const std::vector<std::vector<double>> single{{0.1, 0.1, 0.1}};
    CHECK(select_checkpoint(1, counts, scorer(single)).index == 0);

    sel = select_checkpoint(2, counts, [](std::size_t c, std::size_t) -> std::optional<double> {
        if (c == 0)
            return std::nullopt;
        return 0.2;
    });
    CHECK(sel.index == 1);
    CHECK(std::isnan(sel.mean_scores[0]));
}

TEST_CASE("candidate evaluation on the mock stack") {
    fixtures::MockStack stack(PPOL_SHARE_DATA);
    auto ctx = stack.context();
    const std::vector<TaskSpec> tasks{stack.tasks[0], stack.tasks[1]};
    const auto eval = evaluate_candidate(initial_genome(), tasks, 2, ctx);
    REQUIRE_MESSAGE(eval.ok, eval.error);
    CHECK(eval.report.episode_probabilities.size() + eval.dropped_episodes == 4);
    CHECK(eval.report.task_coverage.size() == 2);
    const auto w = lambda_schedule(2, 10);
    CHECK(std::abs(combined_score(eval.report.hl_mean, eval.report.cov_mean, w) - eval.report.score) < 1e-12);

    ctx.human_prob = [](const FeatureVector&) { return 0.3; };
    const auto constant = evaluate_candidate(initial_genome(), tasks, 2, ctx);
    REQUIRE(constant.ok);
    CHECK(constant.report.hl_mean == doctest::Approx(0.3).epsilon(1e-12));

    // persona generation failure is reported, never scored
    Gateway broken(scripted_client({}));
    ctx.gateway = &broken;
    const auto failed = evaluate_candidate(initial_genome(), tasks, 2, ctx);
    CHECK_FALSE(failed.ok);
    CHECK_FALSE(failed.error.empty());
}

TEST_CASE("three mocked iterations resume bit-for-bit") {
    fixtures::MockStack stack(PPOL_SHARE_DATA);
    const auto ctx = stack.context();
    EvolutionConfig cfg;
    cfg.iterations = 3;
    cfg.islands = 2;
    cfg.minibatch_size = 2;
    cfg.curriculum = {2, 3};
    cfg.migration_interval = 2;
    const std::vector<TaskSpec> pool(stack.tasks.begin(), stack.tasks.begin() + 6);
    testutil::TempDir full, resumed;

    const auto a = run_evolution(cfg, pool, {}, initial_genome(), ctx, {full.path()});
    REQUIRE(a.state.history.size() == 3);
    CHECK(list_checkpoints(full.path()).size() == 3);
    CHECK(a.state.history[1].migrated);
    for (const auto& archive : a.state.archives)
        CHECK(archive.size() <= cfg.population_size);

    const auto from2 = load_checkpoint(checkpoint_dir(full.path(), 2));
    CHECK(from2.iteration == 2);
    const auto b = run_evolution(cfg, pool, {}, initial_genome(), ctx, {resumed.path()}, from2);
    REQUIRE(b.state.history.size() == 3);
    CHECK(history_row_to_json(b.state.history[2]).dump() == history_row_to_json(a.state.history[2]).dump());
    CHECK(state_to_json(b.state, cfg).dump() == state_to_json(a.state, cfg).dump());

    const auto text = read_file(full / "history.jsonl");
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);  // header + 3 rows
    const auto round = state_from_json(state_to_json(a.state, cfg));
    CHECK(state_to_json(round, cfg) == state_to_json(a.state, cfg));
}
