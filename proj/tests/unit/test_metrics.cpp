#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "oracles/oracles.hpp"
#include "ppol/common.hpp"
#include "ppol/metrics.hpp"
#include "unit/helpers.hpp"

using namespace ppol;

namespace {

FeatureVector at(double first, double rest = 0.0) {
    FeatureVector v{};
    v.fill(rest);
    v[0] = first;
    return v;
}

std::vector<FeatureVector> random_cloud(Rng& rng, std::size_t n) {
    std::vector<FeatureVector> cloud(n);
    for (auto& p : cloud)
        for (auto& v : p)
            v = rng.uniform() * 3.0 - 1.0;
    return cloud;
}

oracle::Matrix to_matrix(const std::vector<FeatureVector>& rows) {
    oracle::Matrix m;
    for (const auto& r : rows)
        m.emplace_back(r.begin(), r.end());
    return m;
}

}  // namespace

TEST_CASE("human likeness is the mean") {
    CHECK(human_likeness(std::vector<double>{1.0, 0.0}) == 0.5);
    CHECK(human_likeness(std::vector<double>(7, 0.3)) == doctest::Approx(0.3).epsilon(1e-15));
    Rng rng(1);
    std::vector<double> p(50);
    long double sum = 0;
    for (auto& v : p) {
        v = rng.uniform();
        sum += v;
    }
    CHECK(std::abs(human_likeness(p) - static_cast<double>(sum / 50)) < 1e-12);
    CHECK_THROWS_AS(human_likeness(std::vector<double>{}), Error);
    CHECK_THROWS_AS(human_likeness(std::vector<double>{1.5}), Error);
}

TEST_CASE("chamfer error") {
    std::vector<FeatureVector> f{at(0)}, h{at(3)};
    CHECK(chamfer_error(f, h) == 6.0);
    CHECK(chamfer_error(h, h) == 0.0);
    Rng rng(2);
    const auto a = random_cloud(rng, 5), b = random_cloud(rng, 7);
    CHECK(std::abs(chamfer_error(a, b) - oracle::chamfer(to_matrix(a), to_matrix(b))) < 1e-9);
    CHECK_THROWS_AS(chamfer_error(std::vector<FeatureVector>{}, b), Error);
}

TEST_CASE("reference scale") {
    CHECK(reference_scale(std::vector<FeatureVector>{at(0), at(2)}) == 2.0);
    CHECK(reference_scale(std::vector<FeatureVector>{at(0), at(1), at(2)}) == doctest::Approx(4.0 / 3.0));
    CHECK_THROWS_AS(reference_scale(std::vector<FeatureVector>{at(1), at(1)}), Error);
    CHECK_THROWS_AS(reference_scale(std::vector<FeatureVector>{at(1)}), Error);
}

TEST_CASE("coverage closed form and clamps") {
    const std::vector<FeatureVector> h{at(0), at(2)};  // d_ref 2
    CHECK(coverage_score(h, h, 2.0) == 1.0);
    // single point at 4: err = mean(4, 2) + 2 = 5 -> clamp at 0
    CHECK(coverage_score(std::vector<FeatureVector>{at(4)}, h, 2.0) == 0.0);
    // point at 1: err = 1 + 1 = 2 = d_ref -> 0.5
    CHECK(coverage_score(std::vector<FeatureVector>{at(1)}, h, 2.0) == 0.5);
    // err exactly 2 d_ref -> 0
    CHECK(coverage_score(std::vector<FeatureVector>{at(1)}, h, 1.0) == 0.0);
}

TEST_CASE("lambda schedule") {
    auto w = lambda_schedule(10, 10);
    CHECK(w.human == 0.5);
    CHECK(w.coverage == 0.5);
    w = lambda_schedule(5, 10);
    CHECK(w.human == 0.75);
    CHECK(w.coverage == 0.25);
    CHECK(lambda_schedule(8, 10).coverage == doctest::Approx(0.4));
    for (std::size_t n = 1; n <= 10; ++n) {
        const auto s = lambda_schedule(n, 10);
        CHECK(s.human + s.coverage == doctest::Approx(1.0).epsilon(1e-15));
    }
    CHECK_THROWS_AS(lambda_schedule(11, 10), Error);
}

TEST_CASE("combined score") {
    CHECK(combined_score(0.107, 0.046, {0.5, 0.5}) == doctest::Approx(0.0765));
    CHECK(combined_score(0.958, 0.623, {0.5, 0.5}) == doctest::Approx(0.7905));
    CHECK(combined_score(0.4, 0.4, {0.8, 0.2}) == doctest::Approx(0.4));
    CHECK_THROWS_AS(combined_score(0.5, 0.5, {0.6, 0.6}), Error);
}

TEST_CASE("reported table rows satisfy the equal-weight identity") {
    std::ifstream in(testutil::test_data("reported_scores.tsv"));
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, '\t');)
            cells.push_back(c);
        REQUIRE(cells.size() == 6);
        const double got = combined_score(std::stod(cells[3]), std::stod(cells[4]), lambda_schedule(10, 10));
        CHECK_MESSAGE(std::abs(got - std::stod(cells[5])) <= 0.001 + 1e-12, line);
        ++rows;
    }
    CHECK(rows == 45);
}

TEST_CASE("dice coefficient") {
    CHECK(dice_coefficient(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
    CHECK(dice_coefficient(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 1}) == doctest::Approx(2.0 / 3.0));
    CHECK(dice_coefficient(std::vector<double>{0, 0}, std::vector<double>{0, 0}) == 1.0);
}

TEST_CASE("dice alignment identity and normalization") {
    FeatureVector lo{}, hi{}, mu{};
    hi.fill(10.0);
    mu.fill(4.0);
    const auto same = dice_alignment(mu, mu, lo, hi);
    for (double d : same.dims)
        CHECK(d == 1.0);
    CHECK(same.usi == 1.0);
    // out-of-range generated values are clamped to the bounds
    FeatureVector big{};
    big.fill(1e6);
    FeatureVector top{};
    top.fill(10.0);
    CHECK(dice_alignment(big, mu, lo, hi).usi == doctest::Approx(dice_alignment(top, mu, lo, hi).usi));
    // degenerate bounds: value is clamped to [0,1]
    FeatureVector flat{};
    flat.fill(3.0);
    const auto d = dice_alignment(flat, flat, flat, flat);
    CHECK(d.usi == 1.0);
}

TEST_CASE("reference construction") {
    Rng rng(3);
    const auto train = random_cloud(rng, 12);
    const auto cal = random_cloud(rng, 8);
    const auto ref = build_reference(train, cal);
    CHECK(ref.d_ref == doctest::Approx(reference_scale(train)));
    CHECK(ref.mu_h == mean_vector(cal));
    CHECK(coverage_score(train, ref) == 1.0);

    const auto std_ref = build_reference(train, cal, CoverageSpace::standardized);
    REQUIRE(std_ref.standardizer.has_value());
    CHECK(coverage_score(train, std_ref) == 1.0);
    CHECK(std_ref.d_ref != doctest::Approx(ref.d_ref));
}

TEST_CASE("assemble_report and json round trip") {
    Rng rng(4);
    const auto train = random_cloud(rng, 6);
    const auto ref = build_reference(train, train);
    const auto report = assemble_report({0.2, 0.4, 0.9}, {"a", "b"}, {0.5, 0.7}, lambda_schedule(5, 10),
                                        mean_vector(train), ref);
    CHECK(report.hl_mean == doctest::Approx(0.5));
    CHECK(report.cov_mean == doctest::Approx(0.6));
    CHECK(report.score == doctest::Approx(0.75 * 0.5 + 0.25 * 0.6));
    CHECK(report.dice.usi == 1.0);
    const auto back = report_from_json(report_to_json(report));
    CHECK(back.score == report.score);
    CHECK(back.task_ids == report.task_ids);
    CHECK(back.dice.dims == report.dice.dims);
    CHECK_THROWS_AS(assemble_report({0.5}, {"a"}, {}, {0.5, 0.5}, mean_vector(train), ref), Error);
}

TEST_CASE("pca") {
    Rng rng(5);
    std::vector<FeatureVector> line(20);
    FeatureVector dir;
    for (auto& v : dir)
        v = rng.normal();
    for (auto& p : line) {
        const double t = rng.normal();
        for (std::size_t j = 0; j < kFeatureCount; ++j)
            p[j] = 1.0 + t * dir[j];
    }
    const auto res = pca_project(line, 2);
    CHECK(res.explained_variance[0] >= 0.999);

    const auto cloud = random_cloud(rng, 10);
    const auto full = pca_project(cloud, 19);
    // full basis: projected distances equal standardized distances
    const auto s = fit_standardizer(cloud);
    for (std::size_t a = 0; a < 10; ++a)
        for (std::size_t b = a + 1; b < 10; ++b) {
            const double d_full = (full.coords.row(static_cast<Eigen::Index>(a)) -
                                   full.coords.row(static_cast<Eigen::Index>(b)))
                                      .norm();
            CHECK(std::abs(d_full - euclidean(s.transform(cloud[a]), s.transform(cloud[b]))) < 1e-9);
        }

    const auto two = pca_project(cloud, 2);
    const auto want = oracle::pca(to_matrix(cloud), 2);
    for (std::size_t c = 0; c < 2; ++c) {
        CHECK(std::abs(two.explained_variance[c] - want.explained[c]) < 1e-9);
        double dot = 0;
        for (std::size_t i = 0; i < 10; ++i)
            dot += two.coords(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) * want.coords[i][c];
        const double sign = dot < 0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < 10; ++i)
            CHECK(std::abs(two.coords(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) -
                           sign * want.coords[i][c]) < 1e-6);
    }
    CHECK_THROWS_AS(pca_project(std::vector<FeatureVector>{cloud[0]}, 2), Error);
}
