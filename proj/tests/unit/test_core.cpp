#include "calypso/core.hpp"
#include "fixtures.hpp"

#include <doctest.h>
#include <random>

using namespace calypso;

namespace {

PatchGraph two_patch_graph() {
    std::vector<PatchInfo> patches = {{"a", "R", Category::General, 100.0}, {"b", "R", Category::NonGeneral, 100.0}};
    Matrix theta(2, 2);
    theta(0, 0) = 1.0;
    theta(1, 1) = 1.0;
    return PatchGraph(patches, theta);
}

} // namespace

TEST_CASE("travel matrix from flows") {
    std::vector<double> pop = {100.0, 100.0};
    FlowMap commute{{{0, 1}, 20.0}, {{1, 0}, 0.0}};
    const Matrix theta = build_travel_matrix(commute, {}, pop);
    CHECK(theta(0, 0) == doctest::Approx(0.8));
    CHECK(theta(0, 1) == doctest::Approx(0.2));
    CHECK(theta(1, 0) == 0.0);
    CHECK(theta(1, 1) == 1.0);
}

TEST_CASE("zero flows give identity") {
    std::vector<double> pop = {10.0, 20.0, 30.0};
    const Matrix theta = build_travel_matrix({}, {}, pop);
    for (Index i = 0; i < 3; ++i) {
        for (Index j = 0; j < 3; ++j) {
            CHECK(theta(i, j) == (i == j ? 1.0 : 0.0));
        }
    }
}

TEST_CASE("outflow above population names the source") {
    std::vector<double> pop = {100.0, 50.0};
    std::vector<std::string> ids = {"north", "south"};
    FlowMap commute{{{1, 0}, 40.0}};
    FlowMap facility{{{1, 0}, 20.0}};
    try {
        build_travel_matrix(commute, facility, pop, ids);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::OffDiagonalOverflow);
        CHECK(std::string(e.what()).find("south") != std::string::npos);
    }
}

TEST_CASE("travel matrix rows are stochastic over random instances") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const Index n = 3;
        std::vector<double> pop(n);
        FlowMap commute, facility;
        for (Index i = 0; i < n; ++i) {
            pop[i] = 1.0 + 1000.0 * unit(rng);
            const double budget = pop[i] * unit(rng);
            const double a = unit(rng), b = unit(rng), c = unit(rng), d = unit(rng);
            const double total = a + b + c + d;
            commute[{i, (i + 1) % n}] = budget * a / total;
            commute[{i, (i + 2) % n}] = budget * b / total;
            facility[{i, (i + 1) % n}] = budget * c / total;
            facility[{i, (i + 2) % n}] = budget * d / total;
        }
        const Matrix theta = build_travel_matrix(commute, facility, pop);
        for (Index i = 0; i < n; ++i) {
            double row = 0.0;
            for (Index j = 0; j < n; ++j) {
                CHECK(theta(i, j) >= 0.0);
                CHECK(theta(i, j) <= 1.0);
                row += theta(i, j);
            }
            REQUIRE(std::abs(row - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("weekly matrices average elementwise") {
    Matrix a(2, 2), b(2, 2);
    a(0, 0) = 1.0;
    a(1, 1) = 1.0;
    b(0, 0) = 0.5;
    b(0, 1) = 0.5;
    b(1, 1) = 1.0;
    std::vector<Matrix> weekly = {a, b};
    const Matrix mean = average_weekly_matrices(weekly);
    CHECK(mean(0, 0) == 0.75);
    CHECK(mean(0, 1) == 0.25);
    CHECK(mean(1, 0) == 0.0);
    CHECK(mean(1, 1) == 1.0);

    std::vector<Matrix> same = {a, a};
    CHECK(average_weekly_matrices(same) == a);

    std::vector<Matrix> bad = {a, Matrix(3, 3)};
    CHECK_THROWS_AS(average_weekly_matrices(bad), Error);
}

TEST_CASE("average of random stochastic matrices stays stochastic") {
    std::mt19937_64 rng(11);
    std::vector<Matrix> weekly;
    for (int k = 0; k < 10; ++k) {
        weekly.push_back(fixtures::random_graph(rng, 5, 2, 0.5).theta());
    }
    const Matrix mean = average_weekly_matrices(weekly);
    for (Index i = 0; i < 5; ++i) {
        CHECK(std::abs(num::sum(mean.row(i)) - 1.0) < 1e-12);
    }
}

TEST_CASE("graph orders patches lexicographically and permutes theta") {
    std::vector<PatchInfo> patches = {{"z", "east", Category::General, 10.0}, {"a", "west", Category::General, 20.0}};
    Matrix theta(2, 2);
    theta(0, 0) = 0.9;
    theta(0, 1) = 0.1;
    theta(1, 1) = 1.0;
    const PatchGraph g(patches, theta);
    CHECK(g.patch_ids() == std::vector<std::string>{"a", "z"});
    CHECK(g.populations()[0] == 20.0);
    CHECK(g.theta()(1, 0) == 0.1);
    CHECK(g.theta()(1, 1) == 0.9);
    CHECK(g.theta()(0, 0) == 1.0);
    CHECK(g.regions() == std::vector<std::string>{"east", "west"});
    CHECK(g.region_of(0) == 1);
    CHECK(g.patch_index("z") == 1);
    CHECK_THROWS_AS(g.patch_index("missing"), Error);
    CHECK_THROWS_AS(g.region_index("missing"), Error);
}

TEST_CASE("graph rejects broken invariants") {
    Matrix theta(1, 1);
    theta(0, 0) = 0.5;
    CHECK_THROWS_AS(PatchGraph({{"a", "r", Category::General, 1.0}}, theta), Error);
    theta(0, 0) = 1.0;
    CHECK_THROWS_AS(PatchGraph({{"a", "r", Category::General, 0.0}}, theta), Error);
    Matrix two(2, 2);
    two(0, 0) = 1.0;
    two(1, 1) = 1.0;
    CHECK_THROWS_AS(PatchGraph({{"a", "r", Category::General, 1.0}, {"a", "r", Category::General, 1.0}}, two),
                    Error);
}

TEST_CASE("aggregate sums member patches") {
    const PatchGraph g = two_patch_graph();
    Matrix series(2, 3);
    for (Index t = 0; t < 3; ++t) {
        series(0, t) = 1.0 + t;
        series(1, t) = 4.0 + t;
    }
    const Matrix region = aggregate(series, Level::Region, g);
    REQUIRE(region.rows() == 1);
    CHECK(region(0, 0) == 5.0);
    CHECK(region(0, 1) == 7.0);
    CHECK(region(0, 2) == 9.0);
    CHECK(aggregate(series, Level::Patch, g) == series);
    CHECK_THROWS_AS(parse_level("county"), Error);
    try {
        parse_level("county");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnknownLevel);
    }
}

TEST_CASE("aggregate is additive and linear") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unit(-5.0, 5.0);
    for (int trial = 0; trial < 50; ++trial) {
        const PatchGraph g = fixtures::random_graph(rng, 9, 3);
        Matrix a(9, 6), b(9, 6), combo(9, 6);
        const double ka = unit(rng), kb = unit(rng);
        for (Index p = 0; p < 9; ++p) {
            for (Index t = 0; t < 6; ++t) {
                a(p, t) = unit(rng);
                b(p, t) = unit(rng);
                combo(p, t) = ka * a(p, t) + kb * b(p, t);
            }
        }
        const Matrix ra = aggregate(a, Level::Region, g);
        const Matrix rb = aggregate(b, Level::Region, g);
        const Matrix rc = aggregate(combo, Level::Region, g);
        for (Index r = 0; r < ra.rows(); ++r) {
            for (Index t = 0; t < 6; ++t) {
                CHECK(rc(r, t) == doctest::Approx(ka * ra(r, t) + kb * rb(r, t)).epsilon(1e-12));
            }
        }
        const Matrix state = aggregate(a, Level::State, g);
        for (Index t = 0; t < 6; ++t) {
            double regions_total = 0.0;
            for (Index r = 0; r < ra.rows(); ++r) {
                regions_total += ra(r, t);
            }
            CHECK(state(0, t) == regions_total);
            CHECK(state(0, t) == doctest::Approx(num::sum(std::span<const double>(a.column(t)))));
        }
    }
}

TEST_CASE("metrics") {
    SUBCASE("exact prediction") {
        std::vector<double> y = {1.0, 2.0, 4.0};
        const auto m = metrics(y, y);
        CHECK(m.r2 == 1.0);
        CHECK(m.mse == 0.0);
        CHECK(m.mae == 0.0);
        CHECK(m.rmse == 0.0);
    }
    SUBCASE("constant offset") {
        std::vector<double> truth = {1.0, 2.0, 4.0};
        std::vector<double> pred = {2.0, 3.0, 5.0};
        const auto m = metrics(pred, truth);
        CHECK(m.mse == 1.0);
        CHECK(m.mae == 1.0);
        CHECK(m.rmse == 1.0);
    }
    SUBCASE("hand computed") {
        std::vector<double> pred = {0.0, 0.0};
        std::vector<double> truth = {1.0, 3.0};
        // SS_res = 1 + 9, SS_tot = 1 + 1
        const double ss_res = 1.0 + 9.0;
        const double ss_tot = 1.0 + 1.0;
        const auto m = metrics(pred, truth);
        CHECK(m.mse == doctest::Approx(ss_res / 2.0));
        CHECK(m.mae == doctest::Approx(2.0));
        CHECK(m.r2 == doctest::Approx(1.0 - ss_res / ss_tot));
    }
    SUBCASE("errors") {
        std::vector<double> flat = {2.0, 2.0};
        std::vector<double> one = {1.0};
        std::vector<double> three = {1.0, 2.0, 3.0};
        try {
            metrics(flat, flat);
            FAIL("expected DegenerateTruth");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::DegenerateTruth);
        }
        CHECK_THROWS_AS(metrics(one, one), Error);
        CHECK_THROWS_AS(metrics(three, flat), Error);
    }
}
