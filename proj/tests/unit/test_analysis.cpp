#include "calypso/analysis.hpp"
#include "calypso/synth.hpp"
#include "analysis_fixtures.hpp"
#include "fixtures.hpp"

#include <algorithm>
#include <doctest.h>
#include <numeric>
#include <random>

using namespace calypso;

namespace {

ScenarioBase random_base(std::uint64_t seed, Index patches, Index regions, Index steps = 40) {
    std::mt19937_64 rng(seed);
    PatchGraph graph = fixtures::random_graph(rng, patches, regions);
    DiseaseParams params = fixtures::random_params(rng, Level::Region, regions, steps);
    for (Index r = 0; r < regions; ++r) {
        for (Index t = 0; t < steps; ++t) {
            params.beta()(r, t) = 0.3 + 0.5 * params.beta()(r, t);
            params[Param::Gamma](r, t) = 0.2;
        }
    }
    auto init = fixtures::random_seed(rng, graph, 0.02);
    return {graph, params, init};
}

ScenarioBase synth_base(std::uint64_t seed) {
    SynthSpec spec;
    spec.seed = seed;
    const auto s = generate(spec);
    return {s.graph, s.theta_star, s.data.initial_infections};
}

std::vector<Index> all_patches(const ScenarioBase& base) {
    std::vector<Index> out(base.graph.patch_count());
    std::iota(out.begin(), out.end(), 0);
    return out;
}

} // namespace

TEST_CASE("factor one leaves every delta at zero") {
    const auto base = random_base(1, 8, 3);
    for (const auto& region : base.graph.regions()) {
        const auto report = regional_beta_reduction(base, region, 1.0);
        CHECK(report.delta_state == 0.0);
        for (const auto& d : report.regions) {
            CHECK(d.delta == 0.0);
        }
        for (const auto& d : report.patches) {
            CHECK(d.delta == 0.0);
        }
    }
}

TEST_CASE("beta multipliers compose") {
    const auto base = random_base(2, 8, 3);
    const std::string region = base.graph.regions()[1];
    const auto direct = regional_beta_reduction(base, region, 0.9 * 0.8);
    ScenarioBase scaled = base;
    const Index r = *base.graph.find_region(region);
    for (Index t = 0; t < scaled.steps(); ++t) {
        scaled.params.beta()(r, t) *= 0.9;
    }
    const auto second = regional_beta_reduction(scaled, region, 0.8);
    CHECK(direct.scenario_state == doctest::Approx(second.scenario_state).epsilon(1e-10));
    for (Index p = 0; p < base.graph.patch_count(); ++p) {
        CHECK(direct.patches[p].scenario == doctest::Approx(second.patches[p].scenario).epsilon(1e-10));
    }
}

TEST_CASE("reducing the high-force region saves more") {
    const auto base = fixtures::force_ratio_base();
    const auto hot = regional_beta_reduction(base, "A", 0.9);
    const auto cold = regional_beta_reduction(base, "B", 0.9);
    CHECK(hot.delta_state < 0.0);
    CHECK(hot.delta_state < cold.delta_state);
}

TEST_CASE("spillover deltas are reported unclamped") {
    const auto base = fixtures::spillover_base();
    const auto report = regional_beta_reduction(base, "A", 0.9);
    CHECK(report.delta_state < 0.0);
    const auto b2 = std::find_if(report.patches.begin(), report.patches.end(),
                                 [](const UnitDelta& d) { return d.id == "b2"; });
    REQUIRE(b2 != report.patches.end());
    CHECK(b2->delta > 0.0);
    double patch_sum = 0.0;
    for (const auto& d : report.patches) {
        patch_sum += d.delta;
    }
    CHECK(patch_sum == doctest::Approx(report.delta_state));
}

TEST_CASE("unknown region and bad factor") {
    const auto base = random_base(3, 6, 2);
    CHECK_THROWS_AS(regional_beta_reduction(base, "nowhere"), Error);
    try {
        regional_beta_reduction(base, "nowhere");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnknownRegion);
    }
    CHECK_THROWS_AS(regional_beta_reduction(base, base.graph.regions()[0], 0.0), Error);
}

TEST_CASE("allocation respects the budget") {
    const auto base = random_base(4, 6, 2);
    Scenario s;
    s.allocation = {1, 1, 0, 0, 0, 0};
    s.budget = 1;
    CHECK_THROWS_AS(run_scenario(base, s), Error);
    s.budget = 2;
    CHECK_NOTHROW(run_scenario(base, s));
    s.allocation = {1, 0};
    CHECK_THROWS_AS(run_scenario(base, s), Error);
}

TEST_CASE("greedy evaluation count is exact") {
    const auto base = random_base(5, 10, 2);
    const auto candidates = all_patches(base);
    for (Index b = 1; b <= 4; ++b) {
        const auto g = unit_greedy(base, b, candidates);
        Index expected = 0;
        for (Index k = 1; k <= b; ++k) {
            expected += candidates.size() - k + 1;
        }
        CHECK(g.evaluations == expected);
        CHECK(g.selected.size() == b);
        CHECK(g.reduction.size() == b);
    }
    CHECK(brute_force_allocation(base, 2, candidates).evaluations == 45);
}

TEST_CASE("single-patch greedy equals brute force") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto base = random_base(10 + seed, 10, 3);
        const auto g = unit_greedy(base, 1, all_patches(base));
        const auto bf = brute_force_allocation(base, 1, all_patches(base));
        CHECK(g.selected == bf.selected);
        CHECK(g.reduction == bf.reduction);
    }
}

TEST_CASE("greedy pair reaches 90 percent of the best pair") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto base = random_base(20 + seed, 10, 2);
        const auto g = unit_greedy(base, 2, all_patches(base));
        const auto bf = brute_force_allocation(base, 2, all_patches(base));
        CHECK(bf.evaluations == 45);
        CHECK(g.evaluations == 19);
        CHECK(bf.reduction.back() > 0.0);
        CHECK(g.reduction.back() >= 0.9 * bf.reduction.back());
        CHECK(g.reduction.back() <= bf.reduction.back() + 1e-9);
        CHECK(allocation_reduction(base, g.selected) == doctest::Approx(g.reduction.back()));
    }
}

TEST_CASE("greedy ties go to the lowest index") {
    std::vector<PatchInfo> info;
    for (int i = 0; i < 3; ++i) {
        info.push_back({"x" + std::to_string(i), "r", Category::NonGeneral, 1000.0});
    }
    Matrix theta(3, 3);
    for (Index i = 0; i < 3; ++i) {
        theta(i, i) = 1.0;
    }
    const ScenarioBase base{PatchGraph(info, theta), fixtures::constant_params({0.6}, 0.2, 0.0, 20),
                            {5.0, 5.0, 5.0}};
    const auto g = unit_greedy(base, 2);
    CHECK(g.selected == std::vector<Index>{0, 1});
}

TEST_CASE("greedy beats random allocation and grows with the budget") {
    const auto base = synth_base(0);
    const auto g = unit_greedy(base, 5);
    CHECK(g.reduction.back() > random_allocation_mean(base, 5, 20, 0));
    for (Index b = 1; b < g.reduction.size(); ++b) {
        CHECK(g.reduction[b] >= g.reduction[b - 1]);
    }
    const auto hcf = healthcare_patches(base.graph);
    CHECK(std::all_of(g.selected.begin(), g.selected.end(), [&](Index p) {
        return std::find(hcf.begin(), hcf.end(), p) != hcf.end();
    }));
}

TEST_CASE("no candidates") {
    std::vector<PatchInfo> info = {{"a", "r", Category::General, 100.0}, {"b", "r", Category::General, 100.0}};
    Matrix theta(2, 2);
    theta(0, 0) = theta(1, 1) = 1.0;
    const ScenarioBase base{PatchGraph(info, theta), fixtures::constant_params({0.5}, 0.2, 0.0, 5), {1.0, 1.0}};
    try {
        unit_greedy(base, 1);
        FAIL("expected EmptyCandidates");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyCandidates);
    }
    CHECK_THROWS_AS(unit_greedy(base, 0, {0, 1}), Error);
    CHECK_THROWS_AS(unit_greedy(base, 3, {0, 1}), Error);
}

TEST_CASE("isolated region does not feel another region's bump") {
    std::mt19937_64 rng(7);
    std::vector<PatchInfo> info;
    for (int i = 0; i < 6; ++i) {
        info.push_back({"q" + std::to_string(i), i < 3 ? "left" : "right",
                        i % 2 == 0 ? Category::General : Category::NonGeneral, 2000.0});
    }
    FlowMap commute, facility;
    commute[{0, 1}] = 100.0;
    commute[{1, 2}] = 50.0;
    commute[{3, 4}] = 120.0;
    facility[{5, 3}] = 40.0;
    const std::vector<double> pops(6, 2000.0);
    const PatchGraph graph(info, build_travel_matrix(commute, facility, pops));
    const ScenarioBase base{graph, fixtures::constant_params({0.5, 0.6}, 0.25, 0.02, 30),
                            fixtures::random_seed(rng, graph, 0.01)};
    const auto report = sensitivity_scan(base, 1.1);
    CHECK(report.impact_ratio(0, 1) == 0.0);
    CHECK(report.impact_ratio(1, 0) == 0.0);
    CHECK(report.impact_ratio(0, 0) > 0.0);
    CHECK(report.impact_ratio(1, 1) > 0.0);
}

TEST_CASE("impact ratios are nonnegative") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto base = random_base(30 + seed, 8, 3);
        const auto report = sensitivity_scan(base, 1.2);
        for (double v : report.impact_ratio.data()) {
            CHECK(v >= -1e-9);
        }
        CHECK(report.ranking.size() == 3);
    }
}

TEST_CASE("self ratio dominates with weak coupling") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(40 + seed);
        const PatchGraph graph = fixtures::random_graph(rng, 9, 3, 0.02);
        ScenarioBase base{graph, fixtures::constant_params({0.5, 0.55, 0.6}, 0.25, 0.02, 40),
                          fixtures::random_seed(rng, graph, 0.01)};
        const auto report = sensitivity_scan(base, 1.1);
        for (Index i = 0; i < 3; ++i) {
            for (Index j = 0; j < 3; ++j) {
                if (j != i) {
                    CHECK(report.impact_ratio(i, i) > report.impact_ratio(j, i));
                }
            }
        }
    }
}

TEST_CASE("sensitivity bump must exceed one") {
    const auto base = random_base(8, 4, 2);
    CHECK_THROWS_AS(sensitivity_scan(base, 1.0), Error);
    CHECK_THROWS_AS(sensitivity_scan(base, 0.5), Error);
}

TEST_CASE("zero outbreak changes nothing") {
    const auto base = random_base(9, 8, 2);
    const auto report = outbreak_ranking(base, 0.0);
    CHECK(report.ranking.size() == 8);
    for (const auto& e : report.ranking) {
        CHECK(e.delta == 0.0);
    }
}

TEST_CASE("the best-connected source ranks first") {
    std::vector<PatchInfo> info;
    for (int i = 0; i < 4; ++i) {
        info.push_back({"s" + std::to_string(i), i < 2 ? "r0" : "r1", Category::General, 1000.0});
    }
    info[2].population = 3000.0;
    FlowMap commute, facility;
    for (Index i = 0; i < 4; ++i) {
        for (Index j = 0; j < 4; ++j) {
            if (i != j) {
                commute[{i, j}] = i == 2 ? 300.0 : 30.0;
            }
        }
    }
    const std::vector<double> pops = {1000.0, 1000.0, 3000.0, 1000.0};
    const ScenarioBase base{PatchGraph(info, build_travel_matrix(commute, facility, pops)),
                            fixtures::constant_params({0.4, 0.4}, 0.3, 0.0, 30), {1.0, 1.0, 1.0, 1.0}};
    const auto report = outbreak_ranking(base, 20.0);
    CHECK(report.ranking.front().source == 2);
    for (Index k = 1; k < report.ranking.size(); ++k) {
        CHECK(report.ranking[k - 1].delta >= report.ranking[k].delta);
    }
    double total = 0.0;
    for (const auto& e : report.ranking) {
        CHECK(e.fraction == doctest::Approx(e.delta / report.baseline));
        total += e.fraction;
    }
    double by_region = 0.0;
    for (const auto& [name, fraction] : report.regions) {
        by_region += fraction;
    }
    CHECK(by_region == doctest::Approx(total));
}

TEST_CASE("outbreak deltas do not depend on evaluation order") {
    const auto base = random_base(11, 8, 2);
    const auto forward = outbreak_ranking(base, 5.0, {0, 1, 2, 3, 4, 5, 6, 7});
    const auto backward = outbreak_ranking(base, 5.0, {7, 6, 5, 4, 3, 2, 1, 0});
    REQUIRE(forward.ranking.size() == backward.ranking.size());
    for (Index k = 0; k < forward.ranking.size(); ++k) {
        CHECK(forward.ranking[k].source == backward.ranking[k].source);
        CHECK(forward.ranking[k].delta == backward.ranking[k].delta);
    }
}

TEST_CASE("inverse outbreak query excludes the target") {
    const auto base = random_base(12, 6, 2);
    const auto report = outbreak_ranking(base, 5.0, {}, Index{3});
    CHECK(report.ranking.size() == 5);
    for (const auto& e : report.ranking) {
        CHECK(e.source != 3);
        CHECK(e.delta >= -1e-9);
    }
}

TEST_CASE("outbreak seeds respect populations") {
    const auto base = random_base(13, 4, 2);
    try {
        outbreak_ranking(base, 1e9);
        FAIL("expected SeedExceedsPopulation");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SeedExceedsPopulation);
    }
}

TEST_CASE("analyses leave the base untouched") {
    const auto base = synth_base(1);
    const auto before = base.checksum();
    sensitivity_scan(base, 1.1);
    outbreak_ranking(base, 10.0);
    unit_greedy(base, 2);
    CHECK(base.checksum() == before);
}

namespace {

struct TrainedFixture {
    SynthResult synth;
    CalibNet net;
};

const TrainedFixture& trained_fixture() {
    static const TrainedFixture fixture = [] {
        SynthSpec spec;
        spec.patches = 8;
        spec.areas = 2;
        spec.weeks = 30;
        spec.horizon = 4;
        spec.seed = 3;
        TrainedFixture f{generate(spec), {}};
        CalibNet net(f.synth.data.channels());
        net.init(0);
        TrainConfig config;
        config.epochs = 60;
        f.net = train_joint(net, f.synth.data, f.synth.graph, config).net;
        return f;
    }();
    return fixture;
}

} // namespace

TEST_CASE("feature noise touches only the named patches") {
    const auto& f = trained_fixture();
    const auto noisy = add_feature_noise(f.synth.data, {1, 3}, 0.2, 0);
    CHECK(std::ranges::equal(noisy.observed.data(), f.synth.data.observed.data()));
    for (Index c = 0; c < noisy.channels(); ++c) {
        for (Index p = 0; p < noisy.features[c].rows(); ++p) {
            const auto a = noisy.features[c].row(p);
            const auto b = f.synth.data.features[c].row(p);
            const bool same = std::equal(a.begin(), a.end(), b.begin());
            CHECK(same == (p != 1 && p != 3));
        }
    }
    const auto zero = add_feature_noise(f.synth.data, {1, 3}, 0.0, 0);
    CHECK(std::ranges::equal(zero.features[0].data(), f.synth.data.features[0].data()));
}

TEST_CASE("full correction returns to the clean score") {
    const auto& f = trained_fixture();
    CorrectionConfig config;
    config.noisy_patches = healthcare_patches(f.synth.graph);
    config.noise_sd = 0.5;
    config.seed = 1;
    const auto result = greedy_data_correction(f.net, f.synth.data, f.synth.graph, config);
    REQUIRE(result.r2.size() == config.noisy_patches.size() + 1);
    CHECK(result.r2.front() == result.noisy_r2);
    CHECK(std::abs(result.r2.back() - result.clean_r2) <= 1e-6);
    const Index n = config.noisy_patches.size();
    CHECK(result.evaluations == n * (n + 1) / 2);

    std::mt19937_64 rng(5);
    std::vector<double> mean(n + 1, 0.0);
    for (int draw = 0; draw < 10; ++draw) {
        auto order = config.noisy_patches;
        std::shuffle(order.begin(), order.end(), rng);
        const auto curve = correction_curve(f.net, f.synth.data, f.synth.graph, config, order);
        for (Index s = 0; s <= n; ++s) {
            mean[s] += curve[s] / 10.0;
        }
    }
    for (Index s = 0; s <= n; ++s) {
        CHECK(result.r2[s] >= mean[s] - 1e-12);
    }
    CHECK(correction_curve(f.net, f.synth.data, f.synth.graph, config, result.order) == result.r2);
}

TEST_CASE("noise-free correction is flat") {
    const auto& f = trained_fixture();
    CorrectionConfig config;
    config.noisy_patches = {0, 1, 2};
    config.noise_sd = 0.0;
    const auto result = greedy_data_correction(f.net, f.synth.data, f.synth.graph, config);
    for (double v : result.r2) {
        CHECK(v == result.clean_r2);
    }
}

TEST_CASE("k beyond the noisy set") {
    const auto& f = trained_fixture();
    CorrectionConfig config;
    config.noisy_patches = {0, 1};
    config.k = 3;
    try {
        greedy_data_correction(f.net, f.synth.data, f.synth.graph, config);
        FAIL("expected KExceedsNoisySet");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::KExceedsNoisySet);
    }
}
