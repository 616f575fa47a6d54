#pragma once

#include "calypso/core.hpp"

#include <random>
#include <string>
#include <vector>

namespace fixtures {

using namespace calypso;

/// Patches "p00".."pNN" split round-robin over `regions` regions "r0".. with
/// random flows that never exceed a patch's population.
inline PatchGraph random_graph(std::mt19937_64& rng, Index patches, Index regions, double mobility = 0.2) {
    std::uniform_real_distribution<double> pop(500.0, 5000.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<PatchInfo> info;
    std::vector<double> populations;
    for (Index i = 0; i < patches; ++i) {
        PatchInfo p;
        p.id = "p" + std::to_string(100 + i).substr(1);
        p.region = "r" + std::to_string(i % regions);
        p.category = i % 2 == 0 ? Category::General : Category::NonGeneral;
        p.population = pop(rng);
        populations.push_back(p.population);
        info.push_back(p);
    }
    FlowMap commute, facility;
    for (Index i = 0; i < patches; ++i) {
        std::vector<double> w(patches);
        double total = 0.0;
        for (Index j = 0; j < patches; ++j) {
            w[j] = i == j ? 0.0 : unit(rng);
            total += w[j];
        }
        const double outflow = mobility * unit(rng) * populations[i];
        for (Index j = 0; j < patches; ++j) {
            if (i != j && total > 0.0) {
                commute[{i, j}] = 0.7 * outflow * w[j] / total;
                facility[{i, j}] = 0.3 * outflow * w[j] / total;
            }
        }
    }
    return PatchGraph(info, build_travel_matrix(commute, facility, populations));
}

inline DiseaseParams random_params(std::mt19937_64& rng, Level level, Index units, Index steps) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    DiseaseParams params(level, units, steps);
    for (Index u = 0; u < units; ++u) {
        for (Index t = 0; t < steps; ++t) {
            params[Param::Beta](u, t) = unit(rng);
            params[Param::Gamma](u, t) = 0.05 + 0.85 * unit(rng);
            params[Param::Delta](u, t) = 0.2 * unit(rng);
            params[Param::Kappa](u, t) = 0.9 * unit(rng);
            params[Param::Epsilon](u, t) = unit(rng);
        }
    }
    return params;
}

inline std::vector<double> random_seed(std::mt19937_64& rng, const PatchGraph& graph, double max_fraction = 0.05) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> init(graph.patch_count());
    for (Index p = 0; p < init.size(); ++p) {
        init[p] = max_fraction * unit(rng) * graph.populations()[p];
    }
    return init;
}

} // namespace fixtures

#include "calypso/sim.hpp"

namespace fixtures {

/// Observed counts from a simulated run of random region parameters; feature
/// channels are the counts themselves and a noisy lagged copy.
inline DataSet small_dataset(std::mt19937_64& rng, const PatchGraph& graph, Index window, Index horizon = 0) {
    const Index weeks = window + horizon;
    const auto params = random_params(rng, Level::Region, graph.region_count(), weeks);
    DiseaseParams tame = params;
    for (Index r = 0; r < graph.region_count(); ++r) {
        for (Index t = 0; t < weeks; ++t) {
            tame.beta()(r, t) = 0.3 + 0.4 * params.beta()(r, t);
            tame[Param::Gamma](r, t) = 0.2 + 0.2 * params.beta()(r, t);
        }
    }
    const auto init = random_seed(rng, graph, 0.05);
    SimConfig config;
    config.steps = weeks;
    const Trajectory traj = simulate(graph, tame, init, config);
    std::normal_distribution<double> z(0.0, 1.0);
    DataSet data;
    data.window = window;
    data.horizon = horizon;
    data.observed = Matrix(graph.patch_count(), weeks);
    Matrix lagged(graph.patch_count(), weeks);
    for (Index p = 0; p < graph.patch_count(); ++p) {
        for (Index t = 0; t < weeks; ++t) {
            data.observed(p, t) = std::round(traj.I(p, t));
            lagged(p, t) = std::max(0.0, traj.new_infections(p, t > 0 ? t - 1 : 0) * (1.0 + 0.1 * z(rng)));
        }
    }
    data.feature_names = {"cases", "lagged"};
    data.features = {data.observed, lagged};
    data.initial_infections = data.observed.column(0);
    return data;
}

} // namespace fixtures
