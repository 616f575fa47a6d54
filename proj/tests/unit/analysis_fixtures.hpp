#pragma once

#include "calypso/analysis.hpp"

#include <vector>

namespace fixtures {

using namespace calypso;

/// Constant region parameters over `steps` weeks.
inline DiseaseParams constant_params(std::vector<double> beta, double gamma, double delta, Index steps) {
    DiseaseParams p(Level::Region, beta.size(), steps);
    for (Index r = 0; r < beta.size(); ++r) {
        for (Index t = 0; t < steps; ++t) {
            p.beta()(r, t) = beta[r];
            p[Param::Gamma](r, t) = gamma;
            p[Param::Delta](r, t) = delta;
            p[Param::Kappa](r, t) = 0.0;
            p[Param::Epsilon](r, t) = 1.0;
        }
    }
    return p;
}

/// Region "A" (one patch, strong transmission) feeds region "B" (a commuter
/// patch b1 and a facility b2 reached only through b1). Cutting beta in A
/// lowers the statewide total while the facility b2 ends up with more cases.
inline ScenarioBase spillover_base() {
    std::vector<PatchInfo> info = {{"a1", "A", Category::General, 1000.0},
                                   {"b1", "B", Category::General, 1000.0},
                                   {"b2", "B", Category::NonGeneral, 1000.0}};
    FlowMap commute, facility;
    commute[{1, 0}] = 250.0;
    commute[{1, 2}] = 80.0;
    const std::vector<double> pops = {1000.0, 1000.0, 1000.0};
    PatchGraph graph(info, build_travel_matrix(commute, facility, pops));
    return {graph, constant_params({0.95, 0.9}, 0.45, 0.02, 60), {1.0, 0.0, 17.0}};
}

/// Two regions of two patches each; region "A" transmits
/// ten times harder than region "B".
inline ScenarioBase force_ratio_base() {
    std::vector<PatchInfo> info = {{"h1", "A", Category::General, 5000.0},
                                   {"h2", "A", Category::NonGeneral, 1000.0},
                                   {"c1", "B", Category::General, 5000.0},
                                   {"c2", "B", Category::NonGeneral, 1000.0}};
    FlowMap commute, facility;
    commute[{0, 2}] = 250.0;
    commute[{2, 0}] = 250.0;
    facility[{0, 1}] = 100.0;
    facility[{2, 3}] = 100.0;
    const std::vector<double> pops = {5000.0, 1000.0, 5000.0, 1000.0};
    PatchGraph graph(info, build_travel_matrix(commute, facility, pops));
    return {graph, constant_params({0.8, 0.08}, 0.25, 0.01, 52), {10.0, 2.0, 10.0, 2.0}};
}

} // namespace fixtures
