#include "calypso/sim.hpp"

#include <algorithm>

namespace calypso {

namespace detail {

void check_simulation_inputs(const PatchGraph& graph, Index units, Level level, Index param_steps,
                             const SirState& init, const SimConfig& config) {
    const Index n = graph.patch_count();
    if (config.steps == 0) {
        throw Error(ErrorCode::InvalidArgument, "simulation needs at least one step");
    }
    const Index expected_units = level == Level::Patch ? n : graph.region_count();
    if (level == Level::State || units != expected_units) {
        throw Error(ErrorCode::ParamCoverage,
                    fmt::format("parameters have {} {} rows, expected {}", units, to_string(level), expected_units));
    }
    if (param_steps < config.steps) {
        throw Error(ErrorCode::ParamCoverage,
                    fmt::format("parameters cover {} steps, simulation needs {}", param_steps, config.steps));
    }
    if (init.S.size() != n || init.I.size() != n || init.R.size() != n) {
        throw Error(ErrorCode::ShapeMismatch, fmt::format("initial state does not cover {} patches", n));
    }
    for (Index p = 0; p < n; ++p) {
        if (!(init.I[p] >= 0.0)) {
            throw Error(ErrorCode::NegativeSeed,
                        fmt::format("initial infections of '{}' are negative", graph.patch_ids()[p]));
        }
        if (!(init.S[p] >= 0.0) || !(init.R[p] >= 0.0)) {
            throw Error(ErrorCode::InvalidArgument,
                        fmt::format("initial compartments of '{}' are negative", graph.patch_ids()[p]));
        }
    }
    if (!config.weekly_theta.empty()) {
        if (config.weekly_theta.size() < config.steps) {
            throw Error(ErrorCode::ParamCoverage,
                        fmt::format("{} weekly travel matrices for {} steps", config.weekly_theta.size(),
                                    config.steps));
        }
        for (const auto& m : config.weekly_theta) {
            if (m.rows() != n || m.cols() != n) {
                throw Error(ErrorCode::ShapeMismatch, "weekly travel matrix shape differs from the graph");
            }
        }
    }
}

MixingCache make_mixing_cache(const Matrix& theta, std::span<const double> populations) {
    const Index n = theta.rows();
    MixingCache cache;
    cache.theta_t = Matrix(n, n);
    cache.inv_n_eff.assign(n, 0.0);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
            cache.theta_t(i, j) = theta(j, i);
        }
        const double n_eff = num::lincomb(cache.theta_t.row(i), populations);
        cache.inv_n_eff[i] = n_eff > 0.0 ? 1.0 / n_eff : 0.0;
    }
    return cache;
}

} // namespace detail

SirState initial_state(const PatchGraph& graph, std::span<const double> init) {
    const Index n = graph.patch_count();
    if (init.size() != n) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("initial infections have {} entries for {} patches", init.size(), n));
    }
    SirState state;
    state.S.resize(n);
    state.I.assign(init.begin(), init.end());
    state.R.assign(n, 0.0);
    for (Index p = 0; p < n; ++p) {
        if (!(init[p] >= 0.0)) {
            throw Error(ErrorCode::NegativeSeed,
                        fmt::format("initial infections of '{}' are negative", graph.patch_ids()[p]));
        }
        if (init[p] > graph.populations()[p]) {
            throw Error(ErrorCode::SeedExceedsPopulation,
                        fmt::format("initial infections of '{}' exceed its population", graph.patch_ids()[p]));
        }
        state.S[p] = graph.populations()[p] - init[p];
    }
    return state;
}

DiseaseParams apply_scenario(const DiseaseParams& params, const PatchGraph& graph, const Scenario& scenario) {
    DiseaseParams out = params;
    auto& beta = out.beta();
    for (const auto& m : scenario.beta_multipliers) {
        if (!(m.factor > 0.0)) {
            throw Error(ErrorCode::InvalidArgument,
                        fmt::format("beta multiplier for '{}' must be positive", m.target));
        }
        std::vector<Index> rows;
        if (m.kind == TargetKind::Region) {
            const auto region = graph.find_region(m.target);
            if (!region) {
                throw Error(ErrorCode::UnknownTarget, fmt::format("unknown region '{}'", m.target));
            }
            if (params.level == Level::Region) {
                rows.push_back(*region);
            } else {
                rows = graph.members(*region);
            }
        } else {
            const auto patch = graph.find_patch(m.target);
            if (!patch) {
                throw Error(ErrorCode::UnknownTarget, fmt::format("unknown patch '{}'", m.target));
            }
            if (params.level != Level::Patch) {
                throw Error(ErrorCode::UnknownTarget,
                            fmt::format("patch target '{}' needs patch-level parameters", m.target));
            }
            rows.push_back(*patch);
        }
        const Index end = std::min(m.end_step.value_or(params.steps()), params.steps());
        for (Index r : rows) {
            for (Index t = m.first_step; t < end; ++t) {
                beta(r, t) *= m.factor;
            }
        }
    }
    return out;
}

std::vector<double> seed_outbreak(std::span<const double> init, const PatchGraph& graph, std::string_view patch,
                                  double k) {
    if (init.size() != graph.patch_count()) {
        throw Error(ErrorCode::ShapeMismatch, "initial infections do not cover every patch");
    }
    if (!(k >= 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "seeded infections must be nonnegative");
    }
    const Index p = graph.patch_index(patch);
    std::vector<double> out(init.begin(), init.end());
    if (out[p] + k > graph.populations()[p]) {
        throw Error(ErrorCode::SeedExceedsPopulation,
                    fmt::format("seeding {} infections in '{}' exceeds its population", k, patch));
    }
    out[p] += k;
    return out;
}

std::vector<double> apply_seeds(std::span<const double> init, const PatchGraph& graph, const Scenario& scenario) {
    std::vector<double> out(init.begin(), init.end());
    for (const auto& [patch, k] : scenario.seeds) {
        out = seed_outbreak(out, graph, patch, k);
    }
    return out;
}

double cumulative_infections(const Trajectory& traj) {
    return num::sum(traj.new_infections.data());
}

} // namespace calypso
