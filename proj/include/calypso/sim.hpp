#pragma once

// Metapopulation SIRS simulator, generic over double and ad::Var.
//
// Per weekly step t, for every patch i:
//   N_eff_i  = sum_j theta_ji P_j
//   I_eff_i  = sum_j theta_ji I_j
//   lambda_i = sum_j theta_ij beta_j (I_eff_j / N_eff_j) ((1-kappa_j)(1-eps_j) + eps_j)
//   dI_i     = min(S_i, lambda_i S_i)
//   S' = S - dI + delta R,  I' = dI + (1-gamma) I,  R' = gamma I + (1-delta) R
// with S_0 = P - I_0, R_0 = 0. All updates use the state at t.

#include "calypso/core.hpp"

#include <fmt/format.h>
#include <optional>
#include <string>
#include <vector>

namespace calypso {

struct SimConfig {
    Index steps = 1;
    bool record_new_infections = true;
    /// Optional per-week travel matrices; empty means the graph's static theta.
    std::vector<Matrix> weekly_theta;
};

namespace detail {

void check_simulation_inputs(const PatchGraph& graph, Index units, Level level, Index param_steps,
                             const SirState& init, const SimConfig& config);

/// Transposed theta (row i holds column i) and N_eff for one travel matrix.
struct MixingCache {
    Matrix theta_t;
    std::vector<double> inv_n_eff;
};

MixingCache make_mixing_cache(const Matrix& theta, std::span<const double> populations);

} // namespace detail

/// S_0 = P - I_0, I_0 = init, R_0 = 0.
SirState initial_state(const PatchGraph& graph, std::span<const double> init);

/// Runs from an arbitrary starting state.
template <class T>
TrajectoryT<T> simulate_from(const PatchGraph& graph, const DiseaseParamsT<T>& params, const SirState& init,
                             const SimConfig& config) {
    detail::check_simulation_inputs(graph, params.units(), params.level, params.steps(), init, config);

    const Index n = graph.patch_count();
    const Index steps = config.steps;
    const auto& pop = graph.populations();
    const bool patch_level = params.level == Level::Patch;
    auto unit = [&](Index p) { return patch_level ? p : graph.region_of(p); };

    TrajectoryT<T> traj;
    traj.S = Grid<T>(n, steps);
    traj.I = Grid<T>(n, steps);
    traj.R = Grid<T>(n, steps);
    if (config.record_new_infections) {
        traj.new_infections = Grid<T>(n, steps);
    }

    std::vector<T> S(n), I(n), R(n);
    for (Index p = 0; p < n; ++p) {
        S[p] = T(init.S[p]);
        I[p] = T(init.I[p]);
        R[p] = T(init.R[p]);
    }

    std::optional<detail::MixingCache> static_cache;
    if (config.weekly_theta.empty()) {
        static_cache = detail::make_mixing_cache(graph.theta(), pop);
    }

    const auto& beta = params[Param::Beta];
    const auto& gamma = params[Param::Gamma];
    const auto& delta = params[Param::Delta];
    const auto& kappa = params[Param::Kappa];
    const auto& eps = params[Param::Epsilon];

    std::vector<T> force(n), next_S(n), next_I(n), next_R(n);
    for (Index t = 0; t < steps; ++t) {
        for (Index p = 0; p < n; ++p) {
            traj.S(p, t) = S[p];
            traj.I(p, t) = I[p];
            traj.R(p, t) = R[p];
        }

        std::optional<detail::MixingCache> weekly_cache;
        if (!static_cache) {
            weekly_cache = detail::make_mixing_cache(config.weekly_theta[t], pop);
        }
        const auto& cache = static_cache ? *static_cache : *weekly_cache;
        const Matrix& theta = static_cache ? graph.theta() : config.weekly_theta[t];

        for (Index j = 0; j < n; ++j) {
            const T i_eff = num::lincomb(cache.theta_t.row(j), std::span<const T>(I));
            const Index u = unit(j);
            const T& k = kappa(u, t);
            const T& e = eps(u, t);
            const T factor = (T(1.0) - k) * (T(1.0) - e) + e;
            force[j] = beta(u, t) * factor * (i_eff * T(cache.inv_n_eff[j]));
        }
        for (Index i = 0; i < n; ++i) {
            const T lambda = num::lincomb(theta.row(i), std::span<const T>(force));
            const T new_inf = num::min(S[i], lambda * S[i]);
            const Index u = unit(i);
            const T& g = gamma(u, t);
            const T& d = delta(u, t);
            next_S[i] = S[i] - new_inf + d * R[i];
            next_I[i] = new_inf + (T(1.0) - g) * I[i];
            next_R[i] = g * I[i] + (T(1.0) - d) * R[i];
            if (config.record_new_infections) {
                traj.new_infections(i, t) = new_inf;
            }
        }
        S.swap(next_S);
        I.swap(next_I);
        R.swap(next_R);
    }
    traj.final_S = std::move(S);
    traj.final_I = std::move(I);
    traj.final_R = std::move(R);
    return traj;
}

template <class T>
TrajectoryT<T> simulate(const PatchGraph& graph, const DiseaseParamsT<T>& params, std::span<const double> init,
                        const SimConfig& config) {
    return simulate_from(graph, params, initial_state(graph, init), config);
}

enum class TargetKind { Region, Patch };

struct BetaMultiplier {
    TargetKind kind = TargetKind::Region;
    std::string target;
    double factor = 1.0;
    Index first_step = 0;
    std::optional<Index> end_step; // exclusive; nullopt runs to the last step
};

/// An intervention/outbreak specification. `allocation` is the binary vector
/// Z over patches used by budgeted allocation; it is expanded into patch
/// multipliers by the analysis code.
struct Scenario {
    std::vector<BetaMultiplier> beta_multipliers;
    std::vector<std::pair<std::string, double>> seeds; // patch id -> added infections K
    std::vector<std::uint8_t> allocation;
    Index budget = 0;
    /// Beta multiplier applied to every allocated patch.
    double allocation_factor = 0.9;
};

/// Copy of `params` with beta scaled on the targeted units and step ranges.
DiseaseParams apply_scenario(const DiseaseParams& params, const PatchGraph& graph, const Scenario& scenario);

/// Copy of `init` with K added to one patch.
std::vector<double> seed_outbreak(std::span<const double> init, const PatchGraph& graph, std::string_view patch,
                                  double k);

/// Applies every seed of a scenario.
std::vector<double> apply_seeds(std::span<const double> init, const PatchGraph& graph, const Scenario& scenario);

/// Sum of new infections over all patches and steps.
double cumulative_infections(const Trajectory& traj);

} // namespace calypso
