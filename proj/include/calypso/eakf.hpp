#pragma once

// Ensemble adjustment Kalman filter baseline.
//
// Each member carries per-patch S/I/R and region-level parameters held
// constant within a week. Weekly per-patch prevalence is assimilated one
// observation at a time with the deterministic square-root update; states and
// parameters move through their ensemble covariance with the observed
// coordinate, then get clamped back into range.

#include "calypso/calib.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace calypso {

struct EakfConfig {
    Index size = 100;
    double inflation = 1.02;
    std::uint64_t seed = 0;
    /// Observation error variance max(obs_floor, obs_relative * y)^2.
    double obs_floor = 1.0;
    double obs_relative = 0.1;
    /// Prior parameter draws are uniform over these intervals.
    BoundSpec bounds;
    /// Parameters held at a known value instead of being estimated.
    std::array<std::optional<double>, kParamCount> fixed{};
    /// Relative lognormal spread of initial infections across members.
    double initial_spread = 0.1;

    void validate() const;
};

struct Ensemble {
    Index regions = 0;
    std::vector<SirState> states;
    /// Member x (param * regions + region).
    std::vector<std::vector<double>> params;
    double inflation = 1.0;

    Index size() const noexcept { return states.size(); }
    double param(Index member, Param p, Index region) const {
        return params[member][static_cast<Index>(p) * regions + region];
    }
};

/// Posterior members of one scalar observed coordinate: mean and variance
/// follow the Gaussian product, deviations shrink by sqrt(v_post / v_prior).
/// Throws CollapsedEnsemble when the prior variance is below 1e-12.
std::vector<double> eakf_adjust(std::span<const double> prior, double observation, double obs_variance);

/// Observation error variance for one count.
double eakf_obs_variance(double observation, const EakfConfig& config);

/// Seeded prior ensemble around the data's initial infections.
Ensemble initial_ensemble(const PatchGraph& graph, std::span<const double> initial_infections,
                          const EakfConfig& config);

/// Propagates every member one week.
Ensemble eakf_forecast(const Ensemble& ens, const PatchGraph& graph);

/// Inflates, then assimilates one week of per-patch prevalence. Posterior
/// variance never exceeds the inflated prior variance per observed coordinate.
Ensemble eakf_step(const Ensemble& ens, const PatchGraph& graph, std::span<const double> observation,
                   const EakfConfig& config);

struct EakfResult {
    Matrix filtered_I;              // patch x window, posterior ensemble mean
    DiseaseParams param_mean;       // region x window posterior means
    DiseaseParams param_sd;
    /// Ensemble mean of members re-simulated from week 0 with their own
    /// posterior parameter paths, the final week held over the horizon.
    Trajectory calibrated;
    Ensemble final_ensemble;
};

/// Filters weeks 1..window-1 and re-simulates window + horizon weeks.
EakfResult run_eakf(const PatchGraph& graph, const DataSet& data, const EakfConfig& config, Index horizon = 0);

/// week, state_I, then <param>_mean and <param>_sd pooled over regions.
std::string eakf_csv(const EakfResult& result, const PatchGraph& graph);

} // namespace calypso
