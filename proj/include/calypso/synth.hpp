#pragma once

// Synthetic fixtures with known dynamics in the claims-data schema.
//
// Patches alternate general (community) and non-general (healthcare facility)
// and are dealt round-robin to geographic areas; each area contributes two
// model regions, "<area>_gen" and "<area>_hcf". Ground truth runs `burn_in`
// weeks before week 0 so observed counts start mid-epidemic.

#include "calypso/core.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace calypso {

struct SynthSpec {
    Index patches = 24;
    Index areas = 4;
    double general_population_min = 20000.0;
    double general_population_max = 100000.0;
    double facility_population_min = 2000.0;
    double facility_population_max = 10000.0;
    /// Upper end of the weekly outflow fraction per patch.
    double mobility = 0.15;
    Index weeks = 120;  // training window T
    Index horizon = 4;  // held-out weeks h
    Index burn_in = 12;
    /// Weeks a case stays in the observed count, drawn uniformly per case.
    Index persistence_min = 2;
    Index persistence_max = 4;
    /// Relative noise of the lagged proxy channels.
    double feature_noise = 0.1;
    /// Infected share of each patch at the start of burn-in.
    double initial_prevalence = 0.005;
    std::uint64_t seed = 0;
    /// Optional region x (burn_in + weeks + horizon) ground-truth parameters.
    std::optional<DiseaseParams> theta_star;

    /// Throws InfeasibleSpec.
    void validate() const;
};

struct SynthResult {
    std::vector<PatchInfo> patches; // in graph order
    FlowMap commute;                // keyed by graph order
    FlowMap facility;
    PatchGraph graph;
    DataSet data;                   // weeks + horizon observed weeks, window = weeks
    Trajectory truth;               // ground truth from week 0 over weeks + horizon
    DiseaseParams theta_star;       // region x (weeks + horizon), aligned with `truth`
    Matrix cases;                   // integer new cases per patch and week
};

SynthResult generate(const SynthSpec& spec);

/// Names of the generated feature channels.
std::vector<std::string> synth_feature_names();

} // namespace calypso
