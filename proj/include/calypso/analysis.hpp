#pragma once

// Counterfactual analyses on a calibrated model: regional beta reduction,
// budgeted patch allocation, per-capita sensitivity, outbreak seeding and
// greedy correction of noisy inputs.

#include "calypso/adapter.hpp"
#include "calypso/calib.hpp"
#include "calypso/sim.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace calypso {

/// A frozen model to run scenarios against: parameters over the full
/// simulation span and the starting infections.
struct ScenarioBase {
    PatchGraph graph;
    DiseaseParams params;
    std::vector<double> initial_infections;

    Index steps() const noexcept { return params.steps(); }
    /// FNV-1a over parameters and initial infections.
    std::uint64_t checksum() const;
};

/// Forecast parameters of a trained net over window + horizon.
ScenarioBase scenario_base(const CalibNet& net, const DataSet& data, const PatchGraph& graph, Index horizon);

/// Simulates a scenario: multipliers, seeds and the allocation vector.
/// Allocations need Σ Z <= budget (InvalidArgument otherwise).
Trajectory run_scenario(const ScenarioBase& base, const Scenario& scenario);

struct UnitDelta {
    std::string id;
    double baseline = 0.0;
    double scenario = 0.0;
    double delta = 0.0; // scenario - baseline, never clamped
};

struct ImpactReport {
    double baseline_state = 0.0;
    double scenario_state = 0.0;
    double delta_state = 0.0;
    std::vector<UnitDelta> regions; // graph order
    std::vector<UnitDelta> patches; // graph order
};

/// Cumulative new infections per unit, baseline vs scenario.
ImpactReport compare(const ScenarioBase& base, const Trajectory& baseline, const Trajectory& scenario);

/// Scales beta of one region by `factor` over the whole span. Throws UnknownRegion.
ImpactReport regional_beta_reduction(const ScenarioBase& base, const std::string& region, double factor = 0.9);

struct GreedyResult {
    std::vector<Index> selected;   // patch indices in selection order
    std::vector<double> reduction; // baseline - g(Z) after each addition
    double baseline = 0.0;
    Index evaluations = 0;         // candidate simulations, baseline excluded
};

/// Non-general patches in graph order.
std::vector<Index> healthcare_patches(const PatchGraph& graph);

/// Greedy budgeted allocation maximising the drop in cumulative state
/// infections; ties go to the lowest patch index. Throws EmptyCandidates.
GreedyResult unit_greedy(const ScenarioBase& base, Index budget, std::vector<Index> candidates = {},
                         double factor = 0.9);

/// Exhaustive search over all budget-sized subsets of the candidates.
GreedyResult brute_force_allocation(const ScenarioBase& base, Index budget, std::vector<Index> candidates = {},
                                    double factor = 0.9);

/// Reduction of one allocation.
double allocation_reduction(const ScenarioBase& base, const std::vector<Index>& patches, double factor = 0.9);

/// Mean reduction over `draws` uniformly random allocations of `budget` candidates.
double random_allocation_mean(const ScenarioBase& base, Index budget, Index draws, std::uint64_t seed,
                              std::vector<Index> candidates = {}, double factor = 0.9);

struct SensitivityReport {
    std::vector<std::string> regions;
    std::vector<double> region_population;
    /// ratio(j, i) = ΔI_j / N_j after bumping beta of source region i.
    Matrix impact_ratio;
    /// Receiving regions sorted by their summed ratio over all sources, descending.
    std::vector<Index> ranking;
    double baseline_state = 0.0;
};

/// Throws InvalidArgument unless bump > 1.
SensitivityReport sensitivity_scan(const ScenarioBase& base, double bump = 1.1);

struct OutbreakEntry {
    Index source = 0;
    double delta = 0.0;    // ΔI of the measured target (state total or one patch)
    double fraction = 0.0; // delta / baseline of that target
};

struct OutbreakReport {
    double baseline = 0.0;
    std::vector<OutbreakEntry> ranking;                  // descending delta, ties by index
    std::vector<std::pair<std::string, double>> regions; // summed fraction per source region
};

/// Seeds K infections in each candidate source (default: all patches) and
/// ranks by the increase of cumulative state infections, or of one target
/// patch's infections when `target` is set (sources then exclude the target).
OutbreakReport outbreak_ranking(const ScenarioBase& base, double k, std::vector<Index> sources = {},
                                std::optional<Index> target = std::nullopt);

struct CorrectionConfig {
    std::vector<Index> noisy_patches;
    double noise_sd = 0.2; // in units of each channel's patch-level sd
    Index k = 0;           // corrections to make; 0 means all noisy patches
    Index horizon = 4;
    std::uint64_t seed = 0;
    /// Retrain from `net`'s starting weights for every evaluation instead of
    /// re-evaluating the trained model.
    bool retrain = false;
    TrainConfig train;
};

struct CorrectionResult {
    std::vector<Index> order;     // corrected patches in selection order
    std::vector<double> r2;       // r2[0] all noisy, r2[s] after s corrections
    double clean_r2 = 0.0;
    double noisy_r2 = 0.0;
    Index evaluations = 0;
};

/// Copy of `clean` with additive Gaussian noise on the features of `patches`.
DataSet add_feature_noise(const DataSet& clean, const std::vector<Index>& patches, double sd, std::uint64_t seed);

/// State-level R² of the forecast over window + horizon weeks.
double forecast_state_r2(const CalibNet& net, const DataSet& data, const PatchGraph& graph, Index horizon);

struct ForecastScore {
    Metrics state;                  // state row over window + horizon
    std::optional<Metrics> horizon; // state row over the held-out weeks; empty if flat there
    std::vector<Metrics> regions;   // region rows over window + horizon
};

/// Scores a level stack (see level_stack) against the observed counts over
/// the first window + horizon weeks.
ForecastScore score_forecast(const Matrix& stack, const DataSet& data, const PatchGraph& graph, Index horizon);

/// Greedy order of corrections maximising state R² after each step.
/// Throws KExceedsNoisySet when k > |noisy_patches|.
CorrectionResult greedy_data_correction(const CalibNet& net, const DataSet& clean, const PatchGraph& graph,
                                        const CorrectionConfig& config);

/// R² curve for a given correction order under the same evaluation mode.
std::vector<double> correction_curve(const CalibNet& net, const DataSet& clean, const PatchGraph& graph,
                                     const CorrectionConfig& config, const std::vector<Index>& order);

} // namespace calypso
