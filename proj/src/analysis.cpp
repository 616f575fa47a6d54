#include "calypso/analysis.hpp"

#include "calypso/parallel.hpp"
#include "calypso/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <fmt/format.h>
#include <numeric>

namespace calypso {

namespace {

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<double> patch_totals(const Trajectory& traj) {
    std::vector<double> out(traj.new_infections.rows(), 0.0);
    for (Index p = 0; p < out.size(); ++p) {
        out[p] = num::sum(traj.new_infections.row(p));
    }
    return out;
}

double state_total(const Trajectory& traj) {
    return cumulative_infections(traj);
}

std::vector<Index> resolve_candidates(const ScenarioBase& base, std::vector<Index> candidates) {
    if (candidates.empty()) {
        candidates = healthcare_patches(base.graph);
    }
    if (candidates.empty()) {
        throw Error(ErrorCode::EmptyCandidates, "no candidate patches to allocate");
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    for (Index c : candidates) {
        if (c >= base.graph.patch_count()) {
            throw Error(ErrorCode::UnknownTarget, fmt::format("candidate patch index {} out of range", c));
        }
    }
    return candidates;
}

Scenario allocation_scenario(const ScenarioBase& base, const std::vector<Index>& patches, double factor) {
    Scenario s;
    s.allocation.assign(base.graph.patch_count(), 0);
    for (Index p : patches) {
        s.allocation[p] = 1;
    }
    s.budget = patches.size();
    s.allocation_factor = factor;
    return s;
}

Matrix state_series(const Matrix& patch_series, const PatchGraph& graph) {
    return aggregate(patch_series, Level::State, graph);
}

} // namespace

std::uint64_t ScenarioBase::checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& g : params.grids) {
        h = fnv1a(h, g.data().data(), g.data().size() * sizeof(double));
    }
    return fnv1a(h, initial_infections.data(), initial_infections.size() * sizeof(double));
}

ScenarioBase scenario_base(const CalibNet& net, const DataSet& data, const PatchGraph& graph, Index horizon) {
    ScenarioBase base;
    base.graph = graph;
    base.params = forecast_params(net, data, graph, horizon);
    base.initial_infections = data.initial_infections;
    return base;
}

Trajectory run_scenario(const ScenarioBase& base, const Scenario& scenario) {
    const PatchGraph& graph = base.graph;
    bool patch_level = base.params.level == Level::Patch || !scenario.allocation.empty();
    for (const auto& m : scenario.beta_multipliers) {
        patch_level = patch_level || m.kind == TargetKind::Patch;
    }
    DiseaseParams params = patch_level && base.params.level == Level::Region
                               ? broadcast_to_patches(base.params, graph)
                               : base.params;
    params = apply_scenario(params, graph, scenario);
    if (!scenario.allocation.empty()) {
        if (scenario.allocation.size() != graph.patch_count()) {
            throw Error(ErrorCode::ShapeMismatch, "allocation vector does not cover every patch");
        }
        const auto used = static_cast<Index>(std::count(scenario.allocation.begin(), scenario.allocation.end(), 1));
        if (used > scenario.budget) {
            throw Error(ErrorCode::InvalidArgument,
                        fmt::format("allocation uses {} patches, budget is {}", used, scenario.budget));
        }
        if (!(scenario.allocation_factor > 0.0)) {
            throw Error(ErrorCode::InvalidArgument, "allocation multiplier must be positive");
        }
        for (Index p = 0; p < graph.patch_count(); ++p) {
            if (scenario.allocation[p] != 0) {
                for (Index t = 0; t < params.steps(); ++t) {
                    params.beta()(p, t) *= scenario.allocation_factor;
                }
            }
        }
    }
    const std::vector<double> init = apply_seeds(base.initial_infections, graph, scenario);
    SimConfig config;
    config.steps = base.steps();
    return simulate(graph, params, init, config);
}

ImpactReport compare(const ScenarioBase& base, const Trajectory& baseline, const Trajectory& scenario) {
    const PatchGraph& graph = base.graph;
    const auto before = patch_totals(baseline);
    const auto after = patch_totals(scenario);
    ImpactReport report;
    report.baseline_state = state_total(baseline);
    report.scenario_state = state_total(scenario);
    report.delta_state = report.scenario_state - report.baseline_state;
    for (Index p = 0; p < graph.patch_count(); ++p) {
        report.patches.push_back({graph.patch_ids()[p], before[p], after[p], after[p] - before[p]});
    }
    for (Index r = 0; r < graph.region_count(); ++r) {
        UnitDelta d{graph.regions()[r], 0.0, 0.0, 0.0};
        for (Index p : graph.members(r)) {
            d.baseline += before[p];
            d.scenario += after[p];
        }
        d.delta = d.scenario - d.baseline;
        report.regions.push_back(d);
    }
    return report;
}

ImpactReport regional_beta_reduction(const ScenarioBase& base, const std::string& region, double factor) {
    if (!base.graph.find_region(region)) {
        throw Error(ErrorCode::UnknownRegion, fmt::format("unknown region '{}'", region));
    }
    if (!(factor > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "beta multiplier must be positive");
    }
    Scenario s;
    s.beta_multipliers.push_back({TargetKind::Region, region, factor, 0, std::nullopt});
    return compare(base, run_scenario(base, {}), run_scenario(base, s));
}

std::vector<Index> healthcare_patches(const PatchGraph& graph) {
    std::vector<Index> out;
    for (Index p = 0; p < graph.patch_count(); ++p) {
        if (graph.categories()[p] == Category::NonGeneral) {
            out.push_back(p);
        }
    }
    return out;
}

double allocation_reduction(const ScenarioBase& base, const std::vector<Index>& patches, double factor) {
    const double baseline = state_total(run_scenario(base, {}));
    return baseline - state_total(run_scenario(base, allocation_scenario(base, patches, factor)));
}

GreedyResult unit_greedy(const ScenarioBase& base, Index budget, std::vector<Index> candidates, double factor) {
    candidates = resolve_candidates(base, std::move(candidates));
    if (budget == 0 || budget > candidates.size()) {
        throw Error(ErrorCode::InvalidArgument,
                    fmt::format("budget {} must lie in [1, {}]", budget, candidates.size()));
    }
    GreedyResult result;
    result.baseline = state_total(run_scenario(base, {}));
    std::vector<Index> chosen;
    std::vector<Index> remaining = candidates;
    for (Index b = 0; b < budget; ++b) {
        std::vector<double> value(remaining.size());
        parallel_for(remaining.size(), [&](Index i) {
            std::vector<Index> trial = chosen;
            trial.push_back(remaining[i]);
            value[i] = state_total(run_scenario(base, allocation_scenario(base, trial, factor)));
        });
        result.evaluations += remaining.size();
        Index best = 0;
        for (Index i = 1; i < remaining.size(); ++i) {
            if (value[i] < value[best]) {
                best = i;
            }
        }
        chosen.push_back(remaining[best]);
        result.selected.push_back(remaining[best]);
        result.reduction.push_back(result.baseline - value[best]);
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
    }
    return result;
}

GreedyResult brute_force_allocation(const ScenarioBase& base, Index budget, std::vector<Index> candidates,
                                    double factor) {
    candidates = resolve_candidates(base, std::move(candidates));
    const Index n = candidates.size();
    if (budget == 0 || budget > n) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("budget {} must lie in [1, {}]", budget, n));
    }
    std::vector<std::vector<Index>> subsets;
    std::vector<Index> idx(budget);
    std::iota(idx.begin(), idx.end(), 0);
    while (true) {
        std::vector<Index> s;
        for (Index i : idx) {
            s.push_back(candidates[i]);
        }
        subsets.push_back(std::move(s));
        Index pos = budget;
        while (pos > 0 && idx[pos - 1] == n - budget + pos - 1) {
            --pos;
        }
        if (pos == 0) {
            break;
        }
        ++idx[pos - 1];
        for (Index j = pos; j < budget; ++j) {
            idx[j] = idx[j - 1] + 1;
        }
    }
    GreedyResult result;
    result.baseline = state_total(run_scenario(base, {}));
    std::vector<double> value(subsets.size());
    parallel_for(subsets.size(), [&](Index i) {
        value[i] = state_total(run_scenario(base, allocation_scenario(base, subsets[i], factor)));
    });
    result.evaluations = subsets.size();
    Index best = 0;
    for (Index i = 1; i < subsets.size(); ++i) {
        if (value[i] < value[best]) {
            best = i;
        }
    }
    result.selected = subsets[best];
    std::vector<Index> prefix;
    for (Index p : result.selected) {
        prefix.push_back(p);
        result.reduction.push_back(
            prefix.size() == budget
                ? result.baseline - value[best]
                : result.baseline - state_total(run_scenario(base, allocation_scenario(base, prefix, factor))));
    }
    return result;
}

double random_allocation_mean(const ScenarioBase& base, Index budget, Index draws, std::uint64_t seed,
                              std::vector<Index> candidates, double factor) {
    candidates = resolve_candidates(base, std::move(candidates));
    if (budget == 0 || budget > candidates.size() || draws == 0) {
        throw Error(ErrorCode::InvalidArgument, "random allocation needs 1 <= budget <= candidates and draws > 0");
    }
    auto rng = make_rng(seed, "analysis.random_allocation");
    std::vector<std::vector<Index>> picks;
    for (Index d = 0; d < draws; ++d) {
        std::vector<Index> pool = candidates;
        std::shuffle(pool.begin(), pool.end(), rng);
        pool.resize(budget);
        picks.push_back(std::move(pool));
    }
    const double baseline = state_total(run_scenario(base, {}));
    std::vector<double> value(draws);
    parallel_for(draws, [&](Index d) {
        value[d] = baseline - state_total(run_scenario(base, allocation_scenario(base, picks[d], factor)));
    });
    return std::accumulate(value.begin(), value.end(), 0.0) / static_cast<double>(draws);
}

SensitivityReport sensitivity_scan(const ScenarioBase& base, double bump) {
    if (!(bump > 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "sensitivity bump must exceed 1");
    }
    const PatchGraph& graph = base.graph;
    const Index regions = graph.region_count();
    SensitivityReport report;
    report.regions = graph.regions();
    report.region_population.assign(regions, 0.0);
    for (Index r = 0; r < regions; ++r) {
        for (Index p : graph.members(r)) {
            report.region_population[r] += graph.populations()[p];
        }
    }
    const Trajectory baseline = run_scenario(base, {});
    report.baseline_state = state_total(baseline);
    report.impact_ratio = Matrix(regions, regions);
    parallel_for(regions, [&](Index i) {
        Scenario s;
        s.beta_multipliers.push_back({TargetKind::Region, graph.regions()[i], bump, 0, std::nullopt});
        const ImpactReport impact = compare(base, baseline, run_scenario(base, s));
        for (Index j = 0; j < regions; ++j) {
            report.impact_ratio(j, i) = impact.regions[j].delta / report.region_population[j];
        }
    });
    std::vector<double> total(regions, 0.0);
    for (Index j = 0; j < regions; ++j) {
        total[j] = num::sum(report.impact_ratio.row(j));
    }
    report.ranking.resize(regions);
    std::iota(report.ranking.begin(), report.ranking.end(), 0);
    std::stable_sort(report.ranking.begin(), report.ranking.end(),
                     [&](Index a, Index b) { return total[a] > total[b]; });
    return report;
}

OutbreakReport outbreak_ranking(const ScenarioBase& base, double k, std::vector<Index> sources,
                                std::optional<Index> target) {
    const PatchGraph& graph = base.graph;
    const Index n = graph.patch_count();
    if (!(k >= 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "outbreak size must be nonnegative");
    }
    if (target && *target >= n) {
        throw Error(ErrorCode::UnknownTarget, fmt::format("target patch index {} out of range", *target));
    }
    if (sources.empty()) {
        sources.resize(n);
        std::iota(sources.begin(), sources.end(), 0);
    }
    if (target) {
        std::erase(sources, *target);
    }
    std::sort(sources.begin(), sources.end());
    sources.erase(std::unique(sources.begin(), sources.end()), sources.end());
    if (sources.empty()) {
        throw Error(ErrorCode::EmptyCandidates, "no outbreak sources");
    }
    for (Index s : sources) {
        if (s >= n) {
            throw Error(ErrorCode::UnknownTarget, fmt::format("source patch index {} out of range", s));
        }
        if (base.initial_infections[s] + k > graph.populations()[s]) {
            throw Error(ErrorCode::SeedExceedsPopulation,
                        fmt::format("seeding {} infections in '{}' exceeds its population", k, graph.patch_ids()[s]));
        }
    }
    auto measure = [&](const Trajectory& traj) {
        return target ? num::sum(traj.new_infections.row(*target)) : state_total(traj);
    };
    OutbreakReport report;
    report.baseline = measure(run_scenario(base, {}));
    std::vector<double> delta(sources.size());
    parallel_for(sources.size(), [&](Index i) {
        Scenario s;
        s.seeds.emplace_back(graph.patch_ids()[sources[i]], k);
        delta[i] = measure(run_scenario(base, s)) - report.baseline;
    });
    for (Index i = 0; i < sources.size(); ++i) {
        const double fraction = report.baseline != 0.0 ? delta[i] / report.baseline : 0.0;
        report.ranking.push_back({sources[i], delta[i], fraction});
    }
    std::stable_sort(report.ranking.begin(), report.ranking.end(),
                     [](const OutbreakEntry& a, const OutbreakEntry& b) { return a.delta > b.delta; });
    std::vector<double> by_region(graph.region_count(), 0.0);
    for (const auto& e : report.ranking) {
        by_region[graph.region_of(e.source)] += e.fraction;
    }
    for (Index r = 0; r < graph.region_count(); ++r) {
        report.regions.emplace_back(graph.regions()[r], by_region[r]);
    }
    return report;
}

DataSet add_feature_noise(const DataSet& clean, const std::vector<Index>& patches, double sd, std::uint64_t seed) {
    if (!(sd >= 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "noise sd must be nonnegative");
    }
    DataSet noisy = clean;
    if (sd == 0.0) {
        return noisy;
    }
    std::vector<Index> sorted = patches;
    std::sort(sorted.begin(), sorted.end());
    auto rng = make_rng(seed, "analysis.feature_noise");
    std::normal_distribution<double> z(0.0, 1.0);
    for (Index c = 0; c < clean.channels(); ++c) {
        const Matrix& f = clean.features[c];
        double mean = 0.0;
        double count = 0.0;
        for (Index p = 0; p < f.rows(); ++p) {
            for (Index t = 0; t < clean.window; ++t) {
                mean += f(p, t);
                count += 1.0;
            }
        }
        mean /= count;
        double var = 0.0;
        for (Index p = 0; p < f.rows(); ++p) {
            for (Index t = 0; t < clean.window; ++t) {
                var += (f(p, t) - mean) * (f(p, t) - mean);
            }
        }
        const double channel_sd = std::sqrt(var / count);
        for (Index p : sorted) {
            if (p >= f.rows()) {
                throw Error(ErrorCode::UnknownTarget, fmt::format("noisy patch index {} out of range", p));
            }
            for (Index t = 0; t < f.cols(); ++t) {
                noisy.features[c](p, t) += sd * channel_sd * z(rng);
            }
        }
    }
    return noisy;
}

double forecast_state_r2(const CalibNet& net, const DataSet& data, const PatchGraph& graph, Index horizon) {
    if (data.observed.cols() < data.window + horizon) {
        throw Error(ErrorCode::WindowMismatch,
                    fmt::format("observations cover {} weeks, forecast needs {}", data.observed.cols(),
                                data.window + horizon));
    }
    const Trajectory traj = forecast(net, data, graph, horizon);
    const Matrix pred = state_series(traj.I, graph);
    const Matrix truth = state_series(data.observed.slice_cols(0, data.window + horizon), graph);
    return metrics(pred.row(0), truth.row(0)).r2;
}

ForecastScore score_forecast(const Matrix& stack, const DataSet& data, const PatchGraph& graph, Index horizon) {
    const Index weeks = data.window + horizon;
    if (data.observed.cols() < weeks || stack.cols() < weeks) {
        throw Error(ErrorCode::WindowMismatch, fmt::format("scoring needs {} weeks", weeks));
    }
    if (stack.rows() != state_row(graph) + 1) {
        throw Error(ErrorCode::ShapeMismatch, "prediction is not a level stack of this graph");
    }
    const Matrix truth = level_stack(data.observed.slice_cols(0, weeks), graph);
    const Matrix pred = stack.slice_cols(0, weeks);
    const Index s = state_row(graph);
    ForecastScore score;
    score.state = metrics(pred.row(s), truth.row(s));
    if (horizon >= 2) {
        const auto p = pred.row(s).subspan(data.window, horizon);
        const auto t = truth.row(s).subspan(data.window, horizon);
        if (std::adjacent_find(t.begin(), t.end(), std::not_equal_to<>()) != t.end()) {
            score.horizon = metrics(p, t);
        }
    }
    for (Index r = 0; r < graph.region_count(); ++r) {
        score.regions.push_back(metrics(pred.row(graph.patch_count() + r), truth.row(graph.patch_count() + r)));
    }
    return score;
}

namespace {

struct CorrectionEvaluator {
    const CalibNet& net;
    const DataSet& clean;
    const PatchGraph& graph;
    const CorrectionConfig& config;
    DataSet noisy;

    DataSet corrected(const std::vector<Index>& fixed) const {
        DataSet out = noisy;
        for (Index p : fixed) {
            for (Index c = 0; c < clean.channels(); ++c) {
                const auto src = clean.features[c].row(p);
                auto dst = out.features[c].row(p);
                std::copy(src.begin(), src.end(), dst.begin());
            }
        }
        return out;
    }

    double evaluate(const DataSet& data) const {
        if (config.retrain) {
            const TrainResult trained = train_joint(net, data, graph, config.train);
            return forecast_state_r2(trained.net, data, graph, config.horizon);
        }
        return forecast_state_r2(net, data, graph, config.horizon);
    }
};

void check_correction(const CorrectionConfig& config, const PatchGraph& graph) {
    if (config.k > config.noisy_patches.size()) {
        throw Error(ErrorCode::KExceedsNoisySet, fmt::format("k = {} exceeds the {} noisy patches", config.k,
                                                             config.noisy_patches.size()));
    }
    for (Index p : config.noisy_patches) {
        if (p >= graph.patch_count()) {
            throw Error(ErrorCode::UnknownTarget, fmt::format("noisy patch index {} out of range", p));
        }
    }
}

} // namespace

CorrectionResult greedy_data_correction(const CalibNet& net, const DataSet& clean, const PatchGraph& graph,
                                        const CorrectionConfig& config) {
    check_correction(config, graph);
    CorrectionEvaluator eval{net, clean, graph, config,
                             add_feature_noise(clean, config.noisy_patches, config.noise_sd, config.seed)};
    const Index k = config.k == 0 ? config.noisy_patches.size() : config.k;
    CorrectionResult result;
    result.clean_r2 = eval.evaluate(clean);
    result.noisy_r2 = eval.evaluate(eval.noisy);
    result.r2.push_back(result.noisy_r2);
    std::vector<Index> remaining = config.noisy_patches;
    std::sort(remaining.begin(), remaining.end());
    remaining.erase(std::unique(remaining.begin(), remaining.end()), remaining.end());
    std::vector<Index> fixed;
    for (Index step = 0; step < k; ++step) {
        std::vector<double> value(remaining.size());
        parallel_for(remaining.size(), [&](Index i) {
            std::vector<Index> trial = fixed;
            trial.push_back(remaining[i]);
            value[i] = eval.evaluate(eval.corrected(trial));
        });
        result.evaluations += remaining.size();
        Index best = 0;
        for (Index i = 1; i < remaining.size(); ++i) {
            if (value[i] > value[best]) {
                best = i;
            }
        }
        fixed.push_back(remaining[best]);
        result.order.push_back(remaining[best]);
        result.r2.push_back(value[best]);
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
    }
    return result;
}

std::vector<double> correction_curve(const CalibNet& net, const DataSet& clean, const PatchGraph& graph,
                                     const CorrectionConfig& config, const std::vector<Index>& order) {
    check_correction(config, graph);
    CorrectionEvaluator eval{net, clean, graph, config,
                             add_feature_noise(clean, config.noisy_patches, config.noise_sd, config.seed)};
    std::vector<double> curve(order.size() + 1);
    parallel_for(order.size() + 1, [&](Index s) {
        const std::vector<Index> prefix(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(s));
        curve[s] = eval.evaluate(eval.corrected(prefix));
    });
    return curve;
}

} // namespace calypso
