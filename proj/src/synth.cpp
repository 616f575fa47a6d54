#include "calypso/synth.hpp"

#include "calypso/rng.hpp"
#include "calypso/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numbers>

namespace calypso {

namespace {

std::string area_name(Index a) {
    static const char* names[] = {"central", "east", "northern", "northwest", "southwest"};
    return a < std::size(names) ? names[a] : fmt::format("area{}", a);
}

void infeasible(const std::string& message) {
    throw Error(ErrorCode::InfeasibleSpec, message);
}

struct Layout {
    std::vector<PatchInfo> patches;
    std::vector<Index> area; // per patch, graph order
};

Layout make_layout(const SynthSpec& spec, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> general_pop(spec.general_population_min, spec.general_population_max);
    std::uniform_real_distribution<double> facility_pop(spec.facility_population_min, spec.facility_population_max);
    std::vector<std::pair<PatchInfo, Index>> raw;
    for (Index k = 0; k < spec.patches; ++k) {
        const bool general = k % 2 == 0;
        const Index idx = k / 2;
        const Index area = idx % spec.areas;
        PatchInfo p;
        p.id = fmt::format("{}{:02}", general ? 'c' : 'h', idx + 1);
        p.region = area_name(area) + (general ? "_gen" : "_hcf");
        p.category = general ? Category::General : Category::NonGeneral;
        p.population = std::round(general ? general_pop(rng) : facility_pop(rng));
        raw.emplace_back(p, area);
    }
    std::sort(raw.begin(), raw.end(), [](const auto& a, const auto& b) { return a.first.id < b.first.id; });
    Layout layout;
    for (auto& [p, a] : raw) {
        layout.patches.push_back(p);
        layout.area.push_back(a);
    }
    return layout;
}

void make_flows(const SynthSpec& spec, const Layout& layout, std::mt19937_64& rng, FlowMap& commute,
                FlowMap& facility) {
    const Index n = layout.patches.size();
    std::uniform_real_distribution<double> jitter(0.5, 1.5);
    std::uniform_real_distribution<double> share(0.2, 1.0);
    for (Index i = 0; i < n; ++i) {
        const bool gen_i = layout.patches[i].category == Category::General;
        std::vector<double> c_w(n, 0.0), f_w(n, 0.0);
        double total = 0.0;
        for (Index j = 0; j < n; ++j) {
            if (i == j) {
                continue;
            }
            const bool gen_j = layout.patches[j].category == Category::General;
            const bool same = layout.area[i] == layout.area[j];
            if (gen_i && gen_j) {
                c_w[j] = (same ? 3.0 : 1.0) * jitter(rng);
            } else if (gen_i) {
                f_w[j] = (same ? 2.0 : 0.3) * jitter(rng);
            } else if (gen_j) {
                f_w[j] = (same ? 2.0 : 0.2) * jitter(rng);
            } else {
                f_w[j] = (same ? 1.0 : 0.3) * jitter(rng);
            }
            total += c_w[j] + f_w[j];
        }
        const double outflow = spec.mobility * share(rng) * layout.patches[i].population;
        for (Index j = 0; j < n; ++j) {
            if (c_w[j] > 0.0) {
                commute[{i, j}] = outflow * c_w[j] / total;
            }
            if (f_w[j] > 0.0) {
                facility[{i, j}] = outflow * f_w[j] / total;
            }
        }
    }
}

DiseaseParams make_theta_star(const PatchGraph& graph, Index steps, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    DiseaseParams theta(Level::Region, graph.region_count(), steps);
    for (Index r = 0; r < graph.region_count(); ++r) {
        const bool facility = graph.regions()[r].ends_with("_hcf");
        const double gamma = between(0.25, 0.40);
        const double delta = between(0.02, 0.06);
        const double kappa = between(0.10, 0.40);
        const double eps = between(0.30, 0.70);
        const double factor = (1.0 - kappa) * (1.0 - eps) + eps;
        // mean reproduction number beta * factor / gamma
        const double r0 = facility ? between(1.25, 1.60) : between(1.15, 1.45);
        const double beta0 = r0 * gamma / factor;
        const double amplitude = between(0.15, 0.30);
        const double phase = between(0.0, 52.0);
        for (Index t = 0; t < steps; ++t) {
            const double season = std::cos(2.0 * std::numbers::pi * (static_cast<double>(t) + phase) / 52.0);
            theta[Param::Beta](r, t) = std::clamp(beta0 * (1.0 + amplitude * season), 0.0, 1.0);
            theta[Param::Gamma](r, t) = gamma;
            theta[Param::Delta](r, t) = delta;
            theta[Param::Kappa](r, t) = kappa;
            theta[Param::Epsilon](r, t) = eps;
        }
    }
    return theta;
}

} // namespace

void SynthSpec::validate() const {
    if (areas == 0 || patches < 2 * areas || patches % 2 != 0) {
        infeasible(fmt::format("{} patches cannot give each of {} areas a general and a facility patch", patches,
                               areas));
    }
    if (!(general_population_min > 0.0) || general_population_max < general_population_min ||
        !(facility_population_min > 0.0) || facility_population_max < facility_population_min) {
        infeasible("population ranges must be positive and ordered");
    }
    if (!(mobility >= 0.0) || !(mobility < 1.0)) {
        infeasible("mobility must lie in [0, 1)");
    }
    if (weeks < 2) {
        infeasible("at least two training weeks are required");
    }
    if (persistence_min < 1 || persistence_max < persistence_min) {
        infeasible("persistence range must satisfy 1 <= min <= max");
    }
    if (!(feature_noise >= 0.0)) {
        infeasible("feature noise must be nonnegative");
    }
    if (!(initial_prevalence > 0.0) || !(initial_prevalence < 1.0)) {
        infeasible("initial prevalence must lie in (0, 1)");
    }
    if (theta_star) {
        const Index steps = burn_in + weeks + horizon;
        if (theta_star->level != Level::Region || theta_star->units() != 2 * areas || theta_star->steps() < steps) {
            infeasible(fmt::format("ground-truth parameters must be {} regions x {} weeks", 2 * areas, steps));
        }
    }
}

std::vector<std::string> synth_feature_names() {
    return {"mrsa", "mssa", "prescriptions", "incidence_per_1000"};
}

SynthResult generate(const SynthSpec& spec) {
    spec.validate();
    auto layout_rng = make_rng(spec.seed, "synth.layout");
    auto flow_rng = make_rng(spec.seed, "synth.flows");
    auto theta_rng = make_rng(spec.seed, "synth.theta");
    auto seed_rng = make_rng(spec.seed, "synth.seed");
    auto case_rng = make_rng(spec.seed, "synth.persistence");
    auto noise_rng = make_rng(spec.seed, "synth.features");

    SynthResult out;
    const Layout layout = make_layout(spec, layout_rng);
    make_flows(spec, layout, flow_rng, out.commute, out.facility);
    std::vector<double> populations;
    std::vector<std::string> ids;
    for (const auto& p : layout.patches) {
        populations.push_back(p.population);
        ids.push_back(p.id);
    }
    out.patches = layout.patches;
    out.graph = PatchGraph(layout.patches, build_travel_matrix(out.commute, out.facility, populations, ids));
    const PatchGraph& graph = out.graph;
    const Index n = graph.patch_count();

    const Index span_weeks = spec.weeks + spec.horizon;
    const Index total = spec.burn_in + span_weeks;
    const DiseaseParams theta = spec.theta_star ? *spec.theta_star : make_theta_star(graph, total, theta_rng);

    std::uniform_real_distribution<double> wobble(0.5, 1.5);
    std::vector<double> start(n);
    for (Index p = 0; p < n; ++p) {
        start[p] = std::min(populations[p], spec.initial_prevalence * populations[p] * wobble(seed_rng));
    }
    SimConfig config;
    config.steps = total;
    const Trajectory full = simulate(graph, theta, start, config);

    Matrix cases(n, total);
    for (Index p = 0; p < n; ++p) {
        for (Index s = 0; s < total; ++s) {
            cases(p, s) = std::max(0.0, std::round(full.new_infections(p, s)));
        }
    }

    // each case stays counted for d ~ U{min..max} weeks starting at its own week
    Matrix counted(n, total);
    std::uniform_int_distribution<Index> persistence(spec.persistence_min, spec.persistence_max);
    for (Index p = 0; p < n; ++p) {
        for (Index s = 0; s < total; ++s) {
            const auto k = static_cast<std::int64_t>(cases(p, s));
            for (std::int64_t c = 0; c < k; ++c) {
                const Index d = persistence(case_rng);
                for (Index u = s; u < std::min(s + d, total); ++u) {
                    counted(p, u) += 1.0;
                }
            }
        }
    }

    DataSet& data = out.data;
    data.feature_names = synth_feature_names();
    data.window = spec.weeks;
    data.horizon = spec.horizon;
    data.observed = Matrix(n, span_weeks);
    for (Index p = 0; p < n; ++p) {
        for (Index t = 0; t < span_weeks; ++t) {
            data.observed(p, t) = std::min(counted(p, spec.burn_in + t), std::floor(populations[p]));
        }
    }

    std::normal_distribution<double> z(0.0, 1.0);
    Matrix mssa(n, span_weeks), prescriptions(n, span_weeks), incidence(n, span_weeks);
    for (Index p = 0; p < n; ++p) {
        for (Index t = 0; t < span_weeks; ++t) {
            const Index s = spec.burn_in + t;
            const double lag1 = cases(p, s >= 1 ? s - 1 : 0);
            const double lag2 = cases(p, s >= 2 ? s - 2 : 0);
            mssa(p, t) = std::max(0.0, 0.6 * lag1 * (1.0 + spec.feature_noise * z(noise_rng)));
            prescriptions(p, t) = std::max(0.0, 3.0 * lag2 * (1.0 + spec.feature_noise * z(noise_rng)));
            incidence(p, t) = 1000.0 * data.observed(p, t) / populations[p];
        }
    }
    data.features = {data.observed, mssa, prescriptions, incidence};
    data.initial_infections = data.observed.column(0);

    out.truth.S = full.S.slice_cols(spec.burn_in, span_weeks);
    out.truth.I = full.I.slice_cols(spec.burn_in, span_weeks);
    out.truth.R = full.R.slice_cols(spec.burn_in, span_weeks);
    out.truth.new_infections = full.new_infections.slice_cols(spec.burn_in, span_weeks);
    out.truth.final_S = full.final_S;
    out.truth.final_I = full.final_I;
    out.truth.final_R = full.final_R;
    out.theta_star = DiseaseParams(Level::Region, graph.region_count(), span_weeks);
    for (std::size_t k = 0; k < kParamCount; ++k) {
        out.theta_star.grids[k] = theta.grids[k].slice_cols(spec.burn_in, span_weeks);
    }
    out.cases = cases.slice_cols(spec.burn_in, span_weeks);
    data.validate(graph);
    return out;
}

} // namespace calypso
