#include "calypso/eakf.hpp"

#include "calypso/parallel.hpp"
#include "calypso/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace calypso {

namespace {

constexpr double kCollapse = 1e-12;

std::pair<double, double> moments(std::span<const double> xs) {
    const double n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) {
        mean += x;
    }
    mean /= n;
    double var = 0.0;
    for (double x : xs) {
        var += (x - mean) * (x - mean);
    }
    return {mean, var / (n - 1.0)};
}

Index param_slot(Param p, Index region, Index regions) {
    return static_cast<Index>(p) * regions + region;
}

DiseaseParams member_params(const Ensemble& ens, Index m) {
    DiseaseParams out(Level::Region, ens.regions, 1);
    for (Param p : kAllParams) {
        for (Index r = 0; r < ens.regions; ++r) {
            out[p](r, 0) = ens.param(m, p, r);
        }
    }
    return out;
}

void clamp_member(Ensemble& ens, Index m, const PatchGraph& graph, const EakfConfig& config) {
    SirState& s = ens.states[m];
    for (Index p = 0; p < graph.patch_count(); ++p) {
        const double pop = graph.populations()[p];
        s.I[p] = std::clamp(s.I[p], 0.0, pop);
        s.R[p] = std::clamp(s.R[p], 0.0, pop - s.I[p]);
        s.S[p] = pop - s.I[p] - s.R[p];
    }
    for (Param p : kAllParams) {
        for (Index r = 0; r < ens.regions; ++r) {
            double& v = ens.params[m][param_slot(p, r, ens.regions)];
            const auto fixed = config.fixed[static_cast<std::size_t>(p)];
            v = fixed ? *fixed : std::clamp(v, config.bounds.lo(p), config.bounds.hi(p));
        }
    }
}

/// Flattened view of member m's state and free parameters, used for the
/// covariance update. Index layout: S, I, R per patch, then parameters.
struct Layout {
    Index patches = 0;
    Index regions = 0;
    std::vector<Index> free_params;

    Index size() const noexcept { return 3 * patches + free_params.size(); }

    double get(const Ensemble& ens, Index m, Index k) const {
        if (k < 3 * patches) {
            const SirState& s = ens.states[m];
            const Index p = k % patches;
            return k < patches ? s.S[p] : (k < 2 * patches ? s.I[p] : s.R[p]);
        }
        return ens.params[m][free_params[k - 3 * patches]];
    }

    void set(Ensemble& ens, Index m, Index k, double v) const {
        if (k < 3 * patches) {
            SirState& s = ens.states[m];
            const Index p = k % patches;
            (k < patches ? s.S[p] : (k < 2 * patches ? s.I[p] : s.R[p])) = v;
            return;
        }
        ens.params[m][free_params[k - 3 * patches]] = v;
    }
};

Layout make_layout(const Ensemble& ens, Index patches, const EakfConfig& config) {
    Layout l;
    l.patches = patches;
    l.regions = ens.regions;
    for (Param p : kAllParams) {
        if (config.fixed[static_cast<std::size_t>(p)]) {
            continue;
        }
        for (Index r = 0; r < ens.regions; ++r) {
            l.free_params.push_back(param_slot(p, r, ens.regions));
        }
    }
    return l;
}

} // namespace

void EakfConfig::validate() const {
    if (size < 2) {
        throw Error(ErrorCode::InvalidArgument, "ensemble needs at least two members");
    }
    if (!(inflation >= 1.0) || !std::isfinite(inflation)) {
        throw Error(ErrorCode::InvalidArgument, "inflation must be at least 1");
    }
    if (!(obs_floor > 0.0) || !(obs_relative >= 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "observation error settings must be positive");
    }
    if (!(initial_spread >= 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "initial spread must be nonnegative");
    }
    bounds.validate();
}

std::vector<double> eakf_adjust(std::span<const double> prior, double observation, double obs_variance) {
    if (prior.size() < 2) {
        throw Error(ErrorCode::InvalidArgument, "ensemble needs at least two members");
    }
    const auto [mean, var] = moments(prior);
    if (!(var >= kCollapse)) {
        throw Error(ErrorCode::CollapsedEnsemble,
                    fmt::format("prior variance {:.3g} of an observed coordinate collapsed", var));
    }
    std::vector<double> out(prior.begin(), prior.end());
    if (std::isinf(obs_variance)) {
        return out;
    }
    const double post_var = 1.0 / (1.0 / var + 1.0 / obs_variance);
    const double post_mean = post_var * (mean / var + observation / obs_variance);
    const double shrink = std::sqrt(post_var / var);
    for (double& x : out) {
        x = post_mean + shrink * (x - mean);
    }
    return out;
}

double eakf_obs_variance(double observation, const EakfConfig& config) {
    const double sd = std::max(config.obs_floor, config.obs_relative * std::abs(observation));
    return sd * sd;
}

Ensemble initial_ensemble(const PatchGraph& graph, std::span<const double> initial_infections,
                          const EakfConfig& config) {
    config.validate();
    const Index n = graph.patch_count();
    if (initial_infections.size() != n) {
        throw Error(ErrorCode::ShapeMismatch, "initial infections do not cover every patch");
    }
    auto rng = make_rng(config.seed, "eakf.prior");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);
    Ensemble ens;
    ens.regions = graph.region_count();
    ens.inflation = config.inflation;
    ens.states.resize(config.size);
    ens.params.assign(config.size, std::vector<double>(kParamCount * ens.regions));
    for (Index m = 0; m < config.size; ++m) {
        SirState& s = ens.states[m];
        s.S.resize(n);
        s.I.resize(n);
        s.R.assign(n, 0.0);
        for (Index p = 0; p < n; ++p) {
            const double pop = graph.populations()[p];
            s.I[p] = std::min(pop, initial_infections[p] * std::exp(config.initial_spread * z(rng)));
            s.S[p] = pop - s.I[p];
        }
        for (Param p : kAllParams) {
            for (Index r = 0; r < ens.regions; ++r) {
                const auto fixed = config.fixed[static_cast<std::size_t>(p)];
                const double draw = config.bounds.lo(p) + (config.bounds.hi(p) - config.bounds.lo(p)) * unit(rng);
                ens.params[m][param_slot(p, r, ens.regions)] = fixed ? *fixed : draw;
            }
        }
    }
    return ens;
}

Ensemble eakf_forecast(const Ensemble& ens, const PatchGraph& graph) {
    Ensemble out = ens;
    SimConfig sim;
    sim.steps = 1;
    sim.record_new_infections = false;
    parallel_for(ens.size(), [&](Index m) {
        const Trajectory step = simulate_from(graph, member_params(ens, m), ens.states[m], sim);
        out.states[m] = {step.final_S, step.final_I, step.final_R};
    });
    return out;
}

Ensemble eakf_step(const Ensemble& ens, const PatchGraph& graph, std::span<const double> observation,
                   const EakfConfig& config) {
    const Index n = graph.patch_count();
    if (observation.size() != n) {
        throw Error(ErrorCode::ShapeMismatch, "observation does not cover every patch");
    }
    Ensemble out = ens;
    const Index members = ens.size();
    const Layout layout = make_layout(ens, n, config);
    const Index dims = layout.size();

    // collapse is judged on the uninflated prior
    std::vector<double> h(members);
    for (Index p = 0; p < n; ++p) {
        for (Index m = 0; m < members; ++m) {
            h[m] = ens.states[m].I[p];
        }
        if (!(moments(h).second >= kCollapse)) {
            throw Error(ErrorCode::CollapsedEnsemble,
                        fmt::format("ensemble collapsed on patch '{}'", graph.patch_ids()[p]));
        }
    }

    const double spread = std::sqrt(config.inflation);
    std::vector<double> column(members);
    for (Index k = 0; k < dims; ++k) {
        for (Index m = 0; m < members; ++m) {
            column[m] = layout.get(out, m, k);
        }
        const double mean = moments(column).first;
        for (Index m = 0; m < members; ++m) {
            layout.set(out, m, k, mean + spread * (column[m] - mean));
        }
    }

    std::vector<double> dh(members);
    for (Index p = 0; p < n; ++p) {
        const Index obs_k = n + p;
        for (Index m = 0; m < members; ++m) {
            h[m] = layout.get(out, m, obs_k);
        }
        const auto [h_mean, h_var] = moments(h);
        const std::vector<double> post = eakf_adjust(h, observation[p], eakf_obs_variance(observation[p], config));
        for (Index m = 0; m < members; ++m) {
            dh[m] = post[m] - h[m];
        }
        for (Index k = 0; k < dims; ++k) {
            if (k == obs_k) {
                for (Index m = 0; m < members; ++m) {
                    layout.set(out, m, k, post[m]);
                }
                continue;
            }
            double x_mean = 0.0;
            for (Index m = 0; m < members; ++m) {
                column[m] = layout.get(out, m, k);
                x_mean += column[m];
            }
            x_mean /= static_cast<double>(members);
            double cov = 0.0;
            for (Index m = 0; m < members; ++m) {
                cov += (column[m] - x_mean) * (h[m] - h_mean);
            }
            cov /= static_cast<double>(members - 1);
            const double gain = cov / h_var;
            if (gain == 0.0) {
                continue;
            }
            for (Index m = 0; m < members; ++m) {
                layout.set(out, m, k, column[m] + gain * dh[m]);
            }
        }
    }
    for (Index m = 0; m < members; ++m) {
        clamp_member(out, m, graph, config);
    }
    return out;
}

EakfResult run_eakf(const PatchGraph& graph, const DataSet& data, const EakfConfig& config, Index horizon) {
    config.validate();
    data.validate(graph);
    const Index n = graph.patch_count();
    const Index w = data.window;
    const Index regions = graph.region_count();
    Ensemble ens = initial_ensemble(graph, data.initial_infections, config);
    const Index members = ens.size();

    EakfResult out;
    out.filtered_I = Matrix(n, w);
    out.param_mean = DiseaseParams(Level::Region, regions, w);
    out.param_sd = DiseaseParams(Level::Region, regions, w);
    // member parameter paths, column t drives the step from week t to t+1
    std::vector<DiseaseParams> paths(members, DiseaseParams(Level::Region, regions, w + horizon));

    auto record = [&](Index t) {
        for (Index p = 0; p < n; ++p) {
            double mean = 0.0;
            for (Index m = 0; m < members; ++m) {
                mean += ens.states[m].I[p];
            }
            out.filtered_I(p, t) = mean / static_cast<double>(members);
        }
        std::vector<double> values(members);
        for (Param p : kAllParams) {
            for (Index r = 0; r < regions; ++r) {
                for (Index m = 0; m < members; ++m) {
                    values[m] = ens.param(m, p, r);
                    paths[m][p](r, t) = values[m];
                }
                const auto [mean, var] = moments(values);
                out.param_mean[p](r, t) = mean;
                out.param_sd[p](r, t) = std::sqrt(std::max(0.0, var));
            }
        }
    };

    record(0);
    for (Index t = 1; t < w; ++t) {
        ens = eakf_forecast(ens, graph);
        ens = eakf_step(ens, graph, data.observed.column(t), config);
        record(t);
    }
    out.final_ensemble = ens;

    SimConfig sim;
    sim.steps = w + horizon;
    std::vector<Trajectory> runs(members);
    parallel_for(members, [&](Index m) {
        DiseaseParams& path = paths[m];
        for (Param p : kAllParams) {
            for (Index r = 0; r < regions; ++r) {
                for (Index t = w; t < w + horizon; ++t) {
                    path[p](r, t) = path[p](r, w - 1);
                }
            }
        }
        runs[m] = simulate(graph, path, data.initial_infections, sim);
    });
    Trajectory& cal = out.calibrated;
    cal.S = Matrix(n, w + horizon);
    cal.I = Matrix(n, w + horizon);
    cal.R = Matrix(n, w + horizon);
    cal.new_infections = Matrix(n, w + horizon);
    cal.final_S.assign(n, 0.0);
    cal.final_I.assign(n, 0.0);
    cal.final_R.assign(n, 0.0);
    const double inv = 1.0 / static_cast<double>(members);
    for (const auto& run : runs) {
        for (Index i = 0; i < cal.I.data().size(); ++i) {
            cal.S.data()[i] += inv * run.S.data()[i];
            cal.I.data()[i] += inv * run.I.data()[i];
            cal.R.data()[i] += inv * run.R.data()[i];
            cal.new_infections.data()[i] += inv * run.new_infections.data()[i];
        }
        for (Index p = 0; p < n; ++p) {
            cal.final_S[p] += inv * run.final_S[p];
            cal.final_I[p] += inv * run.final_I[p];
            cal.final_R[p] += inv * run.final_R[p];
        }
    }
    return out;
}

std::string eakf_csv(const EakfResult& result, const PatchGraph& graph) {
    std::string out = "week,state_I";
    for (Param p : kAllParams) {
        out += fmt::format(",{0}_mean,{0}_sd", to_string(p));
    }
    out += '\n';
    const Matrix state = aggregate(result.filtered_I, Level::State, graph);
    const Index regions = result.param_mean.units();
    for (Index t = 0; t < result.filtered_I.cols(); ++t) {
        out += fmt::format("{},{:.6g}", t, state(0, t));
        for (Param p : kAllParams) {
            double mean = 0.0;
            double var = 0.0;
            for (Index r = 0; r < regions; ++r) {
                mean += result.param_mean[p](r, t);
                const double sd = result.param_sd[p](r, t);
                var += sd * sd;
            }
            out += fmt::format(",{:.6g},{:.6g}", mean / static_cast<double>(regions),
                               std::sqrt(var / static_cast<double>(regions)));
        }
        out += '\n';
    }
    return out;
}

} // namespace calypso
