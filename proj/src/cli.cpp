#include "calypso/cli.hpp"

#include "calypso/adapter.hpp"
#include "calypso/analysis.hpp"
#include "calypso/calib.hpp"
#include "calypso/eakf.hpp"
#include "calypso/io.hpp"
#include "calypso/parallel.hpp"
#include "calypso/rng.hpp"
#include "calypso/sim.hpp"
#include "calypso/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fmt/format.h>
#include <iostream>
#include <random>

#ifndef CALYPSO_GIT_DESCRIBE
#define CALYPSO_GIT_DESCRIBE "unknown"
#endif

namespace calypso::cli {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

struct Options {
    std::string config;
    std::string data;
    std::string out;
    std::uint64_t seed = 0;
    Index horizon = 4;
    std::string checkpoint;

    // synth
    SynthSpec synth;

    // simulate
    std::string params;
    double beta = 0.3;
    double gamma = 0.2;
    double delta = 0.02;
    double kappa = 0.0;
    double epsilon = 1.0;
    Index weeks = 0;

    // calibrate
    TrainConfig train;
    Index hidden = 16;
    Index decoder_hidden = 16;
    bool no_region_identity = false;

    // adapter
    AdapterTrainConfig adapter_train;
    AdapterDataConfig adapter_data;
    AdapterConfig adapter_arch;
    bool no_decay = false;
    std::string adapter;

    // eakf
    EakfConfig eakf;
    std::array<double, kParamCount> fixed{};
    std::array<CLI::Option*, kParamCount> fixed_opt{};

    // analyses
    std::string region;
    double factor = 0.9;
    Index budget = 5;
    std::vector<std::string> candidates;
    bool brute_force = false;
    Index random_draws = 0;
    double bump = 1.1;
    double k = 10.0;
    std::string target;
    std::vector<std::string> sources;
    std::vector<std::string> noisy;
    double noise_sd = 0.2;
    Index corrections = 0;
    bool retrain = false;
    Index random_orders = 10;
    Index retrain_epochs = 2000;

    // metrics
    std::string pred;
    std::string truth;
    std::string level = "state";
    Index from = 0;
    Index to = 0;
};

struct Context {
    std::string subcommand;
    CLI::App* app = nullptr;
    std::string out;
    std::vector<std::string> outputs;

    std::string path(const std::string& name) const { return (fs::path(out) / name).string(); }

    void write(const std::string& name, std::string_view text) {
        write_text(path(name), text);
        outputs.push_back(name);
    }

    void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }
};

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        out += (i ? std::string(sep) : std::string()) + parts[i];
    }
    return out;
}

std::string default_path(const Options& o, const std::string& explicit_path, const std::string& name) {
    return explicit_path.empty() ? (fs::path(o.data) / name).string() : explicit_path;
}

json metrics_json(const Metrics& m) {
    return {{"r2", m.r2}, {"mse", m.mse}, {"mae", m.mae}, {"rmse", m.rmse}};
}

json score_json(const ForecastScore& s, const PatchGraph& graph) {
    json regions = json::object();
    for (Index r = 0; r < graph.region_count(); ++r) {
        regions[graph.regions()[r]] = metrics_json(s.regions[r]);
    }
    return {{"state", metrics_json(s.state)},
            {"horizon_state", s.horizon ? metrics_json(*s.horizon) : json(nullptr)},
            {"regions", regions}};
}

std::string unit_name(const PatchGraph& graph, Index row) {
    if (row < graph.patch_count()) {
        return graph.patch_ids()[row];
    }
    if (row < state_row(graph)) {
        return graph.regions()[row - graph.patch_count()];
    }
    return "state";
}

std::string_view level_name(const PatchGraph& graph, Index row) {
    return row < graph.patch_count() ? "patch" : row < state_row(graph) ? "region" : "state";
}

/// level,unit,week,<series...>,observed for a set of level stacks.
std::string stack_csv(const PatchGraph& graph, const std::vector<std::pair<std::string, const Matrix*>>& series,
                      const Matrix& observed_stack) {
    std::string out = "level,unit,week";
    for (const auto& [name, m] : series) {
        out += "," + name;
    }
    out += ",observed\n";
    const Matrix& first = *series.front().second;
    for (Index row = 0; row < first.rows(); ++row) {
        for (Index t = 0; t < first.cols(); ++t) {
            out += fmt::format("{},{},{}", level_name(graph, row), unit_name(graph, row), t);
            for (const auto& [name, m] : series) {
                out += "," + format_number((*m)(row, t));
            }
            out += "," + (t < observed_stack.cols() ? format_number(observed_stack(row, t)) : std::string());
            out += "\n";
        }
    }
    return out;
}

std::vector<Index> patch_indices(const PatchGraph& graph, const std::vector<std::string>& ids) {
    std::vector<Index> out;
    for (const auto& id : ids) {
        out.push_back(graph.patch_index(id));
    }
    return out;
}

std::vector<std::string> patch_names(const PatchGraph& graph, const std::vector<Index>& idx) {
    std::vector<std::string> out;
    for (Index p : idx) {
        out.push_back(graph.patch_ids()[p]);
    }
    return out;
}

std::string impact_csv(const ImpactReport& report) {
    std::string out = "level,unit,baseline,scenario,delta\n";
    out += fmt::format("state,state,{},{},{}\n", format_number(report.baseline_state),
                       format_number(report.scenario_state), format_number(report.delta_state));
    for (const auto& [name, rows] : {std::pair{"region", &report.regions}, std::pair{"patch", &report.patches}}) {
        for (const auto& d : *rows) {
            out += fmt::format("{},{},{},{},{}\n", name, d.id, format_number(d.baseline), format_number(d.scenario),
                               format_number(d.delta));
        }
    }
    return out;
}

json impact_json(const ImpactReport& report) {
    json regions = json::array();
    for (const auto& d : report.regions) {
        regions.push_back({{"region", d.id}, {"baseline", d.baseline}, {"scenario", d.scenario}, {"delta", d.delta}});
    }
    json patches = json::array();
    for (const auto& d : report.patches) {
        patches.push_back({{"patch", d.id}, {"baseline", d.baseline}, {"scenario", d.scenario}, {"delta", d.delta}});
    }
    return {{"baseline_state", report.baseline_state},
            {"scenario_state", report.scenario_state},
            {"delta_state", report.delta_state},
            {"regions", regions},
            {"patches", patches}};
}

struct Model {
    Inputs in;
    CalibNet net;
};

Model load_model(const Options& o) {
    Model m{load_inputs(o.data, o.horizon), load_checkpoint(default_path(o, o.checkpoint, "checkpoint.json"))};
    return m;
}

// ---------------------------------------------------------------- subcommands

void cmd_synth(const Options& o, Context& ctx) {
    SynthSpec spec = o.synth;
    spec.seed = o.seed;
    spec.horizon = o.horizon;
    const SynthResult synth = generate(spec);
    write_synth(ctx.out, synth);
    for (const char* name : {"patches.csv", "travel.csv", "cases.csv", "features.csv", "ground_truth.csv"}) {
        ctx.outputs.emplace_back(name);
    }
    fmt::print("synth: {} patches, {} regions, {} weeks + {} held out -> {}\n", synth.graph.patch_count(),
               synth.graph.region_count(), spec.weeks, spec.horizon, ctx.out);
}

void cmd_simulate(const Options& o, Context& ctx) {
    const fs::path root(o.data);
    const PatchGraph graph =
        read_graph((root / "patches.csv").string(), (root / "travel.csv").string()).graph;
    const Matrix cases = read_cases((root / "cases.csv").string(), graph);
    DiseaseParams params;
    if (!o.params.empty()) {
        params = read_params(o.params, graph);
    } else {
        const Index weeks = o.weeks ? o.weeks : cases.cols();
        params = DiseaseParams(Level::Region, graph.region_count(), weeks);
        const std::array<double, kParamCount> values = {o.beta, o.gamma, o.delta, o.kappa, o.epsilon};
        for (Param k : kAllParams) {
            for (double& v : params[k].data()) {
                v = values[static_cast<Index>(k)];
            }
        }
    }
    SimConfig config;
    config.steps = o.weeks ? o.weeks : params.steps();
    const Trajectory traj = simulate(graph, params, cases.column(0), config);
    ctx.write("trajectory.csv", trajectory_csv(traj, graph));
    const Matrix state_I = aggregate(traj.I, Level::State, graph);
    std::string state = "week,S,I,R,new_infections\n";
    const Matrix S = aggregate(traj.S, Level::State, graph);
    const Matrix R = aggregate(traj.R, Level::State, graph);
    const Matrix N = aggregate(traj.new_infections, Level::State, graph);
    Index peak = 0;
    for (Index t = 0; t < traj.steps(); ++t) {
        state += fmt::format("{},{},{},{},{}\n", t, format_number(S(0, t)), format_number(state_I(0, t)),
                             format_number(R(0, t)), format_number(N(0, t)));
        if (state_I(0, t) > state_I(0, peak)) {
            peak = t;
        }
    }
    ctx.write("state.csv", state);
    const double total = cumulative_infections(traj);
    ctx.write_json("summary.json", {{"steps", config.steps},
                                    {"cumulative_new_infections", total},
                                    {"peak_week", peak},
                                    {"peak_state_I", state_I(0, peak)}});
    fmt::print("simulate: {} weeks, cumulative new infections {}\n", config.steps, format_number(total));
}

void cmd_calibrate(const Options& o, Context& ctx) {
    const Inputs in = load_inputs(o.data, o.horizon);
    CalibNetConfig arch;
    arch.hidden = o.hidden;
    arch.decoder_hidden = o.decoder_hidden;
    arch.regions = o.no_region_identity ? 0 : in.graph.region_count();
    CalibNet net(in.data.channels(), arch);
    net.init(o.seed);
    TrainConfig config = o.train;
    config.seed = o.seed;
    const TrainResult result = train_joint(net, in.data, in.graph, config);
    ctx.write("checkpoint.json", checkpoint_json(result, config));
    std::string history = "epoch,loss,patch_loss,region_loss,state_loss,state_r2,learning_rate,grad_norm\n";
    for (const auto& e : result.history) {
        history += fmt::format("{},{},{},{},{},{},{},{}\n", e.epoch, format_number(e.loss),
                               format_number(e.parts.patch), format_number(e.parts.region),
                               format_number(e.parts.state), format_number(e.state_r2),
                               format_number(e.learning_rate), format_number(e.grad_norm));
    }
    ctx.write("loss_history.csv", history);
    ctx.write("params.csv", params_csv(forecast_params(result.net, in.data, in.graph, o.horizon), in.graph));
    const Trajectory traj = forecast(result.net, in.data, in.graph, o.horizon);
    const ForecastScore score = score_forecast(level_stack(traj.I, in.graph), in.data, in.graph, o.horizon);
    ctx.write_json("calibrate_metrics.json", {{"best_epoch", result.best_loss.epoch},
                                              {"best_loss", result.best_loss.loss},
                                              {"forecast", score_json(score, in.graph)}});
    fmt::print("calibrate: best epoch {} loss {} state R2 {:.4f}\n", result.best_loss.epoch,
               format_number(result.best_loss.loss), score.state.r2);
}

void cmd_adapter(const Options& o, Context& ctx) {
    const Model m = load_model(o);
    AdapterTrainConfig config = o.adapter_train;
    config.seed = o.seed;
    config.decay_teacher_forcing = !o.no_decay;
    AdapterDataConfig data_config = o.adapter_data;
    data_config.horizon = o.horizon;
    const AdapterTrainResult result = fit_adapter(m.net, m.in.data, m.in.graph, data_config, config, o.adapter_arch);
    ctx.write("adapter.json", adapter_checkpoint_json(result, config));
    std::string history = "epoch,loss\n";
    for (Index e = 0; e < result.history.size(); ++e) {
        history += fmt::format("{},{}\n", e, format_number(result.history[e]));
    }
    ctx.write("adapter_history.csv", history);
    const RefinedForecast fc = refined_forecast(m.net, result.net, m.in.data, m.in.graph, o.horizon);
    const Matrix observed = level_stack(m.in.data.observed, m.in.graph);
    ctx.write("adapter_forecast.csv", stack_csv(m.in.graph, {{"raw", &fc.raw}, {"corrected", &fc.corrected}}, observed));
    const ForecastScore raw = score_forecast(fc.raw, m.in.data, m.in.graph, o.horizon);
    const ForecastScore corrected = score_forecast(fc.corrected, m.in.data, m.in.graph, o.horizon);
    ctx.write_json("adapter_metrics.json", {{"best_epoch", result.best_epoch},
                                            {"initial_loss", result.initial_loss},
                                            {"best_loss", result.best_loss},
                                            {"raw", score_json(raw, m.in.graph)},
                                            {"corrected", score_json(corrected, m.in.graph)}});
    fmt::print("adapter: best epoch {} loss {} -> {}; state MSE raw {} corrected {}\n", result.best_epoch,
               format_number(result.initial_loss), format_number(result.best_loss), format_number(raw.state.mse),
               format_number(corrected.state.mse));
}

void cmd_forecast(const Options& o, Context& ctx) {
    const Model m = load_model(o);
    const Trajectory traj = forecast(m.net, m.in.data, m.in.graph, o.horizon);
    ctx.write("forecast.csv", cases_csv(traj.I, m.in.graph));
    ctx.write("forecast_params.csv",
              params_csv(forecast_params(m.net, m.in.data, m.in.graph, o.horizon), m.in.graph));
    const Matrix observed = level_stack(m.in.data.observed, m.in.graph);
    const Matrix raw = level_stack(traj.I, m.in.graph);
    json report = {{"raw", score_json(score_forecast(raw, m.in.data, m.in.graph, o.horizon), m.in.graph)}};
    if (!o.adapter.empty()) {
        const AdapterNet adapter = load_adapter_checkpoint(o.adapter);
        const RefinedForecast fc = refined_forecast(m.net, adapter, m.in.data, m.in.graph, o.horizon);
        ctx.write("forecast_levels.csv",
                  stack_csv(m.in.graph, {{"raw", &fc.raw}, {"corrected", &fc.corrected}}, observed));
        report["corrected"] = score_json(score_forecast(fc.corrected, m.in.data, m.in.graph, o.horizon), m.in.graph);
    } else {
        ctx.write("forecast_levels.csv", stack_csv(m.in.graph, {{"raw", &raw}}, observed));
    }
    ctx.write_json("forecast_metrics.json", report);
    fmt::print("forecast: {} weeks, state R2 {:.4f}\n", traj.steps(), report["raw"]["state"]["r2"].get<double>());
}

void cmd_eakf(const Options& o, Context& ctx) {
    const Inputs in = load_inputs(o.data, o.horizon);
    EakfConfig config = o.eakf;
    config.seed = o.seed;
    for (Param k : kAllParams) {
        const Index i = static_cast<Index>(k);
        if (o.fixed_opt[i] && o.fixed_opt[i]->count() > 0) {
            config.fixed[i] = o.fixed[i];
        }
    }
    const EakfResult result = run_eakf(in.graph, in.data, config, o.horizon);
    ctx.write("eakf.csv", eakf_csv(result, in.graph));
    ctx.write("eakf_forecast.csv", cases_csv(result.calibrated.I, in.graph));
    const ForecastScore score =
        score_forecast(level_stack(result.calibrated.I, in.graph), in.data, in.graph, o.horizon);
    ctx.write_json("eakf_metrics.json", {{"size", config.size},
                                         {"inflation", config.inflation},
                                         {"forecast", score_json(score, in.graph)}});
    fmt::print("eakf: {} members, state R2 {:.4f}\n", config.size, score.state.r2);
}

void cmd_policy_region(const Options& o, Context& ctx) {
    const Model m = load_model(o);
    const ScenarioBase base = scenario_base(m.net, m.in.data, m.in.graph, o.horizon);
    const ImpactReport report = regional_beta_reduction(base, o.region, o.factor);
    ctx.write("impact.csv", impact_csv(report));
    json j = impact_json(report);
    j["region"] = o.region;
    j["factor"] = o.factor;
    ctx.write_json("impact.json", j);
    fmt::print("policy-region: {} x{} changes statewide infections by {}\n", o.region, o.factor,
               format_number(report.delta_state));
}

void cmd_policy_greedy(const Options& o, Context& ctx) {
    const Model m = load_model(o);
    const ScenarioBase base = scenario_base(m.net, m.in.data, m.in.graph, o.horizon);
    const auto candidates = patch_indices(m.in.graph, o.candidates);
    const GreedyResult result = o.brute_force ? brute_force_allocation(base, o.budget, candidates, o.factor)
                                              : unit_greedy(base, o.budget, candidates, o.factor);
    std::string csv = "step,patch_id,reduction\n";
    for (Index b = 0; b < result.selected.size(); ++b) {
        csv += fmt::format("{},{},{}\n", b + 1, m.in.graph.patch_ids()[result.selected[b]],
                           format_number(result.reduction[b]));
    }
    ctx.write("allocation.csv", csv);
    json j = {{"method", o.brute_force ? "brute-force" : "greedy"},
              {"budget", o.budget},
              {"factor", o.factor},
              {"selected", patch_names(m.in.graph, result.selected)},
              {"reduction", result.reduction},
              {"baseline", result.baseline},
              {"evaluations", result.evaluations}};
    if (o.random_draws > 0) {
        j["random_mean_reduction"] =
            random_allocation_mean(base, o.budget, o.random_draws, o.seed, candidates, o.factor);
    }
    ctx.write_json("allocation.json", j);
    fmt::print("policy-greedy: {} -> reduction {} in {} evaluations\n",
               join(patch_names(m.in.graph, result.selected), ","), format_number(result.reduction.back()),
               result.evaluations);
}

void cmd_sensitivity(const Options& o, Context& ctx) {
    const Model m = load_model(o);
    const ScenarioBase base = scenario_base(m.net, m.in.data, m.in.graph, o.horizon);
    const SensitivityReport report = sensitivity_scan(base, o.bump);
    std::string csv = "receiving_region,source_region,impact_ratio\n";
    for (Index j = 0; j < report.regions.size(); ++j) {
        for (Index i = 0; i < report.regions.size(); ++i) {
            csv += fmt::format("{},{},{}\n", report.regions[j], report.regions[i],
                               format_number(report.impact_ratio(j, i)));
        }
    }
    ctx.write("sensitivity.csv", csv);
    std::string ranking = "rank,region,total_impact_ratio\n";
    json ranked = json::array();
    for (Index k = 0; k < report.ranking.size(); ++k) {
        const Index j = report.ranking[k];
        const double total = num::sum(report.impact_ratio.row(j));
        ranking += fmt::format("{},{},{}\n", k + 1, report.regions[j], format_number(total));
        ranked.push_back({{"region", report.regions[j]}, {"total_impact_ratio", total}});
    }
    ctx.write("sensitivity_ranking.csv", ranking);
    ctx.write_json("sensitivity.json", {{"bump", o.bump}, {"baseline_state", report.baseline_state}, {"ranking", ranked}});
    fmt::print("sensitivity: most sensitive region {}\n", report.regions[report.ranking.front()]);
}

void cmd_outbreak(const Options& o, Context& ctx) {
    const Model m = load_model(o);
    const ScenarioBase base = scenario_base(m.net, m.in.data, m.in.graph, o.horizon);
    std::optional<Index> target;
    if (!o.target.empty()) {
        target = m.in.graph.patch_index(o.target);
    }
    const OutbreakReport report = outbreak_ranking(base, o.k, patch_indices(m.in.graph, o.sources), target);
    std::string csv = "rank,source,region,delta,fraction\n";
    for (Index r = 0; r < report.ranking.size(); ++r) {
        const auto& e = report.ranking[r];
        csv += fmt::format("{},{},{},{},{}\n", r + 1, m.in.graph.patch_ids()[e.source],
                           m.in.graph.regions()[m.in.graph.region_of(e.source)], format_number(e.delta),
                           format_number(e.fraction));
    }
    ctx.write("outbreak.csv", csv);
    std::string regions = "region,fraction\n";
    for (const auto& [name, fraction] : report.regions) {
        regions += fmt::format("{},{}\n", name, format_number(fraction));
    }
    ctx.write("outbreak_regions.csv", regions);
    ctx.write_json("outbreak.json", {{"k", o.k},
                                     {"target", o.target.empty() ? json(nullptr) : json(o.target)},
                                     {"baseline", report.baseline},
                                     {"top_source", m.in.graph.patch_ids()[report.ranking.front().source]}});
    fmt::print("outbreak: top source {} (+{})\n", m.in.graph.patch_ids()[report.ranking.front().source],
               format_number(report.ranking.front().delta));
}

void cmd_correct_data(const Options& o, Context& ctx) {
    const Model m = load_model(o);
    CorrectionConfig config;
    config.noisy_patches =
        o.noisy.empty() ? healthcare_patches(m.in.graph) : patch_indices(m.in.graph, o.noisy);
    config.noise_sd = o.noise_sd;
    config.k = o.corrections;
    config.horizon = o.horizon;
    config.seed = o.seed;
    config.retrain = o.retrain;
    config.train.epochs = o.retrain_epochs;
    config.train.seed = o.seed;
    const CorrectionResult result = greedy_data_correction(m.net, m.in.data, m.in.graph, config);
    std::string csv = "step,patch_id,r2\n";
    csv += fmt::format("0,,{}\n", format_number(result.r2[0]));
    for (Index s = 0; s < result.order.size(); ++s) {
        csv += fmt::format("{},{},{}\n", s + 1, m.in.graph.patch_ids()[result.order[s]],
                           format_number(result.r2[s + 1]));
    }
    ctx.write("correction.csv", csv);
    json j = {{"noisy", patch_names(m.in.graph, config.noisy_patches)},
              {"noise_sd", config.noise_sd},
              {"mode", config.retrain ? "retrain" : "re-evaluate"},
              {"clean_r2", result.clean_r2},
              {"noisy_r2", result.noisy_r2},
              {"order", patch_names(m.in.graph, result.order)},
              {"r2", result.r2},
              {"evaluations", result.evaluations}};
    if (o.random_orders > 0) {
        std::mt19937_64 rng = make_rng(o.seed, "cli.correction_orders");
        std::vector<double> mean(result.order.size() + 1, 0.0);
        for (Index d = 0; d < o.random_orders; ++d) {
            std::vector<Index> order = config.noisy_patches;
            std::shuffle(order.begin(), order.end(), rng);
            order.resize(result.order.size());
            const auto curve = correction_curve(m.net, m.in.data, m.in.graph, config, order);
            for (Index s = 0; s < curve.size(); ++s) {
                mean[s] += curve[s] / static_cast<double>(o.random_orders);
            }
        }
        std::string random = "step,mean_r2\n";
        for (Index s = 0; s < mean.size(); ++s) {
            random += fmt::format("{},{}\n", s, format_number(mean[s]));
        }
        ctx.write("correction_random.csv", random);
        j["random_mean_r2"] = mean;
    }
    ctx.write_json("correction.json", j);
    fmt::print("correct-data: R2 {:.4f} noisy -> {:.4f} after {} corrections (clean {:.4f})\n", result.noisy_r2,
               result.r2.back(), result.order.size(), result.clean_r2);
}

void cmd_metrics(const Options& o, Context& ctx) {
    const fs::path root(o.data);
    const PatchGraph graph =
        read_graph((root / "patches.csv").string(), (root / "travel.csv").string()).graph;
    const Matrix pred = read_cases(o.pred, graph);
    const Matrix truth = read_cases(default_path(o, o.truth, "cases.csv"), graph);
    const Index end = o.to ? o.to : std::min(pred.cols(), truth.cols());
    if (o.from >= end || end > pred.cols() || end > truth.cols()) {
        throw Error(ErrorCode::WindowMismatch,
                    fmt::format("week range [{}, {}) outside the prediction ({}) or truth ({})", o.from, end,
                                pred.cols(), truth.cols()));
    }
    const Level level = o.level == "patch" ? Level::Patch : o.level == "region" ? Level::Region : Level::State;
    const Matrix p = aggregate(pred.slice_cols(o.from, end - o.from), level, graph);
    const Matrix t = aggregate(truth.slice_cols(o.from, end - o.from), level, graph);
    std::string csv = "unit,r2,mse,mae,rmse\n";
    json units = json::array();
    for (Index r = 0; r < p.rows(); ++r) {
        const std::string name = level == Level::Patch    ? graph.patch_ids()[r]
                                 : level == Level::Region ? graph.regions()[r]
                                                          : std::string("state");
        std::optional<double> r2;
        double mse = 0.0;
        double mae = 0.0;
        for (Index k = 0; k < p.cols(); ++k) {
            const double d = p(r, k) - t(r, k);
            mse += d * d / static_cast<double>(p.cols());
            mae += std::abs(d) / static_cast<double>(p.cols());
        }
        Metrics m{0.0, mse, mae, std::sqrt(mse)};
        try {
            m = metrics(p.row(r), t.row(r));
            r2 = m.r2;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::DegenerateTruth) {
                throw;
            }
        }
        csv += fmt::format("{},{},{},{},{}\n", name, r2 ? format_number(*r2) : std::string(), format_number(m.mse),
                           format_number(m.mae), format_number(m.rmse));
        units.push_back({{"unit", name},
                         {"r2", r2 ? json(*r2) : json(nullptr)},
                         {"mse", m.mse},
                         {"mae", m.mae},
                         {"rmse", m.rmse}});
    }
    ctx.write("metrics.csv", csv);
    ctx.write_json("metrics.json", {{"level", o.level}, {"from", o.from}, {"to", end}, {"units", units}});
    std::cout << csv;
}

// ---------------------------------------------------------------- plumbing

std::string now_utc() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buffer[32];
    std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buffer;
}

json option_echo(const CLI::App& app) {
    json out = json::object();
    for (const CLI::Option* opt : app.get_options()) {
        if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") {
            continue;
        }
        const std::string& name = opt->get_lnames().front();
        if (opt->get_type_size() == 0) {
            out[name] = opt->count() > 0;
        } else if (opt->get_expected_max() > 1) {
            out[name] = opt->results();
        } else if (!opt->results().empty()) {
            out[name] = opt->results().back();
        } else {
            out[name] = opt->get_default_str();
        }
    }
    return out;
}

/// Turns config-file entries into leading flags so later flags win.
std::vector<std::string> config_args(const std::string& path, const std::string& subcommand) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Usage, fmt::format("config '{}' is not valid JSON: {}", path, e.what()));
    }
    if (!j.is_object()) {
        throw Error(ErrorCode::Usage, fmt::format("config '{}' must hold a JSON object", path));
    }
    json flat = json::object();
    for (const auto& [key, value] : j.items()) {
        if (!value.is_object()) {
            flat[key] = value;
        }
    }
    if (j.contains(subcommand) && j[subcommand].is_object()) {
        for (const auto& [key, value] : j[subcommand].items()) {
            flat[key] = value;
        }
    }
    std::vector<std::string> args;
    auto scalar = [&](const json& v) -> std::string {
        if (v.is_string()) {
            return v.get<std::string>();
        }
        if (v.is_number_integer() || v.is_number_unsigned()) {
            return v.dump();
        }
        if (v.is_number_float()) {
            return format_number(v.get<double>());
        }
        throw Error(ErrorCode::Usage, fmt::format("unsupported config value {}", v.dump()));
    };
    for (const auto& [key, value] : flat.items()) {
        if (key == "config") {
            continue;
        }
        const std::string flag = "--" + key;
        if (value.is_boolean()) {
            if (value.get<bool>()) {
                args.push_back(flag);
            }
        } else if (value.is_array()) {
            for (const auto& v : value) {
                args.push_back(flag);
                args.push_back(scalar(v));
            }
        } else if (!value.is_null()) {
            args.push_back(flag);
            args.push_back(scalar(value));
        }
    }
    return args;
}

std::string find_config(const std::vector<std::string>& args) {
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            return args[i + 1];
        }
        if (args[i].rfind("--config=", 0) == 0) {
            return args[i].substr(9);
        }
    }
    return {};
}

std::string escape(std::string_view text) {
    std::string out;
    for (char c : text) {
        if (c == '"' || c == '\\') {
            out += '\\';
            out += c;
        } else if (c == '\n' || c == '\r') {
            out += ' ';
        } else {
            out += c;
        }
    }
    return out;
}

int fail(std::string_view code, ErrorCategory category, std::string_view message) {
    const char* name = category == ErrorCategory::Usage ? "usage" : category == ErrorCategory::Data ? "data" : "numerical";
    std::cerr << fmt::format("calypso: error code={} category={} message=\"{}\"\n", code, name, escape(message));
    return category == ErrorCategory::Usage ? 2 : category == ErrorCategory::Data ? 3 : 4;
}

using Handler = void (*)(const Options&, Context&);

struct Command {
    const char* name;
    const char* help;
    Handler handler;
    bool needs_data;
};

constexpr Command kCommands[] = {
    {"synth", "Generate a synthetic data directory", cmd_synth, false},
    {"simulate", "Run the simulator with given parameters", cmd_simulate, true},
    {"calibrate", "Train the calibration network", cmd_calibrate, true},
    {"adapter", "Train the residual adapter on a calibrated model", cmd_adapter, true},
    {"forecast", "Forecast window + horizon from a checkpoint", cmd_forecast, true},
    {"eakf", "Run the ensemble adjustment Kalman filter baseline", cmd_eakf, true},
    {"policy-region", "Scale beta of one region", cmd_policy_region, true},
    {"policy-greedy", "Budgeted patch allocation", cmd_policy_greedy, true},
    {"sensitivity", "Per-capita impact of bumping each region's beta", cmd_sensitivity, true},
    {"outbreak", "Rank outbreak sources", cmd_outbreak, true},
    {"correct-data", "Greedy correction of noisy patch features", cmd_correct_data, true},
    {"metrics", "Score a prediction CSV against observed counts", cmd_metrics, true},
};

void add_common(CLI::App* sub, Options& o, bool needs_data) {
    sub->add_option("--config", o.config, "JSON config; flags override its values");
    sub->add_option("--seed", o.seed, "Seed for all randomness")->capture_default_str();
    sub->add_option("--horizon", o.horizon, "Held-out weeks")->capture_default_str();
    if (needs_data) {
        sub->add_option("--data", o.data, "Data directory")->required();
        sub->add_option("--out", o.out, "Output directory (default: --data)");
    } else {
        sub->add_option("--out", o.out, "Output directory")->required();
    }
}

void add_checkpoint(CLI::App* sub, Options& o) {
    sub->add_option("--checkpoint", o.checkpoint, "Calibration checkpoint (default: <data>/checkpoint.json)");
}

void configure(CLI::App& app, Options& o) {
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);
    std::map<std::string, CLI::App*> subs;
    for (const auto& c : kCommands) {
        subs[c.name] = app.add_subcommand(c.name, c.help);
        add_common(subs[c.name], o, c.needs_data);
    }

    auto* s = subs["synth"];
    s->add_option("--patches", o.synth.patches)->capture_default_str();
    s->add_option("--areas", o.synth.areas, "Areas, each split into general and facility regions")
        ->capture_default_str();
    s->add_option("--weeks", o.synth.weeks, "Training window")->capture_default_str();
    s->add_option("--burn-in", o.synth.burn_in)->capture_default_str();
    s->add_option("--mobility", o.synth.mobility)->capture_default_str();
    s->add_option("--persistence-min", o.synth.persistence_min)->capture_default_str();
    s->add_option("--persistence-max", o.synth.persistence_max)->capture_default_str();
    s->add_option("--feature-noise", o.synth.feature_noise)->capture_default_str();
    s->add_option("--initial-prevalence", o.synth.initial_prevalence)->capture_default_str();

    s = subs["simulate"];
    s->add_option("--params", o.params, "Region parameter CSV (week,region,beta,...)");
    s->add_option("--beta", o.beta)->capture_default_str();
    s->add_option("--gamma", o.gamma)->capture_default_str();
    s->add_option("--delta", o.delta)->capture_default_str();
    s->add_option("--kappa", o.kappa)->capture_default_str();
    s->add_option("--epsilon", o.epsilon)->capture_default_str();
    s->add_option("--weeks", o.weeks, "Steps to simulate (default: all weeks)");

    s = subs["calibrate"];
    s->add_option("--epochs", o.train.epochs)->capture_default_str();
    s->add_option("--lr", o.train.learning_rate)->capture_default_str();
    s->add_option("--weight-decay", o.train.weight_decay)->capture_default_str();
    s->add_option("--clip", o.train.clip_norm)->capture_default_str();
    s->add_option("--lr-step", o.train.lr_step)->capture_default_str();
    s->add_option("--lr-gamma", o.train.lr_gamma)->capture_default_str();
    s->add_option("--w-patch", o.train.loss_weights.patch)->capture_default_str();
    s->add_option("--w-region", o.train.loss_weights.region)->capture_default_str();
    s->add_option("--w-state", o.train.loss_weights.state)->capture_default_str();
    s->add_option("--history-stride", o.train.history_stride)->capture_default_str();
    s->add_option("--hidden", o.hidden)->capture_default_str();
    s->add_option("--decoder-hidden", o.decoder_hidden)->capture_default_str();
    s->add_flag("--no-region-identity", o.no_region_identity, "Drop the one-hot region input of the decoder");

    s = subs["adapter"];
    add_checkpoint(s, o);
    s->add_option("--epochs", o.adapter_train.epochs)->capture_default_str();
    s->add_option("--lr", o.adapter_train.learning_rate)->capture_default_str();
    s->add_option("--weight-decay", o.adapter_train.weight_decay)->capture_default_str();
    s->add_option("--clip", o.adapter_train.clip_norm)->capture_default_str();
    s->add_option("--teacher-forcing", o.adapter_train.teacher_forcing)->capture_default_str();
    s->add_flag("--no-decay", o.no_decay, "Keep the teacher-forcing ratio constant");
    s->add_option("--origins", o.adapter_data.origins)->capture_default_str();
    s->add_option("--stride", o.adapter_data.stride)->capture_default_str();
    s->add_option("--hidden", o.adapter_arch.hidden)->capture_default_str();
    s->add_option("--layers", o.adapter_arch.layers)->capture_default_str();
    s->add_option("--period", o.adapter_arch.period)->capture_default_str();

    s = subs["forecast"];
    add_checkpoint(s, o);
    s->add_option("--adapter", o.adapter, "Adapter checkpoint");

    s = subs["eakf"];
    s->add_option("--size", o.eakf.size)->capture_default_str();
    s->add_option("--inflation", o.eakf.inflation)->capture_default_str();
    s->add_option("--obs-floor", o.eakf.obs_floor)->capture_default_str();
    s->add_option("--obs-relative", o.eakf.obs_relative)->capture_default_str();
    s->add_option("--initial-spread", o.eakf.initial_spread)->capture_default_str();
    for (Param k : kAllParams) {
        const Index i = static_cast<Index>(k);
        o.fixed_opt[i] = s->add_option(fmt::format("--fix-{}", to_string(k)), o.fixed[i],
                                       fmt::format("Hold {} at this value", to_string(k)));
    }

    s = subs["policy-region"];
    add_checkpoint(s, o);
    s->add_option("--region", o.region)->required();
    s->add_option("--factor", o.factor)->capture_default_str();

    s = subs["policy-greedy"];
    add_checkpoint(s, o);
    s->add_option("--budget", o.budget)->capture_default_str();
    s->add_option("--factor", o.factor)->capture_default_str();
    s->add_option("--candidates", o.candidates, "Candidate patch ids (default: facility patches)")
        ->delimiter(',')
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    s->add_flag("--brute-force", o.brute_force, "Exhaustive search instead of greedy");
    s->add_option("--random-draws", o.random_draws, "Also report the mean of this many random allocations")
        ->capture_default_str();

    s = subs["sensitivity"];
    add_checkpoint(s, o);
    s->add_option("--bump", o.bump)->capture_default_str();

    s = subs["outbreak"];
    add_checkpoint(s, o);
    s->add_option("--k", o.k, "Seeded infections")->capture_default_str();
    s->add_option("--target", o.target, "Rank sources by their effect on this patch");
    s->add_option("--sources", o.sources, "Candidate source patch ids (default: all)")
        ->delimiter(',')
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

    s = subs["correct-data"];
    add_checkpoint(s, o);
    s->add_option("--noisy", o.noisy, "Noisy patch ids (default: facility patches)")
        ->delimiter(',')
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    s->add_option("--noise-sd", o.noise_sd)->capture_default_str();
    s->add_option("--k", o.corrections, "Corrections to make (0: all)")->capture_default_str();
    s->add_flag("--retrain", o.retrain, "Retrain for every evaluation");
    s->add_option("--epochs", o.retrain_epochs, "Training epochs with --retrain")->capture_default_str();
    s->add_option("--random-orders", o.random_orders, "Random correction orders to average")
        ->capture_default_str();

    s = subs["metrics"];
    s->add_option("--pred", o.pred, "Prediction CSV (patch_id,week_index,count)")->required();
    s->add_option("--truth", o.truth, "Truth CSV (default: <data>/cases.csv)");
    s->add_option("--level", o.level)->check(CLI::IsMember({"patch", "region", "state"}))->capture_default_str();
    s->add_option("--from", o.from)->capture_default_str();
    s->add_option("--to", o.to, "End week, exclusive (default: all)");
}

} // namespace

std::string_view git_describe() noexcept {
    return CALYPSO_GIT_DESCRIBE;
}

int run(const std::vector<std::string>& raw_args) {
    const auto started = std::chrono::steady_clock::now();
    const std::string started_at = now_utc();
    try {
        std::vector<std::string> args(raw_args.begin() + (raw_args.empty() ? 0 : 1), raw_args.end());
        if (!args.empty() && args.front().rfind("-", 0) != 0) {
            const std::string config = find_config(args);
            if (!config.empty()) {
                auto extra = config_args(config, args.front());
                args.insert(args.begin() + 1, extra.begin(), extra.end());
            }
        }
        Options o;
        CLI::App app("Differentiable metapopulation epidemic calibration and analysis", "calypso");
        configure(app, o);
        try {
            std::vector<std::string> reversed(args.rbegin(), args.rend());
            app.parse(reversed);
        } catch (const CLI::ParseError& e) {
            if (e.get_exit_code() == 0) {
                return app.exit(e);
            }
            return fail("Usage", ErrorCategory::Usage, e.what());
        }
        CLI::App* sub = app.get_subcommands().front();
        const Command* command = nullptr;
        for (const auto& c : kCommands) {
            if (sub->get_name() == c.name) {
                command = &c;
            }
        }
        Context ctx;
        ctx.subcommand = sub->get_name();
        ctx.app = sub;
        ctx.out = o.out.empty() ? o.data : o.out;
        if (command->needs_data && !fs::is_directory(o.data)) {
            throw Error(ErrorCode::IoError, fmt::format("data directory '{}' does not exist", o.data));
        }
        fs::create_directories(ctx.out);
        command->handler(o, ctx);

        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        json manifest = {{"tool", "calypso"},
                         {"subcommand", ctx.subcommand},
                         {"argv", raw_args},
                         {"config", option_echo(*sub)},
                         {"seed", o.seed},
                         {"git_describe", std::string(git_describe())},
                         {"threads", thread_count()},
                         {"started_at", started_at},
                         {"wall_time_seconds", wall},
                         {"outputs", ctx.outputs}};
        write_text(ctx.path("run_manifest.json"), manifest.dump(2) + "\n");
        return 0;
    } catch (const Error& e) {
        return fail(to_string(e.code()), category_of(e.code()), e.what());
    } catch (const fs::filesystem_error& e) {
        return fail("IoError", ErrorCategory::Data, e.what());
    } catch (const std::exception& e) {
        return fail("Unexpected", ErrorCategory::Data, e.what());
    }
}

int run(int argc, const char* const* argv) {
    return run(std::vector<std::string>(argv, argv + argc));
}

} // namespace calypso::cli
