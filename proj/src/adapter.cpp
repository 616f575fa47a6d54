#include "calypso/adapter.hpp"

#include "calypso/rng.hpp"

#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <numbers>
#include <sstream>

namespace calypso {

using json = nlohmann::ordered_json;

namespace {

std::string layer_name(Index k) {
    return fmt::format("gru{}", k);
}

struct Coins {
    std::mt19937_64 rng;
    double ratio = 1.0;

    bool teacher() {
        if (ratio >= 1.0) {
            return true;
        }
        if (ratio <= 0.0) {
            return false;
        }
        return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < ratio;
    }
};

/// Runs the adapter over a series stack. `truth` supplies the previous value
/// for t <= known; afterwards a coin decides between truth (when available)
/// and the adapter's own previous output. Returns residuals in scaled units.
template <class T>
Grid<T> run_adapter(const AdapterNet& net, std::span<const T> weights, const Matrix& raw, const Matrix& truth,
                    Index known, Coins* coins) {
    const Index units = raw.rows();
    const Index steps = raw.cols();
    const auto& cfg = net.config();
    std::vector<nn::GruWeights<T>> layers;
    for (Index k = 0; k < cfg.layers; ++k) {
        layers.push_back(nn::gru_view(weights, net.store(), layer_name(k)));
    }
    const auto head_w = nn::view(weights, net.store().block("head.w"));
    const auto head_b = nn::view(weights, net.store().block("head.b")).data;
    const double denom = net.tau_scale() > 1 ? static_cast<double>(net.tau_scale() - 1) : 1.0;

    Grid<T> residual(units, steps, T(0.0));
    std::vector<std::vector<std::vector<T>>> h(units, std::vector<std::vector<T>>(cfg.layers,
                                                                                 std::vector<T>(cfg.hidden, T(0.0))));
    std::vector<T> prev_out(units);
    std::vector<T> x(kAdapterInputs);
    std::vector<T> out(1);
    for (Index t = 0; t < steps; ++t) {
        const double td = static_cast<double>(t);
        const double angle = 2.0 * std::numbers::pi * td / cfg.period;
        const bool teacher = t <= known || (coins != nullptr && t < truth.cols() && coins->teacher());
        for (Index u = 0; u < units; ++u) {
            const double s = net.scales()[u];
            T prev;
            if (t == 0) {
                prev = T(raw(u, 0) / s);
            } else if (teacher && t - 1 < truth.cols()) {
                prev = T(truth(u, t - 1) / s);
            } else {
                prev = prev_out[u];
            }
            x[0] = T(raw(u, t) / s);
            x[1] = prev;
            x[2] = T(td / denom);
            x[3] = T(std::sin(angle));
            x[4] = T(std::cos(angle));
            std::span<const T> input(x);
            for (Index k = 0; k < cfg.layers; ++k) {
                h[u][k] = nn::gru_step(layers[k], input, std::span<const T>(h[u][k]));
                input = std::span<const T>(h[u][k]);
            }
            nn::affine(head_w, head_b, input, std::span<T>(out));
            residual(u, t) = out[0];
            prev_out[u] = num::relu(T(raw(u, t) / s) + out[0]);
        }
    }
    return residual;
}

void check_series(const AdapterNet& net, const Matrix& raw) {
    if (net.scales().size() != raw.rows()) {
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("adapter has scales for {} series, input has {}", net.scales().size(), raw.rows()));
    }
    for (double v : raw.data()) {
        if (!std::isfinite(v)) {
            throw Error(ErrorCode::NonFiniteInput, "raw forecast contains non-finite values");
        }
    }
}

template <class T>
T sequence_loss(const AdapterNet& net, std::span<const T> weights, const AdapterSequence& seq, Coins* coins,
                std::vector<T>& terms) {
    const Grid<T> r = run_adapter(net, weights, seq.raw, seq.truth, seq.known, coins);
    terms.clear();
    for (Index u = 0; u < seq.raw.rows(); ++u) {
        const double s = net.scales()[u];
        for (Index t = 0; t < seq.raw.cols(); ++t) {
            const T corrected = num::relu(T(seq.raw(u, t) / s) + r(u, t));
            const T d = corrected - T(seq.truth(u, t) / s);
            terms.push_back(d * d);
        }
    }
    return num::sum(std::span<const T>(terms));
}

Index total_cells(const std::vector<AdapterSequence>& sequences) {
    Index cells = 0;
    for (const auto& s : sequences) {
        cells += s.raw.rows() * s.raw.cols();
    }
    return cells;
}

void check_sequences(const AdapterNet& net, const std::vector<AdapterSequence>& sequences) {
    if (sequences.empty()) {
        throw Error(ErrorCode::InvalidArgument, "adapter training needs at least one sequence");
    }
    for (const auto& s : sequences) {
        check_series(net, s.raw);
        if (s.truth.rows() != s.raw.rows() || s.truth.cols() != s.raw.cols()) {
            throw Error(ErrorCode::ShapeMismatch, "adapter truth and raw series differ in shape");
        }
    }
}

} // namespace

AdapterNet::AdapterNet(AdapterConfig config) : config_(config) {
    if (config_.hidden == 0 || config_.layers == 0 || !(config_.period > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "adapter widths, depth and period must be positive");
    }
    Index input = kAdapterInputs;
    for (Index k = 0; k < config_.layers; ++k) {
        nn::add_gru_blocks(store_, layer_name(k), input, config_.hidden);
        input = config_.hidden;
    }
    store_.add("head.w", 1, config_.hidden, config_.hidden);
    store_.add("head.b", 1, 1, config_.hidden);
}

void AdapterNet::init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    store_.init_uniform(rng);
    store_.zero_block("head.w");
    store_.zero_block("head.b");
}

void AdapterNet::fit_scales(const Matrix& raw, Index steps) {
    if (steps == 0 || steps > raw.cols()) {
        throw Error(ErrorCode::WindowMismatch, "scale window outside the raw series");
    }
    scales_.assign(raw.rows(), 1.0);
    for (Index u = 0; u < raw.rows(); ++u) {
        double mean = 0.0;
        for (Index t = 0; t < steps; ++t) {
            mean += raw(u, t);
        }
        mean /= static_cast<double>(steps);
        scales_[u] = std::max(1.0, mean);
    }
    tau_scale_ = steps;
}

void AdapterNet::set_scales(std::vector<double> scales) {
    for (double s : scales) {
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw Error(ErrorCode::InvalidArgument, "adapter scales must be positive");
        }
    }
    scales_ = std::move(scales);
}

void AdapterNet::set_tau_scale(Index steps) {
    tau_scale_ = std::max<Index>(1, steps);
}

Matrix adapter_residual(const AdapterNet& net, const Matrix& raw, const Matrix& history) {
    check_series(net, raw);
    if (history.cols() > 0 && history.rows() != raw.rows()) {
        throw Error(ErrorCode::ShapeMismatch, "history and raw series differ in row count");
    }
    const Index known = history.cols();
    Matrix r = run_adapter(net, std::span<const double>(net.weights()), raw, history, known, nullptr);
    for (Index u = 0; u < r.rows(); ++u) {
        for (Index t = 0; t < r.cols(); ++t) {
            r(u, t) *= net.scales()[u];
        }
    }
    return r;
}

Matrix refine(const AdapterNet& net, const Matrix& raw, const Matrix& history) {
    const Matrix r = adapter_residual(net, raw, history);
    Matrix out(raw.rows(), raw.cols());
    for (Index i = 0; i < out.data().size(); ++i) {
        out.data()[i] = std::max(0.0, raw.data()[i] + r.data()[i]);
    }
    return out;
}

double adapter_loss(const AdapterNet& net, std::span<const double> weights,
                    const std::vector<AdapterSequence>& sequences) {
    check_sequences(net, sequences);
    std::vector<double> terms;
    double total = 0.0;
    for (const auto& seq : sequences) {
        // the loss of a fixed net is measured without teacher forcing past the prefix
        total += sequence_loss(net, weights, seq, nullptr, terms);
    }
    return total / static_cast<double>(total_cells(sequences));
}

AdapterTrainResult train_adapter(const AdapterNet& net, const std::vector<AdapterSequence>& sequences,
                                 const AdapterTrainConfig& config) {
    check_sequences(net, sequences);
    if (!(config.teacher_forcing >= 0.0) || config.teacher_forcing > 1.0) {
        throw Error(ErrorCode::InvalidArgument, "teacher-forcing ratio must lie in [0, 1]");
    }
    AdapterTrainResult result;
    result.net = net;
    result.initial_loss = adapter_loss(net, net.weights(), sequences);
    result.best_loss = result.initial_loss;
    if (config.epochs == 0) {
        return result;
    }
    const double cells = static_cast<double>(total_cells(sequences));
    std::vector<double> weights = net.weights();
    std::vector<double> best = weights;
    nn::Adam adam(weights.size(), config.learning_rate, config.weight_decay);
    ad::Tape tape;
    Coins coins{make_rng(config.seed, "adapter.teacher"), config.teacher_forcing};
    std::vector<ad::Var> terms;
    std::vector<ad::Var> seq_losses;
    for (Index epoch = 0; epoch < config.epochs; ++epoch) {
        coins.ratio = config.decay_teacher_forcing
                          ? config.teacher_forcing * (1.0 - static_cast<double>(epoch) / static_cast<double>(config.epochs))
                          : config.teacher_forcing;
        tape.clear();
        const std::vector<ad::Var> vars = tape.variables(weights);
        seq_losses.clear();
        for (const auto& seq : sequences) {
            seq_losses.push_back(sequence_loss(net, std::span<const ad::Var>(vars), seq, &coins, terms));
        }
        const ad::Var loss = ad::sum(std::span<const ad::Var>(seq_losses)) * ad::Var(1.0 / cells);
        if (!std::isfinite(loss.value())) {
            throw Error(ErrorCode::NonFiniteLoss, fmt::format("adapter loss became non-finite at epoch {}", epoch));
        }
        result.history.push_back(loss.value());
        std::vector<double> grad(weights.size(), 0.0);
        if (!loss.is_constant()) {
            tape.backward(loss);
            for (Index k = 0; k < vars.size(); ++k) {
                grad[k] = tape.adjoint(vars[k]);
            }
        }
        nn::clip_grad_norm(grad, config.clip_norm);
        adam.step(weights, grad);
        // select on the deterministic loss so teacher forcing cannot flatter a checkpoint
        const double eval = adapter_loss(net, weights, sequences);
        if (eval < result.best_loss) {
            result.best_loss = eval;
            result.best_epoch = epoch + 1;
            best = weights;
        }
    }
    result.net.weights() = best;
    return result;
}

Matrix level_stack(const Matrix& patch_series, const PatchGraph& graph) {
    if (patch_series.rows() != graph.patch_count()) {
        throw Error(ErrorCode::ShapeMismatch, "series rows do not match the patch count");
    }
    const Index n = graph.patch_count();
    const Index regions = graph.region_count();
    const Matrix reg = aggregate(patch_series, Level::Region, graph);
    const Matrix state = aggregate(patch_series, Level::State, graph);
    Matrix out(n + regions + 1, patch_series.cols());
    for (Index t = 0; t < patch_series.cols(); ++t) {
        for (Index p = 0; p < n; ++p) {
            out(p, t) = patch_series(p, t);
        }
        for (Index r = 0; r < regions; ++r) {
            out(n + r, t) = reg(r, t);
        }
        out(n + regions, t) = state(0, t);
    }
    return out;
}

std::vector<AdapterSequence> adapter_sequences(const CalibNet& net, const DataSet& data, const PatchGraph& graph,
                                               const AdapterDataConfig& config) {
    if (config.horizon == 0) {
        throw Error(ErrorCode::HorizonZero, "adapter horizon must be at least one week");
    }
    const Index w = data.window;
    std::vector<AdapterSequence> out;
    SimConfig sim;
    sim.steps = w;
    const Trajectory fit = simulate(graph, infer_params(net, data, graph), data.initial_infections, sim);
    const Matrix observed = level_stack(data.observed.slice_cols(0, w), graph);
    out.push_back({level_stack(fit.I, graph), observed, w});
    for (Index k = 0; k < config.origins; ++k) {
        const Index back = config.horizon + k * config.stride;
        if (back + 2 > w) {
            break;
        }
        const Index cut = w - back;
        sim.steps = cut + config.horizon;
        const auto params = forecast_params_at(net, data, graph, cut, config.horizon);
        const Trajectory traj = simulate(graph, params, data.initial_infections, sim);
        out.push_back({level_stack(traj.I, graph), observed.slice_cols(0, cut + config.horizon), cut});
    }
    return out;
}

RefinedForecast refined_forecast(const CalibNet& calib, const AdapterNet& adapter, const DataSet& data,
                                 const PatchGraph& graph, Index horizon) {
    const Trajectory traj = forecast(calib, data, graph, horizon);
    RefinedForecast out;
    out.raw = level_stack(traj.I, graph);
    const Matrix history = level_stack(data.observed.slice_cols(0, data.window), graph);
    out.corrected = refine(adapter, out.raw, history);
    return out;
}

AdapterTrainResult fit_adapter(const CalibNet& calib, const DataSet& data, const PatchGraph& graph,
                               const AdapterDataConfig& data_config, const AdapterTrainConfig& config,
                               AdapterConfig arch) {
    const std::uint64_t before = calib.store().checksum();
    const auto sequences = adapter_sequences(calib, data, graph, data_config);
    AdapterNet net(arch);
    net.init(derive_seed(config.seed, "adapter.init"));
    net.fit_scales(sequences.front().raw, data.window);
    AdapterTrainResult result = train_adapter(net, sequences, config);
    if (calib.store().checksum() != before) {
        throw Error(ErrorCode::InvariantViolation, "adapter training modified the calibration network");
    }
    return result;
}

std::string adapter_checkpoint_json(const AdapterTrainResult& result, const AdapterTrainConfig& config) {
    const AdapterNet& net = result.net;
    json j;
    j["format"] = "calypso-adapter-1";
    j["hidden"] = net.config().hidden;
    j["layers"] = net.config().layers;
    j["period"] = net.config().period;
    j["tau_scale"] = net.tau_scale();
    j["scales"] = net.scales();
    j["hyperparameters"] = {{"epochs", config.epochs},
                            {"learning_rate", config.learning_rate},
                            {"weight_decay", config.weight_decay},
                            {"clip_norm", config.clip_norm},
                            {"teacher_forcing", config.teacher_forcing},
                            {"decay_teacher_forcing", config.decay_teacher_forcing}};
    j["seed"] = config.seed;
    j["initial_loss"] = result.initial_loss;
    j["best_loss"] = result.best_loss;
    j["best_epoch"] = result.best_epoch;
    json blocks = json::array();
    for (const auto& b : net.store().blocks()) {
        const auto values = net.store().block_values(b.name);
        blocks.push_back({{"name", b.name},
                          {"rows", b.rows},
                          {"cols", b.cols},
                          {"values", std::vector<double>(values.begin(), values.end())}});
    }
    j["weights"] = blocks;
    return j.dump(1);
}

void save_adapter_checkpoint(const std::string& path, const AdapterTrainResult& result,
                             const AdapterTrainConfig& config) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::IoError, fmt::format("cannot write adapter checkpoint '{}'", path));
    }
    out << adapter_checkpoint_json(result, config) << '\n';
}

AdapterNet parse_adapter_checkpoint(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, fmt::format("adapter checkpoint is not valid JSON: {}", e.what()));
    }
    try {
        if (j.at("format") != "calypso-adapter-1") {
            throw Error(ErrorCode::ParseError, "unknown adapter checkpoint format");
        }
        AdapterConfig cfg;
        cfg.hidden = j.at("hidden").get<Index>();
        cfg.layers = j.at("layers").get<Index>();
        cfg.period = j.at("period").get<double>();
        AdapterNet net(cfg);
        net.set_scales(j.at("scales").get<std::vector<double>>());
        net.set_tau_scale(j.at("tau_scale").get<Index>());
        for (const auto& jb : j.at("weights")) {
            const auto name = jb.at("name").get<std::string>();
            auto dst = net.store().block_values(name);
            const auto values = jb.at("values").get<std::vector<double>>();
            if (values.size() != dst.size()) {
                throw Error(ErrorCode::ShapeMismatch, fmt::format("adapter block '{}' has wrong size", name));
            }
            std::copy(values.begin(), values.end(), dst.begin());
        }
        return net;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, fmt::format("malformed adapter checkpoint: {}", e.what()));
    }
}

AdapterNet load_adapter_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoError, fmt::format("cannot read adapter checkpoint '{}'", path));
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_adapter_checkpoint(buffer.str());
}

} // namespace calypso
